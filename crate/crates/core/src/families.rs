//! Named closed-form field families with positional parameter vectors.
//!
//! | family | parameters (trailing ones optional) |
//! |---|---|
//! | `gaussian` | amp, center, width, x_mod, t_slope, cutoff_radius, cutoff_exponent, x_window |
//! | `hermite-gaussian` | amp, order, width, x_mod, t_slope, cutoff_radius, cutoff_exponent, x_window |
//! | `windowed-polynomial` | amp, degree, radius, x_mod, t_slope, x_window |
//!
//! The `x` factor is `exp(-x_mod |x|²)` on Euclidean units and
//! `Π (1 + x_mod cos 2πx_i)` on periodic ones; the `t` factor is
//! `1 + t_slope·t`. A positive `cutoff_radius ρ` multiplies by a bump in
//! `v = tξ` vanishing for `|v| ≥ ρ t^κ`, which gives a conic support.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{radial_bump, FieldError, SchwartzDncField};
use crate::groupoid::GroupoidModel;
use crate::scalar::{norm, Scalar};
use crate::support::{ConicCompactSet, ConicPiece, SupportError};

pub const FAMILIES: [&str; 3] = ["gaussian", "hermite-gaussian", "windowed-polynomial"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("unknown field family `{0}`")]
    UnknownFamily(String),
    #[error("{family}: {reason}")]
    Params { family: String, reason: String },
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl FieldSpec {
    pub fn new(family: &str, params: &[f64]) -> Self {
        Self { family: family.to_string(), params: params.to_vec() }
    }
}

fn with_defaults(family: &str, params: &[f64], defaults: &[f64]) -> Result<Vec<f64>, FamilyError> {
    if params.len() > defaults.len() {
        return Err(FamilyError::Params {
            family: family.into(),
            reason: format!("expected at most {} parameters, got {}", defaults.len(), params.len()),
        });
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(FamilyError::Params { family: family.into(), reason: "parameters must be finite".into() });
    }
    Ok(params.iter().chain(&defaults[params.len()..]).copied().collect())
}

/// Physicists' Hermite polynomial `H_n`.
pub fn hermite_polynomial<T: Scalar>(n: usize, x: T) -> T {
    let two = T::lit(2.0);
    let (mut prev, mut cur) = (T::one(), two * x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = two * x * cur - two * T::from_count(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[derive(Clone, Copy)]
struct Common<T> {
    amp: T,
    x_mod: T,
    t_slope: T,
    x_window: T,
    periodic: bool,
}

impl<T: Scalar> Common<T> {
    fn factor(&self, x: &[T], t: T) -> T {
        let two_pi = T::TAU();
        let xf = if self.periodic {
            x.iter().fold(T::one(), |acc, &c| acc * (T::one() + self.x_mod * (two_pi * c).cos()))
        } else {
            (-self.x_mod * x.iter().fold(T::zero(), |a, &c| a + c * c)).exp()
        };
        let window = if self.x_window > T::zero() {
            x.iter().fold(T::one(), |acc, &c| acc * radial_bump(c.abs() / self.x_window, T::lit(0.5)))
        } else {
            T::one()
        };
        self.amp * xf * window * (T::one() + self.t_slope * t)
    }
}

/// Cone cutoff `b(|tξ| / (ρ t^κ))`; identically 1 at `t = 0`.
fn cone_cutoff<T: Scalar>(xi: &[T], t: T, radius: T, kappa: T) -> T {
    if t == T::zero() {
        return T::one();
    }
    let r = t.powf(T::one() - kappa) * norm(xi) / radius;
    radial_bump(r, T::lit(0.5))
}

/// Builds a family member on the tangent groupoid of `model`.
pub fn build_field<T: Scalar>(spec: &FieldSpec, model: &dyn GroupoidModel<T>) -> Result<SchwartzDncField<T>, FamilyError> {
    let (p, q) = (model.unit_dim(), model.fiber_dim());
    let periodic = model.periodic_units();
    let family = spec.family.as_str();
    let bad = |reason: &str| FamilyError::Params { family: family.into(), reason: reason.into() };
    let fiber_limit = model.fiber_domain().map(|b| b.iter().map(|&(lo, hi)| hi - lo).fold(T::infinity(), T::min));

    let (common, support_normal, kappa, field): (Common<T>, Option<T>, T, Box<dyn Fn(&[T], T) -> T + Send + Sync>) =
        match family {
            "gaussian" | "hermite-gaussian" => {
                let v = with_defaults(family, &spec.params, &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.0])?;
                let common = Common {
                    amp: T::lit(v[0]),
                    x_mod: T::lit(v[3]),
                    t_slope: T::lit(v[4]),
                    x_window: T::lit(v[7]),
                    periodic,
                };
                let width = T::lit(v[2]);
                if !(v[2] > 0.0) {
                    return Err(bad("width must be positive"));
                }
                let (radius, kappa) = (T::lit(v[5]), T::lit(v[6]));
                if v[5] < 0.0 {
                    return Err(bad("cutoff radius must be non-negative"));
                }
                if v[5] > 0.0 && !(v[6] > 0.0 && v[6] <= 1.0) {
                    return Err(bad("cutoff exponent must lie in (0, 1]"));
                }
                let profile: Box<dyn Fn(&[T]) -> T + Send + Sync> = if family == "gaussian" {
                    let center = T::lit(v[1]);
                    Box::new(move |xi: &[T]| {
                        let r2 = xi.iter().fold(T::zero(), |a, &c| a + (c - center) * (c - center));
                        (-r2 / (width * width)).exp()
                    })
                } else {
                    if v[1] < 0.0 || v[1].fract() != 0.0 {
                        return Err(bad("order must be a non-negative integer"));
                    }
                    let order = v[1] as usize;
                    Box::new(move |xi: &[T]| {
                        let r2 = xi.iter().fold(T::zero(), |a, &c| a + c * c);
                        hermite_polynomial(order, xi[0] / width) * (-r2 / (width * width)).exp()
                    })
                };
                let cutoff = v[5] > 0.0;
                let field: Box<dyn Fn(&[T], T) -> T + Send + Sync> = Box::new(move |xi: &[T], t: T| {
                    let c = if cutoff { cone_cutoff(xi, t, radius, kappa) } else { T::one() };
                    if c == T::zero() {
                        T::zero()
                    } else {
                        c * profile(xi)
                    }
                });
                (common, cutoff.then_some(radius), kappa, field)
            }
            "windowed-polynomial" => {
                let v = with_defaults(family, &spec.params, &[1.0, 2.0, 1.0, 0.0, 0.0, 0.0])?;
                if v[1] < 0.0 || v[1].fract() != 0.0 {
                    return Err(bad("degree must be a non-negative integer"));
                }
                if !(v[2] > 0.0) {
                    return Err(bad("radius must be positive"));
                }
                let common = Common {
                    amp: T::lit(v[0]),
                    x_mod: T::lit(v[3]),
                    t_slope: T::lit(v[4]),
                    x_window: T::lit(v[5]),
                    periodic,
                };
                let (degree, radius) = (v[1] as usize, T::lit(v[2]));
                let field: Box<dyn Fn(&[T], T) -> T + Send + Sync> = Box::new(move |xi: &[T], _| {
                    let b = radial_bump(norm(xi) / radius, T::lit(0.5));
                    if b == T::zero() {
                        return T::zero();
                    }
                    let (mut term, mut sum) = (T::one(), T::one());
                    for k in 1..=degree {
                        term = term * xi[0] / T::from_count(k);
                        sum = sum + term;
                    }
                    b * sum
                });
                (common, Some(radius), T::one(), field)
            }
            other => return Err(FamilyError::UnknownFamily(other.to_string())),
        };

    if common.x_window > T::zero() && periodic {
        return Err(bad("x_window applies to Euclidean unit spaces only"));
    }
    if let (Some(limit), Some(r)) = (fiber_limit, support_normal) {
        if !(T::lit(4.0) * r < limit) {
            return Err(bad("support radius must stay below a quarter of the fiber period"));
        }
    }
    if let (Some(_), None) = (fiber_limit, support_normal) {
        return Err(bad("compact fibers need a cutoff radius"));
    }

    let mut out = SchwartzDncField::new(p, q, move |x: &[T], xi: &[T], t: T| {
        let f = field(xi, t);
        if f == T::zero() {
            return T::zero();
        }
        common.factor(x, t) * f
    })
    .with_label(format!("{}{:?}", spec.family, spec.params))
    .with_instance(model.key());
    if let Some(r) = support_normal {
        let x_box = (common.x_window > T::zero()).then(|| vec![(-common.x_window, common.x_window); p]);
        let piece = ConicPiece::cone(x_box, vec![(-r, r); q], T::one(), kappa);
        out = out.with_support(ConicCompactSet::new(p, q, vec![piece])?)?;
    }
    Ok(out)
}
