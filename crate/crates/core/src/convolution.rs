//! Convolution on the tangent groupoid, evaluation maps and reference
//! discretizations.
//!
//! In normal-chart coordinates the product reads
//! `(f*g)(x, ξ, t) = ∫ f(γ·δ⁻¹) g(δ) t^{-q} dw` with `γ = (x, tξ)` and
//! `δ = from_source(s(γ), w)`. For `t ≤ t*` the substitution `w = tη`
//! absorbs the weight and the `η` integral is taken with the Hermite rule;
//! at `t = 0` it becomes the fiberwise convolution on the algebroid.

use std::fmt;
use std::sync::Arc;

use dashmap::DashMap;
use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{BundleSchwartzField, FieldError, QuadratureDiagnostics, SchwartzDncField};
use crate::groupoid::{haar_weight, wrap_centered, GroupoidError, SharedModel};
use crate::linalg::Matrix;
use crate::quadrature::{integrate, select_rule, FiberRule, QuadratureError, QuadratureSpec};
use crate::scalar::{relative_sup_deviation, Scalar};
use crate::support::{Bounds, ConicCompactSet, FiberExtent};

/// Smallest lattice accepted by [`kernel_composition_oracle`].
pub const MIN_ORACLE_GRID: usize = 64;
/// Half-width, in `ξ = (x - y)/t` units, of the truncated line lattice used
/// by the oracle on `pair-r1`.
pub const ORACLE_LINE_RADIUS: f64 = 16.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvolutionError {
    #[error("fields belong to different groupoid instances: `{left}` and `{right}`")]
    InstanceMismatch { left: String, right: String },
    #[error("field dimensions ({got_p}, {got_q}) do not match the instance ({p}, {q})")]
    Dimension { p: usize, q: usize, got_p: usize, got_q: usize },
    #[error("lattice of {0} points is below the aliasing limit")]
    GridTooSmall(usize),
    #[error("the kernel oracle needs the pair groupoid of the circle or the line")]
    NotPairOfCurve,
    #[error("evaluation parameter t = {0} must lie in (0, 1]")]
    ParameterRange(f64),
    #[error("arrow functions live at different parameters or instances")]
    SliceMismatch,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// A deviation together with the number of fiber integrals that missed the
/// target tolerance while it was computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement<T> {
    pub value: T,
    pub unconverged: usize,
}

/// Unconverged fiber integrals recorded so far by convolution outputs.
pub fn unconverged<T: Scalar>(fields: &[&SchwartzDncField<T>]) -> usize {
    fields.iter().filter_map(|f| f.diagnostics()).map(|d| d.failures()).sum()
}

pub type TwoVariableFn<T> = Arc<dyn Fn(&[T], &[T], &[T], &[T], T) -> T + Send + Sync>;

/// A field on composable pairs `(γ, δ)`, each arrow in `(x, ξ)` chart
/// coordinates at a common `t`. At `t = 0` both base points coincide.
#[derive(Clone)]
pub struct TwoVariableField<T: Scalar> {
    eval: TwoVariableFn<T>,
    p: usize,
    q: usize,
    left_support: Option<ConicCompactSet<T>>,
    right_support: Option<ConicCompactSet<T>>,
    instance: Option<String>,
}

impl<T: Scalar> fmt::Debug for TwoVariableField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoVariableField")
            .field("p", &self.p)
            .field("q", &self.q)
            .field("instance", &self.instance)
            .finish()
    }
}

fn union<T: Scalar>(a: &Option<ConicCompactSet<T>>, b: &Option<ConicCompactSet<T>>) -> Option<ConicCompactSet<T>> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let (p, q) = a.dims();
            ConicCompactSet::new(p, q, a.pieces().iter().chain(b.pieces()).cloned().collect()).ok()
        }
        _ => None,
    }
}

impl<T: Scalar> TwoVariableField<T> {
    pub fn new(
        p: usize,
        q: usize,
        eval: impl Fn(&[T], &[T], &[T], &[T], T) -> T + Send + Sync + 'static,
        left_support: Option<ConicCompactSet<T>>,
        right_support: Option<ConicCompactSet<T>>,
    ) -> Self {
        Self { eval: Arc::new(eval), p, q, left_support, right_support, instance: None }
    }

    /// `(γ, δ) ↦ f(γ) g(δ)`.
    pub fn separated(f: &SchwartzDncField<T>, g: &SchwartzDncField<T>) -> Result<Self, ConvolutionError> {
        let instance = match (f.instance(), g.instance()) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConvolutionError::InstanceMismatch { left: a.into(), right: b.into() })
            }
            (a, b) => a.or(b).map(String::from),
        };
        let (p, q) = f.dims();
        if g.dims() != (p, q) {
            return Err(ConvolutionError::Dimension { p, q, got_p: g.dims().0, got_q: g.dims().1 });
        }
        let (ff, gg) = (f.clone(), g.clone());
        let eval = move |x1: &[T], xi1: &[T], x2: &[T], xi2: &[T], t: T| {
            let a = ff.eval(x1, xi1, t);
            if a == T::zero() {
                return T::zero();
            }
            a * gg.eval(x2, xi2, t)
        };
        let mut out = Self::new(p, q, eval, f.support().cloned(), g.support().cloned());
        out.instance = instance;
        Ok(out)
    }

    pub fn eval(&self, x1: &[T], xi1: &[T], x2: &[T], xi2: &[T], t: T) -> T {
        (self.eval)(x1, xi1, x2, xi2, t)
    }

    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Self {
        let (f, g) = (self.clone(), other.clone());
        Self {
            eval: Arc::new(move |x1, xi1, x2, xi2, t| a * f.eval(x1, xi1, x2, xi2, t) + b * g.eval(x1, xi1, x2, xi2, t)),
            p: self.p,
            q: self.q,
            left_support: union(&self.left_support, &other.left_support),
            right_support: union(&self.right_support, &other.right_support),
            instance: self.instance.clone().or_else(|| other.instance.clone()),
        }
    }
}

fn intersect<T: Scalar>(a: &Bounds<T>, b: &Bounds<T>) -> Bounds<T> {
    a.iter().zip(b).map(|(&(l1, h1), &(l2, h2))| (l1.max(l2), h1.min(h2))).collect()
}

fn scale_bounds<T: Scalar>(b: &Bounds<T>, s: T) -> Bounds<T> {
    b.iter().map(|&(lo, hi)| (lo * s, hi * s)).collect()
}

struct Integrator<T: Scalar> {
    field: TwoVariableField<T>,
    model: SharedModel<T>,
    spec: QuadratureSpec<T>,
    compact_at_zero: bool,
    diagnostics: Arc<QuadratureDiagnostics>,
}

impl<T: Scalar> Integrator<T> {
    fn right_extent(&self, t: T) -> FiberExtent<T> {
        match &self.field.right_support {
            Some(k) => k.fiber_extent(t),
            None => FiberExtent::Unbounded,
        }
    }

    fn value(&self, x: &[T], xi: &[T], t: T) -> T {
        let q = self.field.q;
        let spec = &self.spec;
        let extent = self.right_extent(t);
        let Some(mut rule) = select_rule(spec, q, t, &extent, self.compact_at_zero) else {
            return T::zero();
        };
        let nodes = match rule {
            FiberRule::Hermite { .. } => spec.hermite_nodes,
            FiberRule::Legendre { .. } => spec.legendre_nodes,
        };
        let tol = spec.target_rel_tol;
        if t == T::zero() {
            let f = &self.field;
            let integrand = |eta: &[T]| {
                let diff: Vec<T> = xi.iter().zip(eta).map(|(&a, &b)| a - b).collect();
                f.eval(x, &diff, x, eta, T::zero())
            };
            let out = integrate(q, &rule, nodes, tol, spec.abs_tol, spec.max_refinements, &integrand);
            self.diagnostics.record(out.converged);
            return out.value;
        }

        let model = &self.model;
        let v: Vec<T> = xi.iter().map(|&c| c * t).collect();
        let gamma = model.chart_inverse(x, &v);
        let y = model.source(&gamma);
        let f = &self.field;
        let at_w = |w: &[T]| -> T {
            let delta = model.from_source(&y, w);
            let left = model.compose(&gamma, &model.invert(&delta));
            let (xa, va) = model.chart(&left);
            let (xd, vd) = model.chart(&delta);
            let ea: Vec<T> = va.iter().map(|&c| c / t).collect();
            let ed: Vec<T> = vd.iter().map(|&c| c / t).collect();
            f.eval(&xa, &ea, &xd, &ed, t)
        };
        let domain = model.fiber_domain();

        if t > spec.switch_threshold {
            // groupoid coordinates: w over the right factor's box at t
            let FiberRule::Legendre { bounds } = &rule else { unreachable!("Hermite is never selected above t*") };
            let mut w_box = scale_bounds(bounds, t);
            if let Some(d) = &domain {
                w_box = intersect(&w_box, d);
            }
            let out = integrate(q, &FiberRule::Legendre { bounds: w_box }, nodes, tol, spec.abs_tol, spec.max_refinements, &at_w);
            self.diagnostics.record(out.converged);
            return out.value * haar_weight(q, t).unwrap_or(T::one());
        }

        if let Some(d) = &domain {
            let d = scale_bounds(d, T::one() / t);
            rule = match rule {
                FiberRule::Hermite { scale, clip } => FiberRule::Hermite {
                    scale,
                    clip: Some(match clip {
                        Some(c) => intersect(&c, &d),
                        None => d,
                    }),
                },
                FiberRule::Legendre { bounds } => FiberRule::Legendre { bounds: intersect(&bounds, &d) },
            };
        }
        let integrand = |eta: &[T]| {
            let w: Vec<T> = eta.iter().map(|&c| c * t).collect();
            at_w(&w)
        };
        let out = integrate(q, &rule, nodes, tol, spec.abs_tol, spec.max_refinements, &integrand);
        self.diagnostics.record(out.converged);
        out.value
    }
}

fn memo_key<T: Scalar>(x: &[T], xi: &[T], t: T) -> Vec<u64> {
    x.iter().chain(xi).chain(std::iter::once(&t)).map(|c| c.to_f64_lossy().to_bits()).collect()
}

/// Fiber integration along the multiplication:
/// `m(F)(γ, t) = ∫ F(γ·δ⁻¹, δ, t) t^{-q} dμ_{s(γ)}(δ)`. The result is lazy
/// and memoized per evaluated point.
pub fn m_rc<T: Scalar>(
    field: &TwoVariableField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
) -> Result<SchwartzDncField<T>, ConvolutionError> {
    fiber_product(field, model, spec, true)
}

fn fiber_product<T: Scalar>(
    field: &TwoVariableField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
    skip_outside_support: bool,
) -> Result<SchwartzDncField<T>, ConvolutionError> {
    spec.validate()?;
    let (p, q) = (model.unit_dim(), model.fiber_dim());
    if (field.p, field.q) != (p, q) {
        return Err(ConvolutionError::Dimension { p, q, got_p: field.p, got_q: field.q });
    }
    if let Some(key) = &field.instance {
        if key != model.key() {
            return Err(ConvolutionError::InstanceMismatch { left: key.clone(), right: model.key().to_string() });
        }
    }
    let compact_at_zero = matches!(
        field.right_support.as_ref().map(|k| k.fiber_extent(T::zero())),
        Some(FiberExtent::Bounded(_)) | Some(FiberExtent::Empty)
    );
    let diagnostics = Arc::new(QuadratureDiagnostics::default());
    let support = match (&field.left_support, &field.right_support) {
        (Some(a), Some(b)) => Some(ConicCompactSet::composition_image(a, b)),
        _ => None,
    };
    let integrator = Arc::new(Integrator {
        field: field.clone(),
        model: model.clone(),
        spec: spec.clone(),
        compact_at_zero,
        diagnostics: diagnostics.clone(),
    });
    let memo: Arc<DashMap<Vec<u64>, T>> = Arc::new(DashMap::new());
    let out_support = support.clone().filter(|_| skip_outside_support);
    let eval = move |x: &[T], xi: &[T], t: T| -> T {
        if let Some(k) = &out_support {
            if t > T::zero() {
                let v: Vec<T> = xi.iter().map(|&c| c * t).collect();
                if !k.contains(x, &v, t) {
                    return T::zero();
                }
            }
        }
        let key = memo_key(x, xi, t);
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let value = integrator.value(x, xi, t);
        memo.insert(key, value);
        value
    };
    let mut out = SchwartzDncField::new(p, q, eval)
        .with_instance(model.key())
        .with_diagnostics(diagnostics)
        .with_label("m_rc");
    if let Some(k) = support {
        out = out.with_support(k)?;
    }
    Ok(out)
}

/// `f * g` on the tangent groupoid of `model`.
pub fn convolve<T: Scalar>(
    f: &SchwartzDncField<T>,
    g: &SchwartzDncField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
) -> Result<SchwartzDncField<T>, ConvolutionError> {
    let separated = TwoVariableField::separated(f, g)?;
    Ok(m_rc(&separated, model, spec)?.with_label(format!("({})*({})", f.label(), g.label())))
}

/// [`convolve`] without the shortcut that returns zero outside the
/// estimated support; every point is integrated. Used to test that the
/// support estimate really encloses the product.
pub fn convolve_unrestricted<T: Scalar>(
    f: &SchwartzDncField<T>,
    g: &SchwartzDncField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
) -> Result<SchwartzDncField<T>, ConvolutionError> {
    let separated = TwoVariableField::separated(f, g)?;
    Ok(fiber_product(&separated, model, spec, false)?.with_label(format!("({})*({})", f.label(), g.label())))
}

/// Restriction to `t = 0`: a field on the algebroid.
pub fn evaluate_e0<T: Scalar>(f: &SchwartzDncField<T>) -> BundleSchwartzField<T> {
    let (p, q) = f.dims();
    let g = f.clone();
    let out = BundleSchwartzField::new(p, q, move |x, xi| g.eval(x, xi, T::zero())).with_label(format!("e0({})", f.label()));
    match f.support().and_then(|k| k.x_hull()) {
        Some(b) => out.with_base_support(b),
        None => out,
    }
}

/// A function on the arrows of the base groupoid at a fixed `t > 0`.
#[derive(Clone)]
pub struct ArrowFunction<T: Scalar> {
    eval: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
    model: SharedModel<T>,
    t: T,
    /// Box containing the fiber coordinates of the support, if known.
    fiber_box: Option<Bounds<T>>,
}

impl<T: Scalar> fmt::Debug for ArrowFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ArrowFunction")
            .field("instance", &self.model.key())
            .field("t", &self.t)
            .field("fiber_box", &self.fiber_box)
            .finish()
    }
}

impl<T: Scalar> ArrowFunction<T> {
    pub fn new(
        model: SharedModel<T>,
        t: T,
        fiber_box: Option<Bounds<T>>,
        eval: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self { eval: Arc::new(eval), model, t, fiber_box }
    }

    pub fn eval(&self, arrow: &[T]) -> T {
        (self.eval)(arrow)
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn fiber_box(&self) -> Option<&Bounds<T>> {
        self.fiber_box.as_ref()
    }
}

/// Value of an evaluation map: the algebroid at `t = 0`, the groupoid otherwise.
#[derive(Clone, Debug)]
pub enum Evaluation<T: Scalar> {
    Algebroid(BundleSchwartzField<T>),
    Groupoid(ArrowFunction<T>),
}

/// `e_t(f): γ ↦ f(γ, t)`; `t = 0` is routed to [`evaluate_e0`].
pub fn evaluate_et<T: Scalar>(f: &SchwartzDncField<T>, t: T, model: &SharedModel<T>) -> Result<Evaluation<T>, ConvolutionError> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(ConvolutionError::ParameterRange(t.to_f64_lossy()));
    }
    if t == T::zero() {
        return Ok(Evaluation::Algebroid(evaluate_e0(f)));
    }
    let (g, m) = (f.clone(), model.clone());
    let fiber_box = f.support().map(|k| k.normal_hull_at(t).unwrap_or_else(|| vec![(T::zero(), T::zero()); f.dims().1]));
    Ok(Evaluation::Groupoid(ArrowFunction::new(model.clone(), t, fiber_box, move |arrow| {
        let (x, v) = m.chart(arrow);
        let xi: Vec<T> = v.iter().map(|&c| c / t).collect();
        g.eval(&x, &xi, t)
    })))
}

/// `(a * b)(γ) = ∫_{G_{s(γ)}} a(γ·δ⁻¹) b(δ) t^{-q} dμ(δ)` by Gauss-Legendre
/// in groupoid coordinates over `b`'s fiber box (or `|w| ≤ tR`).
pub fn groupoid_convolve<T: Scalar>(
    a: &ArrowFunction<T>,
    b: &ArrowFunction<T>,
    spec: &QuadratureSpec<T>,
) -> Result<ArrowFunction<T>, ConvolutionError> {
    spec.validate()?;
    if a.t != b.t || a.model.key() != b.model.key() {
        return Err(ConvolutionError::SliceMismatch);
    }
    let (model, t) = (a.model.clone(), a.t);
    let q = model.fiber_dim();
    let mut w_box = match &b.fiber_box {
        Some(bx) => bx.clone(),
        None => vec![(-spec.truncation_radius * t, spec.truncation_radius * t); q],
    };
    if let Some(d) = model.fiber_domain() {
        w_box = intersect(&w_box, &d);
    }
    let weight = haar_weight(q, t)?;
    let fiber_box = match (&a.fiber_box, &b.fiber_box) {
        (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(&(l1, h1), &(l2, h2))| (l1.min(T::zero()) + l2.min(T::zero()), h1.max(T::zero()) + h2.max(T::zero()))).collect()),
        _ => None,
    };
    let (fa, fb, m) = (a.clone(), b.clone(), model.clone());
    let (n, tol, abs_tol, refinements) = (spec.legendre_nodes, spec.target_rel_tol, spec.abs_tol, spec.max_refinements);
    Ok(ArrowFunction::new(model, t, fiber_box, move |gamma: &[T]| {
        let y = m.source(gamma);
        let integrand = |w: &[T]| {
            let delta = m.from_source(&y, w);
            let vb = fb.eval(&delta);
            if vb == T::zero() {
                return T::zero();
            }
            fa.eval(&m.compose(gamma, &m.invert(&delta))) * vb
        };
        integrate(q, &FiberRule::Legendre { bounds: w_box.clone() }, n, tol, abs_tol, refinements, &integrand).value * weight
    }))
}

/// Fiberwise convolution `(f*g)(x, ξ) = ∫ f(x, ξ - η) g(x, η) dη` with the
/// Hermite rule; lazy and memoized.
pub fn bundle_convolve<T: Scalar>(
    f: &BundleSchwartzField<T>,
    g: &BundleSchwartzField<T>,
    spec: &QuadratureSpec<T>,
) -> Result<BundleSchwartzField<T>, ConvolutionError> {
    spec.validate()?;
    let (p, q) = f.dims();
    if g.dims() != (p, q) {
        return Err(ConvolutionError::Dimension { p, q, got_p: g.dims().0, got_q: g.dims().1 });
    }
    let (ff, gg) = (f.clone(), g.clone());
    let rule = FiberRule::Hermite { scale: spec.hermite_scale, clip: None };
    let (n, tol, abs_tol, refinements) = (spec.hermite_nodes, spec.target_rel_tol, spec.abs_tol, spec.max_refinements);
    let memo: Arc<DashMap<Vec<u64>, T>> = Arc::new(DashMap::new());
    let out = BundleSchwartzField::new(p, q, move |x: &[T], xi: &[T]| {
        let key = memo_key(x, xi, T::zero());
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let integrand = |eta: &[T]| {
            let diff: Vec<T> = xi.iter().zip(eta).map(|(&a, &b)| a - b).collect();
            ff.eval(x, &diff) * gg.eval(x, eta)
        };
        let value = integrate(q, &rule, n, tol, abs_tol, refinements, &integrand).value;
        memo.insert(key, value);
        value
    })
    .with_label(format!("({})*({})", f.label(), g.label()));
    Ok(match (f.base_support(), g.base_support()) {
        (Some(a), Some(b)) => out.with_base_support(intersect(a, b)),
        (Some(a), None) | (None, Some(a)) => out.with_base_support(a.clone()),
        (None, None) => out,
    })
}

/// Dense kernel check on the pair groupoid of the circle or the line:
/// samples `e_t(f)`, `e_t(g)` on an `n × n` lattice with spacing `h`,
/// composes them as matrices with weight `t^{-1} h`, and returns the
/// relative sup deviation of `convolve` from the product. The line lattice
/// spans `[-Lt, Lt)` with `L = ORACLE_LINE_RADIUS`, so its resolution of
/// the kernels does not depend on `t`; it is compared on `|x|, |y| ≤ Lt/2`
/// only, away from the truncation edge.
pub fn kernel_composition_oracle<T: Scalar>(
    f: &SchwartzDncField<T>,
    g: &SchwartzDncField<T>,
    t: T,
    n: usize,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
) -> Result<Measurement<T>, ConvolutionError> {
    if n < MIN_ORACLE_GRID {
        return Err(ConvolutionError::GridTooSmall(n));
    }
    let circle = match model.key() {
        "pair-t1" => true,
        "pair-r1" => false,
        _ => return Err(ConvolutionError::NotPairOfCurve),
    };
    if !(t > T::zero() && t <= T::one()) {
        return Err(ConvolutionError::ParameterRange(t.to_f64_lossy()));
    }
    let product = convolve(f, g, model, spec)?;
    let radius = T::lit(ORACLE_LINE_RADIUS) * t;
    let (start, span) = if circle { (T::zero(), T::one()) } else { (-radius, radius + radius) };
    let step = span / T::from_count(n);
    let nodes: Vec<T> = (0..n).map(|i| start + step * T::from_count(i)).collect();
    let coords = |i: usize, j: usize| -> (T, T) {
        let d = nodes[i] - nodes[j];
        (nodes[i], if circle { wrap_centered(d) } else { d } / t)
    };
    let compared: Vec<usize> = (0..n).filter(|&i| circle || nodes[i].abs() <= radius / T::lit(2.0)).collect();
    let pairs: Vec<(usize, usize)> = compared.iter().flat_map(|&i| compared.iter().map(move |&j| (i, j))).collect();
    let sample = |h: &SchwartzDncField<T>| Matrix::from_fn(n, n, |i, j| {
        let (x, xi) = coords(i, j);
        h.eval(&[x], &[xi], t)
    });
    let (fm, gm) = (sample(f), sample(g));
    let weight = haar_weight(1, t)? * step;
    let mut dense = fm.matmul(&gm);
    for i in 0..n {
        for j in 0..n {
            dense[(i, j)] = dense[(i, j)] * weight;
        }
    }
    let values: Vec<T> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, xi) = coords(i, j);
            product.eval(&[x], &[xi], t)
        })
        .collect();
    let reference: Vec<T> = pairs.iter().map(|&(i, j)| dense[(i, j)]).collect();
    Ok(Measurement { value: relative_sup_deviation(&values, &reference), unconverged: unconverged(&[&product]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{build_field, FieldSpec};
    use crate::fields::conic_support_check;
    use crate::groupoid::by_key;

    fn model(key: &str) -> SharedModel<f64> {
        by_key(key).unwrap()
    }

    fn unit_gaussian(m: &SharedModel<f64>) -> SchwartzDncField<f64> {
        build_field(&FieldSpec::new("gaussian", &[1.0]), m.as_ref()).unwrap()
    }

    #[test]
    fn gaussian_closed_form_on_pair_line() {
        let m = model("pair-r1");
        let f = unit_gaussian(&m);
        let ff = convolve(&f, &f, &m, &QuadratureSpec::default()).unwrap();
        let c = std::f64::consts::FRAC_PI_2.sqrt();
        for &t in &[0.0, 0.05, 0.1, 0.3, 1.0] {
            for &xi in &[0.0f64, 0.7, -1.9] {
                let exact = c * (-xi * xi / 2.0).exp();
                let got = ff.eval(&[0.4], &[xi], t);
                assert!((got - exact).abs() < 1e-10, "t = {t}, ξ = {xi}: {got} vs {exact}");
            }
        }
        assert!((ff.eval(&[0.0], &[0.0], 0.5) - 1.253_314_137_315_500_3).abs() < 1e-10);
    }

    #[test]
    fn abelian_self_convolution() {
        let m = model("abelian-q1");
        let f = build_field(&FieldSpec::new("gaussian", &[1.0, 0.0, std::f64::consts::SQRT_2]), m.as_ref()).unwrap();
        let ff = convolve(&f, &f, &m, &QuadratureSpec::default()).unwrap();
        assert!((ff.eval(&[], &[0.0], 0.0) - 1.772_453_850_905_516).abs() < 1e-12);
        let g = unit_gaussian(&m);
        let gg = convolve(&g, &g, &m, &QuadratureSpec::default()).unwrap();
        assert!((gg.eval(&[], &[0.0], 0.0) - 1.253_314_137_315_500_3).abs() < 1e-12);
    }

    #[test]
    fn zero_annihilates_and_mismatch_is_rejected() {
        let m = model("pair-r1");
        let f = unit_gaussian(&m);
        let z = SchwartzDncField::zero(1, 1);
        let fz = convolve(&f, &z, &m, &QuadratureSpec::default()).unwrap();
        for &t in &[0.0, 0.05, 0.6] {
            assert_eq!(fz.eval(&[0.1], &[0.3], t), 0.0);
        }
        let torus = model("pair-t1");
        let h = build_field(&FieldSpec::new("gaussian", &[1.0, 0.0, 0.02, 0.0, 0.0, 0.15, 0.5]), torus.as_ref()).unwrap();
        assert!(matches!(convolve(&f, &h, &m, &QuadratureSpec::default()), Err(ConvolutionError::InstanceMismatch { .. })));
    }

    #[test]
    fn m_rc_linearity_and_support() {
        let m = model("pair-r1");
        let spec = QuadratureSpec::default();
        let f = build_field(&FieldSpec::new("gaussian", &[1.0, 0.3, 1.0, 0.2, 0.5]), m.as_ref()).unwrap();
        // same right-support class on both terms, so both sides use one rule
        let g = build_field(&FieldSpec::new("hermite-gaussian", &[1.0, 2.0, 1.2, 0.1]), m.as_ref()).unwrap();
        let big_f = TwoVariableField::separated(&f, &g).unwrap();
        let big_g = TwoVariableField::separated(&g, &f).unwrap();
        let combo = m_rc(&big_f.linear_combination(2.0, &big_g, -0.5), &m, &spec).unwrap();
        let (a, b) = (m_rc(&big_f, &m, &spec).unwrap(), m_rc(&big_g, &m, &spec).unwrap());
        for &(x, xi, t) in &[(0.1, 0.2, 0.0), (0.4, -0.8, 0.07), (-0.3, 1.1, 0.5)] {
            let lhs = combo.eval(&[x], &[xi], t);
            let rhs = 2.0 * a.eval(&[x], &[xi], t) - 0.5 * b.eval(&[x], &[xi], t);
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
        // both factors compactly supported: product vanishes off the image
        let w = build_field(&FieldSpec::new("windowed-polynomial", &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]), m.as_ref()).unwrap();
        let ww = convolve_unrestricted(&w, &w, &m, &spec).unwrap();
        assert!(conic_support_check(&ww, 300, 4).unwrap().passed);
        // an undersized estimate is caught
        let narrow = w.clone().with_support(
            ConicCompactSet::new(1, 1, vec![crate::support::ConicPiece::cone(None, vec![(-0.3, 0.3)], 1.0, 1.0)]).unwrap(),
        );
        let leaky = convolve_unrestricted(&narrow.unwrap(), &w, &m, &spec).unwrap();
        assert!(!conic_support_check(&leaky, 300, 4).unwrap().passed);
    }

    #[test]
    fn late_support_propagates() {
        let m = model("pair-r1");
        let f = unit_gaussian(&m);
        let late = SchwartzDncField::new(1, 1, |_, xi: &[f64], t: f64| {
            crate::fields::smooth_step((0.5 - t) * 4.0) * (-xi[0] * xi[0]).exp()
        });
        let product = convolve(&late, &f, &m, &QuadratureSpec::default()).unwrap();
        for &t in &[0.5, 0.6, 0.9] {
            assert_eq!(product.eval(&[0.2], &[0.1], t), 0.0);
        }
    }

    #[test]
    fn bundle_convolution_examples() {
        let spec = QuadratureSpec::default();
        let g = BundleSchwartzField::new(0, 1, |_, xi: &[f64]| (-xi[0] * xi[0] / 2.0).exp());
        let gg = bundle_convolve(&g, &g, &spec).unwrap();
        assert!((gg.eval(&[], &[2.0]) - 0.652_049_332_173_292_2).abs() < 1e-12);
        let f = BundleSchwartzField::new(0, 1, |_, xi: &[f64]| (1.0 + xi[0]) * (-xi[0] * xi[0]).exp());
        let (fg, gf) = (bundle_convolve(&f, &g, &spec).unwrap(), bundle_convolve(&g, &f, &spec).unwrap());
        for xi in [-1.5, 0.0, 0.8] {
            assert!((fg.eval(&[], &[xi]) - gf.eval(&[], &[xi])).abs() < 1e-10);
        }
        // mollifier limit
        let sigma = 1e-3;
        let delta = BundleSchwartzField::new(0, 1, move |_, xi: &[f64]| {
            (-(xi[0] / sigma).powi(2) / 2.0).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        });
        let narrow = QuadratureSpec { hermite_scale: sigma * 2f64.sqrt(), ..spec };
        let fd = bundle_convolve(&f, &delta, &narrow).unwrap();
        for xi in [-1.0, 0.0, 0.5] {
            assert!((fd.eval(&[], &[xi]) - f.eval(&[], &[xi])).abs() < 1e-5);
        }
    }

    #[test]
    fn evaluation_maps() {
        let m = model("pair-r1");
        let f = build_field(&FieldSpec::new("gaussian", &[1.0, 0.0, 1.0, 0.0, 1.0]), m.as_ref()).unwrap();
        let e0 = evaluate_e0(&f);
        assert_eq!(e0.eval(&[0.3], &[0.5]), (-0.25f64).exp());
        assert_eq!(evaluate_e0(&f.scaled(2.0)).eval(&[0.3], &[0.5]), 2.0 * e0.eval(&[0.3], &[0.5]));
        let Evaluation::Groupoid(e1) = evaluate_et(&f, 1.0, &m).unwrap() else { panic!() };
        assert_eq!(e1.eval(&[0.3, -0.2]), f.eval(&[0.3], &[0.5], 1.0));
        assert!(matches!(evaluate_et(&f, 0.0, &m).unwrap(), Evaluation::Algebroid(_)));
        let late = SchwartzDncField::new(1, 1, |_, _: &[f64], t: f64| if t < 0.25 { 0.0 } else { 1.0 });
        let Evaluation::Groupoid(e) = evaluate_et(&late, 0.1, &m).unwrap() else { panic!() };
        assert_eq!(e.eval(&[0.0, 0.4]), 0.0);
    }

    #[test]
    fn slice_homomorphism_at_half() {
        let m = model("pair-r1");
        let spec = QuadratureSpec::default();
        let f = build_field(&FieldSpec::new("gaussian", &[1.0, 0.2, 1.0, 0.1, 0.5]), m.as_ref()).unwrap();
        let g = build_field(&FieldSpec::new("gaussian", &[0.5, -0.4, 0.8, 0.3]), m.as_ref()).unwrap();
        let fg = convolve(&f, &g, &m, &spec).unwrap();
        let Evaluation::Groupoid(a) = evaluate_et(&f, 0.5, &m).unwrap() else { panic!() };
        let Evaluation::Groupoid(b) = evaluate_et(&g, 0.5, &m).unwrap() else { panic!() };
        let ab = groupoid_convolve(&a, &b, &spec.independent()).unwrap();
        let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
        for &(x, y) in &[(0.0, 0.3), (0.5, -0.7), (-1.0, -1.2), (1.4, 0.2)] {
            lhs.push(fg.eval(&[x], &[(x - y) / 0.5], 0.5));
            rhs.push(ab.eval(&[x, y]));
        }
        assert!(relative_sup_deviation(&lhs, &rhs) < 1e-8);
    }

    #[test]
    fn kernel_oracle_guards() {
        let torus = model("pair-t1");
        let z = SchwartzDncField::zero(1, 1).with_instance("pair-t1");
        let spec = QuadratureSpec::default();
        assert_eq!(kernel_composition_oracle(&z, &z, 0.3, 64, &torus, &spec).unwrap().value, 0.0);
        assert!(matches!(kernel_composition_oracle(&z, &z, 0.3, 32, &torus, &spec), Err(ConvolutionError::GridTooSmall(32))));
        let abelian = model("abelian-q1");
        let za = SchwartzDncField::zero(0, 1);
        assert!(matches!(
            kernel_composition_oracle(&za, &za, 0.3, 64, &abelian, &spec),
            Err(ConvolutionError::NotPairOfCurve)
        ));
    }

    #[test]
    fn kernel_oracle_on_the_line() {
        let m = model("pair-r1");
        let f = build_field(&FieldSpec::new("gaussian", &[1.0, 0.2, 1.0, 0.1, 0.5]), m.as_ref()).unwrap();
        let g = build_field(&FieldSpec::new("gaussian", &[0.8, -0.3, 0.9, 0.2]), m.as_ref()).unwrap();
        let r = kernel_composition_oracle(&f, &g, 0.3, 128, &m, &QuadratureSpec::default()).unwrap();
        assert!(r.value < 1e-8 && r.unconverged == 0, "{r:?}");
    }
}
