//! Deformation-to-the-normal-cone coordinates.
//!
//! A slice chart identifies an open `U ⊂ R^p × R^q` whose points `(x, 0)`
//! are the embedded submanifold. The deformation space over the chart is
//! parametrised by `(x, ξ, t)` with `(x, tξ) ∈ U`; the parametrisation
//! `psi_forward` sends it to the boundary stratum `(x, ξ, 0)` or to the
//! interior point `((x, tξ), t)`.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::{norm, Scalar};

/// Smallest deformation parameter the quotient branch accepts.
pub const T_FLOOR: f64 = 1e-300;
/// Below this parameter the quotient `F2(x, tξ)/t` is replaced by its
/// first-order Taylor form.
pub const TAYLOR_SWITCH: f64 = 1e-8;

const PROBE_BASE_STEP: f64 = 0.1;
const PROBE_LEVELS: usize = 6;
const PROBE_MIN_ORDER: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtlasError {
    #[error("point x = {x:?}, xi = {xi:?}, t = {t} lies outside the chart domain")]
    DomainViolation { x: Vec<f64>, xi: Vec<f64>, t: f64 },
    #[error("deformation parameter {0} outside [0, 1]")]
    ParameterRange(f64),
    #[error("t = {0} is below the positive floor {T_FLOOR:e} of the quotient branch")]
    BelowFloor(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("finite-difference stencil needs normal radius {required_radius} inside the domain")]
    Stencil { required_radius: f64 },
    #[error("normal component does not vanish on the slice: |F2(x, 0)| = {residual:e} at x = {x:?}")]
    SliceNotFixed { x: Vec<f64>, residual: f64 },
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("chart inversion failed: {0}")]
    Inversion(String),
}

fn lossy<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|c| c.to_f64_lossy()).collect()
}

fn check_dim(expected: usize, got: usize) -> Result<(), AtlasError> {
    if expected == got {
        Ok(())
    } else {
        Err(AtlasError::Dimension { expected, got })
    }
}

pub type DomainTest<T> = Arc<dyn Fn(&[T], &[T]) -> bool + Send + Sync>;

/// An X-slice chart: an open set `U ⊂ R^p × R^q` given by a membership test.
#[derive(Clone)]
pub struct SlicePair<T> {
    p: usize,
    q: usize,
    domain: DomainTest<T>,
}

impl<T> std::fmt::Debug for SlicePair<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlicePair").field("p", &self.p).field("q", &self.q).finish()
    }
}

impl<T: Scalar> SlicePair<T> {
    pub fn new(
        p: usize,
        q: usize,
        domain: impl Fn(&[T], &[T]) -> bool + Send + Sync + 'static,
    ) -> Result<Self, AtlasError> {
        if q == 0 {
            return Err(AtlasError::InvalidChart("normal dimension must be at least 1".into()));
        }
        Ok(Self { p, q, domain: Arc::new(domain) })
    }

    /// `U = R^p × R^q`.
    pub fn whole(p: usize, q: usize) -> Self {
        Self { p, q, domain: Arc::new(|_, _| true) }
    }

    /// Chart of a unit space viewed as a pair with itself (no normal directions).
    pub fn unit_space(p: usize) -> Self {
        Self { p, q: 0, domain: Arc::new(|_, _| true) }
    }

    /// Unit ball of `R^p × R^q`.
    pub fn unit_ball(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            domain: Arc::new(|x: &[T], v: &[T]| {
                x.iter().chain(v).fold(T::zero(), |acc, &c| acc + c * c) < T::one()
            }),
        }
    }

    pub fn unit_dim(&self) -> usize {
        self.p
    }

    pub fn normal_dim(&self) -> usize {
        self.q
    }

    /// Membership of `(x, v)` in `U`.
    pub fn contains(&self, x: &[T], v: &[T]) -> bool {
        x.len() == self.p && v.len() == self.q && (self.domain)(x, v)
    }

    /// Membership of `(x, ξ, t)` in `Ω = {(x, ξ, t) : (x, tξ) ∈ U}`.
    pub fn omega_contains(&self, x: &[T], xi: &[T], t: T) -> bool {
        if t < T::zero() || t > T::one() {
            return false;
        }
        let v: Vec<T> = if t == T::zero() {
            vec![T::zero(); xi.len()]
        } else {
            xi.iter().map(|&c| t * c).collect()
        };
        self.contains(x, &v)
    }

    pub fn psi_forward(&self, x: &[T], xi: &[T], t: T) -> Result<DncPoint<T>, AtlasError> {
        check_dim(self.p, x.len())?;
        check_dim(self.q, xi.len())?;
        if !(t >= T::zero() && t <= T::one()) {
            return Err(AtlasError::ParameterRange(t.to_f64_lossy()));
        }
        if !self.omega_contains(x, xi, t) {
            return Err(AtlasError::DomainViolation { x: lossy(x), xi: lossy(xi), t: t.to_f64_lossy() });
        }
        if t == T::zero() {
            return Ok(DncPoint::Boundary { x: x.to_vec(), xi: xi.to_vec() });
        }
        let mut m = x.to_vec();
        m.extend(xi.iter().map(|&c| t * c));
        Ok(DncPoint::Interior { m, t })
    }

    /// Inverse of [`SlicePair::psi_forward`]: `(x, η/t, t)` on the interior.
    pub fn psi_inverse(&self, pt: &DncPoint<T>) -> Result<(Vec<T>, Vec<T>, T), AtlasError> {
        match pt {
            DncPoint::Boundary { x, xi } => {
                check_dim(self.p, x.len())?;
                check_dim(self.q, xi.len())?;
                Ok((x.clone(), xi.clone(), T::zero()))
            }
            DncPoint::Interior { m, t } => {
                check_dim(self.p + self.q, m.len())?;
                if !(*t > T::zero() && *t <= T::one()) {
                    return Err(AtlasError::ParameterRange(t.to_f64_lossy()));
                }
                let (x, eta) = m.split_at(self.p);
                Ok((x.to_vec(), eta.iter().map(|&c| c / *t).collect(), *t))
            }
        }
    }
}

/// A point of the deformation space: either on the normal bundle at `t = 0`
/// or an ordinary point of the ambient chart at `t ∈ (0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum DncPoint<T> {
    Boundary { x: Vec<T>, xi: Vec<T> },
    Interior { m: Vec<T>, t: T },
}

impl<T: Scalar> DncPoint<T> {
    pub fn interior(m: Vec<T>, t: T) -> Result<Self, AtlasError> {
        if !(t > T::zero() && t <= T::one()) {
            return Err(AtlasError::ParameterRange(t.to_f64_lossy()));
        }
        Ok(Self::Interior { m, t })
    }

    pub fn t(&self) -> T {
        match self {
            Self::Boundary { .. } => T::zero(),
            Self::Interior { t, .. } => *t,
        }
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, Self::Boundary { .. })
    }

    /// Largest coordinate difference; `None` when the strata differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        let diff = |a: &[T], b: &[T]| -> Option<T> {
            (a.len() == b.len())
                .then(|| a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc.max((u - v).abs())))
        };
        match (self, other) {
            (Self::Boundary { x: x1, xi: e1 }, Self::Boundary { x: x2, xi: e2 }) => {
                Some(diff(x1, x2)?.max(diff(e1, e2)?))
            }
            (Self::Interior { m: m1, t: t1 }, Self::Interior { m: m2, t: t2 }) => {
                Some(diff(m1, m2)?.max((*t1 - *t2).abs()))
            }
            _ => None,
        }
    }
}

pub type ComponentMap<T> = Arc<dyn Fn(&[T], &[T]) -> Vec<T> + Send + Sync>;
pub type NormalJacobianFn<T> = Arc<dyn Fn(&[T]) -> Matrix<T> + Send + Sync>;

/// A smooth map of pairs `F = (F1, F2)` between slice charts with
/// `F2(x, 0) = 0`.
#[derive(Clone)]
pub struct PairMorphism<T> {
    source: SlicePair<T>,
    p_out: usize,
    q_out: usize,
    f1: ComponentMap<T>,
    f2: ComponentMap<T>,
    jac_normal: Option<NormalJacobianFn<T>>,
}

impl<T> std::fmt::Debug for PairMorphism<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairMorphism")
            .field("source", &self.source)
            .field("p_out", &self.p_out)
            .field("q_out", &self.q_out)
            .field("explicit_jacobian", &self.jac_normal.is_some())
            .finish()
    }
}

/// Outcome of [`PairMorphism::smoothness_probe`].
#[derive(Clone, Debug)]
pub struct SmoothnessReport<T> {
    pub derivative_order: usize,
    /// Extrapolated one-sided `t`-derivative of the normal part at `t = 0+`.
    pub derivative: Vec<T>,
    /// Median observed convergence order of the Richardson sequence;
    /// `None` once the sequence is exact to rounding.
    pub observed_order: Option<T>,
    pub saturated: bool,
    pub steps: Vec<T>,
    pub richardson: Vec<Vec<T>>,
    pub passed: bool,
}

impl<T: Scalar> PairMorphism<T> {
    pub fn new(
        source: SlicePair<T>,
        p_out: usize,
        q_out: usize,
        f1: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static,
        f2: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self { source, p_out, q_out, f1: Arc::new(f1), f2: Arc::new(f2), jac_normal: None }
    }

    /// Supplies the exact normal Jacobian `∂F2/∂ξ(x, 0)` as a `q_out × q` matrix.
    pub fn with_normal_jacobian(mut self, jac: impl Fn(&[T]) -> Matrix<T> + Send + Sync + 'static) -> Self {
        self.jac_normal = Some(Arc::new(jac));
        self
    }

    pub fn identity(source: SlicePair<T>) -> Self {
        let q = source.q;
        let p = source.p;
        Self::new(source, p, q, |x, _| x.to_vec(), |_, v| v.to_vec())
            .with_normal_jacobian(move |_| Matrix::identity(q))
    }

    pub fn source(&self) -> &SlicePair<T> {
        &self.source
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.p_out, self.q_out)
    }

    pub fn has_explicit_jacobian(&self) -> bool {
        self.jac_normal.is_some()
    }

    /// `F(x, v) = (F1(x, v), F2(x, v))`.
    pub fn eval(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        ((self.f1)(x, v), (self.f2)(x, v))
    }

    pub fn normal_jacobian(&self, x: &[T]) -> Matrix<T> {
        match &self.jac_normal {
            Some(j) => j(x),
            None => self.fd_normal_jacobian(x),
        }
    }

    /// Central differences of `F2` in the normal directions at `ξ = 0`,
    /// step `1e-5 (1 + |x|)`.
    pub fn fd_normal_jacobian(&self, x: &[T]) -> Matrix<T> {
        let q = self.source.q;
        let h = T::lit(1e-5) * (T::one() + norm(x));
        let mut jac = Matrix::zeros(self.q_out, q);
        let mut v = vec![T::zero(); q];
        for j in 0..q {
            v[j] = h;
            let plus = (self.f2)(x, &v);
            v[j] = -h;
            let minus = (self.f2)(x, &v);
            v[j] = T::zero();
            for i in 0..self.q_out {
                jac[(i, j)] = (plus[i] - minus[i]) / (h + h);
            }
        }
        jac
    }

    /// Full `(p_out + q_out) × (p + q)` Jacobian by central differences.
    pub fn fd_full_jacobian(&self, x: &[T], v: &[T]) -> Matrix<T> {
        let (p, q) = (self.source.p, self.source.q);
        let n_out = self.p_out + self.q_out;
        let mut z: Vec<T> = x.iter().chain(v).copied().collect();
        let scale = T::one() + norm(&z);
        let h = T::lit(1e-6) * scale;
        let mut jac = Matrix::zeros(n_out, p + q);
        for j in 0..p + q {
            let orig = z[j];
            z[j] = orig + h;
            let (a1, a2) = self.eval(&z[..p], &z[p..]);
            z[j] = orig - h;
            let (b1, b2) = self.eval(&z[..p], &z[p..]);
            z[j] = orig;
            for (i, (a, b)) in a1.iter().chain(&a2).zip(b1.iter().chain(&b2)).enumerate() {
                jac[(i, j)] = (*a - *b) / (h + h);
            }
        }
        jac
    }

    /// Verifies `F2(x, 0) = 0` at the given slice points (tolerance `1e-12`).
    pub fn check_slice_fixed(&self, samples: &[Vec<T>]) -> Result<(), AtlasError> {
        let zero = vec![T::zero(); self.source.q];
        for x in samples {
            if !self.source.contains(x, &zero) {
                continue;
            }
            let r = norm(&(self.f2)(x, &zero));
            if r > T::lit(1e-12) {
                return Err(AtlasError::SliceNotFixed { x: lossy(x), residual: r.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// Largest relative disagreement between the supplied normal Jacobian and
    /// its finite-difference estimate over the sample points.
    pub fn normal_jacobian_discrepancy(&self, samples: &[Vec<T>]) -> T {
        samples
            .iter()
            .map(|x| {
                let exact = self.normal_jacobian(x);
                let fd = self.fd_normal_jacobian(x);
                exact.max_abs_diff(&fd) / (T::one() + exact.max_abs())
            })
            .fold(T::zero(), T::max)
    }

    /// `after ∘ self`. The normal Jacobian follows the chain rule at the
    /// slice, where `∂(after_2)/∂x' = 0`.
    pub fn then(&self, after: &PairMorphism<T>) -> PairMorphism<T> {
        let (first, second) = (self.clone(), after.clone());
        let (f_a, f_b) = (self.clone(), after.clone());
        let mut composed = PairMorphism::new(
            self.source.clone(),
            after.p_out,
            after.q_out,
            move |x, v| {
                let (y, w) = first.eval(x, v);
                (second.f1)(&y, &w)
            },
            move |x, v| {
                let (y, w) = f_a.eval(x, v);
                (f_b.f2)(&y, &w)
            },
        );
        if self.jac_normal.is_some() && after.jac_normal.is_some() {
            let (inner, outer) = (self.clone(), after.clone());
            let zero_q = vec![T::zero(); self.source.q];
            composed = composed.with_normal_jacobian(move |x| {
                let base = (inner.f1)(x, &zero_q);
                outer.normal_jacobian(&base).matmul(&inner.normal_jacobian(x))
            });
        }
        composed
    }

    /// The deformation lift `F̃` of the morphism in `(x, ξ, t)` coordinates.
    pub fn transition_map(&self, x: &[T], xi: &[T], t: T) -> Result<(Vec<T>, Vec<T>, T), AtlasError> {
        check_dim(self.source.p, x.len())?;
        check_dim(self.source.q, xi.len())?;
        if !(t >= T::zero() && t <= T::one()) {
            return Err(AtlasError::ParameterRange(t.to_f64_lossy()));
        }
        if !self.source.omega_contains(x, xi, t) {
            return Err(AtlasError::DomainViolation { x: lossy(x), xi: lossy(xi), t: t.to_f64_lossy() });
        }
        let q = self.source.q;
        if t == T::zero() {
            let zero = vec![T::zero(); q];
            let base = (self.f1)(x, &zero);
            let normal = self.normal_jacobian(x).apply(xi);
            return Ok((base, normal, T::zero()));
        }
        let floor = T::lit(T_FLOOR).max(T::min_positive_value());
        if t < floor {
            return Err(AtlasError::BelowFloor(t.to_f64_lossy()));
        }
        let v: Vec<T> = xi.iter().map(|&c| t * c).collect();
        let base = (self.f1)(x, &v);
        if t < T::lit(TAYLOR_SWITCH) {
            // F2(x, tξ)/t = J ξ + (t/2) D²F2[ξ, ξ] + O(t²)
            let linear = self.normal_jacobian(x).apply(xi);
            let h = T::lit(1e-4) / (T::one() + norm(xi));
            let plus: Vec<T> = xi.iter().map(|&c| h * c).collect();
            let minus: Vec<T> = xi.iter().map(|&c| -h * c).collect();
            let zero = vec![T::zero(); q];
            let (fp, fm, f0) = ((self.f2)(x, &plus), (self.f2)(x, &minus), (self.f2)(x, &zero));
            let half = T::lit(0.5);
            let normal = linear
                .iter()
                .enumerate()
                .map(|(i, &l)| l + t * half * (fp[i] + fm[i] - f0[i] - f0[i]) / (h * h))
                .collect();
            return Ok((base, normal, t));
        }
        let normal = (self.f2)(x, &v).into_iter().map(|c| c / t).collect();
        Ok((base, normal, t))
    }

    /// The DNC functor on points: `(x, ξ, 0) ↦ (F(x), d_N F_x ξ, 0)` and
    /// `(m, t) ↦ (F(m), t)`.
    pub fn apply_dnc(&self, pt: &DncPoint<T>) -> Result<DncPoint<T>, AtlasError> {
        let (p, q) = (self.source.p, self.source.q);
        match pt {
            DncPoint::Boundary { x, xi } => {
                check_dim(p, x.len())?;
                check_dim(q, xi.len())?;
                let zero = vec![T::zero(); q];
                if !self.source.contains(x, &zero) {
                    return Err(AtlasError::DomainViolation { x: lossy(x), xi: lossy(xi), t: 0.0 });
                }
                Ok(DncPoint::Boundary { x: (self.f1)(x, &zero), xi: self.normal_jacobian(x).apply(xi) })
            }
            DncPoint::Interior { m, t } => {
                check_dim(p + q, m.len())?;
                let (x, v) = m.split_at(p);
                if !self.source.contains(x, v) {
                    return Err(AtlasError::DomainViolation {
                        x: lossy(x),
                        xi: lossy(v),
                        t: t.to_f64_lossy(),
                    });
                }
                let (mut image, normal) = self.eval(x, v);
                image.extend(normal);
                Ok(DncPoint::Interior { m: image, t: *t })
            }
        }
    }

    /// Richardson-extrapolated one-sided `t`-derivative (first or second) of
    /// the normal part of `F̃(x, ξ, ·)` at `t = 0+`, with the observed order
    /// of convergence of the extrapolated sequence.
    pub fn smoothness_probe(&self, x: &[T], xi: &[T], order: usize) -> Result<SmoothnessReport<T>, AtlasError> {
        if order != 1 && order != 2 {
            return Err(AtlasError::InvalidChart(format!("derivative order {order} not in {{1, 2}}")));
        }
        let h0 = T::lit(PROBE_BASE_STEP);
        let t_max = h0 * T::from_count(order);
        if !self.source.omega_contains(x, xi, t_max) {
            return Err(AtlasError::Stencil { required_radius: (t_max * norm(xi)).to_f64_lossy() });
        }
        let normal_at = |t: T| -> Result<Vec<T>, AtlasError> { Ok(self.transition_map(x, xi, t)?.1) };
        let f0 = normal_at(T::zero())?;
        let two = T::lit(2.0);
        let mut steps = Vec::with_capacity(PROBE_LEVELS);
        let mut quotients = Vec::with_capacity(PROBE_LEVELS);
        let mut magnitude = f0.iter().fold(T::zero(), |a, c| a.max(c.abs()));
        let mut h = h0;
        for _ in 0..PROBE_LEVELS {
            let f1 = normal_at(h)?;
            let d: Vec<T> = if order == 1 {
                f1.iter().zip(&f0).map(|(&a, &b)| (a - b) / h).collect()
            } else {
                let f2 = normal_at(two * h)?;
                f2.iter().zip(&f1).zip(&f0).map(|((&c, &b), &a)| (c - b - b + a) / (h * h)).collect()
            };
            magnitude = f1.iter().fold(magnitude, |a, c| a.max(c.abs()));
            steps.push(h);
            quotients.push(d);
            h = h / two;
        }
        // difference quotients carry an O(h) error; one Richardson level removes it
        let richardson: Vec<Vec<T>> = quotients
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(&fine, &coarse)| two * fine - coarse).collect())
            .collect();
        let gaps: Vec<T> = richardson
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).fold(T::zero(), |a, (&u, &v)| a.max((u - v).abs())))
            .collect();
        let noise = |k: usize| -> T {
            T::lit(64.0) * T::epsilon() * (T::one() + magnitude) / steps[k + 1].powi(order as i32)
        };
        let mut orders: Vec<T> = gaps
            .windows(2)
            .enumerate()
            .filter(|(k, w)| w[1] > T::lit(10.0) * noise(k + 1) && w[0] > T::zero())
            .map(|(_, w)| (w[0] / w[1]).log2())
            .collect();
        let saturated = gaps.iter().enumerate().all(|(k, &g)| g <= T::lit(10.0) * noise(k));
        orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let observed_order = if saturated || orders.is_empty() { None } else { Some(orders[orders.len() / 2]) };
        // last extrapolated value whose increment is still above rounding noise
        let usable = gaps
            .iter()
            .enumerate()
            .filter(|(k, &g)| g > T::lit(10.0) * noise(*k))
            .map(|(k, _)| k + 1)
            .last()
            .unwrap_or(richardson.len() - 1);
        let derivative = richardson[usable.min(richardson.len() - 1)].clone();
        let passed = saturated || observed_order.map_or(false, |o| o >= T::lit(PROBE_MIN_ORDER));
        Ok(SmoothnessReport {
            derivative_order: order,
            derivative,
            observed_order,
            saturated,
            steps,
            richardson,
            passed,
        })
    }

    /// Solves `F(z) = (y, w)` by Newton's method from `guess`.
    pub fn invert_point(&self, y: &[T], w: &[T], guess: &[T]) -> Result<Vec<T>, AtlasError> {
        let p = self.source.p;
        let target: Vec<T> = y.iter().chain(w).copied().collect();
        let mut z = guess.to_vec();
        let tol = T::lit(1e-13).max(T::epsilon() * T::lit(16.0));
        for _ in 0..60 {
            let (a, b) = self.eval(&z[..p], &z[p..]);
            let residual: Vec<T> = a.iter().chain(&b).zip(&target).map(|(&u, &v)| u - v).collect();
            let scale = T::one() + norm(&target);
            if norm(&residual) <= tol * scale {
                return Ok(z);
            }
            let jac = self.fd_full_jacobian(&z[..p], &z[p..]);
            let inv = jac
                .inverse()
                .ok_or_else(|| AtlasError::Inversion(format!("singular Jacobian at {:?}", lossy(&z))))?;
            let step = inv.apply(&residual);
            for (zi, si) in z.iter_mut().zip(step) {
                *zi = *zi - si;
            }
        }
        Err(AtlasError::Inversion(format!("Newton did not converge for target {:?}", lossy(&target))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line() -> SlicePair<f64> {
        SlicePair::whole(1, 1)
    }

    fn sine_morphism() -> PairMorphism<f64> {
        PairMorphism::new(line(), 1, 1, |x, _| x.to_vec(), |_, v| vec![v[0].sin()])
            .with_normal_jacobian(|_| Matrix::identity(1))
    }

    fn exp_scaling() -> PairMorphism<f64> {
        PairMorphism::new(line(), 1, 1, |x, _| x.to_vec(), |x, v| vec![x[0].exp() * v[0]])
            .with_normal_jacobian(|x| Matrix::from_rows(1, 1, vec![x[0].exp()]))
    }

    #[test]
    fn psi_forward_examples() {
        let s = line();
        assert_eq!(
            s.psi_forward(&[1.0], &[2.0], 0.0).unwrap(),
            DncPoint::Boundary { x: vec![1.0], xi: vec![2.0] }
        );
        assert_eq!(
            s.psi_forward(&[1.0], &[2.0], 0.5).unwrap(),
            DncPoint::Interior { m: vec![1.0, 1.0], t: 0.5 }
        );
        assert_eq!(
            s.psi_forward(&[0.0], &[0.0], 1.0).unwrap(),
            DncPoint::Interior { m: vec![0.0, 0.0], t: 1.0 }
        );
    }

    #[test]
    fn psi_inverse_examples() {
        let s = line();
        let b = DncPoint::Boundary { x: vec![1.0], xi: vec![2.0] };
        assert_eq!(s.psi_inverse(&b).unwrap(), (vec![1.0], vec![2.0], 0.0));
        let i = DncPoint::Interior { m: vec![1.0, 1.0], t: 0.5 };
        assert_eq!(s.psi_inverse(&i).unwrap(), (vec![1.0], vec![2.0], 0.5));
        let z = DncPoint::Interior { m: vec![3.0, 0.0], t: 0.25 };
        assert_eq!(s.psi_inverse(&z).unwrap(), (vec![3.0], vec![0.0], 0.25));
    }

    #[test]
    fn psi_forward_rejects_points_outside_the_chart() {
        let s = SlicePair::<f64>::unit_ball(1, 1);
        let err = s.psi_forward(&[0.5], &[100.0], 0.01).unwrap_err();
        assert!(matches!(err, AtlasError::DomainViolation { .. }));
        assert!(err.to_string().contains("100"));
    }

    #[test]
    fn omega_examples() {
        let s = SlicePair::<f64>::unit_ball(1, 1);
        assert!(s.omega_contains(&[0.5], &[100.0], 0.0));
        assert!(!s.omega_contains(&[0.5], &[100.0], 0.01));
        assert!(s.omega_contains(&[0.5], &[0.4], 1.0));
    }

    #[test]
    fn interior_constructor_validates_t() {
        assert!(DncPoint::interior(vec![0.0, 0.0], 0.0).is_err());
        assert!(DncPoint::interior(vec![0.0, 0.0], 1.5).is_err());
        assert!(DncPoint::interior(vec![0.0, 0.0], 1.0).is_ok());
    }

    #[test]
    fn transition_map_examples() {
        let e = exp_scaling();
        for t in [0.0, 0.3, 0.7, 1.0] {
            let (_, n, _) = e.transition_map(&[0.0], &[3.0], t).unwrap();
            assert!((n[0] - 3.0).abs() < 1e-15);
        }
        let s = sine_morphism();
        let (_, n, _) = s.transition_map(&[0.0], &[2.0], 0.5).unwrap();
        assert!((n[0] - 1.682_941_969_615_793).abs() < 1e-14);
        let (_, n, t) = s.transition_map(&[0.0], &[2.0], 0.0).unwrap();
        assert_eq!((n[0], t), (2.0, 0.0));
    }

    #[test]
    fn transition_map_floor_and_taylor_branch() {
        let s = sine_morphism();
        assert!(matches!(s.transition_map(&[0.0], &[1.0], 1e-310), Err(AtlasError::BelowFloor(_))));
        // sin(tξ)/t = ξ - t²ξ³/6: the Taylor branch must agree to O(t²)
        let (_, n, _) = s.transition_map(&[0.0], &[2.0], 1e-9).unwrap();
        assert!((n[0] - 2.0).abs() < 1e-15);
        let quad = PairMorphism::new(line(), 1, 1, |x, _| x.to_vec(), |_, v| vec![v[0] + v[0] * v[0]])
            .with_normal_jacobian(|_| Matrix::identity(1));
        let (_, n, _) = quad.transition_map(&[0.0], &[1.0], 5e-9).unwrap();
        assert!((n[0] - (1.0 + 5e-9)).abs() < 1e-15);
    }

    #[test]
    fn functor_examples() {
        let id = PairMorphism::identity(line());
        let pt = DncPoint::Interior { m: vec![0.3, -0.2], t: 0.4 };
        assert_eq!(id.apply_dnc(&pt).unwrap(), pt);
        let e = exp_scaling();
        let b = DncPoint::Boundary { x: vec![0.0], xi: vec![2.0] };
        assert_eq!(e.apply_dnc(&b).unwrap(), b);
        let i = DncPoint::Interior { m: vec![1.0, 2.0], t: 0.5 };
        match e.apply_dnc(&i).unwrap() {
            DncPoint::Interior { m, t } => {
                assert_eq!(t, 0.5);
                assert_eq!(m[0], 1.0);
                assert!((m[1] - 5.436_563_656_918_09).abs() < 1e-14);
            }
            other => panic!("unexpected stratum {other:?}"),
        }
    }

    #[test]
    fn probe_examples() {
        let lin = exp_scaling().smoothness_probe(&[0.0], &[1.0], 1).unwrap();
        assert!(lin.saturated && lin.passed);
        assert!(lin.derivative[0].abs() < 1e-12);

        let s = sine_morphism().smoothness_probe(&[0.0], &[1.0], 1).unwrap();
        assert!(s.passed);
        assert!(s.derivative[0].abs() < 1e-6);
        assert!(s.observed_order.unwrap() >= 1.9);

        let quad = PairMorphism::new(line(), 1, 1, |x, _| x.to_vec(), |_, v| vec![v[0] + v[0] * v[0]])
            .with_normal_jacobian(|_| Matrix::identity(1));
        let r = quad.smoothness_probe(&[0.0], &[1.0], 1).unwrap();
        assert!(r.passed);
        assert!((r.derivative[0] - 1.0).abs() < 1e-6);

        // second derivative of sin(t)/t at 0 is -1/3
        let s2 = sine_morphism().smoothness_probe(&[0.0], &[1.0], 2).unwrap();
        assert!((s2.derivative[0] + 1.0 / 3.0).abs() < 1e-5, "{:?}", s2.derivative);
    }

    #[test]
    fn probe_reports_small_domains() {
        let tight = SlicePair::new(1, 1, |_: &[f64], v: &[f64]| v[0].abs() < 0.05).unwrap();
        let f = PairMorphism::identity(tight);
        match f.smoothness_probe(&[0.0], &[1.0], 1) {
            Err(AtlasError::Stencil { required_radius }) => assert!((required_radius - 0.1).abs() < 1e-12),
            other => panic!("expected stencil error, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_fallback_matches_explicit() {
        let e = exp_scaling();
        let samples: Vec<Vec<f64>> = (-4..=4).map(|i| vec![i as f64 * 0.5]).collect();
        assert!(e.normal_jacobian_discrepancy(&samples) < 1e-6);
        assert!(e.check_slice_fixed(&samples).is_ok());
        let bad = PairMorphism::new(line(), 1, 1, |x, _| x.to_vec(), |_, v| vec![v[0] + 1e-3]);
        assert!(bad.check_slice_fixed(&samples).is_err());
    }

    #[test]
    fn rectangular_morphism_to_unit_space() {
        let src: PairMorphism<f64> =
            PairMorphism::new(SlicePair::whole(1, 2), 1, 0, |x, v| vec![x[0] - v[0]], |_, _| vec![]);
        let b = DncPoint::Boundary { x: vec![0.2], xi: vec![1.0, 2.0] };
        match src.apply_dnc(&b).unwrap() {
            DncPoint::Boundary { x, xi } => {
                assert_eq!(x, vec![0.2]);
                assert!(xi.is_empty());
            }
            other => panic!("unexpected stratum {other:?}"),
        }
    }

    #[test]
    fn f32_round_trip() {
        let s = SlicePair::<f32>::whole(1, 1);
        let pt = s.psi_forward(&[1.0], &[2.0], 0.5).unwrap();
        assert_eq!(s.psi_inverse(&pt).unwrap(), (vec![1.0], vec![2.0], 0.5));
    }

    #[test]
    fn branch_gluing_is_linear_in_t() {
        // the sine lift deviates from its t = 0 value by O(t²) and the quadratic one by O(t)
        let quad = PairMorphism::new(line(), 1, 1, |x, _| x.to_vec(), |_, v| vec![v[0] + v[0] * v[0]])
            .with_normal_jacobian(|_| Matrix::identity(1));
        for f in [sine_morphism(), quad] {
            let base = f.transition_map(&[0.0], &[1.0], 0.0).unwrap().1[0];
            let ts: Vec<f64> = (0..11).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect();
            let logs: Vec<(f64, f64)> = ts
                .iter()
                .map(|&t| (t.ln(), (f.transition_map(&[0.0], &[1.0], t).unwrap().1[0] - base).abs().ln()))
                .collect();
            let n = logs.len() as f64;
            let (mx, my) = (logs.iter().map(|p| p.0).sum::<f64>() / n, logs.iter().map(|p| p.1).sum::<f64>() / n);
            let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
                / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
            assert!(slope >= 0.95, "slope {slope}");
        }
    }

    proptest! {
        #[test]
        fn round_trip(x in -10.0..10.0f64, xi in -10.0..10.0f64, t in 0.0..=1.0f64) {
            let s = line();
            let pt = s.psi_forward(&[x], &[xi], t).unwrap();
            let (x2, xi2, t2) = s.psi_inverse(&pt).unwrap();
            prop_assert_eq!(x2[0], x);
            prop_assert_eq!(t2, t);
            if t == 0.0 {
                prop_assert_eq!(xi2[0].to_bits(), xi.to_bits());
            } else {
                prop_assert!((xi2[0] - xi).abs() <= 4.0 * f64::EPSILON * xi.abs().max(1e-300));
            }
        }

        #[test]
        fn omega_at_zero_ignores_xi(x in -2.0..2.0f64, a in -1e3..1e3f64, b in -1e3..1e3f64) {
            let s = SlicePair::<f64>::unit_ball(1, 1);
            prop_assert_eq!(s.omega_contains(&[x], &[a], 0.0), s.omega_contains(&[x], &[b], 0.0));
        }

        #[test]
        fn domain_is_open(x in -0.9..0.9f64, v in -0.9..0.9f64, dx in -1.0..1.0f64, dv in -1.0..1.0f64) {
            let s = SlicePair::<f64>::unit_ball(1, 1);
            if s.contains(&[x], &[v]) && x * x + v * v < 1.0 - 1e-6 {
                prop_assert!(s.contains(&[x + 1e-9 * dx], &[v + 1e-9 * dv]));
            }
        }
    }

    #[test]
    fn functor_composition_on_random_points() {
        use rand::{Rng, SeedableRng};
        let f = exp_scaling();
        let g = PairMorphism::new(
            line(),
            1,
            1,
            |x, v| vec![x[0] + 0.1 * v[0] * v[0]],
            |x, v| vec![v[0].sin() * (1.0 + 0.2 * x[0].cos())],
        )
        .with_normal_jacobian(|x| Matrix::from_rows(1, 1, vec![1.0 + 0.2 * x[0].cos()]));
        let gf = f.then(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = rng.gen_range(-1.0..1.0);
            let xi = rng.gen_range(-2.0..2.0);
            let t: f64 = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(1e-3..=1.0) };
            let pt = line().psi_forward(&[x], &[xi], t).unwrap();
            let direct = gf.apply_dnc(&pt).unwrap();
            let staged = g.apply_dnc(&f.apply_dnc(&pt).unwrap()).unwrap();
            assert!(direct.max_abs_diff(&staged).unwrap() < 1e-10);
        }
    }
}
