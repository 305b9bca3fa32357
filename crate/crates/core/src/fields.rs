//! Schwartz-type fields on deformation charts and on vector bundles.
//!
//! A field is an immutable, thread-safe closure in `(x, ξ, t)` coordinates
//! with optional conic support, an advisory decay certificate and the chart
//! it lives on.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{AtlasError, DncPoint, PairMorphism, SlicePair};
use crate::scalar::{japanese_bracket_sq, norm, Scalar};
use crate::support::{Bounds, ConicCompactSet, ConicPiece, SupportError};

/// Highest total order `k + m + |l| + |α|` the seminorm estimator accepts.
pub const MAX_SEMINORM_ORDER: usize = 6;
/// Outer radius of the stratified `ξ` grid.
pub const XI_RADIUS_MAX: f64 = 50.0;
const PULLBACK_MAX_CONDITION: f64 = 1e12;
const MAX_REPORTED_VIOLATIONS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("field has no support set")]
    MissingSupport,
    #[error("dimension mismatch: field is ({p}, {q}), operand is ({got_p}, {got_q})")]
    Dimension { p: usize, q: usize, got_p: usize, got_q: usize },
    #[error("total order {0} exceeds the finite-difference budget")]
    OrderTooHigh(usize),
    #[error("map is not invertible near {at:?}: Jacobian condition number {condition:e}")]
    NonInvertible { condition: f64, at: Vec<f64> },
    #[error("cover misses the support at x = {witness:?}")]
    Uncovered { witness: Vec<f64> },
    #[error("invalid sampling grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error(transparent)]
    Support(#[from] SupportError),
}

/// `C^∞` step: 0 for `u ≤ 0`, 1 for `u ≥ 1`.
pub fn smooth_step<T: Scalar>(u: T) -> T {
    if u <= T::zero() {
        return T::zero();
    }
    if u >= T::one() {
        return T::one();
    }
    let a = (-T::one() / u).exp();
    let b = (-T::one() / (T::one() - u)).exp();
    a / (a + b)
}

/// Bump equal to 1 on `[0, plateau]` and 0 beyond `1`, in a radial variable.
pub fn radial_bump<T: Scalar>(r: T, plateau: T) -> T {
    T::one() - smooth_step((r - plateau) / (T::one() - plateau))
}

/// Derivative multi-index `(k, m, l, α)`: weight `(1 + |ξ|²)^k`, `∂_t^m`,
/// `∂_x^l`, `∂_ξ^α`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    pub k: usize,
    pub m: usize,
    pub l: Vec<usize>,
    pub alpha: Vec<usize>,
}

impl MultiIndex {
    pub fn new(k: usize, m: usize, l: Vec<usize>, alpha: Vec<usize>) -> Self {
        Self { k, m, l, alpha }
    }

    pub fn zero(p: usize, q: usize) -> Self {
        Self { k: 0, m: 0, l: vec![0; p], alpha: vec![0; q] }
    }

    pub fn weight(k: usize, p: usize, q: usize) -> Self {
        Self { k, ..Self::zero(p, q) }
    }

    pub fn derivative_order(&self) -> usize {
        self.m + self.l.iter().sum::<usize>() + self.alpha.iter().sum::<usize>()
    }

    pub fn total_order(&self) -> usize {
        self.k + self.derivative_order()
    }

    /// Every index of total order at most `order`, in a fixed order.
    pub fn all_up_to(p: usize, q: usize, order: usize) -> Vec<Self> {
        let slots = p + q + 2;
        let mut out = Vec::new();
        let mut current = vec![0usize; slots];
        fn walk(slot: usize, budget: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if slot == current.len() {
                out.push(current.clone());
                return;
            }
            for n in 0..=budget {
                current[slot] = n;
                walk(slot + 1, budget - n, current, out);
            }
            current[slot] = 0;
        }
        let mut raw = Vec::new();
        walk(0, order, &mut current, &mut raw);
        for c in raw {
            out.push(Self { k: c[0], m: c[1], l: c[2..2 + p].to_vec(), alpha: c[2 + p..].to_vec() });
        }
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} m={} l={:?} alpha={:?}", self.k, self.m, self.l, self.alpha)
    }
}

/// Claimed seminorm bounds; advisory until checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate<T> {
    pub bounds: Vec<(MultiIndex, T)>,
}

impl<T: Scalar> DecayCertificate<T> {
    pub fn claimed(&self, idx: &MultiIndex) -> Option<T> {
        self.bounds.iter().find(|(i, _)| i == idx).map(|&(_, c)| c)
    }

    pub fn max_order(&self) -> usize {
        self.bounds.iter().map(|(i, _)| i.total_order()).max().unwrap_or(0)
    }
}

/// Failure counters shared by lazily evaluated fields.
#[derive(Debug, Default)]
pub struct QuadratureDiagnostics {
    failures: AtomicUsize,
    evaluations: AtomicUsize,
}

impl QuadratureDiagnostics {
    pub fn record(&self, converged: bool) {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        if !converged {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

pub type FieldFn<T> = Arc<dyn Fn(&[T], &[T], T) -> T + Send + Sync>;

/// A field on `Ω ⊂ R^p × R^q × [0, 1]` in `(x, ξ, t)` coordinates.
#[derive(Clone)]
pub struct SchwartzDncField<T: Scalar> {
    eval: FieldFn<T>,
    p: usize,
    q: usize,
    support: Option<ConicCompactSet<T>>,
    certificate: Option<DecayCertificate<T>>,
    chart: Option<SlicePair<T>>,
    instance: Option<String>,
    label: String,
    diagnostics: Option<Arc<QuadratureDiagnostics>>,
}

impl<T: Scalar> fmt::Debug for SchwartzDncField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SchwartzDncField")
            .field("label", &self.label)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("instance", &self.instance)
            .field("support", &self.support)
            .finish()
    }
}

impl<T: Scalar> SchwartzDncField<T> {
    pub fn new(p: usize, q: usize, eval: impl Fn(&[T], &[T], T) -> T + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            p,
            q,
            support: None,
            certificate: None,
            chart: None,
            instance: None,
            label: String::from("field"),
            diagnostics: None,
        }
    }

    pub fn zero(p: usize, q: usize) -> Self {
        Self::new(p, q, |_, _, _| T::zero())
            .with_label("zero")
            .with_support(ConicCompactSet::empty(p, q))
            .expect("empty support has matching dimensions")
    }

    pub fn with_support(mut self, support: ConicCompactSet<T>) -> Result<Self, FieldError> {
        let (p, q) = support.dims();
        if (p, q) != (self.p, self.q) {
            return Err(FieldError::Dimension { p: self.p, q: self.q, got_p: p, got_q: q });
        }
        self.support = Some(support);
        Ok(self)
    }

    pub fn with_certificate(mut self, certificate: DecayCertificate<T>) -> Self {
        self.certificate = Some(certificate);
        self
    }

    pub fn with_chart(mut self, chart: SlicePair<T>) -> Result<Self, FieldError> {
        if (chart.unit_dim(), chart.normal_dim()) != (self.p, self.q) {
            return Err(FieldError::Dimension {
                p: self.p,
                q: self.q,
                got_p: chart.unit_dim(),
                got_q: chart.normal_dim(),
            });
        }
        self.chart = Some(chart);
        Ok(self)
    }

    pub fn with_instance(mut self, key: impl Into<String>) -> Self {
        self.instance = Some(key.into());
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_diagnostics(mut self, diagnostics: Arc<QuadratureDiagnostics>) -> Self {
        self.diagnostics = Some(diagnostics);
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn support(&self) -> Option<&ConicCompactSet<T>> {
        self.support.as_ref()
    }

    pub fn certificate(&self) -> Option<&DecayCertificate<T>> {
        self.certificate.as_ref()
    }

    pub fn chart(&self) -> Option<&SlicePair<T>> {
        self.chart.as_ref()
    }

    pub fn instance(&self) -> Option<&str> {
        self.instance.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn diagnostics(&self) -> Option<&Arc<QuadratureDiagnostics>> {
        self.diagnostics.as_ref()
    }

    /// Whether `(x, ξ, t)` lies in the chart domain `Ω`.
    pub fn in_domain(&self, x: &[T], xi: &[T], t: T) -> bool {
        match &self.chart {
            Some(c) => c.omega_contains(x, xi, t),
            None => t >= T::zero() && t <= T::one(),
        }
    }

    /// Value at `(x, ξ, t)`; zero outside the chart domain.
    pub fn eval(&self, x: &[T], xi: &[T], t: T) -> T {
        if self.chart.is_some() && !self.in_domain(x, xi, t) {
            return T::zero();
        }
        (self.eval)(x, xi, t)
    }

    /// Value at a deformation-space point, read through `Ψ^{-1}`.
    pub fn eval_point(&self, pt: &DncPoint<T>) -> Result<T, FieldError> {
        let chart = self.chart.clone().unwrap_or_else(|| SlicePair::whole(self.p, self.q.max(1)));
        let (x, xi, t) = chart.psi_inverse(pt)?;
        Ok(self.eval(&x, &xi, t))
    }

    pub fn evaluator(&self) -> FieldFn<T> {
        let f = self.clone();
        Arc::new(move |x, xi, t| f.eval(x, xi, t))
    }

    pub fn scaled(&self, a: T) -> Self {
        let f = self.clone();
        Self {
            eval: Arc::new(move |x, xi, t| a * f.eval(x, xi, t)),
            certificate: self.certificate.as_ref().map(|c| DecayCertificate {
                bounds: c.bounds.iter().map(|(i, b)| (i.clone(), *b * a.abs())).collect(),
            }),
            label: format!("{}*{}", a, self.label),
            diagnostics: None,
            ..self.clone()
        }
    }

    /// `a·self + b·other`; the support is the union of both supports.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Result<Self, FieldError> {
        self.check_dims(other)?;
        let (f, g) = (self.clone(), other.clone());
        let support = match (&self.support, &other.support) {
            (Some(k1), Some(k2)) => Some(ConicCompactSet::new(
                self.p,
                self.q,
                k1.pieces().iter().chain(k2.pieces()).cloned().collect(),
            )?),
            _ => None,
        };
        Ok(Self {
            eval: Arc::new(move |x, xi, t| a * f.eval(x, xi, t) + b * g.eval(x, xi, t)),
            support,
            certificate: None,
            label: format!("{}+{}", self.label, other.label),
            diagnostics: None,
            ..self.clone()
        })
    }

    /// Pointwise product; supported inside either factor's support.
    pub fn product(&self, other: &Self) -> Result<Self, FieldError> {
        self.check_dims(other)?;
        let (f, g) = (self.clone(), other.clone());
        Ok(Self {
            eval: Arc::new(move |x, xi, t| f.eval(x, xi, t) * g.eval(x, xi, t)),
            support: self.support.clone().or_else(|| other.support.clone()),
            certificate: None,
            label: format!("{}.{}", self.label, other.label),
            diagnostics: None,
            ..self.clone()
        })
    }

    fn check_dims(&self, other: &Self) -> Result<(), FieldError> {
        if self.dims() != other.dims() {
            return Err(FieldError::Dimension { p: self.p, q: self.q, got_p: other.p, got_q: other.q });
        }
        Ok(())
    }
}

/// A field on a trivial bundle `X × R^q`, Schwartz in the fiber.
#[derive(Clone)]
pub struct BundleSchwartzField<T: Scalar> {
    eval: Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>,
    p: usize,
    q: usize,
    base_support: Option<Bounds<T>>,
    label: String,
}

impl<T: Scalar> fmt::Debug for BundleSchwartzField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BundleSchwartzField")
            .field("label", &self.label)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("base_support", &self.base_support)
            .finish()
    }
}

impl<T: Scalar> BundleSchwartzField<T> {
    pub fn new(p: usize, q: usize, eval: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(eval), p, q, base_support: None, label: String::from("bundle-field") }
    }

    pub fn with_base_support(mut self, b: Bounds<T>) -> Self {
        self.base_support = Some(b);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn base_support(&self) -> Option<&Bounds<T>> {
        self.base_support.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[T], xi: &[T]) -> T {
        (self.eval)(x, xi)
    }

    pub fn scaled(&self, a: T) -> Self {
        let f = self.clone();
        Self { eval: Arc::new(move |x, xi| a * f.eval(x, xi)), ..self.clone() }
    }

    /// Largest `|g(x, ξ)|` at sampled `x` outside the base support; `None`
    /// without a base support.
    pub fn base_leakage(&self, n_samples: usize, seed: u64, xi_radius: T) -> Option<T> {
        let b = self.base_support.as_ref()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = T::zero();
        let mut tested = 0;
        while tested < n_samples {
            let x: Vec<T> = b
                .iter()
                .map(|&(lo, hi)| {
                    let w = (hi - lo).max(T::one());
                    lo - w + T::lit(rng.gen::<f64>()) * (hi - lo + w + w)
                })
                .collect();
            if x.iter().zip(b).all(|(&c, &(lo, hi))| c >= lo && c <= hi) {
                continue;
            }
            let xi: Vec<T> = (0..self.q).map(|_| xi_radius * T::lit(rng.gen_range(-1.0..1.0))).collect();
            worst = worst.max(self.eval(&x, &xi).abs());
            tested += 1;
        }
        Some(worst)
    }

    /// `sup (1 + |ξ|²)^k |g(x, ξ)|` over the given samples.
    pub fn weighted_sup(&self, k: usize, xs: &[Vec<T>], xis: &[Vec<T>]) -> T {
        xs.iter()
            .flat_map(|x| xis.iter().map(move |xi| (x, xi)))
            .map(|(x, xi)| japanese_bracket_sq(xi).powi(k as i32) * self.eval(x, xi).abs())
            .fold(T::zero(), T::max)
    }
}

/// Sampling plan for seminorm estimates: `x` points, `t` values and a
/// stratified `ξ` set (uniform near 0, logarithmic shells out to `R_max`).
#[derive(Clone, Debug)]
pub struct SeminormGrid<T> {
    pub x_points: Vec<Vec<T>>,
    pub t_values: Vec<T>,
    pub dense: Vec<Vec<T>>,
    /// `(radius, points on that shell)`, increasing in radius.
    pub shells: Vec<(T, Vec<Vec<T>>)>,
}

impl<T: Scalar> SeminormGrid<T> {
    /// `n_x` points per axis across `x_box`, `n_dense` per axis on
    /// `[-2, 2]^q`, and `n_shells` log-spaced radii in `[2, r_max]` along the
    /// coordinate axes and the diagonal.
    pub fn stratified(
        x_box: &Bounds<T>,
        n_x: usize,
        q: usize,
        t_values: Vec<T>,
        n_dense: usize,
        n_shells: usize,
        r_max: T,
    ) -> Result<Self, FieldError> {
        if t_values.is_empty() || t_values.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
            return Err(FieldError::InvalidGrid("t values must be non-empty and inside [0, 1]".into()));
        }
        if n_dense < 2 || n_shells < 3 || !(r_max > T::lit(2.0)) {
            return Err(FieldError::InvalidGrid("need n_dense ≥ 2, n_shells ≥ 3 and r_max > 2".into()));
        }
        let axis = |lo: T, hi: T, n: usize| -> Vec<T> {
            if n <= 1 {
                return vec![(lo + hi) * T::lit(0.5)];
            }
            (0..n).map(|i| lo + (hi - lo) * T::from_count(i) / T::from_count(n - 1)).collect()
        };
        let x_points = tensor(&x_box.iter().map(|&(lo, hi)| axis(lo, hi, n_x)).collect::<Vec<_>>());
        let two = T::lit(2.0);
        let dense = tensor(&vec![axis(-two, two, n_dense); q]);
        let mut directions: Vec<Vec<T>> = Vec::new();
        for i in 0..q {
            for sign in [T::one(), -T::one()] {
                let mut d = vec![T::zero(); q];
                d[i] = sign;
                directions.push(d);
            }
        }
        if q > 1 {
            let c = T::one() / T::from_count(q).sqrt();
            directions.push(vec![c; q]);
            directions.push(vec![-c; q]);
        }
        let ratio = (r_max / two).ln() / T::from_count(n_shells - 1);
        let shells = (0..n_shells)
            .map(|i| {
                let r = two * (ratio * T::from_count(i)).exp();
                (r, directions.iter().map(|d| d.iter().map(|&c| c * r).collect()).collect())
            })
            .collect();
        Ok(Self { x_points, t_values, dense, shells })
    }

    /// Default plan for a field: its support x-hull (or `[-1, 1]^p`), five
    /// `t` values and `R_max = 50`.
    pub fn for_field(f: &SchwartzDncField<T>) -> Self {
        let (p, q) = f.dims();
        let x_box = f
            .support()
            .and_then(|k| k.x_hull())
            .unwrap_or_else(|| vec![(-T::one(), T::one()); p]);
        let t_values = [0.0, 0.05, 0.25, 0.5, 1.0].iter().map(|&t| T::lit(t)).collect();
        Self::stratified(&x_box, 5, q, t_values, 33, 16, T::lit(XI_RADIUS_MAX)).expect("default grid is valid")
    }

    pub fn size(&self) -> usize {
        let xi = self.dense.len() + self.shells.iter().map(|(_, s)| s.len()).sum::<usize>();
        self.x_points.len().max(1) * self.t_values.len() * xi
    }
}

fn tensor<T: Scalar>(axes: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<T>| {
                axis.iter().map(move |&c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

/// Seminorm estimate outcome.
#[derive(Clone, Debug, PartialEq)]
pub enum SeminormReport<T> {
    Bounded { estimate: T, samples: usize, argmax: (Vec<T>, Vec<T>, T) },
    /// Weighted values keep growing through the outer shells.
    Unbounded { shell_maxima: Vec<T> },
}

impl<T: Scalar> SeminormReport<T> {
    pub fn estimate(&self) -> Option<T> {
        match self {
            Self::Bounded { estimate, .. } => Some(*estimate),
            Self::Unbounded { .. } => None,
        }
    }
}

struct Stencil<'a, T: Scalar> {
    f: &'a SchwartzDncField<T>,
    p: usize,
    q: usize,
    axes: Vec<usize>,
}

impl<T: Scalar> Stencil<'_, T> {
    fn at(&self, z: &[T]) -> Option<T> {
        let (x, rest) = z.split_at(self.p);
        let (xi, t) = rest.split_at(self.q);
        let t = t[0];
        if !self.f.in_domain(x, xi, t) {
            return None;
        }
        Some((self.f.eval)(x, xi, t))
    }

    /// Nested difference quotient along `axes[depth..]`. The `t` axis uses
    /// one-sided second-order stencils when a central one would leave `[0, 1]`.
    fn nested(&self, z: &mut Vec<T>, depth: usize, h: T) -> Option<T> {
        if depth == self.axes.len() {
            return self.at(z);
        }
        let axis = self.axes[depth];
        let t_axis = self.p + self.q;
        let c = z[axis];
        let eval_at = |offset: T, z: &mut Vec<T>| -> Option<T> {
            z[axis] = c + offset;
            let v = self.nested(z, depth + 1, h);
            z[axis] = c;
            v
        };
        if axis == t_axis {
            let remaining = T::from_count(self.axes[depth..].iter().filter(|&&a| a == t_axis).count());
            let two = T::lit(2.0);
            if c - remaining * h < T::zero() {
                let (a, b, d) = (eval_at(T::zero(), z)?, eval_at(h, z)?, eval_at(two * h, z)?);
                return Some((-T::lit(3.0) * a + T::lit(4.0) * b - d) / (two * h));
            }
            if c + remaining * h > T::one() {
                let (a, b, d) = (eval_at(T::zero(), z)?, eval_at(-h, z)?, eval_at(-two * h, z)?);
                return Some((T::lit(3.0) * a - T::lit(4.0) * b + d) / (two * h));
            }
        }
        let (plus, minus) = (eval_at(h, z)?, eval_at(-h, z)?);
        Some((plus - minus) / (h + h))
    }

    /// Richardson-extrapolated derivative, shrinking the step when a
    /// stencil point leaves the domain.
    fn derivative(&self, z: &[T]) -> Option<T> {
        let n = self.axes.len();
        if n == 0 {
            return self.at(z);
        }
        let mut h = T::lit(1e-4).max(T::epsilon().powf(T::one() / T::from_count(n + 2)));
        let mut buf = z.to_vec();
        for _ in 0..5 {
            let coarse = self.nested(&mut buf, 0, h);
            let fine = self.nested(&mut buf, 0, h * T::lit(0.5));
            if let (Some(c), Some(f)) = (coarse, fine) {
                return Some((T::lit(4.0) * f - c) / T::lit(3.0));
            }
            h = h * T::lit(0.5);
        }
        None
    }
}

/// Sampled `sup (1 + |ξ|²)^k |∂_x^l ∂_ξ^α ∂_t^m f|` over the grid, with
/// divergence detection on the outer shells.
pub fn seminorm_estimate<T: Scalar>(
    f: &SchwartzDncField<T>,
    idx: &MultiIndex,
    grid: &SeminormGrid<T>,
) -> Result<SeminormReport<T>, FieldError> {
    let (p, q) = f.dims();
    if idx.l.len() != p || idx.alpha.len() != q {
        return Err(FieldError::Dimension { p, q, got_p: idx.l.len(), got_q: idx.alpha.len() });
    }
    if idx.total_order() > MAX_SEMINORM_ORDER {
        return Err(FieldError::OrderTooHigh(idx.total_order()));
    }
    let mut axes = Vec::new();
    for (i, &n) in idx.l.iter().enumerate() {
        axes.extend(std::iter::repeat(i).take(n));
    }
    for (j, &n) in idx.alpha.iter().enumerate() {
        axes.extend(std::iter::repeat(p + j).take(n));
    }
    axes.extend(std::iter::repeat(p + q).take(idx.m));
    let stencil = Stencil { f, p, q, axes };
    let weight = |xi: &[T]| japanese_bracket_sq(xi).powi(idx.k as i32);

    let xs: Vec<Vec<T>> = if grid.x_points.is_empty() { vec![Vec::new()] } else { grid.x_points.clone() };
    let strata: Vec<(&Vec<T>, T)> = xs.iter().flat_map(|x| grid.t_values.iter().map(move |&t| (x, t))).collect();
    let n_shells = grid.shells.len();

    struct Stratum<T> {
        dense: T,
        best: T,
        arg: Vec<T>,
        shells: Vec<T>,
        count: usize,
    }
    let per_stratum: Vec<Stratum<T>> = strata
        .par_iter()
        .map(|&(x, t)| {
            let mut z: Vec<T> = x.iter().copied().chain(std::iter::repeat(T::zero()).take(q)).collect();
            z.push(t);
            let mut sample = |xi: &[T]| -> Option<T> {
                z[p..p + q].copy_from_slice(xi);
                stencil.derivative(&z).map(|d| weight(xi) * d.abs())
            };
            let mut out = Stratum { dense: T::zero(), best: T::zero(), arg: vec![T::zero(); q], shells: vec![T::zero(); n_shells], count: 0 };
            for xi in &grid.dense {
                if let Some(v) = sample(xi) {
                    out.count += 1;
                    out.dense = out.dense.max(v);
                    if v > out.best || v.is_nan() {
                        out.best = v;
                        out.arg = xi.clone();
                    }
                }
            }
            for (i, (_, pts)) in grid.shells.iter().enumerate() {
                for xi in pts {
                    if let Some(v) = sample(xi) {
                        out.count += 1;
                        out.shells[i] = out.shells[i].max(v);
                        if v > out.best || v.is_nan() {
                            out.best = v;
                            out.arg = xi.clone();
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut shell_maxima = vec![T::zero(); n_shells];
    let mut dense_max = T::zero();
    let mut estimate = T::zero();
    let mut argmax = (xs[0].clone(), vec![T::zero(); q], grid.t_values[0]);
    let mut samples = 0;
    for (s, &(x, t)) in per_stratum.into_iter().zip(&strata) {
        samples += s.count;
        for (acc, v) in shell_maxima.iter_mut().zip(&s.shells) {
            *acc = acc.max(*v);
        }
        dense_max = dense_max.max(s.dense);
        if s.best > estimate || s.best.is_nan() {
            estimate = s.best;
            argmax = (x.clone(), s.arg, t);
        }
    }
    if n_shells >= 3 {
        let tail = &shell_maxima[n_shells - 3..];
        let growing = tail[0] < tail[1] && tail[1] < tail[2];
        if growing && tail[2] > dense_max && tail[2] > T::zero() {
            return Ok(SeminormReport::Unbounded { shell_maxima });
        }
    }
    if !estimate.is_finite() {
        return Ok(SeminormReport::Unbounded { shell_maxima });
    }
    Ok(SeminormReport::Bounded { estimate, samples, argmax })
}

/// A sampled point outside the support where the field does not vanish.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportViolation {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub t: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportCheckReport {
    pub passed: bool,
    pub tested: usize,
    pub violation_count: usize,
    pub violations: Vec<SupportViolation>,
}

/// Samples `(x, ξ, t)` with `t > 0` and `(x, tξ, t) ∉ K` and requires the
/// field to vanish exactly there.
pub fn conic_support_check<T: Scalar>(
    f: &SchwartzDncField<T>,
    n_samples: usize,
    seed: u64,
) -> Result<SupportCheckReport, FieldError> {
    let k = f.support().ok_or(FieldError::MissingSupport)?;
    let (p, q) = f.dims();
    let x_box: Bounds<T> = match k.x_hull() {
        Some(b) => b
            .iter()
            .map(|&(lo, hi)| {
                let pad = (hi - lo) * T::lit(0.5) + T::lit(0.25);
                (lo - pad, hi + pad)
            })
            .collect(),
        None => vec![(-T::one(), T::lit(2.0)); p],
    };
    let v_box: Bounds<T> = match k.normal_hull() {
        Some(b) => b
            .iter()
            .map(|&(lo, hi)| {
                let r = lo.abs().max(hi.abs()) * T::lit(1.5) + T::lit(0.1);
                (-r, r)
            })
            .collect(),
        None => vec![(-T::one(), T::one()); q],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_samples);
    let mut attempts = 0usize;
    while points.len() < n_samples && attempts < 200 * n_samples.max(1) {
        attempts += 1;
        let draw = |b: &Bounds<T>, rng: &mut ChaCha8Rng| -> Vec<T> {
            b.iter().map(|&(lo, hi)| lo + (hi - lo) * T::lit(rng.gen::<f64>())).collect()
        };
        let x = draw(&x_box, &mut rng);
        let v = draw(&v_box, &mut rng);
        let t = T::one() - T::lit(rng.gen::<f64>());
        if !(t > T::zero()) || k.contains(&x, &v, t) {
            continue;
        }
        let xi: Vec<T> = v.iter().map(|&c| c / t).collect();
        if !f.in_domain(&x, &xi, t) {
            continue;
        }
        points.push((x, xi, t));
    }
    let values: Vec<T> = points.par_iter().map(|(x, xi, t)| f.eval(x, xi, *t)).collect();
    let lossy = |v: &[T]| v.iter().map(|c| c.to_f64_lossy()).collect::<Vec<f64>>();
    let mut violations = Vec::new();
    let mut violation_count = 0;
    for ((x, xi, t), value) in points.iter().zip(&values) {
        if *value != T::zero() {
            violation_count += 1;
            if violations.len() < MAX_REPORTED_VIOLATIONS {
                violations.push(SupportViolation {
                    x: lossy(x),
                    xi: lossy(xi),
                    t: t.to_f64_lossy(),
                    value: value.to_f64_lossy(),
                });
            }
        }
    }
    Ok(SupportCheckReport { passed: violation_count == 0, tested: points.len(), violation_count, violations })
}

/// `f ∘ F̃` for a diffeomorphism of slice charts. The support is the
/// preimage of `f`'s support, enclosed by sampling Newton preimages of
/// each piece at several profile scales.
pub fn pullback<T: Scalar>(f: &SchwartzDncField<T>, map: &PairMorphism<T>) -> Result<SchwartzDncField<T>, FieldError> {
    let (p, q) = (map.source().unit_dim(), map.source().normal_dim());
    let (p_out, q_out) = map.output_dims();
    if (p_out, q_out) != f.dims() || (p, q) != f.dims() {
        return Err(FieldError::Dimension { p: f.dims().0, q: f.dims().1, got_p: p, got_q: q });
    }
    let slice_samples: Vec<Vec<T>> = match f.support().and_then(|k| k.x_hull()) {
        Some(b) => corner_grid(&b, 3),
        None => corner_grid(&vec![(-T::one(), T::one()); p], 3),
    };
    map.check_slice_fixed(&slice_samples)?;
    let zero_v = vec![T::zero(); q];
    for x in &slice_samples {
        check_condition(map, x, &zero_v)?;
    }

    let support = match f.support() {
        Some(k) => Some(preimage_support(k, map)?),
        None => None,
    };
    let (g, m) = (f.clone(), map.clone());
    let out = SchwartzDncField::new(p, q, move |x: &[T], xi: &[T], t: T| match m.transition_map(x, xi, t) {
        Ok((y, zeta, s)) => g.eval(&y, &zeta, s),
        Err(_) => T::zero(),
    })
    .with_label(format!("pullback({})", f.label()))
    .with_chart(map.source().clone())?;
    let out = match f.instance() {
        Some(key) => out.with_instance(key),
        None => out,
    };
    match support {
        Some(k) => out.with_support(k),
        None => Ok(out),
    }
}

fn check_condition<T: Scalar>(map: &PairMorphism<T>, x: &[T], v: &[T]) -> Result<(), FieldError> {
    let jac = map.fd_full_jacobian(x, v);
    let condition = jac.condition_number();
    if !(condition.to_f64_lossy() <= PULLBACK_MAX_CONDITION) {
        return Err(FieldError::NonInvertible {
            condition: condition.to_f64_lossy(),
            at: x.iter().chain(v).map(|c| c.to_f64_lossy()).collect(),
        });
    }
    Ok(())
}

fn corner_grid<T: Scalar>(b: &Bounds<T>, n: usize) -> Vec<Vec<T>> {
    let axes: Vec<Vec<T>> = b
        .iter()
        .map(|&(lo, hi)| (0..n).map(|i| lo + (hi - lo) * T::from_count(i) / T::from_count(n - 1)).collect())
        .collect();
    tensor(&axes)
}

fn preimage_support<T: Scalar>(k: &ConicCompactSet<T>, map: &PairMorphism<T>) -> Result<ConicCompactSet<T>, FieldError> {
    let (p, q) = k.dims();
    let scales = [0.125, 0.25, 0.5, 1.0];
    let mut pieces = Vec::new();
    for piece in k.pieces() {
        let x_targets = corner_grid(piece.x_box.as_ref().unwrap_or(&vec![(T::zero(), T::one()); p]), 5);
        let v_targets = corner_grid(&piece.normal, 5);
        let mut x_hull: Option<Bounds<T>> = None;
        let mut v_hull: Bounds<T> = vec![(T::zero(), T::zero()); q];
        for &s in &scales {
            let s = T::lit(s);
            let profile = if piece.cone_exponent == T::zero() { T::one() } else { s };
            for y in &x_targets {
                let mut guess: Vec<T> = y.iter().copied().chain(std::iter::repeat(T::zero()).take(q)).collect();
                for w in &v_targets {
                    let w_s: Vec<T> = w.iter().map(|&c| c * profile).collect();
                    let z = map
                        .invert_point(y, &w_s, &guess)
                        .or_else(|_| {
                            let direct: Vec<T> = y.iter().chain(&w_s).copied().collect();
                            map.invert_point(y, &w_s, &direct)
                        })
                        .map_err(FieldError::from)?;
                    check_condition(map, &z[..p], &z[p..])?;
                    let (zx, zv) = z.split_at(p);
                    x_hull = Some(match x_hull {
                        Some(h) => h.iter().zip(zx).map(|(&(lo, hi), &c)| (lo.min(c), hi.max(c))).collect(),
                        None => zx.iter().map(|&c| (c, c)).collect(),
                    });
                    for (h, &c) in v_hull.iter_mut().zip(zv) {
                        let c = c / profile;
                        *h = (h.0.min(c), h.1.max(c));
                    }
                    guess = z;
                }
            }
        }
        let inflate = |b: &Bounds<T>, frac: f64| -> Bounds<T> {
            b.iter()
                .map(|&(lo, hi)| {
                    let pad = (hi - lo) * T::lit(frac) + T::lit(1e-9);
                    (lo - pad, hi + pad)
                })
                .collect()
        };
        let x_box = match (&piece.x_box, x_hull) {
            (Some(_), Some(h)) => Some(inflate(&h, 0.05)),
            _ => None,
        };
        pieces.push(ConicPiece {
            x_box,
            normal: inflate(&v_hull, 0.10),
            t_range: piece.t_range,
            cone_exponent: piece.cone_exponent,
        });
    }
    Ok(ConicCompactSet::new(p, q, pieces)?)
}

/// The cutoff `λ(x, v, t) = s(t)·(1 - b(|v|))`: zero for `t ≤ t_floor`,
/// one for `t ≥ t_full` away from the zero section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCutoff<T> {
    pub t_floor: T,
    pub t_full: T,
    pub bump_radius: T,
}

impl<T: Scalar> TailCutoff<T> {
    pub fn eval(&self, v: &[T], t: T) -> T {
        let s = smooth_step((t - self.t_floor) / (self.t_full - self.t_floor));
        if s == T::zero() {
            return T::zero();
        }
        s * (T::one() - radial_bump(norm(v) / self.bump_radius, T::lit(0.5)))
    }
}

/// One chart of a partition: domain `U_α` (open box in `x`), the closed
/// support of `ψ_α` inside it, and `ψ_α` itself.
#[derive(Clone)]
pub struct ChartBump<T: Scalar> {
    pub domain: Bounds<T>,
    pub support: Bounds<T>,
    psi: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
}

impl<T: Scalar> fmt::Debug for ChartBump<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartBump").field("domain", &self.domain).field("support", &self.support).finish()
    }
}

impl<T: Scalar> ChartBump<T> {
    pub fn new(domain: Bounds<T>, support: Bounds<T>, psi: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self { domain, support, psi: Arc::new(psi) }
    }

    pub fn psi(&self, x: &[T]) -> T {
        (self.psi)(x)
    }

    fn chart(&self, q: usize) -> Result<SlicePair<T>, FieldError> {
        let domain = self.domain.clone();
        Ok(SlicePair::new(self.domain.len(), q, move |x: &[T], _: &[T]| {
            x.iter().zip(&domain).all(|(&c, &(lo, hi))| c > lo && c < hi)
        })?)
    }
}

/// `{χ_α, λ}` with `χ_α = ψ_α(x)·(1 - λ)` and `Σ ψ_α = 1` on the covered set.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity<T: Scalar> {
    charts: Vec<ChartBump<T>>,
    tail: Option<TailCutoff<T>>,
}

impl<T: Scalar> PartitionOfUnity<T> {
    pub fn new(charts: Vec<ChartBump<T>>, tail: Option<TailCutoff<T>>) -> Self {
        Self { charts, tail }
    }

    /// One chart covering `domain` with `ψ ≡ 1` and no tail.
    pub fn single(domain: Bounds<T>) -> Self {
        Self::new(vec![ChartBump::new(domain.clone(), domain, |_| T::one())], None)
    }

    /// Two charts on the line meeting in `overlap = (a, b)`: `ψ_1` drops from
    /// 1 to 0 across `[a, b]`, `ψ_2 = 1 - ψ_1`. Chart domains overhang the
    /// overlap by `margin`.
    pub fn two_charts_on_line(domain: (T, T), overlap: (T, T), margin: T, tail: Option<TailCutoff<T>>) -> Self {
        let (a, b) = overlap;
        let left = move |x: &[T]| T::one() - smooth_step((x[0] - a) / (b - a));
        let right = move |x: &[T]| smooth_step((x[0] - a) / (b - a));
        Self::new(
            vec![
                ChartBump::new(vec![(domain.0, b + margin)], vec![(domain.0, b)], left),
                ChartBump::new(vec![(a - margin, domain.1)], vec![(a, domain.1)], right),
            ],
            tail,
        )
    }

    pub fn charts(&self) -> &[ChartBump<T>] {
        &self.charts
    }

    pub fn tail(&self) -> Option<&TailCutoff<T>> {
        self.tail.as_ref()
    }

    pub fn lambda(&self, v: &[T], t: T) -> T {
        self.tail.as_ref().map_or(T::zero(), |c| c.eval(v, t))
    }

    pub fn chi(&self, alpha: usize, x: &[T], v: &[T], t: T) -> T {
        self.charts[alpha].psi(x) * (T::one() - self.lambda(v, t))
    }

    /// `Σ_α ψ_α(x)`.
    pub fn psi_sum(&self, x: &[T]) -> T {
        self.charts.iter().map(|c| c.psi(x)).fold(T::zero(), |a, b| a + b)
    }
}

/// Chart-local parts and the tail of a decomposed field.
#[derive(Clone, Debug)]
pub struct Decomposition<T: Scalar> {
    pub parts: Vec<SchwartzDncField<T>>,
    pub tail: SchwartzDncField<T>,
}

impl<T: Scalar> Decomposition<T> {
    /// `Σ_α f_α + f_λ` at a point.
    pub fn reconstruct(&self, x: &[T], xi: &[T], t: T) -> T {
        self.parts.iter().map(|f| f.eval(x, xi, t)).fold(self.tail.eval(x, xi, t), |a, b| a + b)
    }
}

/// `f = Σ_α f·(χ_α ∘ p) + f·(λ ∘ p)` with `p(x, ξ, t) = (x, tξ, t)`.
pub fn partition_decompose<T: Scalar>(
    f: &SchwartzDncField<T>,
    partition: &PartitionOfUnity<T>,
) -> Result<Decomposition<T>, FieldError> {
    let (p, q) = f.dims();
    let k = f.support().ok_or(FieldError::MissingSupport)?;
    if let Some(hull) = k.x_hull() {
        for x in corner_grid(&hull, 65) {
            let covered = partition
                .charts
                .iter()
                .any(|c| x.iter().zip(&c.domain).all(|(&u, &(lo, hi))| u > lo && u < hi));
            if !covered || (partition.psi_sum(&x) - T::one()).abs() > T::lit(1e-12) {
                return Err(FieldError::Uncovered { witness: x.iter().map(|c| c.to_f64_lossy()).collect() });
            }
        }
    } else if !k.is_empty() {
        let probe = vec![T::lit(1e6); p];
        return Err(FieldError::Uncovered { witness: probe.iter().map(|c| c.to_f64_lossy()).collect() });
    }
    let scaled_normal = |xi: &[T], t: T| -> Vec<T> { xi.iter().map(|&c| c * t).collect() };

    let mut parts = Vec::with_capacity(partition.charts.len());
    for (alpha, chart) in partition.charts.iter().enumerate() {
        let (g, pu) = (f.clone(), partition.clone());
        let part = SchwartzDncField::new(p, q, move |x: &[T], xi: &[T], t: T| {
            let value = g.eval(x, xi, t);
            if value == T::zero() {
                return T::zero();
            }
            value * pu.chi(alpha, x, &scaled_normal(xi, t), t)
        })
        .with_label(format!("{}|chart{alpha}", f.label()))
        .with_support(k.restrict_x(&chart.support))?
        .with_chart(chart.chart(q)?)?;
        parts.push(part);
    }
    let (g, pu) = (f.clone(), partition.clone());
    let tail_support = match partition.tail() {
        Some(c) => k.restrict_t_above(c.t_floor),
        None => ConicCompactSet::empty(p, q),
    };
    let tail = SchwartzDncField::new(p, q, move |x: &[T], xi: &[T], t: T| {
        let lambda = pu.lambda(&scaled_normal(xi, t), t);
        if lambda == T::zero() {
            return T::zero();
        }
        g.eval(x, xi, t) * lambda
    })
    .with_label(format!("{}|tail", f.label()))
    .with_support(tail_support)?;
    Ok(Decomposition { parts, tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn gauss(p: usize) -> SchwartzDncField<f64> {
        SchwartzDncField::new(p, 1, |_, xi: &[f64], _| (-xi[0] * xi[0]).exp())
    }

    fn compact_gauss() -> SchwartzDncField<f64> {
        let support = ConicCompactSet::new(
            1,
            1,
            vec![ConicPiece::cone(Some(vec![(-1.0, 1.0)]), vec![(-0.5, 0.5)], 1.0, 0.5)],
        )
        .unwrap();
        SchwartzDncField::new(1, 1, |x: &[f64], xi: &[f64], t: f64| {
            let window = radial_bump(x[0].abs(), 0.5);
            let cut = if t > 0.0 { radial_bump((t * xi[0]).abs() / (0.5 * t.sqrt()), 0.5) } else { 1.0 };
            window * cut * (-xi[0] * xi[0]).exp()
        })
        .with_support(support)
        .unwrap()
    }

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(-0.1f64), 0.0);
        assert_eq!(smooth_step(1.2f64), 1.0);
        assert!((smooth_step(0.5f64) - 0.5).abs() < 1e-15);
        assert!((smooth_step(0.3f64) + smooth_step(0.7f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn multi_index_enumeration() {
        let all = MultiIndex::all_up_to(1, 1, 3);
        assert_eq!(all.len(), 35);
        assert!(all.iter().all(|i| i.total_order() <= 3));
        assert_eq!(MultiIndex::all_up_to(1, 1, 0), vec![MultiIndex::zero(1, 1)]);
    }

    fn line_grid(t_values: Vec<f64>) -> SeminormGrid<f64> {
        SeminormGrid::stratified(&vec![(-1.0, 1.0)], 5, 1, t_values, 81, 16, 50.0).unwrap()
    }

    #[test]
    fn seminorm_of_product_with_bump() {
        let f = SchwartzDncField::new(1, 1, |x: &[f64], xi: &[f64], _| {
            (-xi[0] * xi[0]).exp() * radial_bump(x[0].abs(), 0.5)
        });
        let r = seminorm_estimate(&f, &MultiIndex::zero(1, 1), &line_grid(vec![0.0, 0.5])).unwrap();
        assert_eq!(r.estimate(), Some(1.0));
    }

    #[test]
    fn weighted_gaussian_sup() {
        // (1 + ξ²) e^{-ξ²} has derivative -2ξ³ e^{-ξ²} ... vanishing only at 0
        let r = seminorm_estimate(&gauss(1), &MultiIndex::weight(1, 1, 1), &line_grid(vec![0.0])).unwrap();
        assert!((r.estimate().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_seminorm_matches_calculus() {
        // sup |d/dξ e^{-ξ²}| = sqrt(2) e^{-1/2} at ξ = 1/sqrt(2)
        let grid = SeminormGrid::stratified(&vec![(0.0, 0.0)], 1, 1, vec![0.3], 2001, 8, 50.0).unwrap();
        let idx = MultiIndex::new(0, 0, vec![0], vec![1]);
        let r = seminorm_estimate(&gauss(1), &idx, &grid).unwrap().estimate().unwrap();
        let exact = 2f64.sqrt() * (-0.5f64).exp();
        assert!((r - exact).abs() < 1e-5, "{r} vs {exact}");
    }

    #[test]
    fn t_derivative_at_boundary_uses_one_sided_stencil() {
        let f = SchwartzDncField::new(1, 1, |_, xi, t: f64| (-xi[0] * xi[0]).exp() * t.sqrt().powi(4));
        let idx = MultiIndex::new(0, 1, vec![0], vec![0]);
        let grid = SeminormGrid::stratified(&vec![(0.0, 0.0)], 1, 1, vec![0.0, 1.0], 5, 4, 50.0).unwrap();
        // d/dt t² = 2t: 0 at t = 0, 2 at t = 1
        let r = seminorm_estimate(&f, &idx, &grid).unwrap().estimate().unwrap();
        assert!((r - 2.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn non_schwartz_is_reported_unbounded() {
        let f = SchwartzDncField::new(1, 1, |_, xi: &[f64], _| 1.0 / (1.0 + xi[0] * xi[0]));
        let r = seminorm_estimate(&f, &MultiIndex::weight(2, 1, 1), &line_grid(vec![0.0])).unwrap();
        assert!(matches!(r, SeminormReport::Unbounded { .. }), "{r:?}");
    }

    #[test]
    fn order_budget_enforced() {
        let idx = MultiIndex::new(4, 0, vec![3], vec![0]);
        assert!(matches!(
            seminorm_estimate(&gauss(1), &idx, &line_grid(vec![0.0])),
            Err(FieldError::OrderTooHigh(7))
        ));
    }

    #[test]
    fn support_check_cases() {
        let r = conic_support_check(&compact_gauss(), 2000, 3).unwrap();
        assert!(r.passed && r.tested == 2000, "{r:?}");
        let leaky = SchwartzDncField::new(1, 1, |_, xi: &[f64], _| (-xi[0] * xi[0]).exp())
            .with_support(compact_gauss().support().unwrap().clone())
            .unwrap();
        let r = conic_support_check(&leaky, 500, 3).unwrap();
        assert!(!r.passed && !r.violations.is_empty());
        let zero = SchwartzDncField::<f64>::zero(1, 1);
        assert!(conic_support_check(&zero, 100, 1).unwrap().passed);
        assert_eq!(conic_support_check(&gauss(1), 10, 1), Err(FieldError::MissingSupport));
    }

    #[test]
    fn pullback_examples() {
        let line = SlicePair::whole(1, 1);
        let f = gauss(1);
        let id = PairMorphism::identity(line.clone());
        let g = pullback(&f, &id).unwrap();
        for &(x, xi, t) in &[(0.1, 0.3, 0.0), (0.5, -1.2, 0.7)] {
            assert_eq!(g.eval(&[x], &[xi], t), f.eval(&[x], &[xi], t));
        }
        let double = PairMorphism::new(line.clone(), 1, 1, |x, _| x.to_vec(), |_, v| vec![2.0 * v[0]])
            .with_normal_jacobian(|_| Matrix::from_rows(1, 1, vec![2.0]));
        let g = pullback(&f, &double).unwrap();
        assert!((g.eval(&[0.0], &[1.0], 0.0) - (-4.0f64).exp()).abs() < 1e-15);
        let sine = PairMorphism::new(line, 1, 1, |x, _| x.to_vec(), |_, v| vec![v[0].sin()])
            .with_normal_jacobian(|_| Matrix::identity(1));
        let g = pullback(&f, &sine).unwrap();
        assert!((g.eval(&[0.0], &[2.0], 0.5) - 0.058_877_652_587_584_845).abs() < 1e-15);
    }

    #[test]
    fn pullback_rejects_singular_maps() {
        let line = SlicePair::whole(1, 1);
        let flat = PairMorphism::new(line, 1, 1, |x: &[f64], _: &[f64]| x.to_vec(), |_, v: &[f64]| vec![v[0].powi(5)]);
        assert!(matches!(pullback(&gauss(1), &flat), Err(FieldError::NonInvertible { .. })));
    }

    #[test]
    fn pullback_is_functorial() {
        let line = SlicePair::whole(1, 1);
        let g_map = PairMorphism::new(line.clone(), 1, 1, |x: &[f64], v: &[f64]| vec![x[0] + 0.1 * v[0] * v[0]], |x: &[f64], v: &[f64]| {
            vec![(0.2 * x[0]).exp() * v[0]]
        });
        let f_map = PairMorphism::new(line, 1, 1, |x: &[f64], _: &[f64]| vec![x[0] * 1.5 - 0.2], |_, v: &[f64]| vec![v[0] + 0.3 * v[0].powi(3)]);
        let f = compact_gauss();
        let nested = pullback(&pullback(&f, &g_map).unwrap(), &f_map).unwrap();
        let direct = pullback(&f, &f_map.then(&g_map)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (x, xi, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0), rng.gen_range(1e-3..1.0));
            let (a, b) = (nested.eval(&[x], &[xi], t), direct.eval(&[x], &[xi], t));
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn pullback_support_encloses_preimage() {
        let line = SlicePair::whole(1, 1);
        let map = PairMorphism::new(line, 1, 1, |x: &[f64], v: &[f64]| vec![x[0] + 0.1 * v[0].tanh().powi(2)], |x: &[f64], v: &[f64]| {
            vec![(0.1 * x[0]).exp() * (v[0] + 0.2 * v[0].powi(3))]
        });
        let g = pullback(&compact_gauss(), &map).unwrap();
        let r = conic_support_check(&g, 4000, 11).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        assert!(g.support().unwrap().zero_trace_on_slice());
    }

    #[test]
    fn decomposition_reconstructs() {
        let f = compact_gauss();
        let tail = TailCutoff { t_floor: 0.25, t_full: 0.5, bump_radius: 0.1 };
        let pu = PartitionOfUnity::two_charts_on_line((-2.0, 2.0), (-0.25, 0.25), 0.05, Some(tail));
        let d = partition_decompose(&f, &pu).unwrap();
        assert_eq!(d.parts.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (x, xi, t) = (rng.gen_range(-1.2..1.2), rng.gen_range(-4.0..4.0), rng.gen_range(0.0..1.0));
            assert!((d.reconstruct(&[x], &[xi], t) - f.eval(&[x], &[xi], t)).abs() < 1e-12);
            if t <= 0.25 {
                assert_eq!(d.tail.eval(&[x], &[xi], t), 0.0);
            }
        }
        for part in d.parts.iter().chain([&d.tail]) {
            assert!(conic_support_check(part, 1000, 2).unwrap().passed);
        }
    }

    #[test]
    fn trivial_partition() {
        let f = compact_gauss();
        let d = partition_decompose(&f, &PartitionOfUnity::single(vec![(-3.0, 3.0)])).unwrap();
        assert_eq!(d.parts.len(), 1);
        assert_eq!(d.parts[0].eval(&[0.2], &[0.3], 0.4), f.eval(&[0.2], &[0.3], 0.4));
        assert_eq!(d.tail.eval(&[0.2], &[0.3], 0.9), 0.0);
    }

    #[test]
    fn uncovered_support_is_reported() {
        let pu = PartitionOfUnity::single(vec![(-0.5, 0.5)]);
        assert!(matches!(partition_decompose(&compact_gauss(), &pu), Err(FieldError::Uncovered { .. })));
    }

    #[test]
    fn product_seminorms_stay_finite() {
        let f = compact_gauss();
        let g = SchwartzDncField::new(1, 1, |x: &[f64], xi: &[f64], t| (x[0] + t).cos() / (1.0 + xi[0] * xi[0]));
        let h = f.product(&g).unwrap();
        let grid = SeminormGrid::for_field(&h);
        for idx in MultiIndex::all_up_to(1, 1, 3) {
            let r = seminorm_estimate(&h, &idx, &grid).unwrap();
            assert!(r.estimate().is_some_and(|e| e.is_finite() && e < 1e6), "{idx}: {r:?}");
        }
    }

    #[test]
    fn bundle_field_support_and_decay() {
        let g = BundleSchwartzField::new(1, 1, |x: &[f64], xi: &[f64]| radial_bump((x[0] - 0.5).abs() / 0.3, 0.5) * (-xi[0] * xi[0]).exp())
            .with_base_support(vec![(0.2, 0.8)]);
        assert_eq!(g.base_leakage(200, 4, 5.0), Some(0.0));
        let xs = vec![vec![0.5]];
        let xis: Vec<Vec<f64>> = (0..=400).map(|i| vec![-20.0 + 0.1 * i as f64]).collect();
        assert!((g.weighted_sup(1, &xs, &xis) - 1.0).abs() < 1e-12);
    }
}
