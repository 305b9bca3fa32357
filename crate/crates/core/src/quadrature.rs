//! Gauss rules and fiber quadrature with a small-`t` / large-`t` regime switch.
//!
//! Below the switch threshold the fiber integral is taken over all of `R^q`
//! with a scaled Gauss-Hermite rule; above it the integrand has compact
//! support in the groupoid fiber and a tensor Gauss-Legendre rule over the
//! truncation box is used. Every estimate is paired with a half-size rule;
//! the difference is the error estimate driving up to `max_refinements`
//! doublings.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{pairwise_sum, Scalar};
use crate::support::{Bounds, FiberExtent};

const PARALLEL_NODE_THRESHOLD: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
    #[error(
        "estimated error {error_estimate:e} exceeds tolerance after refinement to {nodes_per_axis} nodes per axis (best value {value:e})"
    )]
    Tolerance { value: f64, error_estimate: f64, nodes_per_axis: usize },
}

/// Fiber-integration scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Serialize"))]
pub struct QuadratureSpec<T> {
    /// Gauss-Hermite nodes per axis for `t ≤ switch_threshold`.
    pub hermite_nodes: usize,
    /// Gauss-Legendre nodes per axis for `t > switch_threshold`.
    pub legendre_nodes: usize,
    pub switch_threshold: T,
    pub target_rel_tol: T,
    /// Error estimates at or below this are accepted whatever the mass;
    /// far-tail integrals of size 1e-100 cannot meet a relative target.
    pub abs_tol: T,
    /// Width of the Hermite weight `exp(-(ξ/scale)²)`.
    pub hermite_scale: T,
    /// `|ξ|` cut-off for fields without a bounded fiber support.
    pub truncation_radius: T,
    pub max_refinements: usize,
}

impl<T: Scalar> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            hermite_nodes: 128,
            legendre_nodes: 128,
            switch_threshold: T::lit(0.1),
            target_rel_tol: T::lit(1e-8),
            abs_tol: T::lit(1e-14),
            hermite_scale: T::one(),
            truncation_radius: T::lit(12.0),
            max_refinements: 4,
        }
    }
}

impl<T: Scalar> QuadratureSpec<T> {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        let bad = |m: &str| Err(QuadratureError::InvalidSpec(m.to_string()));
        if self.hermite_nodes < 8 || self.legendre_nodes < 8 {
            return bad("node counts must be at least 8");
        }
        if !(self.switch_threshold > T::zero() && self.switch_threshold <= T::lit(0.5)) {
            return bad("switch threshold must lie in (0, 0.5]");
        }
        if !(self.target_rel_tol > T::zero()) {
            return bad("target tolerance must be positive");
        }
        if !(self.abs_tol >= T::zero()) {
            return bad("absolute tolerance must be non-negative");
        }
        if !(self.hermite_scale > T::zero() && self.truncation_radius > T::zero()) {
            return bad("hermite scale and truncation radius must be positive");
        }
        Ok(())
    }

    /// Same spec with node counts and Hermite width perturbed, for
    /// cross-checks that must not share a grid with the original.
    pub fn independent(&self) -> Self {
        Self {
            hermite_nodes: self.hermite_nodes * 5 / 4,
            legendre_nodes: self.legendre_nodes * 5 / 4,
            hermite_scale: self.hermite_scale * T::lit(1.1),
            ..self.clone()
        }
    }
}

/// Nodes and weights in `f64`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

type RuleCache = Mutex<HashMap<usize, Arc<GaussRule>>>;

fn cached(cache: &'static OnceLock<RuleCache>, n: usize, build: fn(usize) -> GaussRule) -> Arc<GaussRule> {
    let cache = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return rule.clone();
    }
    let rule = Arc::new(build(n));
    cache.lock().unwrap().entry(n).or_insert(rule).clone()
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_legendre)
}

/// Gauss-Hermite rule for `∫_R f(x) dx`: the weights already include the
/// factor `exp(x²)`, so `Σ w_i f(x_i)` integrates `f` itself.
pub fn gauss_hermite(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_hermite)
}

fn build_legendre(n: usize) -> GaussRule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussRule { nodes, weights }
}

/// Orthonormal Hermite values `(h_n, h_{n-1})` at `x`, returned as mantissas
/// with a common natural-log scale.
fn hermite_pair(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut log_scale = 0.0;
    for k in 0..n {
        let next = x * (2.0 / (k as f64 + 1.0)).sqrt() * cur - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > 1e200 {
            cur *= 1e-200;
            prev *= 1e-200;
            log_scale += 200.0 * std::f64::consts::LN_10;
        }
    }
    (cur, prev, log_scale)
}

fn build_hermite(n: usize) -> GaussRule {
    assert!(n >= 1);
    let newton = |mut x: f64| {
        for _ in 0..8 {
            let (p, pm, _) = hermite_pair(n, x);
            let dx = p / ((2.0 * n as f64).sqrt() * pm);
            x -= dx;
            if dx.abs() < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    };
    // bracket sign changes of h_n on (0, sqrt(2n + 1)], then polish
    let edge = (2.0 * n as f64 + 1.0).sqrt() + 1.0;
    let step = std::f64::consts::PI / (8.0 * (2.0 * n as f64 + 1.0).sqrt());
    let mut positive = Vec::with_capacity(n / 2);
    let mut a = step * 0.5;
    let mut fa = hermite_pair(n, a).0;
    while a < edge && positive.len() < n / 2 {
        let b = a + step;
        let fb = hermite_pair(n, b).0;
        if fa.signum() != fb.signum() {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                let fm = hermite_pair(n, mid).0;
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            positive.push(newton(0.5 * (lo + hi)));
        }
        a = b;
        fa = fb;
    }
    assert_eq!(positive.len(), n / 2, "Gauss-Hermite root bracketing failed for n = {n}");
    let mut nodes: Vec<f64> = positive.iter().rev().map(|x| -x).collect();
    if n % 2 == 1 {
        nodes.push(0.0);
    }
    nodes.extend(positive.iter());
    let weights = nodes
        .iter()
        .map(|&x| {
            let (_, pm, log_scale) = hermite_pair(n, x);
            (x * x - (n as f64).ln() - 2.0 * (pm.abs().ln() + log_scale)).exp()
        })
        .collect();
    GaussRule { nodes, weights }
}

/// Which rule to apply along the fiber.
#[derive(Clone, Debug, PartialEq)]
pub enum FiberRule<T> {
    /// Scaled Hermite rule on `R^q`; nodes outside `clip` are skipped.
    Hermite { scale: T, clip: Option<Bounds<T>> },
    /// Tensor Legendre rule on a box.
    Legendre { bounds: Bounds<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureOutcome<T> {
    pub value: T,
    pub error_estimate: T,
    pub nodes_per_axis: usize,
    pub refinements: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl<T: Scalar> QuadratureOutcome<T> {
    fn exact(value: T) -> Self {
        Self { value, error_estimate: T::zero(), nodes_per_axis: 0, refinements: 0, evaluations: 1, converged: true }
    }

    pub fn into_result(self) -> Result<Self, QuadratureError> {
        if self.converged {
            Ok(self)
        } else {
            Err(QuadratureError::Tolerance {
                value: self.value.to_f64_lossy(),
                error_estimate: self.error_estimate.to_f64_lossy(),
                nodes_per_axis: self.nodes_per_axis,
            })
        }
    }
}

/// One tensor-rule evaluation: `(Σ w f, Σ |w f|, evaluations)`.
fn tensor_sum<T: Scalar>(q: usize, rule: &FiberRule<T>, n: usize, f: &(dyn Fn(&[T]) -> T + Sync)) -> (T, T, usize) {
    let (base, affine): (Arc<GaussRule>, Vec<(T, T)>) = match rule {
        FiberRule::Hermite { scale, .. } => (gauss_hermite(n), vec![(T::zero(), *scale); q]),
        FiberRule::Legendre { bounds } => (
            gauss_legendre(n),
            bounds.iter().map(|&(lo, hi)| ((lo + hi) * T::lit(0.5), (hi - lo) * T::lit(0.5))).collect(),
        ),
    };
    let clip = match rule {
        FiberRule::Hermite { clip, .. } => clip.as_ref(),
        FiberRule::Legendre { .. } => None,
    };
    let jacobian = affine.iter().fold(T::one(), |acc, &(_, half)| acc * half);
    let total = n.pow(q as u32);
    let term = |flat: usize| -> (T, bool) {
        let mut point = [T::zero(); 8];
        let mut weight = T::one();
        let mut rest = flat;
        for axis in 0..q {
            let i = rest % n;
            rest /= n;
            let (center, half) = affine[axis];
            point[axis] = center + half * T::lit(base.nodes[i]);
            weight = weight * T::lit(base.weights[i]);
        }
        if let Some(c) = clip {
            if c.iter().zip(&point[..q]).any(|(&(lo, hi), &x)| x < lo || x > hi) {
                return (T::zero(), false);
            }
        }
        (weight * f(&point[..q]), true)
    };
    let terms: Vec<(T, bool)> = if total >= PARALLEL_NODE_THRESHOLD {
        (0..total).into_par_iter().map(term).collect()
    } else {
        (0..total).map(term).collect()
    };
    let values: Vec<T> = terms.iter().map(|&(v, _)| v).collect();
    let magnitudes: Vec<T> = values.iter().map(|v| v.abs()).collect();
    let evaluations = terms.iter().filter(|&&(_, used)| used).count();
    (pairwise_sum(&values) * jacobian, pairwise_sum(&magnitudes) * jacobian.abs(), evaluations)
}

/// Integrates `f` over the fiber `R^q` (or the rule's box) with the
/// half-rule error estimate and up to `max_refinements` doublings.
pub fn integrate<T: Scalar>(
    q: usize,
    rule: &FiberRule<T>,
    nodes: usize,
    tol: T,
    abs_tol: T,
    max_refinements: usize,
    f: &(dyn Fn(&[T]) -> T + Sync),
) -> QuadratureOutcome<T> {
    assert!(q <= 8, "fiber dimension above 8 is not supported");
    if q == 0 {
        return QuadratureOutcome::exact(f(&[]));
    }
    if let FiberRule::Legendre { bounds } = rule {
        if bounds.iter().any(|&(lo, hi)| !(hi > lo)) {
            return QuadratureOutcome { evaluations: 0, ..QuadratureOutcome::exact(T::zero()) };
        }
    }
    let mut n = nodes.max(8);
    let (mut coarse, _, mut evaluations) = tensor_sum(q, rule, n / 2, f);
    let mut refinements = 0;
    loop {
        let (fine, mass, used) = tensor_sum(q, rule, n, f);
        evaluations += used;
        let error_estimate = (fine - coarse).abs();
        let converged = error_estimate <= tol * mass || error_estimate <= abs_tol;
        if converged || refinements >= max_refinements {
            return QuadratureOutcome { value: fine, error_estimate, nodes_per_axis: n, refinements, evaluations, converged };
        }
        coarse = fine;
        n *= 2;
        refinements += 1;
    }
}

/// Rule for a fiber integral at parameter `t` given the support extent of
/// the integrand in the rescaled variable. `None` means the integral is 0.
///
/// Integrands whose fiber support stays bounded down to `t = 0` carry no
/// decay for the Hermite weight to exploit and always use the Legendre rule.
pub fn select_rule<T: Scalar>(
    spec: &QuadratureSpec<T>,
    q: usize,
    t: T,
    extent_at_t: &FiberExtent<T>,
    compact_at_zero: bool,
) -> Option<FiberRule<T>> {
    let radius = spec.truncation_radius;
    let cut = |b: &Bounds<T>| -> Bounds<T> { b.iter().map(|&(lo, hi)| (lo.max(-radius), hi.min(radius))).collect() };
    match extent_at_t {
        FiberExtent::Empty => None,
        FiberExtent::Bounded(b) if compact_at_zero => Some(FiberRule::Legendre { bounds: b.clone() }),
        extent if t <= spec.switch_threshold => Some(FiberRule::Hermite {
            scale: spec.hermite_scale,
            clip: match extent {
                FiberExtent::Bounded(b) => Some(b.clone()),
                _ => None,
            },
        }),
        FiberExtent::Bounded(b) => Some(FiberRule::Legendre { bounds: cut(b) }),
        FiberExtent::Unbounded => Some(FiberRule::Legendre { bounds: vec![(-radius, radius); q] }),
    }
}

/// Fiber integration `(x, η, t) ↦ ∫ F(x, η, ξ, t) dξ` over
/// `{ξ : (x, η, ξ, t) ∈ Ω}`, with the support extent of `F` in `ξ`.
#[allow(clippy::too_many_arguments)]
pub fn fiber_integrate<T: Scalar>(
    field: &(dyn Fn(&[T], &[T], &[T], T) -> T + Sync),
    q: usize,
    x: &[T],
    eta: &[T],
    t: T,
    extent: &FiberExtent<T>,
    compact_at_zero: bool,
    spec: &QuadratureSpec<T>,
) -> Result<QuadratureOutcome<T>, QuadratureError> {
    spec.validate()?;
    let Some(rule) = select_rule(spec, q, t, extent, compact_at_zero) else {
        return Ok(QuadratureOutcome { evaluations: 0, ..QuadratureOutcome::exact(T::zero()) });
    };
    let nodes = match rule {
        FiberRule::Hermite { .. } => spec.hermite_nodes,
        FiberRule::Legendre { .. } => spec.legendre_nodes,
    };
    let integrand = |xi: &[T]| field(x, eta, xi, t);
    integrate(q, &rule, nodes, spec.target_rel_tol, spec.abs_tol, spec.max_refinements, &integrand).into_result()
}
