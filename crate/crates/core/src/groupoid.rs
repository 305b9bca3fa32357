//! Lie groupoids with globally trivialized source fibers, and their tangent
//! groupoids.
//!
//! Every instance carries a normal chart around the units: an arrow `γ` is
//! written as `(r(γ), v)` with `v ∈ R^q`, and the source fiber over `y` is
//! parametrized by `w ↦ from_source(y, w)` with Lebesgue measure in `w`.

use std::fmt::Debug;
use std::sync::Arc;

use thiserror::Error;

use crate::atlas::{AtlasError, DncPoint, PairMorphism, SlicePair};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::support::Bounds;

const COMPOSABLE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupoidError {
    #[error("arrows are not composable: s(a) = {source_unit:?}, r(b) = {target:?}")]
    NotComposable { source_unit: Vec<f64>, target: Vec<f64> },
    #[error("unknown groupoid instance `{0}`")]
    UnknownInstance(String),
    #[error("parameter t = {0} outside [0, 1]")]
    ParameterRange(f64),
    #[error("cannot compose an algebroid vector with a t > 0 arrow")]
    MixedStrata,
    #[error(transparent)]
    Atlas(#[from] AtlasError),
}

pub trait GroupoidModel<T: Scalar>: Debug + Send + Sync {
    /// Configuration key of the instance.
    fn key(&self) -> &str;
    fn unit_dim(&self) -> usize;
    fn fiber_dim(&self) -> usize;
    fn source(&self, a: &[T]) -> Vec<T>;
    fn target(&self, a: &[T]) -> Vec<T>;
    /// `a · b`, defined when `s(a) = r(b)`; the caller guarantees composability.
    fn compose(&self, a: &[T], b: &[T]) -> Vec<T>;
    fn unit(&self, x: &[T]) -> Vec<T>;
    fn invert(&self, a: &[T]) -> Vec<T>;
    /// `γ ↦ (r(γ), v)`.
    fn chart(&self, a: &[T]) -> (Vec<T>, Vec<T>);
    fn chart_inverse(&self, x: &[T], v: &[T]) -> Vec<T>;
    /// Arrow of the source fiber over `y` with fiber coordinate `w`.
    fn from_source(&self, y: &[T], w: &[T]) -> Vec<T>;
    /// Range of the fiber coordinate; `None` for all of `R^q`.
    fn fiber_domain(&self) -> Option<Bounds<T>> {
        None
    }
    /// Whether unit coordinates are periodic with period 1.
    fn periodic_units(&self) -> bool {
        false
    }

    /// Unit-space distance, modulo the period where relevant.
    fn unit_distance(&self, x: &[T], y: &[T]) -> T {
        x.iter()
            .zip(y)
            .map(|(&a, &b)| {
                let d = a - b;
                if self.periodic_units() {
                    wrap_centered(d).abs()
                } else {
                    d.abs()
                }
            })
            .fold(T::zero(), T::max)
    }

    fn multiply(&self, a: &[T], b: &[T]) -> Result<Vec<T>, GroupoidError> {
        let (s, r) = (self.source(a), self.target(b));
        if self.unit_distance(&s, &r) > T::lit(COMPOSABLE_TOL) {
            return Err(GroupoidError::NotComposable {
                source_unit: s.iter().map(|c| c.to_f64_lossy()).collect(),
                target: r.iter().map(|c| c.to_f64_lossy()).collect(),
            });
        }
        Ok(self.compose(a, b))
    }
}

/// Reduction to `[-1/2, 1/2)`.
pub fn wrap_centered<T: Scalar>(d: T) -> T {
    let half = T::lit(0.5);
    let r = d - (d + half).floor();
    if r >= half {
        r - T::one()
    } else {
        r
    }
}

/// Reduction to `[0, 1)`.
pub fn wrap_unit<T: Scalar>(d: T) -> T {
    let r = d - d.floor();
    if r >= T::one() {
        T::zero()
    } else {
        r
    }
}

/// Space underlying a pair groupoid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSpace {
    Euclidean(usize),
    Torus(usize),
}

/// `M × M ⇉ M` with `s(x, y) = y`, `r(x, y) = x`; arrows are stored as
/// `(x, y)` and charted as `(x, x - y)`.
#[derive(Clone, Debug)]
pub struct PairGroupoid {
    space: PairSpace,
    key: String,
}

impl PairGroupoid {
    pub fn new(space: PairSpace) -> Self {
        let key = match space {
            PairSpace::Euclidean(n) => format!("pair-r{n}"),
            PairSpace::Torus(n) => format!("pair-t{n}"),
        };
        assert!(matches!(space, PairSpace::Euclidean(n) | PairSpace::Torus(n) if n >= 1));
        Self { space, key }
    }

    fn n(&self) -> usize {
        match self.space {
            PairSpace::Euclidean(n) | PairSpace::Torus(n) => n,
        }
    }

    fn is_torus(&self) -> bool {
        matches!(self.space, PairSpace::Torus(_))
    }

    fn reduce_point<T: Scalar>(&self, x: T) -> T {
        if self.is_torus() {
            wrap_unit(x)
        } else {
            x
        }
    }
}

impl<T: Scalar> GroupoidModel<T> for PairGroupoid {
    fn key(&self) -> &str {
        &self.key
    }
    fn unit_dim(&self) -> usize {
        self.n()
    }
    fn fiber_dim(&self) -> usize {
        self.n()
    }
    fn source(&self, a: &[T]) -> Vec<T> {
        a[self.n()..].to_vec()
    }
    fn target(&self, a: &[T]) -> Vec<T> {
        a[..self.n()].to_vec()
    }
    fn compose(&self, a: &[T], b: &[T]) -> Vec<T> {
        let n = self.n();
        a[..n].iter().chain(&b[n..]).copied().collect()
    }
    fn unit(&self, x: &[T]) -> Vec<T> {
        x.iter().chain(x).copied().collect()
    }
    fn invert(&self, a: &[T]) -> Vec<T> {
        let n = self.n();
        a[n..].iter().chain(&a[..n]).copied().collect()
    }
    fn chart(&self, a: &[T]) -> (Vec<T>, Vec<T>) {
        let n = self.n();
        let v = a[..n]
            .iter()
            .zip(&a[n..])
            .map(|(&x, &y)| if self.is_torus() { wrap_centered(x - y) } else { x - y })
            .collect();
        (a[..n].to_vec(), v)
    }
    fn chart_inverse(&self, x: &[T], v: &[T]) -> Vec<T> {
        let y = x.iter().zip(v).map(|(&a, &b)| self.reduce_point(a - b));
        x.iter().copied().chain(y).collect()
    }
    fn from_source(&self, y: &[T], w: &[T]) -> Vec<T> {
        y.iter().zip(w).map(|(&a, &b)| self.reduce_point(a + b)).chain(y.iter().copied()).collect()
    }
    fn fiber_domain(&self) -> Option<Bounds<T>> {
        self.is_torus().then(|| vec![(T::lit(-0.5), T::lit(0.5)); self.n()])
    }
    fn periodic_units(&self) -> bool {
        self.is_torus()
    }
}

/// The vector group `R^q ⇉ {e}`.
#[derive(Clone, Debug)]
pub struct AbelianGroup {
    q: usize,
    key: String,
}

impl AbelianGroup {
    pub fn new(q: usize) -> Self {
        assert!(q >= 1);
        Self { q, key: format!("abelian-q{q}") }
    }
}

impl<T: Scalar> GroupoidModel<T> for AbelianGroup {
    fn key(&self) -> &str {
        &self.key
    }
    fn unit_dim(&self) -> usize {
        0
    }
    fn fiber_dim(&self) -> usize {
        self.q
    }
    fn source(&self, _: &[T]) -> Vec<T> {
        Vec::new()
    }
    fn target(&self, _: &[T]) -> Vec<T> {
        Vec::new()
    }
    fn compose(&self, a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(&u, &v)| u + v).collect()
    }
    fn unit(&self, _: &[T]) -> Vec<T> {
        vec![T::zero(); self.q]
    }
    fn invert(&self, a: &[T]) -> Vec<T> {
        a.iter().map(|&c| -c).collect()
    }
    fn chart(&self, a: &[T]) -> (Vec<T>, Vec<T>) {
        (Vec::new(), a.to_vec())
    }
    fn chart_inverse(&self, _: &[T], v: &[T]) -> Vec<T> {
        v.to_vec()
    }
    fn from_source(&self, _: &[T], w: &[T]) -> Vec<T> {
        w.to_vec()
    }
}

/// Trivial vector bundle `T^p × R^q ⇉ T^p` with fiberwise addition.
#[derive(Clone, Debug)]
pub struct BundleGroupoid {
    p: usize,
    q: usize,
    key: String,
}

impl BundleGroupoid {
    pub fn new(p: usize, q: usize) -> Self {
        assert!(p >= 1 && q >= 1);
        Self { p, q, key: format!("bundle-t{p}-q{q}") }
    }
}

impl<T: Scalar> GroupoidModel<T> for BundleGroupoid {
    fn key(&self) -> &str {
        &self.key
    }
    fn unit_dim(&self) -> usize {
        self.p
    }
    fn fiber_dim(&self) -> usize {
        self.q
    }
    fn source(&self, a: &[T]) -> Vec<T> {
        a[..self.p].to_vec()
    }
    fn target(&self, a: &[T]) -> Vec<T> {
        a[..self.p].to_vec()
    }
    fn compose(&self, a: &[T], b: &[T]) -> Vec<T> {
        let p = self.p;
        a[..p].iter().copied().chain(a[p..].iter().zip(&b[p..]).map(|(&u, &v)| u + v)).collect()
    }
    fn unit(&self, x: &[T]) -> Vec<T> {
        x.iter().copied().chain(std::iter::repeat(T::zero()).take(self.q)).collect()
    }
    fn invert(&self, a: &[T]) -> Vec<T> {
        let p = self.p;
        a[..p].iter().copied().chain(a[p..].iter().map(|&c| -c)).collect()
    }
    fn chart(&self, a: &[T]) -> (Vec<T>, Vec<T>) {
        (a[..self.p].to_vec(), a[self.p..].to_vec())
    }
    fn chart_inverse(&self, x: &[T], v: &[T]) -> Vec<T> {
        x.iter().chain(v).copied().collect()
    }
    fn from_source(&self, y: &[T], w: &[T]) -> Vec<T> {
        y.iter().chain(w).copied().collect()
    }
    fn periodic_units(&self) -> bool {
        true
    }
}

pub type SharedModel<T> = Arc<dyn GroupoidModel<T>>;

/// Instance keys accepted by [`by_key`].
pub const INSTANCE_KEYS: [&str; 5] = ["pair-r1", "pair-r2", "pair-t1", "abelian-q1", "bundle-t1-q1"];

pub fn by_key<T: Scalar>(key: &str) -> Result<SharedModel<T>, GroupoidError> {
    Ok(match key {
        "pair-r1" => Arc::new(PairGroupoid::new(PairSpace::Euclidean(1))),
        "pair-r2" => Arc::new(PairGroupoid::new(PairSpace::Euclidean(2))),
        "pair-t1" => Arc::new(PairGroupoid::new(PairSpace::Torus(1))),
        "abelian-q1" => Arc::new(AbelianGroup::new(1)),
        "bundle-t1-q1" => Arc::new(BundleGroupoid::new(1, 1)),
        other => return Err(GroupoidError::UnknownInstance(other.to_string())),
    })
}

/// `t^{-q}` for `t > 0`, `1` at `t = 0`.
pub fn haar_weight<T: Scalar>(q: usize, t: T) -> Result<T, GroupoidError> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(GroupoidError::ParameterRange(t.to_f64_lossy()));
    }
    if t == T::zero() {
        return Ok(T::one());
    }
    Ok(t.powi(-(q as i32)))
}

/// Tangent groupoid of a model. Arrows are [`DncPoint`]s in the normal
/// chart: `Boundary { x, xi }` on the algebroid, `Interior { m: (x, v), t }`
/// otherwise. Structure maps are DNC lifts of chart-level pair morphisms.
#[derive(Clone, Debug)]
pub struct TangentGroupoid<T: Scalar> {
    base: SharedModel<T>,
    multiplication: PairMorphism<T>,
    inversion: PairMorphism<T>,
    source_map: PairMorphism<T>,
    target_map: PairMorphism<T>,
    unit_map: PairMorphism<T>,
}

impl<T: Scalar> TangentGroupoid<T> {
    pub fn new(base: SharedModel<T>) -> Self {
        let (p, q) = (base.unit_dim(), base.fiber_dim());
        let arrows = SlicePair::whole(p, q);

        // composable pairs charted as (x, v1, v2): γ = (x, v1), δ = (s(γ), v2)
        let b = base.clone();
        let multiplication = PairMorphism::new(
            SlicePair::whole(p, 2 * q),
            p,
            q,
            |x, _| x.to_vec(),
            move |x, v| {
                let gamma = b.chart_inverse(x, &v[..q]);
                let delta = b.chart_inverse(&b.source(&gamma), &v[q..]);
                b.chart(&b.compose(&gamma, &delta)).1
            },
        )
        .with_normal_jacobian(move |_| Matrix::from_fn(q, 2 * q, |i, j| if j % q == i { T::one() } else { T::zero() }));

        let (b1, b2) = (base.clone(), base.clone());
        let inversion = PairMorphism::new(
            arrows.clone(),
            p,
            q,
            move |x, v| b1.chart(&b1.invert(&b1.chart_inverse(x, v))).0,
            move |x, v| b2.chart(&b2.invert(&b2.chart_inverse(x, v))).1,
        )
        .with_normal_jacobian(move |_| {
            let mut m = Matrix::identity(q);
            for i in 0..q {
                m[(i, i)] = -T::one();
            }
            m
        });

        let b3 = base.clone();
        let source_map = PairMorphism::new(
            arrows.clone(),
            p,
            0,
            move |x, v| b3.source(&b3.chart_inverse(x, v)),
            |_, _| Vec::new(),
        )
        .with_normal_jacobian(move |_| Matrix::zeros(0, q));
        let target_map = PairMorphism::new(arrows, p, 0, |x, _| x.to_vec(), |_, _| Vec::new())
            .with_normal_jacobian(move |_| Matrix::zeros(0, q));

        let unit_map = PairMorphism::new(
            SlicePair::unit_space(p),
            p,
            q,
            |x, _| x.to_vec(),
            move |_, _| vec![T::zero(); q],
        )
        .with_normal_jacobian(move |_| Matrix::zeros(q, 0));

        Self { base, multiplication, inversion, source_map, target_map, unit_map }
    }

    pub fn base(&self) -> &SharedModel<T> {
        &self.base
    }

    pub fn fiber_dim(&self) -> usize {
        self.base.fiber_dim()
    }

    /// Arrow of the tangent groupoid over a base arrow at `t > 0`.
    pub fn arrow_at(&self, arrow: &[T], t: T) -> Result<DncPoint<T>, GroupoidError> {
        let (mut m, v) = self.base.chart(arrow);
        m.extend(v);
        Ok(DncPoint::interior(m, t)?)
    }

    /// Base arrow of a `t > 0` tangent arrow.
    pub fn base_arrow(&self, a: &DncPoint<T>) -> Option<Vec<T>> {
        match a {
            DncPoint::Interior { m, .. } => {
                let p = self.base.unit_dim();
                Some(self.base.chart_inverse(&m[..p], &m[p..]))
            }
            DncPoint::Boundary { .. } => None,
        }
    }

    /// Units are `(x, t)`; returned as a point with empty normal part.
    pub fn source(&self, a: &DncPoint<T>) -> Result<DncPoint<T>, GroupoidError> {
        Ok(self.source_map.apply_dnc(a)?)
    }

    pub fn target(&self, a: &DncPoint<T>) -> Result<DncPoint<T>, GroupoidError> {
        Ok(self.target_map.apply_dnc(a)?)
    }

    pub fn invert(&self, a: &DncPoint<T>) -> Result<DncPoint<T>, GroupoidError> {
        Ok(self.inversion.apply_dnc(a)?)
    }

    pub fn unit(&self, x: &[T], t: T) -> Result<DncPoint<T>, GroupoidError> {
        let pt = if t == T::zero() {
            DncPoint::Boundary { x: x.to_vec(), xi: Vec::new() }
        } else {
            DncPoint::interior(x.to_vec(), t)?
        };
        Ok(self.unit_map.apply_dnc(&pt)?)
    }

    pub fn multiply(&self, a: &DncPoint<T>, b: &DncPoint<T>) -> Result<DncPoint<T>, GroupoidError> {
        let p = self.base.unit_dim();
        let pair = match (a, b) {
            (DncPoint::Boundary { x: xa, xi: ea }, DncPoint::Boundary { x: xb, xi: eb }) => {
                self.check_units(xa, xb)?;
                DncPoint::Boundary { x: xa.clone(), xi: ea.iter().chain(eb).copied().collect() }
            }
            (DncPoint::Interior { m: ma, t: ta }, DncPoint::Interior { m: mb, t: tb }) => {
                if ta != tb {
                    return Err(GroupoidError::NotComposable {
                        source_unit: vec![ta.to_f64_lossy()],
                        target: vec![tb.to_f64_lossy()],
                    });
                }
                let gamma = self.base.chart_inverse(&ma[..p], &ma[p..]);
                self.check_units(&self.base.source(&gamma), &mb[..p])?;
                let m = ma.iter().chain(&mb[p..]).copied().collect();
                DncPoint::Interior { m, t: *ta }
            }
            _ => return Err(GroupoidError::MixedStrata),
        };
        Ok(self.multiplication.apply_dnc(&pair)?)
    }

    fn check_units(&self, s: &[T], r: &[T]) -> Result<(), GroupoidError> {
        if self.base.unit_distance(s, r) > T::lit(COMPOSABLE_TOL) {
            return Err(GroupoidError::NotComposable {
                source_unit: s.iter().map(|c| c.to_f64_lossy()).collect(),
                target: r.iter().map(|c| c.to_f64_lossy()).collect(),
            });
        }
        Ok(())
    }

    pub fn haar_weight(&self, t: T) -> Result<T, GroupoidError> {
        haar_weight(self.fiber_dim(), t)
    }
}
