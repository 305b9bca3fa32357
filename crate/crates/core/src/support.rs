//! Conic compact supports.
//!
//! A support set is a finite union of pieces. Each piece is an x-box times a
//! normal box whose size follows the profile `(t / t_hi)^κ` over its
//! `t`-range. Pieces reaching `t = 0` must shrink to the zero section there
//! (`κ > 0`), which is what makes the union conic relative to the slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("piece {piece}: {reason}")]
    InvalidPiece { piece: usize, reason: String },
    #[error("dimension mismatch: expected ({p}, {q}), got ({got_p}, {got_q})")]
    Dimension { p: usize, q: usize, got_p: usize, got_q: usize },
}

pub type Bounds<T> = Vec<(T, T)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicPiece<T> {
    /// Unit-space box; `None` spans the whole (compact) unit space.
    pub x_box: Option<Bounds<T>>,
    /// Normal box reached at `t = t_range.1`.
    pub normal: Bounds<T>,
    pub t_range: (T, T),
    /// Profile exponent `κ ∈ [0, 1]`.
    pub cone_exponent: T,
}

impl<T: Scalar> ConicPiece<T> {
    /// Piece over `[0, t_hi]` with the normal box scaled by `(t / t_hi)^κ`.
    pub fn cone(x_box: Option<Bounds<T>>, normal: Bounds<T>, t_hi: T, cone_exponent: T) -> Self {
        Self { x_box, normal, t_range: (T::zero(), t_hi), cone_exponent }
    }

    /// Piece with a constant normal box over `[t_lo, t_hi]`, `t_lo > 0`.
    pub fn slab(x_box: Option<Bounds<T>>, normal: Bounds<T>, t_lo: T, t_hi: T) -> Self {
        Self { x_box, normal, t_range: (t_lo, t_hi), cone_exponent: T::zero() }
    }

    fn scale_at(&self, t: T) -> Option<T> {
        let (lo, hi) = self.t_range;
        if t < lo || t > hi {
            return None;
        }
        if self.cone_exponent == T::zero() {
            return Some(T::one());
        }
        Some((t / hi).powf(self.cone_exponent))
    }

    fn x_contains(&self, x: &[T]) -> bool {
        self.x_box
            .as_ref()
            .map_or(true, |b| b.iter().zip(x).all(|(&(lo, hi), &c)| c >= lo && c <= hi))
    }

    /// Normal box of the piece at parameter `t`, if active.
    pub fn normal_at(&self, t: T) -> Option<Bounds<T>> {
        let s = self.scale_at(t)?;
        Some(self.normal.iter().map(|&(lo, hi)| (lo * s, hi * s)).collect())
    }

    pub fn contains(&self, x: &[T], v: &[T], t: T) -> bool {
        if !self.x_contains(x) {
            return false;
        }
        match self.normal_at(t) {
            Some(b) => b.iter().zip(v).all(|(&(lo, hi), &c)| c >= lo && c <= hi),
            None => false,
        }
    }
}

/// Extent of the support in the rescaled fiber variable `ξ = v / t`.
#[derive(Clone, Debug, PartialEq)]
pub enum FiberExtent<T> {
    Empty,
    Bounded(Bounds<T>),
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicCompactSet<T> {
    p: usize,
    q: usize,
    pieces: Vec<ConicPiece<T>>,
}

fn hull_with_zero<T: Scalar>(b: &Bounds<T>) -> Bounds<T> {
    b.iter().map(|&(lo, hi)| (lo.min(T::zero()), hi.max(T::zero()))).collect()
}

fn hull<T: Scalar>(a: &Bounds<T>, b: &Bounds<T>) -> Bounds<T> {
    a.iter().zip(b).map(|(&(l1, h1), &(l2, h2))| (l1.min(l2), h1.max(h2))).collect()
}

fn intersect<T: Scalar>(a: &Bounds<T>, b: &Bounds<T>) -> Option<Bounds<T>> {
    let out: Bounds<T> = a.iter().zip(b).map(|(&(l1, h1), &(l2, h2))| (l1.max(l2), h1.min(h2))).collect();
    out.iter().all(|&(lo, hi)| lo <= hi).then_some(out)
}

impl<T: Scalar> ConicCompactSet<T> {
    pub fn new(p: usize, q: usize, pieces: Vec<ConicPiece<T>>) -> Result<Self, SupportError> {
        for (i, piece) in pieces.iter().enumerate() {
            let bad = |reason: &str| SupportError::InvalidPiece { piece: i, reason: reason.to_string() };
            if piece.normal.len() != q {
                return Err(SupportError::Dimension { p, q, got_p: p, got_q: piece.normal.len() });
            }
            if let Some(b) = &piece.x_box {
                if b.len() != p {
                    return Err(SupportError::Dimension { p, q, got_p: b.len(), got_q: q });
                }
            }
            let all_bounds = piece.normal.iter().chain(piece.x_box.iter().flatten());
            for &(lo, hi) in all_bounds {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(bad("box coordinates must be finite"));
                }
                if lo > hi {
                    return Err(bad("box has lower bound above upper bound"));
                }
            }
            let (t_lo, t_hi) = piece.t_range;
            if !(t_lo >= T::zero() && t_lo <= t_hi && t_hi <= T::one()) || t_hi == T::zero() {
                return Err(bad("t-range must be a non-degenerate subinterval of [0, 1]"));
            }
            let k = piece.cone_exponent;
            if !(k >= T::zero() && k <= T::one()) {
                return Err(bad("cone exponent must lie in [0, 1]"));
            }
            if t_lo == T::zero() && k == T::zero() {
                return Err(bad("a piece touching t = 0 must collapse onto the zero section"));
            }
        }
        Ok(Self { p, q, pieces })
    }

    pub fn empty(p: usize, q: usize) -> Self {
        Self { p, q, pieces: Vec::new() }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn pieces(&self) -> &[ConicPiece<T>] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Membership of `(x, v, t)` with `v` the unscaled normal coordinate.
    pub fn contains(&self, x: &[T], v: &[T], t: T) -> bool {
        self.pieces.iter().any(|piece| piece.contains(x, v, t))
    }

    /// Trace on `t = 0` lies on the zero section; checked exactly.
    pub fn zero_trace_on_slice(&self) -> bool {
        self.pieces.iter().all(|piece| match piece.normal_at(T::zero()) {
            Some(b) => b.iter().all(|&(lo, hi)| lo == T::zero() && hi == T::zero()),
            None => true,
        })
    }

    /// Hull of the active normal boxes at `t`.
    pub fn normal_hull_at(&self, t: T) -> Option<Bounds<T>> {
        self.pieces.iter().filter_map(|piece| piece.normal_at(t)).reduce(|a, b| hull(&a, &b))
    }

    /// Hull of every normal box over all `t`.
    pub fn normal_hull(&self) -> Option<Bounds<T>> {
        self.pieces.iter().map(|piece| piece.normal.clone()).reduce(|a, b| hull(&a, &b))
    }

    /// Hull of the x-boxes; `None` if some piece spans the whole unit space
    /// or the set is empty.
    pub fn x_hull(&self) -> Option<Bounds<T>> {
        let mut out: Option<Bounds<T>> = None;
        for piece in &self.pieces {
            let b = piece.x_box.as_ref()?;
            out = Some(match out {
                Some(acc) => hull(&acc, b),
                None => b.clone(),
            });
        }
        out
    }

    pub fn t_hull(&self) -> Option<(T, T)> {
        self.pieces
            .iter()
            .map(|piece| piece.t_range)
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// Support extent in `ξ` at parameter `t`. At `t = 0` only pieces with
    /// `κ = 1` have a bounded limit.
    pub fn fiber_extent(&self, t: T) -> FiberExtent<T> {
        if t > T::zero() {
            return match self.normal_hull_at(t) {
                Some(b) => FiberExtent::Bounded(b.iter().map(|&(lo, hi)| (lo / t, hi / t)).collect()),
                None => FiberExtent::Empty,
            };
        }
        let mut out: Option<Bounds<T>> = None;
        for piece in self.pieces.iter().filter(|piece| piece.t_range.0 == T::zero()) {
            if piece.cone_exponent < T::one() {
                return FiberExtent::Unbounded;
            }
            let top = piece.t_range.1;
            let b: Bounds<T> = piece.normal.iter().map(|&(lo, hi)| (lo / top, hi / top)).collect();
            out = Some(match out {
                Some(acc) => hull(&acc, &b),
                None => b,
            });
        }
        out.map_or(FiberExtent::Empty, FiberExtent::Bounded)
    }

    /// Support of a fiberwise product `F(γδ⁻¹) G(δ)` integrated along the
    /// multiplication: normal boxes add, the unit box is the left factor's,
    /// and the profile is the slower of the two cones.
    pub fn composition_image(left: &Self, right: &Self) -> Self {
        let mut pieces = Vec::new();
        for a in &left.pieces {
            for b in &right.pieces {
                let t_lo = a.t_range.0.max(b.t_range.0);
                let t_hi = a.t_range.1.min(b.t_range.1);
                if t_lo > t_hi || t_hi == T::zero() {
                    continue;
                }
                let rescale = |piece: &ConicPiece<T>| -> Bounds<T> {
                    let s = if piece.cone_exponent == T::zero() {
                        T::one()
                    } else {
                        (t_hi / piece.t_range.1).powf(piece.cone_exponent)
                    };
                    hull_with_zero(&piece.normal).iter().map(|&(lo, hi)| (lo * s, hi * s)).collect()
                };
                let (na, nb) = (rescale(a), rescale(b));
                let normal = na.iter().zip(&nb).map(|(&(l1, h1), &(l2, h2))| (l1 + l2, h1 + h2)).collect();
                pieces.push(ConicPiece {
                    x_box: a.x_box.clone(),
                    normal,
                    t_range: (t_lo, t_hi),
                    cone_exponent: a.cone_exponent.min(b.cone_exponent),
                });
            }
        }
        Self { p: left.p, q: left.q, pieces }
    }

    /// Intersection with `x ∈ x_box`.
    pub fn restrict_x(&self, x_box: &Bounds<T>) -> Self {
        let pieces = self
            .pieces
            .iter()
            .filter_map(|piece| {
                let b = match &piece.x_box {
                    Some(b) => intersect(b, x_box)?,
                    None => x_box.clone(),
                };
                Some(ConicPiece { x_box: Some(b), ..piece.clone() })
            })
            .collect();
        Self { p: self.p, q: self.q, pieces }
    }

    /// Intersection with `t ≥ t_floor`, for `t_floor > 0`. Clipped pieces
    /// keep their profile.
    pub fn restrict_t_above(&self, t_floor: T) -> Self {
        let pieces = self
            .pieces
            .iter()
            .filter(|piece| piece.t_range.1 >= t_floor)
            .map(|piece| ConicPiece { t_range: (piece.t_range.0.max(t_floor), piece.t_range.1), ..piece.clone() })
            .collect();
        Self { p: self.p, q: self.q, pieces }
    }
}
