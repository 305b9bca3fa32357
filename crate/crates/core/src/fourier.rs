//! Fiberwise Fourier transform on a uniform lattice with the continuum
//! normalization `ĝ(η) = ∫ g(ξ) e^{-iηξ} dξ`.

use num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::fields::BundleSchwartzField;
use crate::scalar::Scalar;

/// Relative `ℓ²` mass allowed in the outer eighth of the lattice.
pub const ALIASING_TAIL_MASS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FourierError {
    #[error("lattice size {0} is not a power of two ≥ 8")]
    LatticeSize(usize),
    #[error("lattice radius must be positive")]
    Radius,
    #[error("fiber dimension {0} unsupported")]
    FiberDimension(usize),
    #[error("field not resolved on the lattice: relative tail mass {tail_mass:e}")]
    Resolution { tail_mass: f64 },
    #[error("spectra live on different lattices")]
    LatticeMismatch,
}

/// `N^q` points `ξ_j = -R + j h`, `h = 2R / N`, per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiberLattice<T> {
    pub n: usize,
    pub radius: T,
    pub q: usize,
}

impl<T: Scalar> FiberLattice<T> {
    pub fn new(n: usize, radius: T, q: usize) -> Result<Self, FourierError> {
        if n < 8 || !n.is_power_of_two() {
            return Err(FourierError::LatticeSize(n));
        }
        if !(radius > T::zero()) {
            return Err(FourierError::Radius);
        }
        if q == 0 || q > 3 {
            return Err(FourierError::FiberDimension(q));
        }
        Ok(Self { n, radius, q })
    }

    pub fn step(&self) -> T {
        T::lit(2.0) * self.radius / T::from_count(self.n)
    }

    pub fn point(&self, j: usize) -> T {
        -self.radius + self.step() * T::from_count(j)
    }

    /// `η_k = (k - N/2) · 2π / (N h)`.
    pub fn frequency(&self, k: usize) -> T {
        (T::from_count(k) - T::from_count(self.n / 2)) * T::TAU() / (T::from_count(self.n) * self.step())
    }

    pub fn frequency_step(&self) -> T {
        T::TAU() / (T::from_count(self.n) * self.step())
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.q as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat row-major index (last axis fastest).
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.q];
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn points(&self) -> Vec<Vec<T>> {
        (0..self.len()).map(|f| self.unflatten(f).iter().map(|&j| self.point(j)).collect()).collect()
    }

    pub fn frequencies(&self) -> Vec<Vec<T>> {
        (0..self.len()).map(|f| self.unflatten(f).iter().map(|&k| self.frequency(k)).collect()).collect()
    }
}

/// Samples of `ĝ(x, ·)` on the dual lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberSpectrum<T> {
    pub lattice: FiberLattice<T>,
    pub values: Vec<Complex<T>>,
}

impl<T: Scalar> FiberSpectrum<T> {
    pub fn frequencies(&self) -> Vec<Vec<T>> {
        self.lattice.frequencies()
    }

    pub fn pointwise_product(&self, other: &Self) -> Result<Self, FourierError> {
        if self.lattice != other.lattice {
            return Err(FourierError::LatticeMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Self { lattice: self.lattice, values })
    }

    /// `Σ |ĝ|² Δη^q`.
    pub fn l2_mass(&self) -> T {
        let d = self.lattice.frequency_step().powi(self.lattice.q as i32);
        self.values.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b) * d
    }

    pub fn moduli(&self) -> Vec<T> {
        self.values.iter().map(|c| c.norm()).collect()
    }
}

/// Transform of lattice samples `g_j` (row-major, last axis fastest).
pub fn transform_samples<T: Scalar>(lattice: &FiberLattice<T>, samples: &[T]) -> Result<FiberSpectrum<T>, FourierError> {
    let (n, q) = (lattice.n, lattice.q);
    assert_eq!(samples.len(), lattice.len());
    let total: T = samples.iter().map(|&g| g * g).fold(T::zero(), |a, b| a + b);
    if total > T::zero() {
        let cut = lattice.radius * T::lit(0.75);
        let tail: T = samples
            .iter()
            .enumerate()
            .filter(|(f, _)| lattice.unflatten(*f).iter().any(|&j| lattice.point(j).abs() >= cut))
            .map(|(_, &g)| g * g)
            .fold(T::zero(), |a, b| a + b);
        let ratio = tail / total;
        if ratio.to_f64_lossy() > ALIASING_TAIL_MASS {
            return Err(FourierError::Resolution { tail_mass: ratio.to_f64_lossy() });
        }
    }
    // (-1)^j modulation recentres the spectrum at k = N/2
    let mut data: Vec<Complex<T>> = samples
        .iter()
        .enumerate()
        .map(|(f, &g)| {
            let parity: usize = lattice.unflatten(f).iter().sum();
            Complex::new(if parity % 2 == 0 { g } else { -g }, T::zero())
        })
        .collect();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let stride_of = |axis: usize| n.pow((q - 1 - axis) as u32);
    let mut line = vec![Complex::new(T::zero(), T::zero()); n];
    for axis in 0..q {
        let stride = stride_of(axis);
        for start in 0..data.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = data[start + j * stride];
            }
            fft.process(&mut line);
            for (j, value) in line.iter().enumerate() {
                data[start + j * stride] = *value;
            }
        }
    }
    let h = lattice.step();
    let scale = h.powi(q as i32);
    let values = data
        .into_iter()
        .enumerate()
        .map(|(f, c)| {
            let phase: T = lattice.unflatten(f).iter().map(|&k| lattice.frequency(k) * lattice.radius).fold(T::zero(), |a, b| a + b);
            c * Complex::from_polar(scale, phase)
        })
        .collect();
    Ok(FiberSpectrum { lattice: *lattice, values })
}

/// Transform of `ξ ↦ g(x, ξ)` sampled on the lattice.
pub fn fourier_fiber_transform<T: Scalar>(
    g: &BundleSchwartzField<T>,
    x: &[T],
    lattice: &FiberLattice<T>,
) -> Result<FiberSpectrum<T>, FourierError> {
    if g.dims().1 != lattice.q {
        return Err(FourierError::FiberDimension(g.dims().1));
    }
    let samples: Vec<T> = lattice.points().iter().map(|xi| g.eval(x, xi)).collect();
    transform_samples(lattice, &samples)
}
