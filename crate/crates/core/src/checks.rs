//! Reusable verification measurements: associativity, evaluation
//! homomorphisms, Fourier commutation and continuity at `t = 0`.

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::convolution::{
    bundle_convolve, convolve, evaluate_e0, evaluate_et, groupoid_convolve, unconverged, ConvolutionError, Evaluation,
};
pub use crate::convolution::Measurement;
use crate::fields::SchwartzDncField;
use crate::fourier::{fourier_fiber_transform, FiberLattice, FourierError};
use crate::groupoid::SharedModel;
use crate::quadrature::QuadratureSpec;
use crate::scalar::{relative_sup_deviation, Scalar};

/// Spectrum entries below this modulus are excluded from the Fourier check.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error(transparent)]
    Convolution(#[from] ConvolutionError),
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error("series needs at least {needed} positive points, got {got}")]
    Series { needed: usize, got: usize },
}

/// `(x, ξ)` probe points: `x` in `[0, 1)` on periodic units and in
/// `[-x_radius, x_radius]` otherwise, `ξ` in `[-xi_radius, xi_radius]^q`.
pub type Probe<T> = (Vec<T>, Vec<T>);

pub fn sample_probes<T: Scalar>(
    model: &SharedModel<T>,
    n: usize,
    x_radius: f64,
    xi_radius: f64,
    rng: &mut impl Rng,
) -> Vec<Probe<T>> {
    let (p, q) = (model.unit_dim(), model.fiber_dim());
    let periodic = model.periodic_units();
    (0..n)
        .map(|_| {
            let x = (0..p)
                .map(|_| T::lit(if periodic { rng.gen_range(0.0..1.0) } else { rng.gen_range(-x_radius..=x_radius) }))
                .collect();
            let xi = (0..q).map(|_| T::lit(rng.gen_range(-xi_radius..=xi_radius))).collect();
            (x, xi)
        })
        .collect()
}

fn eval_all<T: Scalar>(f: &SchwartzDncField<T>, probes: &[Probe<T>], t: T) -> Vec<T> {
    probes.par_iter().map(|(x, xi)| f.eval(x, xi, t)).collect()
}

/// Both bracketings of a triple product.
pub struct Associativity<T: Scalar> {
    pub left_nested: SchwartzDncField<T>,
    pub right_nested: SchwartzDncField<T>,
    inner: [SchwartzDncField<T>; 2],
}

impl<T: Scalar> Associativity<T> {
    pub fn new(
        f: &SchwartzDncField<T>,
        g: &SchwartzDncField<T>,
        h: &SchwartzDncField<T>,
        model: &SharedModel<T>,
        spec: &QuadratureSpec<T>,
    ) -> Result<Self, CheckError> {
        let (fg, gh) = (convolve(f, g, model, spec)?, convolve(g, h, model, spec)?);
        let left_nested = convolve(&fg, h, model, spec)?;
        let right_nested = convolve(f, &gh, model, spec)?;
        Ok(Self { left_nested, right_nested, inner: [fg, gh] })
    }

    fn unconverged(&self) -> usize {
        unconverged(&[&self.left_nested, &self.right_nested, &self.inner[0], &self.inner[1]])
    }

    /// Relative sup deviation of `(f*g)*h` from `f*(g*h)` over the probes.
    pub fn deviation(&self, t: T, probes: &[Probe<T>]) -> Measurement<T> {
        let before = self.unconverged();
        let value =
            relative_sup_deviation(&eval_all(&self.left_nested, probes, t), &eval_all(&self.right_nested, probes, t));
        Measurement { value, unconverged: self.unconverged() - before }
    }
}

/// Relative sup deviation between `e_t(f*g)` and the product of `e_t(f)`
/// and `e_t(g)` computed with `spec.independent()`.
pub fn homomorphism_deviation<T: Scalar>(
    f: &SchwartzDncField<T>,
    g: &SchwartzDncField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
    t: T,
    probes: &[Probe<T>],
) -> Result<Measurement<T>, CheckError> {
    let product = convolve(f, g, model, spec)?;
    let other = spec.independent();
    let (lhs, rhs): (Vec<T>, Vec<T>) = match (evaluate_et(&product, t, model)?, evaluate_et(f, t, model)?, evaluate_et(g, t, model)?) {
        (Evaluation::Algebroid(fg), Evaluation::Algebroid(a), Evaluation::Algebroid(b)) => {
            let ab = bundle_convolve(&a, &b, &other)?;
            probes.par_iter().map(|(x, xi)| (fg.eval(x, xi), ab.eval(x, xi))).unzip()
        }
        (Evaluation::Groupoid(fg), Evaluation::Groupoid(a), Evaluation::Groupoid(b)) => {
            let ab = groupoid_convolve(&a, &b, &other)?;
            probes
                .par_iter()
                .map(|(x, xi)| {
                    let v: Vec<T> = xi.iter().map(|&c| c * t).collect();
                    let arrow = model.chart_inverse(x, &v);
                    (fg.eval(&arrow), ab.eval(&arrow))
                })
                .unzip()
        }
        _ => unreachable!("all three evaluations share t"),
    };
    Ok(Measurement { value: relative_sup_deviation(&lhs, &rhs), unconverged: unconverged(&[&product]) })
}

/// Compares the transform of `e_0(f*g)` at `x` with the product of the
/// transforms, peak-normalized over lattice points where the product
/// exceeds [`SPECTRUM_FLOOR`].
pub fn fourier_deviation<T: Scalar>(
    f: &SchwartzDncField<T>,
    g: &SchwartzDncField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
    x: &[T],
    lattice: &FiberLattice<T>,
) -> Result<Measurement<T>, CheckError> {
    let full = convolve(f, g, model, spec)?;
    let product = evaluate_e0(&full);
    let samples: Vec<T> = lattice.points().par_iter().map(|xi| product.eval(x, xi)).collect();
    let lhs = crate::fourier::transform_samples(lattice, &samples)?;
    let rhs = fourier_fiber_transform(&evaluate_e0(f), x, lattice)?.pointwise_product(&fourier_fiber_transform(&evaluate_e0(g), x, lattice)?)?;
    let floor = T::lit(SPECTRUM_FLOOR);
    let (mut worst, mut peak) = (T::zero(), T::zero());
    for (a, b) in lhs.values.iter().zip(&rhs.values) {
        if b.norm() > floor {
            let d: Complex<T> = a - b;
            worst = worst.max(d.norm());
            peak = peak.max(b.norm());
        }
    }
    let value = if peak > T::zero() { worst / peak } else { worst };
    Ok(Measurement { value, unconverged: unconverged(&[&full]) })
}

/// `(t, sup_probes |(f*g)(x, ξ, t) - (f*g)(x, ξ, 0)|)` for each `t`.
pub fn continuity_series<T: Scalar>(
    f: &SchwartzDncField<T>,
    g: &SchwartzDncField<T>,
    model: &SharedModel<T>,
    spec: &QuadratureSpec<T>,
    t_values: &[T],
    probes: &[Probe<T>],
) -> Result<Vec<(T, Measurement<T>)>, CheckError> {
    let product = convolve(f, g, model, spec)?;
    let at_zero = eval_all(&product, probes, T::zero());
    let mut seen = unconverged(&[&product]);
    Ok(t_values
        .iter()
        .map(|&t| {
            let at_t = eval_all(&product, probes, t);
            let value = at_t.iter().zip(&at_zero).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
            let now = unconverged(&[&product]);
            let m = Measurement { value, unconverged: now - seen };
            seen = now;
            (t, m)
        })
        .collect())
}

/// Least-squares slope of `log y` against `log x` over points with both
/// coordinates positive.
pub fn log_log_slope<T: Scalar>(points: &[(T, T)]) -> Result<T, CheckError> {
    let logs: Vec<(T, T)> =
        points.iter().filter(|(x, y)| *x > T::zero() && *y > T::zero()).map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 3 {
        return Err(CheckError::Series { needed: 3, got: logs.len() });
    }
    let n = T::from_count(logs.len());
    let mx = logs.iter().fold(T::zero(), |a, p| a + p.0) / n;
    let my = logs.iter().fold(T::zero(), |a, p| a + p.1) / n;
    let (sxy, sxx) = logs
        .iter()
        .fold((T::zero(), T::zero()), |(sxy, sxx), &(x, y)| (sxy + (x - mx) * (y - my), sxx + (x - mx) * (x - mx)));
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{build_field, FieldSpec};
    use crate::groupoid::by_key;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slope_of_power_laws() {
        let pts: Vec<(f64, f64)> = [1e-3, 1e-2, 0.1, 0.3].iter().map(|&t| (t, 3.0 * t * t)).collect();
        assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(log_log_slope(&pts[..2]), Err(CheckError::Series { got: 2, .. })));
        assert!(log_log_slope(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]).is_err());
    }

    #[test]
    fn probes_respect_unit_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let torus = by_key::<f64>("pair-t1").unwrap();
        let probes = sample_probes(&torus, 50, 1.0, 2.0, &mut rng);
        assert!(probes.iter().all(|(x, xi)| (0.0..1.0).contains(&x[0]) && xi[0].abs() <= 2.0));
        let abelian = by_key::<f64>("abelian-q1").unwrap();
        assert!(sample_probes(&abelian, 5, 1.0, 2.0, &mut rng).iter().all(|(x, _)| x.is_empty()));
    }

    #[test]
    fn zero_triple_is_associative() {
        let m = by_key::<f64>("pair-r1").unwrap();
        let f = build_field(&FieldSpec::new("gaussian", &[1.0]), m.as_ref()).unwrap();
        let z = SchwartzDncField::zero(1, 1);
        let a = Associativity::new(&f, &z, &f, &m, &QuadratureSpec::default()).unwrap();
        let probes = sample_probes(&m, 10, 1.0, 2.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(a.deviation(0.3, &probes).value, 0.0);
    }
}
