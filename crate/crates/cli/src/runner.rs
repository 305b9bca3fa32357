//! Executes the checks of a prepared scenario and turns them into rows.

use std::time::Instant;

use deform_core::checks::{
    continuity_series, fourier_deviation, homomorphism_deviation, log_log_slope, sample_probes, Associativity,
    Measurement, Probe,
};
use deform_core::convolution::{convolve_unrestricted, kernel_composition_oracle};
use deform_core::fields::{conic_support_check, seminorm_estimate, MultiIndex, SeminormGrid};
use deform_core::fourier::FiberLattice;
use deform_core::Field64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::report::{sort_rows, ReportRow};
use crate::scenario::{CheckKind, Prepared};

pub const ASSOCIATIVITY_TOL: f64 = 1e-6;
pub const HOMOMORPHISM_TOL: f64 = 1e-6;
pub const KERNEL_ORACLE_TOL: f64 = 1e-6;
pub const FOURIER_TOL: f64 = 1e-6;
pub const SEMINORM_CEILING: f64 = 1e6;
pub const MIN_CONTINUITY_SLOPE: f64 = 0.9;
/// Number of `x` base points for the Fourier check.
const FOURIER_BASE_POINTS: usize = 3;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Record wall-clock time per row; off keeps the CSV reproducible.
    pub timing: bool,
}

/// An unconverged fiber integral turns the metric into NaN, which fails.
fn metric(m: Measurement<f64>) -> f64 {
    if m.unconverged == 0 {
        m.value
    } else {
        f64::NAN
    }
}

struct Ctx<'a> {
    p: &'a Prepared,
    opts: RunOptions,
}

impl Ctx<'_> {
    fn name(&self) -> &str {
        &self.p.scenario.name
    }

    /// Independent ChaCha stream per check, all from the scenario seed.
    fn rng(&self, check: CheckKind) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.p.scenario.seed);
        rng.set_stream(check as u64);
        rng
    }

    fn probes(&self, check: CheckKind) -> Vec<Probe<f64>> {
        let o = &self.p.scenario.options;
        sample_probes(&self.p.model, o.probes, o.x_radius, o.xi_radius, &mut self.rng(check))
    }

    fn nodes_at(&self, t: f64) -> usize {
        let q = &self.p.scenario.quadrature;
        if t <= q.switch_threshold {
            q.hermite_nodes
        } else {
            q.legendre_nodes
        }
    }

    fn timed(&self, row: impl FnOnce() -> ReportRow) -> ReportRow {
        let start = Instant::now();
        let mut r = row();
        if self.opts.timing {
            r.runtime_ms = start.elapsed().as_millis() as u64;
        }
        r
    }

    fn error_row(&self, check: &str, t: Option<f64>, err: impl std::fmt::Display) -> ReportRow {
        eprintln!("{}: {check}: {err}", self.name());
        ReportRow::new(self.name(), check, t, 0, f64::NAN, 0.0)
    }

    fn run(&self, check: CheckKind) -> Vec<ReportRow> {
        match check {
            CheckKind::Associativity => self.associativity(),
            CheckKind::Homomorphism => self.homomorphism(),
            CheckKind::Continuity => self.continuity(),
            CheckKind::KernelOracle => self.kernel_oracle(),
            CheckKind::Fourier => vec![self.fourier()],
            CheckKind::Seminorm => self.seminorm(),
            CheckKind::Support => self.support(),
        }
    }

    fn associativity(&self) -> Vec<ReportRow> {
        let (p, s) = (self.p, &self.p.scenario);
        let check = match Associativity::new(p.field(0), p.field(1), p.field(2), &p.model, &s.quadrature) {
            Ok(c) => c,
            Err(e) => return vec![self.error_row("associativity", None, e)],
        };
        let probes = self.probes(CheckKind::Associativity);
        s.t_grid
            .iter()
            .map(|&t| {
                self.timed(|| {
                    let m = metric(check.deviation(t, &probes));
                    ReportRow::new(self.name(), "associativity", Some(t), self.nodes_at(t), m, ASSOCIATIVITY_TOL)
                })
            })
            .collect()
    }

    fn homomorphism(&self) -> Vec<ReportRow> {
        let (p, s) = (self.p, &self.p.scenario);
        let probes = self.probes(CheckKind::Homomorphism);
        s.t_grid
            .iter()
            .map(|&t| {
                self.timed(|| match homomorphism_deviation(p.field(0), p.field(1), &p.model, &s.quadrature, t, &probes) {
                    Ok(m) => ReportRow::new(self.name(), "homomorphism", Some(t), self.nodes_at(t), metric(m), HOMOMORPHISM_TOL),
                    Err(e) => self.error_row("homomorphism", Some(t), e),
                })
            })
            .collect()
    }

    /// One informational row per `t` with the sup deviation, then a
    /// `continuity-slope` row whose metric is the shortfall
    /// `MIN_CONTINUITY_SLOPE - slope` against threshold 0.
    fn continuity(&self) -> Vec<ReportRow> {
        let (p, s) = (self.p, &self.p.scenario);
        let probes = self.probes(CheckKind::Continuity);
        let start = Instant::now();
        let series =
            match continuity_series(p.field(0), p.field(1), &p.model, &s.quadrature, &s.options.continuity_t, &probes) {
                Ok(series) => series,
                Err(e) => return vec![self.error_row("continuity", None, e)],
            };
        let mut rows: Vec<ReportRow> = series
            .iter()
            .map(|&(t, m)| ReportRow::new(self.name(), "continuity", Some(t), self.nodes_at(t), metric(m), f64::INFINITY))
            .collect();
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.t.unwrap_or(0.0), r.metric)).collect();
        let mut slope_row = match log_log_slope(&points) {
            Ok(slope) if points.iter().all(|p| p.1.is_finite()) => {
                ReportRow::new(self.name(), "continuity-slope", None, points.len(), MIN_CONTINUITY_SLOPE - slope, 0.0)
            }
            Ok(_) => ReportRow::new(self.name(), "continuity-slope", None, points.len(), f64::NAN, 0.0),
            Err(e) => self.error_row("continuity-slope", None, e),
        };
        if self.opts.timing {
            slope_row.runtime_ms = start.elapsed().as_millis() as u64;
        }
        rows.push(slope_row);
        rows
    }

    fn kernel_oracle(&self) -> Vec<ReportRow> {
        let s = &self.p.scenario;
        let n = s.options.oracle_grid;
        s.t_grid.iter().filter(|&&t| t > 0.0).map(|&t| self.kernel_oracle_at(t, n)).collect()
    }

    pub(crate) fn kernel_oracle_at(&self, t: f64, n: usize) -> ReportRow {
        let p = self.p;
        self.timed(|| match kernel_composition_oracle(p.field(0), p.field(1), t, n, &p.model, &p.scenario.quadrature) {
            Ok(m) => ReportRow::new(self.name(), "kernel-oracle", Some(t), n, metric(m), KERNEL_ORACLE_TOL),
            Err(e) => self.error_row("kernel-oracle", Some(t), e),
        })
    }

    fn fourier(&self) -> ReportRow {
        let (p, o) = (self.p, &self.p.scenario.options);
        let lattice = match FiberLattice::new(o.lattice_points, o.lattice_radius, p.model.fiber_dim()) {
            Ok(l) => l,
            Err(e) => return self.error_row("fourier", Some(0.0), e),
        };
        let xs: Vec<Vec<f64>> = self.probes(CheckKind::Fourier).into_iter().take(FOURIER_BASE_POINTS).map(|(x, _)| x).collect();
        self.timed(|| {
            let mut worst = Measurement { value: 0.0f64, unconverged: 0 };
            for x in &xs {
                match fourier_deviation(p.field(0), p.field(1), &p.model, &p.scenario.quadrature, x, &lattice) {
                    Ok(m) => {
                        worst.value = worst.value.max(m.value);
                        worst.unconverged += m.unconverged;
                    }
                    Err(e) => return self.error_row("fourier", Some(0.0), e),
                }
            }
            ReportRow::new(self.name(), "fourier", Some(0.0), lattice.len(), metric(worst), FOURIER_TOL)
        })
    }

    /// One row per field: the largest seminorm over all multi-indices up
    /// to the configured total order. An unbounded report is infinite.
    fn seminorm(&self) -> Vec<ReportRow> {
        let order = self.p.scenario.options.seminorm_order;
        self.p
            .fields
            .iter()
            .map(|f| {
                self.timed(|| {
                    let (p, q) = f.dims();
                    let grid = SeminormGrid::for_field(f);
                    let mut worst: f64 = 0.0;
                    for idx in MultiIndex::all_up_to(p, q, order) {
                        match seminorm_estimate(f, &idx, &grid) {
                            Ok(r) => worst = worst.max(r.estimate().unwrap_or(f64::INFINITY)),
                            Err(e) => return self.error_row("seminorm", None, e),
                        }
                    }
                    ReportRow::new(self.name(), "seminorm", None, grid.size(), worst, SEMINORM_CEILING)
                })
            })
            .collect()
    }

    /// Every field, then the product of the first two integrated without
    /// the support shortcut; the metric is the number of nonzero samples
    /// found outside the claimed support.
    fn support(&self) -> Vec<ReportRow> {
        let (p, o) = (self.p, &self.p.scenario.options);
        let seed = self.p.scenario.seed ^ (CheckKind::Support as u64) << 32;
        let check = |f: &Field64| -> ReportRow {
            self.timed(|| match conic_support_check(f, o.support_samples, seed) {
                Ok(r) => ReportRow::new(self.name(), "support", None, r.tested, r.violation_count as f64, 0.0),
                Err(e) => self.error_row("support", None, e),
            })
        };
        let mut rows: Vec<ReportRow> = p.fields.iter().map(check).collect();
        rows.push(match convolve_unrestricted(p.field(0), p.field(1), &p.model, &p.scenario.quadrature) {
            Ok(product) => check(&product),
            Err(e) => self.error_row("support", None, e),
        });
        rows
    }
}

/// Runs every requested check, concurrently across checks, and returns the
/// rows in canonical order.
pub fn run_scenario(p: &Prepared, opts: RunOptions) -> Vec<ReportRow> {
    let ctx = Ctx { p, opts };
    let mut checks = p.scenario.checks.clone();
    checks.sort();
    checks.dedup();
    let mut rows: Vec<ReportRow> = checks.par_iter().flat_map_iter(|&c| ctx.run(c)).collect();
    sort_rows(&mut rows);
    rows
}

/// Kernel-oracle rows at one `t` for each lattice size.
pub fn convergence_rows(p: &Prepared, t: f64, grids: &[usize], opts: RunOptions) -> Vec<ReportRow> {
    let ctx = Ctx { p, opts };
    grids.iter().map(|&n| ctx.kernel_oracle_at(t, n)).collect()
}

/// Only the continuity rows of a scenario.
pub fn continuity_rows(p: &Prepared, opts: RunOptions) -> Vec<ReportRow> {
    Ctx { p, opts }.continuity()
}
