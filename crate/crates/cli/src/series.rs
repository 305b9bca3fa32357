//! Two-column plot data from report rows.

use deform_core::checks::log_log_slope;
use thiserror::Error;

use crate::report::ReportRow;

/// Values below this are at rounding level and exempt from the
/// monotonicity test of a convergence curve.
pub const CONVERGENCE_FLOOR: f64 = 1e-12;
/// A refinement may raise the metric by at most this factor.
pub const CONVERGENCE_NOISE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SeriesKind {
    /// Sup deviation from `t = 0` against `t`.
    Continuity,
    /// Oracle deviation against lattice size `N`.
    Convergence,
}

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("a series needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("rows mix scenarios or checks: `{0}` and `{1}`")]
    Mixed(String, String),
    #[error("row without a t value in a continuity series")]
    MissingT,
    #[error("non-finite metric at {0}")]
    NonFinite(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub kind: SeriesKind,
    pub scenario: String,
    pub check: String,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
}

impl Series {
    /// Each refinement stays within [`CONVERGENCE_NOISE`] of its
    /// predecessor unless it is already below [`CONVERGENCE_FLOOR`].
    pub fn monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= CONVERGENCE_NOISE * w[0].1 || w[1].1 < CONVERGENCE_FLOOR)
    }

    pub fn render(&self) -> String {
        let axis = match self.kind {
            SeriesKind::Continuity => "t",
            SeriesKind::Convergence => "N",
        };
        let mut out = format!("# scenario: {}\n# check: {}\n# log-log slope: {:.6}\n", self.scenario, self.check, self.slope);
        if self.kind == SeriesKind::Convergence {
            out.push_str(&format!("# monotone within {CONVERGENCE_NOISE}x: {}\n", self.monotone()));
        }
        out.push_str(&format!("# {axis} metric\n"));
        for (x, y) in &self.points {
            out.push_str(&format!("{x:e} {y:e}\n"));
        }
        out
    }
}

/// Builds a series from rows sharing one scenario and check, sorted by the
/// abscissa (`t` for continuity, `grid_size` for convergence).
pub fn emit_series(rows: &[ReportRow], kind: SeriesKind) -> Result<Series, SeriesError> {
    if rows.len() < 3 {
        return Err(SeriesError::TooFewPoints(rows.len()));
    }
    let first = &rows[0];
    if let Some(r) = rows.iter().find(|r| r.scenario != first.scenario || r.check != first.check) {
        return Err(SeriesError::Mixed(
            format!("{}/{}", first.scenario, first.check),
            format!("{}/{}", r.scenario, r.check),
        ));
    }
    let mut points = rows
        .iter()
        .map(|r| {
            let x = match kind {
                SeriesKind::Continuity => r.t.ok_or(SeriesError::MissingT)?,
                SeriesKind::Convergence => r.grid_size as f64,
            };
            if !r.metric.is_finite() {
                return Err(SeriesError::NonFinite(x));
            }
            Ok((x, r.metric))
        })
        .collect::<Result<Vec<_>, _>>()?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let slope = log_log_slope(&points).map_err(|_| SeriesError::TooFewPoints(points.iter().filter(|p| p.1 > 0.0).count()))?;
    Ok(Series { kind, scenario: first.scenario.clone(), check: first.check.clone(), points, slope })
}
