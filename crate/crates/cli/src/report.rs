//! Report rows and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// One measurement. `pass` is exactly `metric <= threshold`, so a NaN
/// metric (an error or an unconverged integral) always fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub check: String,
    pub t: Option<f64>,
    pub grid_size: usize,
    pub metric: f64,
    pub threshold: f64,
    pub pass: bool,
    pub runtime_ms: u64,
}

impl ReportRow {
    pub fn new(scenario: &str, check: &str, t: Option<f64>, grid_size: usize, metric: f64, threshold: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            check: check.to_string(),
            t,
            grid_size,
            metric,
            threshold,
            pass: metric <= threshold,
            runtime_ms: 0,
        }
    }
}

/// Canonical order: scenario, check, t (rows without t first), grid size.
/// The sort is stable, so rows that tie keep their production order.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        a.scenario
            .cmp(&b.scenario)
            .then_with(|| a.check.cmp(&b.check))
            .then_with(|| a.t.partial_cmp(&b.t).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.grid_size.cmp(&b.grid_size))
    });
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["scenario", "check", "t", "grid_size", "metric", "threshold", "pass", "runtime_ms"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(text: &str) -> csv::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn summary(rows: &[ReportRow]) -> String {
    let failed = rows.iter().filter(|r| !r.pass).count();
    let mut out = String::new();
    for r in rows.iter().filter(|r| !r.pass) {
        let t = r.t.map_or_else(|| "-".to_string(), |t| format!("{t}"));
        out.push_str(&format!(
            "FAIL {} {} t={} N={} metric={:e} threshold={:e}\n",
            r.scenario, r.check, t, r.grid_size, r.metric, r.threshold
        ));
    }
    out.push_str(&format!("{} rows, {} passed, {} failed\n", rows.len(), rows.len() - failed, failed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_flag_tracks_threshold() {
        assert!(ReportRow::new("s", "c", None, 1, 1e-7, 1e-6).pass);
        assert!(!ReportRow::new("s", "c", None, 1, f64::NAN, 1e-6).pass);
        assert!(ReportRow::new("s", "c", None, 1, 1e3, f64::INFINITY).pass);
    }

    #[test]
    fn csv_round_trip_and_order() {
        let mut rows = vec![
            ReportRow::new("s", "homomorphism", Some(0.5), 128, 1e-9, 1e-6),
            ReportRow::new("s", "associativity", Some(0.5), 128, 2e-9, 1e-6),
            ReportRow::new("s", "associativity", Some(0.0), 128, 3e-9, 1e-6),
            ReportRow::new("s", "associativity", None, 7, 0.0, 0.0),
        ];
        sort_rows(&mut rows);
        assert_eq!(rows.iter().map(|r| r.t).collect::<Vec<_>>(), vec![None, Some(0.0), Some(0.5), Some(0.5)]);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario,check,t,grid_size,metric,threshold,pass,runtime_ms\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_csv(&text).unwrap(), rows);
    }
}
