//! Scenario documents: one JSON object per run.

use std::path::Path;

use deform_core::families::{build_field, FieldSpec};
use deform_core::groupoid::{by_key, SharedModel};
use deform_core::quadrature::QuadratureSpec;
use deform_core::Field64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown groupoid instance `{0}`")]
    UnknownInstance(String),
    #[error("field {index} (`{family}`): {reason}")]
    Field { index: usize, family: String, reason: String },
    #[error("unknown built-in scenario `{0}`")]
    UnknownScenario(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Associativity,
    Homomorphism,
    Continuity,
    KernelOracle,
    Fourier,
    Seminorm,
    Support,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Associativity,
        CheckKind::Homomorphism,
        CheckKind::Continuity,
        CheckKind::KernelOracle,
        CheckKind::Fourier,
        CheckKind::Seminorm,
        CheckKind::Support,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Associativity => "associativity",
            CheckKind::Homomorphism => "homomorphism",
            CheckKind::Continuity => "continuity",
            CheckKind::KernelOracle => "kernel-oracle",
            CheckKind::Fourier => "fourier",
            CheckKind::Seminorm => "seminorm",
            CheckKind::Support => "support",
        }
    }
}

/// Sampling sizes shared by the checks; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    pub probes: usize,
    pub x_radius: f64,
    pub xi_radius: f64,
    pub oracle_grid: usize,
    pub lattice_points: usize,
    pub lattice_radius: f64,
    pub continuity_t: Vec<f64>,
    pub support_samples: usize,
    pub seminorm_order: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            probes: 40,
            x_radius: 1.0,
            xi_radius: 3.0,
            oracle_grid: 256,
            lattice_points: 256,
            lattice_radius: 12.0,
            continuity_t: (0..9).map(|i| 1e-3 * 300f64.powf(i as f64 / 8.0)).collect(),
            support_samples: 1000,
            seminorm_order: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub groupoid: String,
    pub fields: Vec<FieldSpec>,
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub quadrature: QuadratureSpec<f64>,
    pub checks: Vec<CheckKind>,
    pub seed: u64,
    #[serde(default)]
    pub options: ScenarioOptions,
}

/// A validated scenario with its instance and fields built.
pub struct Prepared {
    pub scenario: Scenario,
    pub model: SharedModel<f64>,
    pub fields: Vec<Field64>,
}

impl Prepared {
    /// The `i`-th field, cycling when fewer fields than needed are given.
    pub fn field(&self, i: usize) -> &Field64 {
        &self.fields[i % self.fields.len()]
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn prepare(self) -> Result<Prepared, ConfigError> {
        let invalid = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.name.trim().is_empty() {
            return invalid("scenario name is empty");
        }
        if self.checks.is_empty() {
            return invalid("at least one check is required");
        }
        if self.fields.is_empty() {
            return invalid("at least one field is required");
        }
        if self.t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return invalid("t_grid values must lie in [0, 1]");
        }
        if self.t_grid.windows(2).any(|w| w[0] > w[1]) {
            return invalid("t_grid must be sorted");
        }
        let o = &self.options;
        if o.probes == 0 || o.support_samples == 0 {
            return invalid("probe and support sample counts must be positive");
        }
        if !(o.x_radius > 0.0 && o.xi_radius > 0.0 && o.lattice_radius > 0.0) {
            return invalid("sampling radii must be positive");
        }
        if o.continuity_t.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return invalid("continuity_t values must lie in (0, 1]");
        }
        self.quadrature.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let model = by_key::<f64>(&self.groupoid).map_err(|_| ConfigError::UnknownInstance(self.groupoid.clone()))?;
        let fields = self
            .fields
            .iter()
            .enumerate()
            .map(|(index, spec)| {
                build_field(spec, model.as_ref()).map_err(|e| ConfigError::Field {
                    index,
                    family: spec.family.clone(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let needs_grid = [CheckKind::Associativity, CheckKind::Homomorphism, CheckKind::KernelOracle];
        if self.t_grid.is_empty() && self.checks.iter().any(|c| needs_grid.contains(c)) {
            return invalid("t_grid is empty");
        }
        for check in &self.checks {
            match check {
                CheckKind::KernelOracle if !matches!(self.groupoid.as_str(), "pair-r1" | "pair-t1") => {
                    return Err(ConfigError::Invalid(format!("kernel-oracle needs pair-r1 or pair-t1, not `{}`", self.groupoid)))
                }
                CheckKind::KernelOracle if !self.t_grid.iter().any(|&t| t > 0.0) => {
                    return invalid("kernel-oracle needs a positive t in t_grid")
                }
                CheckKind::Support if fields.iter().any(|f| f.support().is_none()) => {
                    return invalid("support check needs every field to carry a cutoff")
                }
                _ => {}
            }
        }
        Ok(Prepared { scenario: self, model, fields })
    }
}
