//! Scenarios shipped with the binary.

use deform_core::families::FieldSpec;
use deform_core::quadrature::QuadratureSpec;

use crate::scenario::{CheckKind, ConfigError, Scenario, ScenarioOptions};

/// Width of the circle fields; kernels at `t = 0.3` span a few lattice
/// cells at `N = 128` and are resolved to rounding at `N = 256`.
const CIRCLE_WIDTH: f64 = 0.04;

pub const NAMES: [&str; 4] = ["gaussian-pair-r1", "gaussian-pair-t1", "abelian-q1", "bundle-t1-q1"];

fn gaussian(params: &[f64]) -> FieldSpec {
    FieldSpec::new("gaussian", params)
}

pub fn builtin(name: &str) -> Result<Scenario, ConfigError> {
    let scenario = match name {
        "gaussian-pair-r1" => Scenario {
            name: name.into(),
            groupoid: "pair-r1".into(),
            fields: vec![
                gaussian(&[1.0, 0.2, 1.0, 0.1, 0.5, 3.0, 0.5]),
                gaussian(&[0.8, -0.3, 0.9, 0.2, 0.0, 3.0, 0.5]),
                gaussian(&[1.2, 0.1, 1.1, 0.05, 0.3, 3.0, 0.5]),
            ],
            t_grid: vec![0.0, 0.1, 0.25, 0.5, 1.0],
            quadrature: QuadratureSpec::default(),
            checks: CheckKind::ALL.to_vec(),
            seed: 7,
            options: ScenarioOptions::default(),
        },
        "gaussian-pair-t1" => {
            let field = |amp: f64, x_mod: f64, t_slope: f64| gaussian(&[amp, 0.0, CIRCLE_WIDTH, x_mod, t_slope, 0.15, 0.25]);
            Scenario {
                name: name.into(),
                groupoid: "pair-t1".into(),
                fields: vec![field(1.0, 0.3, 0.5), field(0.8, 0.2, 0.0), field(1.2, 0.1, 0.3)],
                t_grid: vec![0.0, 0.3, 0.5, 1.0],
                quadrature: QuadratureSpec { hermite_scale: CIRCLE_WIDTH, ..QuadratureSpec::default() },
                checks: vec![CheckKind::Associativity, CheckKind::Homomorphism, CheckKind::KernelOracle, CheckKind::Support],
                seed: 11,
                options: ScenarioOptions { xi_radius: 3.0 * CIRCLE_WIDTH, ..ScenarioOptions::default() },
            }
        }
        "abelian-q1" => Scenario {
            name: name.into(),
            groupoid: "abelian-q1".into(),
            fields: vec![
                gaussian(&[1.0, 0.0, 1.0, 0.0, 0.5]),
                gaussian(&[0.8, 0.3, 0.9, 0.0, 0.25]),
                gaussian(&[1.2, -0.2, 1.1]),
            ],
            t_grid: vec![0.0, 0.1, 0.5, 1.0],
            quadrature: QuadratureSpec::default(),
            checks: vec![
                CheckKind::Associativity,
                CheckKind::Homomorphism,
                CheckKind::Continuity,
                CheckKind::Fourier,
                CheckKind::Seminorm,
            ],
            seed: 13,
            options: ScenarioOptions::default(),
        },
        "bundle-t1-q1" => Scenario {
            name: name.into(),
            groupoid: "bundle-t1-q1".into(),
            fields: vec![
                gaussian(&[1.0, 0.0, 1.0, 0.3, 0.5]),
                gaussian(&[0.8, 0.2, 0.9, 0.2]),
                gaussian(&[1.2, -0.1, 1.1, 0.1, 0.3]),
            ],
            t_grid: vec![0.0, 0.1, 0.5, 1.0],
            quadrature: QuadratureSpec::default(),
            checks: vec![CheckKind::Associativity, CheckKind::Homomorphism, CheckKind::Continuity, CheckKind::Fourier],
            seed: 17,
            options: ScenarioOptions::default(),
        },
        other => return Err(ConfigError::UnknownScenario(other.to_string())),
    };
    Ok(scenario)
}
