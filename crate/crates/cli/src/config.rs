//! Run configuration: a single JSON document shared by all subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use nhhj::geometry::{DifferentiationStrategy, SmoothMap};
use nhhj::hj::{OneFormCandidate, Tolerances};
use nhhj::integrate::IntegratorConfig;
use nhhj::mechanics::PhaseState;
use nhhj::nonholo::NonholonomicSystem;
use nhhj::sampling::DomainBox;
use nhhj::systems::{build_example, constant_coefficient_system, ExampleName};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemChoice,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub gamma_params: BTreeMap<String, f64>,
    #[serde(default)]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_t_span")]
    pub t_span: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Largest bracket depth explored by the structure check; defaults to `n`.
    #[serde(default)]
    pub max_depth: Option<usize>,
    /// Threshold on the phase-space gap for `compare`.
    #[serde(default = "default_gap_tolerance")]
    pub gap_tolerance: f64,
    #[serde(default)]
    pub differentiation: DifferentiationStrategy,
}

fn default_t_span() -> [f64; 2] {
    [0.0, 10.0]
}

fn default_samples() -> usize {
    100
}

fn default_gap_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemChoice {
    Named(String),
    Custom { custom: CustomSystem },
}

/// Constant metric, constant constraint rows and linear potential.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub coords: Vec<String>,
    pub metric: Vec<Vec<f64>>,
    #[serde(default)]
    pub constraints: Vec<Vec<f64>>,
    #[serde(default)]
    pub potential_gradient: Option<Vec<f64>>,
    /// Constant one-form; zero when absent.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// Sampling interval per coordinate; `[-1, 1]` each when absent.
    #[serde(default)]
    pub domain_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Momentum { q: Vec<f64>, p: Vec<f64> },
    Velocity { q: Vec<f64>, v: Vec<f64> },
    /// Momentum taken from the one-form, `p = γ(q)`.
    Position { q: Vec<f64> },
}

/// Everything a command needs, validated.
pub struct Resolved {
    pub label: String,
    pub system: NonholonomicSystem,
    pub gamma: OneFormCandidate,
    pub domain_box: DomainBox,
    pub initial: PhaseState,
    pub config: RunConfig,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Invalid(format!("every row of {what} must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn vector(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != n {
        return Err(CliError::Invalid(format!("{what} must have {n} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Invalid(format!("{what} must be finite")));
    }
    Ok(DVector::from_column_slice(v))
}

fn custom(c: &CustomSystem) -> Result<(NonholonomicSystem, OneFormCandidate, DomainBox), CliError> {
    let n = c.coords.len();
    if n == 0 {
        return Err(CliError::Invalid("custom system needs at least one coordinate".into()));
    }
    let metric = matrix(&c.metric, n, "metric")?;
    if metric.nrows() != n {
        return Err(CliError::Invalid(format!("metric must be {n}×{n}")));
    }
    let constraints = matrix(&c.constraints, n, "constraints")?;
    let grad = c.potential_gradient.as_deref().map(|g| vector(g, n, "potential_gradient")).transpose()?;
    let system = constant_coefficient_system(c.coords.clone(), metric, constraints, grad).map_err(CliError::invalid)?;
    let gamma = match &c.gamma {
        Some(g) => OneFormCandidate::new("custom", SmoothMap::constant(vector(g, n, "gamma")?)),
        None => OneFormCandidate::zero(n),
    };
    let bounds = match &c.domain_box {
        Some(b) if b.len() != n => return Err(CliError::Invalid(format!("domain_box must have {n} intervals"))),
        Some(b) => b.iter().map(|[lo, hi]| (*lo, *hi)).collect(),
        None => vec![(-1.0, 1.0); n],
    };
    Ok((system, gamma, DomainBox::new(bounds).map_err(CliError::invalid)?))
}

pub fn resolve(config: RunConfig, seed_override: Option<u64>) -> Result<Resolved, CliError> {
    let mut config = config;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    config.integrator.validate().map_err(CliError::invalid)?;
    let strat = config.differentiation;
    DifferentiationStrategy::new(strat.mode, strat.fd_step_scale).map_err(CliError::invalid)?;
    if config.tolerances.rank_tol <= 0.0 || config.tolerances.regularity_margin < 0.0 {
        return Err(CliError::Invalid("tolerances.rank_tol must be positive and regularity_margin non-negative".into()));
    }
    let [t0, t1] = config.t_span;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(CliError::Invalid(format!("t_span must satisfy t0 ≤ t1, got [{t0}, {t1}]")));
    }
    if config.gap_tolerance.is_nan() || config.gap_tolerance <= 0.0 {
        return Err(CliError::Invalid("gap_tolerance must be positive".into()));
    }

    let (label, system, gamma, domain_box, default_initial) = match &config.system {
        SystemChoice::Named(name) => {
            let name: ExampleName = name.parse().map_err(CliError::invalid)?;
            let ex = build_example(name, &config.params, &config.gamma_params).map_err(CliError::invalid)?;
            (name.to_string(), ex.system, ex.gamma, ex.domain_box, Some(ex.initial))
        }
        SystemChoice::Custom { custom: c } => {
            if !config.params.is_empty() || !config.gamma_params.is_empty() {
                return Err(CliError::Invalid("params and gamma_params do not apply to custom systems".into()));
            }
            let (system, gamma, domain_box) = custom(c)?;
            ("custom".to_string(), system, gamma, domain_box, None)
        }
    };

    let n = system.dim();
    let initial = match &config.initial {
        Some(InitialCondition::Momentum { q, p }) => PhaseState::new(vector(q, n, "initial.q")?, vector(p, n, "initial.p")?, t0),
        Some(InitialCondition::Velocity { q, v }) => {
            let q = vector(q, n, "initial.q")?;
            let p = system.mech.legendre(&q, &vector(v, n, "initial.v")?).map_err(CliError::invalid)?;
            PhaseState::new(q, p, t0)
        }
        Some(InitialCondition::Position { q }) => {
            let q = vector(q, n, "initial.q")?;
            let p = gamma.eval(&q).map_err(CliError::invalid)?;
            PhaseState::new(q, p, t0)
        }
        None => match default_initial {
            Some(z) => PhaseState::new(z.q, z.p, t0),
            None => PhaseState::new(DVector::zeros(n), DVector::zeros(n), t0),
        },
    };
    Ok(Resolved { label, system, gamma, domain_box, initial, config })
}
