//! Experiment configuration: one JSON document per run.
//!
//! Every field has a default, and the fully populated config (defaults
//! included) is what gets hashed and written next to the outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sinkflow::{DensitySpec, Grid};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SinkhornRun,
    PmaRun,
    FokkerPlanckRun,
    DiffusionRun,
    MarkovChainRun,
    EpsLimit,
    MetricDerivative,
    KlDecay,
    GaussianClosedForm,
    LaplaceEstimate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SinkhornRun => "sinkhorn_run",
            Experiment::PmaRun => "pma_run",
            Experiment::FokkerPlanckRun => "fokker_planck_run",
            Experiment::DiffusionRun => "diffusion_run",
            Experiment::MarkovChainRun => "markov_chain_run",
            Experiment::EpsLimit => "eps_limit",
            Experiment::MetricDerivative => "metric_derivative",
            Experiment::KlDecay => "kl_decay",
            Experiment::GaussianClosedForm => "gaussian_closed_form",
            Experiment::LaplaceEstimate => "laplace_estimate",
        }
    }
}

/// A density on the line. Only Gaussians have closed-form oracles; the
/// uniform is accepted for the flows that do not need one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityConfig {
    Gaussian { mean: f64, variance: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl DensityConfig {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        DensityConfig::Gaussian { mean, variance }
    }

    pub fn spec(&self) -> Result<DensitySpec, CliError> {
        Ok(match *self {
            DensityConfig::Gaussian { mean, variance } => DensitySpec::gaussian(mean, variance)?,
            DensityConfig::Uniform { lower, upper } => DensitySpec::uniform(lower, upper)?,
        })
    }

    pub fn as_gaussian(&self) -> Option<(f64, f64)> {
        match *self {
            DensityConfig::Gaussian { mean, variance } => Some((mean, variance)),
            _ => None,
        }
    }
}

/// Initial potential. `Brenier` is the monotone map from `rho0` to `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    Brenier,
    Quadratic { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// `e^{-f}`.
    pub mu: DensityConfig,
    /// `e^{-g}`.
    pub nu: DensityConfig,
    /// Initial marginal; defaults to `nu`.
    pub rho0: Option<DensityConfig>,
    pub u0: PotentialConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            mu: DensityConfig::gaussian(0.0, 1.0),
            nu: DensityConfig::gaussian(0.5, 1.0),
            rho0: None,
            u0: PotentialConfig::Brenier,
        }
    }
}

impl ProblemConfig {
    pub fn rho0(&self) -> DensityConfig {
        self.rho0.unwrap_or(self.nu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    /// Half-width of the grid `[-L, L]`.
    #[serde(rename = "L")]
    pub half_width: f64,
    pub n: usize,
    pub dt: f64,
    pub eps_list: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub particles: usize,
    pub seed: u64,
    /// Overrides for the verdict tolerances of the experiment; unknown keys
    /// are rejected when the experiment runs.
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            half_width: 8.0,
            n: 512,
            dt: 1e-3,
            eps_list: vec![0.2, 0.1, 0.05],
            horizon: 1.0,
            particles: 100_000,
            seed: 2024,
            tolerances: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Subdirectory of the output root; defaults to the experiment name.
    pub directory: Option<String>,
    /// Rows of the trajectory table every `snapshot_stride` steps.
    pub snapshot_stride: usize,
    pub emit_svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: None,
            snapshot_stride: 100,
            emit_svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            problem: ProblemConfig::default(),
            numerics: NumericsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        let bad = |m: String| Err(CliError::Config(m));
        if !(64..=2048).contains(&n.n) || !n.n.is_power_of_two() {
            return bad(format!("n = {} must be a power of two in [64, 2048]", n.n));
        }
        if !(n.horizon > 0.0) {
            return bad(format!("T = {} must be positive", n.horizon));
        }
        if !(n.dt > 0.0) {
            return bad(format!("dt = {} must be positive", n.dt));
        }
        if !(n.half_width > 0.0) {
            return bad(format!("L = {} must be positive", n.half_width));
        }
        if n.eps_list.is_empty() || n.eps_list.iter().any(|e| !(*e > 0.0)) {
            return bad("eps_list must be nonempty and positive".into());
        }
        if n.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("eps_list must be strictly decreasing".into());
        }
        if n.particles < 2 {
            return bad("at least two particles are needed".into());
        }
        if self.output.snapshot_stride == 0 {
            return bad("snapshot_stride must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Ok(Grid::symmetric(self.numerics.half_width, self.numerics.n)?)
    }

    /// Canonical JSON (fields in declaration order, maps sorted).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex_digest(self.canonical_json().as_bytes())
    }

    /// Tolerance `name`, overridable from the config.
    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.numerics.tolerances.get(name).copied().unwrap_or(default)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
