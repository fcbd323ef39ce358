//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use pdmpq::{CorrosionParams, RewardFunction, UnitInterpretation};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    /// Jumps after which intervention is forced.
    pub horizon: usize,
    pub out: PathBuf,
    /// Only affects the built-in reference parameters.
    pub units: UnitInterpretation,
    /// Explicit model parameters, replacing the reference set.
    pub model: Option<CorrosionParams<f64>>,
    pub reward: RewardConfig,
    pub quantizer: QuantizerConfig,
    pub solver: SolverConfig,
    pub simulate: SimulateConfig,
    pub evaluate: EvaluateConfig,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// `[thickness mm, reward]` pairs.
    pub knots: Vec<[f64; 2]>,
    pub beyond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub k: usize,
    /// Training realizations; 10⁶ for K >= 1000 and 10⁵ below when absent.
    pub samples: Option<u64>,
    /// Realizations used to estimate the coordinate scales.
    pub pilot: u64,
    /// Also write the grids as JSON.
    pub export_json: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Time points on the grid of the point with the smallest boundary time.
    pub target_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub runs: usize,
    /// Trajectories written out in full.
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub runs: usize,
    /// Stopped trajectories exported by `report`.
    pub paths: usize,
    pub bin_width_years: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2012,
            horizon: 25,
            out: PathBuf::from("out"),
            units: UnitInterpretation::Hours,
            model: None,
            reward: RewardConfig::default(),
            quantizer: QuantizerConfig::default(),
            solver: SolverConfig::default(),
            simulate: SimulateConfig::default(),
            evaluate: EvaluateConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        let g = RewardFunction::<f64>::corrosion_default();
        Self {
            knots: g.knots().iter().map(|&(x, y)| [x, y]).collect(),
            beyond: g.beyond(),
        }
    }
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            samples: None,
            pilot: 10_000,
            export_json: false,
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { target_points: 50 }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            runs: 10_000,
            paths: 20,
        }
    }
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            runs: 100_000,
            paths: 20,
            bin_width_years: 1.0,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: vec![10, 50, 100, 200, 500, 1000],
        }
    }
}

/// Fields that determine the grids and the solve result.
#[derive(Serialize)]
struct Hashed<'a> {
    model: CorrosionParams<f64>,
    horizon: usize,
    k: usize,
    samples: u64,
    pilot: u64,
    seed: u64,
    reward: &'a RewardConfig,
    target_points: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        self.model_params().validate()?;
        self.reward_function()?;
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.quantizer.k == 0 {
            return bad("quantizer.k must be at least 1");
        }
        if self.training_samples() < self.quantizer.k as u64 {
            return bad("quantizer.samples must be at least K");
        }
        if self.quantizer.pilot < 100 {
            return bad("quantizer.pilot must be at least 100");
        }
        if self.solver.target_points == 0 {
            return bad("solver.target_points must be at least 1");
        }
        if self.simulate.runs == 0 || self.evaluate.runs == 0 {
            return bad("run counts must be positive");
        }
        if !(self.evaluate.bin_width_years > 0.0 && self.evaluate.bin_width_years.is_finite()) {
            return bad("evaluate.bin_width_years must be positive");
        }
        if self.pipeline.k.is_empty() || self.pipeline.k.contains(&0) {
            return bad("pipeline.k must list positive grid sizes");
        }
        Ok(())
    }

    pub fn model_params(&self) -> CorrosionParams<f64> {
        self.model
            .clone()
            .unwrap_or_else(|| CorrosionParams::reference(self.units))
    }

    pub fn reward_function(&self) -> Result<RewardFunction<f64>, CliError> {
        let knots = self.reward.knots.iter().map(|&[x, y]| (x, y)).collect();
        RewardFunction::new(knots, self.reward.beyond).map_err(|e| CliError::Config(format!("reward: {e}")))
    }

    pub fn training_samples(&self) -> u64 {
        self.quantizer
            .samples
            .unwrap_or(if self.quantizer.k >= 1000 { 1_000_000 } else { 100_000 })
    }

    /// Copy of the configuration with a different grid size. An explicit
    /// sample budget is kept; the default budget follows K.
    pub fn with_k(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.quantizer.k = k;
        c
    }

    /// SHA-256 of the settings that determine grids and solve results.
    pub fn hash(&self) -> [u8; 32] {
        let h = Hashed {
            model: self.model_params(),
            horizon: self.horizon,
            k: self.quantizer.k,
            samples: self.training_samples(),
            pilot: self.quantizer.pilot,
            seed: self.seed,
            reward: &self.reward,
            target_points: self.solver.target_points,
        };
        let json = serde_json::to_vec(&h).expect("config serializes");
        Sha256::digest(json).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }
}
