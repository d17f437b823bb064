//! Episode runner, safety metrics, benchmark grids and the ACP coverage
//! simulation.

mod bench;
mod coverage;
mod episode;
mod metrics;

pub use bench::{
    aggregate, paired_comparisons, render_table, run_benchmark, write_aggregate_csv, write_raw_csv,
    write_timing_csv, AggregateRow, BenchConfig, BenchResult, PairedComparison, RAW_HEADER,
};
pub use coverage::{run_coverage, CoverageConfig, CoverageReport, CoverageSample, TauCoverage};
pub use episode::{
    run_episode, AcpTrace, Environment, EpisodeResult, FrameDump, GoalBiasedRollout, PredictionCircle, StepRecord,
};
pub use metrics::{mean_std, paired_t_test, safety_metrics, PairedTTest, SafetyMetrics};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acp::{AcpConfig, AcpError};
use crate::gridworld::{GridError, GridSpec};
use crate::planner::{PlannerConfig, PlannerError};
use crate::shield::SafetyParams;
use crate::trajectory::{
    load_external_predictions, load_trajectories, synth_trajectories, CsvOptions, PredictorKind,
    SynthSpec, TrajectoryError, TrajectorySource,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Acp(#[from] AcpError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("{0}")]
    Io(String),
}

/// Which safety mechanism the robot uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NoShield,
    ShieldNoAcp,
    ShieldAcp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::NoShield, Method::ShieldNoAcp, Method::ShieldAcp];

    pub fn name(&self) -> &'static str {
        match self {
            Method::NoShield => "no-shield",
            Method::ShieldNoAcp => "shield-no-acp",
            Method::ShieldAcp => "shield-acp",
        }
    }

    pub fn shielded(&self) -> bool {
        !matches!(self, Method::NoShield)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected no-shield, shield-no-acp or shield-acp)"))
    }
}

/// Where dynamic agents come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum AgentSource {
    /// Generated per episode from the episode seed; `length` is extended to
    /// cover the episode.
    Synthetic(SynthSpec),
    /// Recorded `frame_id, agent_id, x, y` rows.
    Csv {
        path: PathBuf,
        #[serde(default)]
        options: CsvOptions,
        /// First subsampled timestep used by an episode.
        #[serde(default)]
        start: i64,
    },
}

impl Default for AgentSource {
    fn default() -> Self {
        AgentSource::Synthetic(SynthSpec::default())
    }
}

impl AgentSource {
    pub fn num_agents(&self) -> Option<usize> {
        match self {
            AgentSource::Synthetic(s) => Some(s.agents),
            AgentSource::Csv { .. } => None,
        }
    }

    /// Agent trajectories for one episode needing `frames` timesteps.
    pub fn load(&self, frames: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<TrajectorySource, HarnessError> {
        match self {
            AgentSource::Synthetic(spec) => {
                let spec = SynthSpec {
                    length: spec.length.max(frames),
                    ..spec.clone()
                };
                Ok(synth_trajectories(&spec, rng))
            }
            AgentSource::Csv { path, options, .. } => Ok(load_trajectories(path, options)?),
        }
    }

    pub fn start(&self) -> i64 {
        match self {
            AgentSource::Synthetic(_) => 0,
            AgentSource::Csv { start, .. } => *start,
        }
    }
}

/// Rollout policy used beyond the search tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RolloutKind {
    Uniform,
    /// With probability `bias` take the allowed action closest to the goal.
    GoalBiased { bias: f64 },
}

impl Default for RolloutKind {
    fn default() -> Self {
        RolloutKind::Uniform
    }
}

/// Every knob of one experiment. Defaults are the full-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub seed: u64,
    pub runs: usize,
    pub max_steps: usize,
    pub horizon: usize,
    /// Agent frames fed to ACP before the robot starts moving.
    pub warmup_frames: usize,
    pub grid: GridSpec,
    pub agents: AgentSource,
    pub predictor: PredictorKind,
    /// Replay predictions from a `t, tau, agent_id, x, y` file instead.
    pub predictions_csv: Option<PathBuf>,
    pub acp: AcpConfig,
    pub safety: SafetyParams,
    pub planner: PlannerConfig,
    pub rollout: RolloutKind,
    /// Run the certificate and soundness checks at every step.
    pub verify: bool,
    /// Keep per-step frame dumps in the result.
    pub record_frames: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "grid20".into(),
            method: Method::ShieldAcp,
            seed: 0,
            runs: 100,
            max_steps: 300,
            horizon: 3,
            warmup_frames: 0,
            grid: GridSpec::default(),
            agents: AgentSource::default(),
            predictor: PredictorKind::ConstantVelocity,
            predictions_csv: None,
            acp: AcpConfig::default(),
            safety: SafetyParams::default(),
            planner: PlannerConfig::default(),
            rollout: RolloutKind::Uniform,
            verify: true,
            record_frames: false,
        }
    }
}

impl ExperimentConfig {
    /// Reduced search budget for single-core desk runs: fewer simulations,
    /// shallower rollouts, fewer particles, a goal-biased rollout and an ACP
    /// pre-roll so radii are finite from the first step.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.name = "grid20-desk".into();
        cfg.planner.num_simulations = 512;
        cfg.planner.max_depth = 40;
        cfg.planner.particle_count = 1000;
        cfg.rollout = RolloutKind::GoalBiased { bias: 0.5 };
        cfg.warmup_frames = cfg.acp.window_size + cfg.horizon + 2;
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if !(self.safety.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.safety.epsilon));
        }
        if !(self.safety.lipschitz > 0.0) {
            return bad(format!("lipschitz {} must be positive", self.safety.lipschitz));
        }
        if self.planner.max_depth < self.horizon {
            return bad("planner.max_depth must be at least the horizon".into());
        }
        if let RolloutKind::GoalBiased { bias } = self.rollout {
            if !(0.0..=1.0).contains(&bias) {
                return bad(format!("rollout bias {bias} outside [0, 1]"));
            }
        }
        self.acp.validate()?;
        self.planner.validate()?;
        self.grid.validate()?;
        Ok(())
    }

    /// The configured predictor, loading replayed predictions when requested.
    pub fn resolve_predictor(&self) -> Result<PredictorKind, HarnessError> {
        match &self.predictions_csv {
            Some(path) => {
                let opts = match &self.agents {
                    AgentSource::Csv { options, .. } => options.clone(),
                    AgentSource::Synthetic(_) => CsvOptions::default(),
                };
                Ok(PredictorKind::External(load_external_predictions(path, &opts)?))
            }
            None => Ok(self.predictor.clone()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
