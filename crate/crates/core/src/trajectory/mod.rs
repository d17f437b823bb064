//! Dynamic agents: joint states, trajectory sources, and predictors.

mod io;
mod predict;
mod synth;

pub use io::{
    load_external_predictions, load_trajectories, read_trajectories, write_trajectories, CsvOptions,
};
pub use predict::{ExternalPredictions, Predictor, PredictorKind};
pub use synth::{synth_trajectories, Boundary, SynthModel, SynthSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;

pub type AgentId = u64;
pub type Timestep = i64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("predictor needs at least {needed} history states, got {got}")]
    HistoryTooShort { needed: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("agent {agent}: frame {frame} does not follow frame {previous}")]
    NonMonotoneFrames {
        agent: AgentId,
        previous: i64,
        frame: i64,
    },
    #[error("timestep {t} outside trajectory span {first}..={last}")]
    OutOfRange {
        t: Timestep,
        first: Timestep,
        last: Timestep,
    },
    #[error("no external prediction for t={t}, tau={tau}")]
    MissingPrediction { t: Timestep, tau: usize },
    #[error("{0}")]
    Io(String),
}

/// Positions of the agents present at one timestep, sorted by agent id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAgentState {
    pub timestep: Timestep,
    agents: Vec<(AgentId, Point)>,
}

impl JointAgentState {
    pub fn new(timestep: Timestep, mut agents: Vec<(AgentId, Point)>) -> Self {
        agents.sort_by_key(|&(id, _)| id);
        agents.dedup_by_key(|&mut (id, _)| id);
        Self { timestep, agents }
    }

    /// Agents numbered `0..n` in order.
    pub fn from_positions(timestep: Timestep, positions: &[Point]) -> Self {
        Self::new(
            timestep,
            positions.iter().enumerate().map(|(i, &p)| (i as AgentId, p)).collect(),
        )
    }

    pub fn agents(&self) -> &[(AgentId, Point)] {
        &self.agents
    }

    pub fn positions(&self) -> impl Iterator<Item = &Point> + '_ {
        self.agents.iter().map(|(_, p)| p)
    }

    pub fn get(&self, id: AgentId) -> Option<Point> {
        self.agents
            .binary_search_by_key(&id, |&(i, _)| i)
            .ok()
            .map(|i| self.agents[i].1)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Joint predictions `X̂_t^1 … X̂_t^H` made at `made_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub made_at: Timestep,
    predicted: Vec<JointAgentState>,
}

impl PredictionSet {
    pub fn new(made_at: Timestep, predicted: Vec<JointAgentState>) -> Self {
        Self { made_at, predicted }
    }

    pub fn horizon(&self) -> usize {
        self.predicted.len()
    }

    /// Prediction for `made_at + tau`, `tau` in `1..=H`.
    pub fn at(&self, tau: usize) -> &JointAgentState {
        &self.predicted[tau - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &JointAgentState> {
        self.predicted.iter()
    }
}

/// Per-agent time-indexed positions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectorySource {
    tracks: BTreeMap<AgentId, Vec<(Timestep, Point)>>,
    pub frame_rate: Option<f64>,
    pub scale: f64,
}

impl TrajectorySource {
    /// Builds a source, checking that each track's timesteps strictly increase.
    pub fn new(tracks: BTreeMap<AgentId, Vec<(Timestep, Point)>>) -> Result<Self, TrajectoryError> {
        for (&agent, track) in &tracks {
            for w in track.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(TrajectoryError::NonMonotoneFrames {
                        agent,
                        previous: w[0].0,
                        frame: w[1].0,
                    });
                }
            }
        }
        Ok(Self {
            tracks,
            frame_rate: None,
            scale: 1.0,
        })
    }

    pub fn empty() -> Self {
        Self {
            scale: 1.0,
            ..Self::default()
        }
    }

    pub fn tracks(&self) -> &BTreeMap<AgentId, Vec<(Timestep, Point)>> {
        &self.tracks
    }

    pub fn num_agents(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.values().all(Vec::is_empty)
    }

    /// First and last timestep with any agent, `None` when empty.
    pub fn span(&self) -> Option<(Timestep, Timestep)> {
        let first = self.tracks.values().filter_map(|t| t.first()).map(|p| p.0).min()?;
        let last = self.tracks.values().filter_map(|t| t.last()).map(|p| p.0).max()?;
        Some((first, last))
    }

    /// Joint state of the agents present at `t`.
    pub fn agents_at(&self, t: Timestep) -> Result<JointAgentState, TrajectoryError> {
        let (first, last) = self.span().unwrap_or((0, -1));
        if t < first || t > last {
            return Err(TrajectoryError::OutOfRange { t, first, last });
        }
        Ok(self.agents_at_unchecked(t))
    }

    /// Like [`agents_at`](Self::agents_at) but yields an empty joint state
    /// outside the span.
    pub fn agents_at_unchecked(&self, t: Timestep) -> JointAgentState {
        let agents = self
            .tracks
            .iter()
            .filter_map(|(&id, track)| {
                track
                    .binary_search_by_key(&t, |&(ts, _)| ts)
                    .ok()
                    .map(|i| (id, track[i].1))
            })
            .collect();
        JointAgentState::new(t, agents)
    }

    /// The last `k` joint states ending at `t`, oldest first.
    pub fn history(&self, t: Timestep, k: usize) -> Vec<JointAgentState> {
        (t + 1 - k as Timestep..=t)
            .map(|ts| self.agents_at_unchecked(ts))
            .collect()
    }
}
