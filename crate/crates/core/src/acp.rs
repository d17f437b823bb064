//! Adaptive conformal prediction regions for multi-step trajectory
//! predictions.
//!
//! For every horizon `τ` a tracker keeps the last `K` time-lagged
//! nonconformity scores `β_t^τ = ‖X_t − X̂_{t−τ}^τ‖` and an adaptive failure
//! level `λ^τ`. At each step `λ` moves by `α(δ − 1{C_t^τ < β_t^τ})`, and the
//! next radius `C_{t+τ}^τ` is the `⌈(K+1)(1−λ)⌉`-th smallest score in the
//! window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{JointAgentState, PredictionSet, Timestep};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcpError {
    #[error("actual and predicted joint states share no agents")]
    AgentMismatch,
    #[error("empty score window")]
    EmptyWindow,
    #[error("invalid ACP parameter: {0}")]
    InvalidConfig(String),
}

/// What the shield does while a window holds fewer than `K` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmupMode {
    /// Use the current window length; infinite radius when the index overflows.
    #[default]
    Conservative,
    /// Report regions as not ready until every window is full.
    GracePeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcpConfig {
    pub alpha: f64,
    pub delta: f64,
    pub window_size: usize,
    /// Initial `λ`; defaults to `delta`.
    pub lambda0: Option<f64>,
    pub warmup: WarmupMode,
}

impl Default for AcpConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0008,
            delta: 0.05,
            window_size: 30,
            lambda0: None,
            warmup: WarmupMode::Conservative,
        }
    }
}

impl AcpConfig {
    pub fn validate(&self) -> Result<(), AcpError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.alpha) {
            return Err(AcpError::InvalidConfig(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if !open(self.delta) {
            return Err(AcpError::InvalidConfig(format!("delta {} not in (0,1)", self.delta)));
        }
        if self.window_size == 0 {
            return Err(AcpError::InvalidConfig("window_size must be positive".into()));
        }
        Ok(())
    }
}

/// Stacked Euclidean norm of the joint prediction error over agents present
/// in both states, matched by id.
pub fn nonconformity(
    actual: &JointAgentState,
    predicted: &JointAgentState,
) -> Result<f64, AcpError> {
    let mut sum = 0.0;
    let mut common = 0;
    for &(id, p) in actual.agents() {
        if let Some(q) = predicted.get(id) {
            sum += (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
            common += 1;
        }
    }
    if common == 0 {
        Err(AcpError::AgentMismatch)
    } else {
        Ok(sum.sqrt())
    }
}

/// `λ ← λ + α(δ − 1{violated})`, unclamped.
pub fn update_lambda(lambda: f64, alpha: f64, delta: f64, violated: bool) -> f64 {
    lambda + alpha * (delta - if violated { 1.0 } else { 0.0 })
}

/// Rank `⌈(n+1)(1−λ)⌉` clamped below at 1; `None` when it exceeds `n`.
pub fn quantile_index(n: usize, lambda: f64) -> Option<usize> {
    let raw = (n as f64 + 1.0) * (1.0 - lambda);
    // Products such as 31 · 1.0 must not round up past an exact integer.
    let r = (raw - 1e-9).ceil();
    if r > n as f64 {
        None
    } else {
        Some(r.max(1.0) as usize)
    }
}

/// The `⌈(K′+1)(1−λ)⌉`-th smallest score, `K′` being the window length.
/// Returns `+∞` when the rank exceeds the window.
pub fn region_radius(window: &[f64], lambda: f64) -> Result<f64, AcpError> {
    if window.is_empty() {
        return Err(AcpError::EmptyWindow);
    }
    match quantile_index(window.len(), lambda) {
        None => Ok(f64::INFINITY),
        Some(r) => {
            let mut sorted = window.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok(sorted[r - 1])
        }
    }
}

/// Sliding-window state for one prediction horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcpTracker {
    tau: usize,
    alpha: f64,
    delta: f64,
    window_size: usize,
    lambda: f64,
    window: VecDeque<f64>,
    /// Radii issued for future timesteps, `(target, C)`.
    issued: VecDeque<(Timestep, f64)>,
}

/// Outcome of feeding one score to a tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreUpdate {
    pub beta: f64,
    /// `None` when no radius had been issued for this timestep.
    pub violated: Option<bool>,
    pub lambda: f64,
    /// Radius issued for `t + τ`.
    pub radius: f64,
}

impl AcpTracker {
    pub fn new(tau: usize, cfg: &AcpConfig) -> Self {
        Self {
            tau,
            alpha: cfg.alpha,
            delta: cfg.delta,
            window_size: cfg.window_size,
            lambda: cfg.lambda0.unwrap_or(cfg.delta),
            window: VecDeque::with_capacity(cfg.window_size + 1),
            issued: VecDeque::new(),
        }
    }

    /// Tracker with a preloaded window and `λ`, oldest score first.
    pub fn with_state(tau: usize, cfg: &AcpConfig, lambda: f64, scores: &[f64]) -> Self {
        let mut t = Self::new(tau, cfg);
        t.lambda = lambda;
        for &s in scores {
            t.push_score(s);
        }
        t
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn window(&self) -> &VecDeque<f64> {
        &self.window
    }

    pub fn is_full(&self) -> bool {
        self.window.len() >= self.window_size
    }

    /// Records that radius `radius` was issued for timestep `target`.
    pub fn issue(&mut self, target: Timestep, radius: f64) {
        self.issued.push_back((target, radius));
    }

    fn push_score(&mut self, beta: f64) {
        self.window.push_back(beta);
        while self.window.len() > self.window_size {
            self.window.pop_front();
        }
    }

    /// Current radius from the window, `+∞` while it is empty.
    pub fn radius(&self) -> f64 {
        let scores: Vec<f64> = self.window.iter().copied().collect();
        region_radius(&scores, self.lambda).unwrap_or(f64::INFINITY)
    }

    /// Consumes the score `β_t^τ`: updates `λ` against the radius issued for
    /// `t`, slides the window, and issues `C_{t+τ}^τ`.
    pub fn observe(&mut self, t: Timestep, beta: f64) -> ScoreUpdate {
        while matches!(self.issued.front(), Some(&(target, _)) if target < t) {
            self.issued.pop_front();
        }
        let violated = match self.issued.front() {
            Some(&(target, c)) if target == t => {
                self.issued.pop_front();
                Some(c < beta)
            }
            _ => None,
        };
        if let Some(v) = violated {
            self.lambda = update_lambda(self.lambda, self.alpha, self.delta, v);
        }
        self.push_score(beta.max(0.0));
        let radius = self.radius();
        self.issue(t + self.tau as Timestep, radius);
        ScoreUpdate {
            beta,
            violated,
            lambda: self.lambda,
            radius,
        }
    }
}

/// Radii `C_{t+1}^1 … C_{t+H}^H` issued at `made_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRegions {
    pub made_at: Timestep,
    radii: Vec<f64>,
    /// False while any window is still filling in grace-period mode.
    pub ready: bool,
}

impl PredictionRegions {
    pub fn new(made_at: Timestep, radii: Vec<f64>) -> Self {
        Self {
            made_at,
            radii,
            ready: true,
        }
    }

    /// Regions of radius zero: the constraint reduces to `c(s, X̂) ≥ 0`.
    pub fn zero(made_at: Timestep, horizon: usize) -> Self {
        Self::new(made_at, vec![0.0; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.radii.len()
    }

    /// `C_{t+τ}^τ` for `τ` in `1..=H`.
    pub fn radius(&self, tau: usize) -> f64 {
        self.radii[tau - 1]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn all_finite(&self) -> bool {
        self.radii.iter().all(|r| r.is_finite())
    }
}

/// Per-horizon diagnostics for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauDiagnostics {
    pub tau: usize,
    pub beta: Option<f64>,
    pub violated: Option<bool>,
    pub lambda: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcpStepReport {
    pub t: Timestep,
    pub per_tau: Vec<TauDiagnostics>,
    pub regions: PredictionRegions,
}

/// Trackers for `τ = 1..=H` plus the buffer of past predictions.
#[derive(Debug, Clone)]
pub struct AcpSet {
    cfg: AcpConfig,
    trackers: Vec<AcpTracker>,
    predictions: VecDeque<PredictionSet>,
}

impl AcpSet {
    pub fn new(horizon: usize, cfg: AcpConfig) -> Result<Self, AcpError> {
        cfg.validate()?;
        if horizon == 0 {
            return Err(AcpError::InvalidConfig("horizon must be at least 1".into()));
        }
        let trackers = (1..=horizon).map(|tau| AcpTracker::new(tau, &cfg)).collect();
        Ok(Self {
            cfg,
            trackers,
            predictions: VecDeque::with_capacity(horizon + 1),
        })
    }

    pub fn horizon(&self) -> usize {
        self.trackers.len()
    }

    pub fn tracker(&self, tau: usize) -> &AcpTracker {
        &self.trackers[tau - 1]
    }

    pub fn tracker_mut(&mut self, tau: usize) -> &mut AcpTracker {
        &mut self.trackers[tau - 1]
    }

    /// Stores the predictions made at `prediction.made_at` for later scoring.
    pub fn record_prediction(&mut self, prediction: PredictionSet) {
        self.predictions.push_back(prediction);
        while self.predictions.len() > self.trackers.len() {
            self.predictions.pop_front();
        }
    }

    fn prediction_for(&self, t: Timestep, tau: usize) -> Option<&JointAgentState> {
        let made_at = t - tau as Timestep;
        self.predictions
            .iter()
            .find(|p| p.made_at == made_at && p.horizon() >= tau)
            .map(|p| p.at(tau))
    }

    fn step_inner(&mut self, actual: &JointAgentState, strict: bool) -> Result<AcpStepReport, AcpError> {
        let t = actual.timestep;
        let mut per_tau = Vec::with_capacity(self.trackers.len());
        for tau in 1..=self.trackers.len() {
            let score = match self.prediction_for(t, tau) {
                Some(pred) if !(actual.is_empty() && pred.is_empty()) => {
                    match nonconformity(actual, pred) {
                        Ok(b) => Some(b),
                        Err(e) if strict => return Err(e),
                        Err(_) => None,
                    }
                }
                _ => None,
            };
            let tracker = &mut self.trackers[tau - 1];
            let diag = match score {
                Some(beta) => {
                    let u = tracker.observe(t, beta);
                    TauDiagnostics {
                        tau,
                        beta: Some(beta),
                        violated: u.violated,
                        lambda: u.lambda,
                        radius: u.radius,
                    }
                }
                None => {
                    let radius = tracker.radius();
                    tracker.issue(t + tau as Timestep, radius);
                    TauDiagnostics {
                        tau,
                        beta: None,
                        violated: None,
                        lambda: tracker.lambda(),
                        radius,
                    }
                }
            };
            per_tau.push(diag);
        }
        let mut regions = PredictionRegions::new(t, per_tau.iter().map(|d| d.radius).collect());
        regions.ready = match self.cfg.warmup {
            WarmupMode::Conservative => true,
            WarmupMode::GracePeriod => self.trackers.iter().all(AcpTracker::is_full),
        };
        Ok(AcpStepReport { t, per_tau, regions })
    }

    /// Scores `X_t` against the stored `τ`-step-old predictions and issues the
    /// radii `C_{t+τ}^τ`. Fails with `AgentMismatch` when a stored prediction
    /// shares no agents with `actual`.
    pub fn step(&mut self, actual: &JointAgentState) -> Result<AcpStepReport, AcpError> {
        self.step_inner(actual, true)
    }

    /// Like [`step`](Self::step) but skips horizons whose prediction shares no
    /// agents with `actual` (agents that left the scene).
    pub fn step_lenient(&mut self, actual: &JointAgentState) -> AcpStepReport {
        self.step_inner(actual, false).expect("lenient step never fails")
    }
}
