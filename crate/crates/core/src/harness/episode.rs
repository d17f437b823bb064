use web_time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{safety_metrics, SafetyMetrics};
use super::{AgentSource, ExperimentConfig, HarnessError, Method, RolloutKind};
use crate::acp::{AcpSet, PredictionRegions};
use crate::geom::StateGeometry;
use crate::gridworld::{build_gridworld, Gridworld};
use crate::planner::{fallback_action, Planner, PlannerError, RolloutPolicy, UniformRollout};
use crate::pomdp::{ActionId, ObsId, PomdpModel, StateId};
use crate::shield::{
    action_is_winning, constraint_value, verify_certificate, Shield, ShieldSnapshot, UnsafeSets,
};
use crate::trajectory::{
    AgentId, JointAgentState, PredictionSet, Predictor, PredictorKind, Timestep, TrajectorySource,
};

/// Rollout that, with probability `bias`, takes the allowed action with the
/// smallest expected goal distance after one move.
#[derive(Debug, Clone)]
pub struct GoalBiasedRollout {
    bias: f64,
    num_actions: usize,
    /// `expected[s * |A| + a]`.
    expected: Vec<f64>,
}

impl GoalBiasedRollout {
    pub fn new(world: &Gridworld, bias: f64) -> Self {
        let model = world.model();
        let na = model.num_actions();
        let mut expected = Vec::with_capacity(model.num_states() * na);
        for s in 0..model.num_states() {
            for a in 0..na {
                expected.push(
                    model
                        .successors(s, a)
                        .map(|(n, p)| p * world.goal_distance(n) as f64)
                        .sum(),
                );
            }
        }
        Self {
            bias,
            num_actions: na,
            expected,
        }
    }
}

impl RolloutPolicy for GoalBiasedRollout {
    fn choose(&self, s: StateId, allowed: &[ActionId], rng: &mut ChaCha8Rng) -> ActionId {
        if rng.random::<f64>() < self.bias {
            let row = &self.expected[s * self.num_actions..(s + 1) * self.num_actions];
            let mut best = allowed[0];
            for &a in &allowed[1..] {
                if row[a] < row[best] {
                    best = a;
                }
            }
            best
        } else {
            allowed[rng.random_range(0..allowed.len())]
        }
    }
}

#[derive(Debug, Clone)]
enum Rollout {
    Uniform(UniformRollout),
    GoalBiased(GoalBiasedRollout),
}

impl Rollout {
    fn policy(&self) -> &dyn RolloutPolicy {
        match self {
            Rollout::Uniform(r) => r,
            Rollout::GoalBiased(r) => r,
        }
    }
}

/// One predicted agent position with its conformal radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCircle {
    pub tau: usize,
    pub agent: AgentId,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Plot-ready state of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDump {
    pub t: usize,
    pub robot: Option<(usize, usize)>,
    pub support: Vec<(usize, usize)>,
    /// `unsafe_cells[τ-1]`.
    pub unsafe_cells: Vec<Vec<(usize, usize)>>,
    pub agents: Vec<(AgentId, f64, f64)>,
    pub predictions: Vec<PredictionCircle>,
    pub allowed: Option<Vec<ActionId>>,
    pub action: Option<ActionId>,
    pub shield: Option<ShieldSnapshot>,
}

/// ACP state for one horizon at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcpTrace {
    pub t: usize,
    pub tau: usize,
    pub beta: Option<f64>,
    /// Radius that was issued for this step `τ` steps ago.
    pub covered_by: Option<f64>,
    pub radius: f64,
    pub lambda: f64,
    pub violated: Option<bool>,
}

/// One row of the raw per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub frame: Timestep,
    pub x: Option<usize>,
    pub y: Option<usize>,
    /// `c(s_t, X_t)`.
    pub constraint: f64,
    pub min_distance: f64,
    pub at_goal: bool,
    pub action: Option<ActionId>,
    pub observation: Option<ObsId>,
    pub allowed: Option<usize>,
    pub deadlock: bool,
    pub radii: Vec<f64>,
    pub certificate_ok: Option<bool>,
    pub sound: Option<bool>,
    pub shield_seconds: f64,
    pub plan_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub environment: String,
    pub method: Method,
    pub agents: usize,
    pub seed: u64,
    /// Actions executed.
    pub steps: usize,
    pub success: bool,
    /// Set when the episode aborted, for example on particle deprivation.
    pub failure: Option<String>,
    pub constraint_values: Vec<f64>,
    pub metrics: SafetyMetrics,
    /// Sum of model rewards plus the collision penalty of every unsafe step.
    pub total_reward: f64,
    pub deadlocks: usize,
    pub certificate_checks: usize,
    pub certificate_violations: usize,
    pub soundness_checks: usize,
    pub soundness_violations: usize,
    pub mean_step_seconds: f64,
    pub acp_trace: Vec<AcpTrace>,
    pub records: Vec<StepRecord>,
    /// Actual agent positions per step.
    pub agent_trace: Vec<JointAgentState>,
    pub frames: Vec<FrameDump>,
}

impl EpisodeResult {
    /// ACP coverage violation rate for one horizon over scored steps with a
    /// finite radius.
    pub fn coverage_violation_rate(&self, tau: usize) -> Option<f64> {
        let scored: Vec<bool> = self
            .acp_trace
            .iter()
            .filter(|a| a.tau == tau && a.covered_by.is_some_and(f64::is_finite))
            .filter_map(|a| a.violated)
            .collect();
        (!scored.is_empty()).then(|| scored.iter().filter(|&&v| v).count() as f64 / scored.len() as f64)
    }
}

/// Model, geometry, predictor and rollout shared by every episode of one
/// configuration.
pub struct Environment {
    config: ExperimentConfig,
    world: Gridworld,
    geometry: StateGeometry,
    predictor: PredictorKind,
    rollout: Rollout,
    recorded: Option<TrajectorySource>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn cells(world: &Gridworld, states: impl IntoIterator<Item = StateId>) -> Vec<(usize, usize)> {
    states
        .into_iter()
        .filter_map(|s| world.cell_of(s).map(|c| (c.x, c.y)))
        .collect()
}

impl Environment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let world = build_gridworld(&config.grid)?;
        let geometry = world.geometry();
        let predictor = config.resolve_predictor()?;
        let rollout = match config.rollout {
            RolloutKind::Uniform => Rollout::Uniform(UniformRollout),
            RolloutKind::GoalBiased { bias } => Rollout::GoalBiased(GoalBiasedRollout::new(&world, bias)),
        };
        let recorded = match &config.agents {
            AgentSource::Csv { .. } => Some(config.agents.load(0, &mut stream(0, 0))?),
            AgentSource::Synthetic(_) => None,
        };
        Ok(Self {
            config,
            world,
            geometry,
            predictor,
            rollout,
            recorded,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn world(&self) -> &Gridworld {
        &self.world
    }

    pub fn model(&self) -> &PomdpModel {
        self.world.model()
    }

    /// Agent trajectories seen by the episode with `seed`; independent of the
    /// method.
    pub fn agents_for(&self, seed: u64) -> Result<TrajectorySource, HarnessError> {
        match &self.recorded {
            Some(src) => Ok(src.clone()),
            None => {
                let frames = self.config.warmup_frames + self.config.max_steps + self.config.horizon + 2;
                self.config.agents.load(frames, &mut stream(seed, 1))
            }
        }
    }

    /// Runs one episode. Configuration and predictor errors are returned;
    /// planner failures end the episode and are reported in `failure`.
    pub fn run(&self, seed: u64) -> Result<EpisodeResult, HarnessError> {
        let cfg = &self.config;
        let model = self.world.model();
        let h = cfg.horizon;
        let method = cfg.method;
        let source = self.agents_for(seed)?;
        let mut env_rng = stream(seed, 2);
        let mut pcfg = cfg.planner.clone();
        pcfg.seed = stream(seed, 3).next_u64();
        let mut planner = Planner::from_model(model, pcfg)?;
        let mut s = model.sample_initial(&mut env_rng);

        let window = self.predictor.window();
        let k0 = cfg.agents.start();
        let last_frame = source.span().map(|(_, l)| l);
        let csv = matches!(cfg.agents, AgentSource::Csv { .. });

        let mut acp = AcpSet::new(h, cfg.acp.clone())?;
        let mut issued: Vec<Vec<(Timestep, f64)>> = vec![Vec::new(); h];
        if method.shielded() {
            for j in 0..cfg.warmup_frames as Timestep {
                let k = k0 + j;
                let actual = source.agents_at_unchecked(k);
                let report = acp.step_lenient(&actual);
                for d in &report.per_tau {
                    issued[d.tau - 1].push((k + d.tau as Timestep, d.radius));
                }
                acp.record_prediction(self.predictor.predict(&source.history(k, window), h)?);
            }
        }

        let mut res = EpisodeResult {
            environment: cfg.name.clone(),
            method,
            agents: cfg.agents.num_agents().unwrap_or_else(|| source.num_agents()),
            seed,
            steps: 0,
            success: false,
            failure: None,
            constraint_values: Vec::new(),
            metrics: SafetyMetrics {
                safety_rate: 1.0,
                min_distance: f64::INFINITY,
                collisions: 0,
            },
            total_reward: 0.0,
            deadlocks: 0,
            certificate_checks: 0,
            certificate_violations: 0,
            soundness_checks: 0,
            soundness_violations: 0,
            mean_step_seconds: 0.0,
            acp_trace: Vec::new(),
            records: Vec::new(),
            agent_trace: Vec::new(),
            frames: Vec::new(),
        };
        let mut trace: Vec<(StateId, JointAgentState)> = Vec::new();
        let mut step_time = 0.0;

        for t in 0.. {
            let k = k0 + cfg.warmup_frames as Timestep + t as Timestep;
            if csv && last_frame.is_none_or(|l| k > l) {
                break;
            }
            let actual = source.agents_at_unchecked(k);
            let c = constraint_value(&self.geometry, s, actual.positions(), &cfg.safety);
            if c < 0.0 {
                res.total_reward += cfg.grid.collision_reward;
            }
            res.constraint_values.push(c);
            trace.push((s, actual.clone()));
            let cell = self.world.cell_of(s);
            let mut rec = StepRecord {
                t,
                frame: k,
                x: cell.map(|c| c.x),
                y: cell.map(|c| c.y),
                constraint: c,
                min_distance: c + cfg.safety.epsilon,
                at_goal: self.world.is_goal_or_terminal(s),
                action: None,
                observation: None,
                allowed: None,
                deadlock: false,
                radii: Vec::new(),
                certificate_ok: None,
                sound: None,
                shield_seconds: 0.0,
                plan_seconds: 0.0,
            };
            if rec.at_goal {
                res.success = true;
            }
            if rec.at_goal || t >= cfg.max_steps {
                res.records.push(rec);
                break;
            }

            let started = Instant::now();
            let mut shield: Option<Shield> = None;
            let mut regions: Option<PredictionRegions> = None;
            let mut prediction: Option<PredictionSet> = None;
            if method.shielded() {
                let report = acp.step_lenient(&actual);
                for d in &report.per_tau {
                    let covered_by = issued[d.tau - 1]
                        .iter()
                        .find(|&&(target, _)| target == k)
                        .map(|&(_, r)| r);
                    res.acp_trace.push(AcpTrace {
                        t,
                        tau: d.tau,
                        beta: d.beta,
                        covered_by,
                        radius: d.radius,
                        lambda: d.lambda,
                        violated: d.violated,
                    });
                    let list = &mut issued[d.tau - 1];
                    list.retain(|&(target, _)| target > k);
                    list.push((k + d.tau as Timestep, d.radius));
                }
                let pred = self.predictor.predict(&source.history(k, window), h)?;
                acp.record_prediction(pred.clone());
                let r = match method {
                    Method::ShieldAcp => report.regions,
                    _ => PredictionRegions::zero(k, h),
                };
                if r.ready {
                    let unsafe_sets =
                        UnsafeSets::from_predictions(&self.geometry, &pred, &r, &cfg.safety).expect("matching horizons");
                    shield = Some(Shield::compute(model, &planner.root_support(), unsafe_sets));
                }
                rec.radii = r.radii().to_vec();
                regions = Some(r);
                prediction = Some(pred);
            }
            let shield_done = Instant::now();
            rec.shield_seconds = (shield_done - started).as_secs_f64();

            if cfg.verify {
                if let Some(sh) = &shield {
                    let ok = verify_certificate(model, sh.bsts(), sh.unsafe_sets(), sh.winning()).is_ok();
                    res.certificate_checks += 1;
                    if !ok {
                        res.certificate_violations += 1;
                    }
                    rec.certificate_ok = Some(ok);
                }
            }

            let plan_start = Instant::now();
            let action = match planner.plan(model, shield.as_ref(), self.rollout.policy()) {
                Ok((a, _)) => a,
                Err(PlannerError::AllActionsShielded) => {
                    res.deadlocks += 1;
                    rec.deadlock = true;
                    let sh = shield.as_ref().expect("only a shield can block every action");
                    fallback_action(model, &planner.root_support(), sh.unsafe_sets())
                }
                Err(e) => {
                    res.failure = Some(e.to_string());
                    res.records.push(rec);
                    break;
                }
            };
            rec.plan_seconds = plan_start.elapsed().as_secs_f64();
            step_time += rec.shield_seconds + rec.plan_seconds;
            rec.action = Some(action);
            rec.allowed = shield.as_ref().map(|sh| sh.root_actions().len());

            if let (Some(sh), false) = (&shield, rec.deadlock) {
                let finite = regions.as_ref().is_some_and(PredictionRegions::all_finite);
                if cfg.verify && finite {
                    let ok = action_is_winning(model, sh.bsts(), sh.winning(), &planner.root_support(), action, 1);
                    res.soundness_checks += 1;
                    if !ok {
                        res.soundness_violations += 1;
                    }
                    rec.sound = Some(ok);
                }
            }

            if cfg.record_frames {
                res.frames.push(self.frame(t, s, &planner, &actual, prediction.as_ref(), regions.as_ref(), shield.as_ref(), action));
            }

            let step = model.generative_step(s, action, &mut env_rng);
            res.total_reward += step.reward;
            s = step.next;
            res.steps += 1;
            rec.observation = Some(step.observation);
            res.records.push(rec);
            if let Err(e) = planner.advance_root(model, action, step.observation) {
                res.failure = Some(e.to_string());
                break;
            }
        }

        res.metrics = safety_metrics(&self.geometry, &trace, &cfg.safety);
        res.mean_step_seconds = if res.steps == 0 { 0.0 } else { step_time / res.steps as f64 };
        res.agent_trace = trace.into_iter().map(|(_, x)| x).collect();
        Ok(res)
    }

    #[allow(clippy::too_many_arguments)]
    fn frame(
        &self,
        t: usize,
        s: StateId,
        planner: &Planner,
        actual: &JointAgentState,
        prediction: Option<&PredictionSet>,
        regions: Option<&PredictionRegions>,
        shield: Option<&Shield>,
        action: ActionId,
    ) -> FrameDump {
        let mut predictions = Vec::new();
        if let (Some(p), Some(r)) = (prediction, regions) {
            for tau in 1..=p.horizon() {
                for &(agent, pt) in p.at(tau).agents() {
                    predictions.push(PredictionCircle {
                        tau,
                        agent,
                        x: pt.x,
                        y: pt.y,
                        radius: r.radius(tau) * self.config.safety.lipschitz,
                    });
                }
            }
        }
        FrameDump {
            t,
            robot: self.world.cell_of(s).map(|c| (c.x, c.y)),
            support: cells(&self.world, planner.root_support().states().iter().copied()),
            unsafe_cells: shield
                .map(|sh| (1..=sh.horizon()).map(|tau| cells(&self.world, sh.unsafe_sets().states(tau))).collect())
                .unwrap_or_default(),
            agents: actual.agents().iter().map(|&(id, p)| (id, p.x, p.y)).collect(),
            predictions,
            allowed: shield.map(|sh| sh.root_actions().to_vec()),
            action: Some(action),
            shield: shield.map(Shield::snapshot),
        }
    }
}

/// Builds the environment for `cfg` and runs one episode.
pub fn run_episode(cfg: &ExperimentConfig, seed: u64) -> Result<EpisodeResult, HarnessError> {
    Environment::new(cfg.clone())?.run(seed)
}
