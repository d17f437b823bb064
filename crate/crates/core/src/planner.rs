//! POMCP with shield-based branch pruning.
//!
//! The search tree alternates observation nodes (histories `h`) and action
//! nodes (`ha`). While a node's depth is at most the shield horizon it
//! carries the exact belief support reached by its `(a, o)` path from the
//! root, and actions whose successor supports leave the winning region are
//! pruned before they can be selected.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::{ActionId, BeliefSupport, ObsId, ParticleBelief, PomdpModel, StateId};
use crate::shield::{Shield, SupportId, UnsafeSets};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("every root action is shielded")]
    AllActionsShielded,
    #[error("no particle is consistent with action {action} and observation {observation}")]
    ParticleDeprivation { action: ActionId, observation: ObsId },
    #[error("root belief has no particles")]
    EmptyBelief,
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

/// How a sampled branch is tested against the winning regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShieldCheck {
    /// Exact belief support of the branch, evaluated over all observations.
    #[default]
    Support,
    /// The node's particle states plus the new state must fit in a winning support.
    Particles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub num_simulations: usize,
    pub max_depth: usize,
    pub ucb_constant: f64,
    pub particle_count: usize,
    /// Discount override; the model's own discount when absent.
    pub discount: Option<f64>,
    pub n_init: u64,
    pub v_init: f64,
    /// Rejection attempts per wanted particle during belief updates.
    pub oversampling: usize,
    pub shield_check: ShieldCheck,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            num_simulations: 4096,
            max_depth: 200,
            ucb_constant: 500.0,
            particle_count: 10_000,
            discount: None,
            n_init: 0,
            v_init: 0.0,
            oversampling: 10,
            shield_check: ShieldCheck::Support,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.into()));
        if self.num_simulations == 0 {
            return bad("num_simulations must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.particle_count == 0 {
            return bad("particle_count must be positive");
        }
        if !(self.ucb_constant >= 0.0) {
            return bad("ucb_constant must be nonnegative");
        }
        if let Some(g) = self.discount {
            if !(0.0..=1.0).contains(&g) {
                return bad("discount must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Action choice for rollouts beyond the tree.
pub trait RolloutPolicy {
    /// Picks one of `allowed` (never empty) in state `s`.
    fn choose(&self, s: StateId, allowed: &[ActionId], rng: &mut ChaCha8Rng) -> ActionId;
}

/// Uniform random selection.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRollout;

impl RolloutPolicy for UniformRollout {
    fn choose(&self, _s: StateId, allowed: &[ActionId], rng: &mut ChaCha8Rng) -> ActionId {
        allowed[rng.random_range(0..allowed.len())]
    }
}

/// `V + c·√(ln N(h) / N(ha))`; infinite for unvisited actions.
pub fn ucb_score(value: f64, c: f64, parent_visits: f64, action_visits: f64) -> f64 {
    if action_visits <= 0.0 {
        return f64::INFINITY;
    }
    let ln = parent_visits.max(1.0).ln();
    value + c * (ln / action_visits).sqrt()
}

#[derive(Debug, Clone)]
struct ActionNode {
    visits: u64,
    value: f64,
    pruned: bool,
    children: Vec<(ObsId, usize)>,
}

#[derive(Debug, Clone, Default)]
struct ObsNode {
    visits: u64,
    actions: Vec<ActionNode>,
    /// Distinct states simulated into this node, kept while within the horizon.
    states: Vec<StateId>,
    support: Option<SupportId>,
    epoch: u64,
}

impl ObsNode {
    fn child(&self, a: ActionId, o: ObsId) -> Option<usize> {
        self.actions[a]
            .children
            .iter()
            .find(|&&(obs, _)| obs == o)
            .map(|&(_, id)| id)
    }

    fn add_state(&mut self, s: StateId) {
        if let Err(i) = self.states.binary_search(&s) {
            self.states.insert(i, s);
        }
    }
}

/// Per-step planner statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub simulations: usize,
    pub tree_nodes: usize,
    pub action: ActionId,
    pub root_value: f64,
    /// `V(h a)` per root action, `None` for unvisited actions.
    pub action_values: Vec<Option<f64>>,
    pub root_visits: Vec<u64>,
    pub pruned_root: Vec<ActionId>,
    /// Actions pruned anywhere in the tree during this step.
    pub pruned_total: usize,
}

/// Search tree plus root particle belief for one episode.
#[derive(Debug, Clone)]
pub struct Planner {
    cfg: PlannerConfig,
    nodes: Vec<ObsNode>,
    particles: ParticleBelief,
    rng: ChaCha8Rng,
    epoch: u64,
    pruned_this_step: usize,
}

struct Ctx<'a> {
    model: &'a PomdpModel,
    shield: Option<&'a Shield>,
    rollout: &'a dyn RolloutPolicy,
    gamma: f64,
    horizon: usize,
}

impl Planner {
    pub fn new(cfg: PlannerConfig, particles: ParticleBelief) -> Result<Self, PlannerError> {
        cfg.validate()?;
        if particles.is_empty() {
            return Err(PlannerError::EmptyBelief);
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            cfg,
            nodes: vec![ObsNode::default()],
            particles,
            rng,
            epoch: 0,
            pruned_this_step: 0,
        })
    }

    /// Planner whose root belief is drawn from the model's initial belief.
    pub fn from_model(model: &PomdpModel, cfg: PlannerConfig) -> Result<Self, PlannerError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let particles = ParticleBelief::sample_from(model.initial_belief(), cfg.particle_count, &mut rng);
        Self::new(cfg, particles)
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &ParticleBelief {
        &self.particles
    }

    /// Distinct states of the root particle set.
    pub fn root_support(&self) -> BeliefSupport {
        BeliefSupport::new(self.particles.particles().iter().copied())
    }

    pub fn tree_size(&self) -> usize {
        self.nodes.len()
    }

    /// Runs the configured number of simulations and returns the best
    /// allowed root action. `shield` must have been computed for the
    /// current root support.
    pub fn plan(
        &mut self,
        model: &PomdpModel,
        shield: Option<&Shield>,
        rollout: &dyn RolloutPolicy,
    ) -> Result<(ActionId, PlanStats), PlannerError> {
        if self.particles.is_empty() {
            return Err(PlannerError::EmptyBelief);
        }
        self.epoch += 1;
        self.pruned_this_step = 0;
        let ctx = Ctx {
            model,
            shield,
            rollout,
            gamma: self.cfg.discount.unwrap_or_else(|| model.discount()),
            horizon: shield.map_or(0, Shield::horizon),
        };
        self.nodes[0].support = shield.map(|s| s.bsts().root());
        self.refresh(&ctx, 0, 0);
        if self.nodes[0].actions.iter().all(|a| a.pruned) {
            return Err(PlannerError::AllActionsShielded);
        }
        let mut sims = 0;
        for _ in 0..self.cfg.num_simulations {
            let s = self.particles.sample(&mut self.rng).expect("nonempty particles");
            self.simulate(&ctx, 0, s, 0);
            sims += 1;
            if self.nodes[0].actions.iter().all(|a| a.pruned) {
                return Err(PlannerError::AllActionsShielded);
            }
        }
        let root = &self.nodes[0];
        let mut best: Option<(ActionId, f64)> = None;
        for (a, an) in root.actions.iter().enumerate() {
            if an.pruned || an.visits == 0 {
                continue;
            }
            if best.is_none_or(|(_, v)| an.value > v) {
                best = Some((a, an.value));
            }
        }
        let (action, root_value) = best
            .or_else(|| root.actions.iter().position(|a| !a.pruned).map(|a| (a, 0.0)))
            .ok_or(PlannerError::AllActionsShielded)?;
        let stats = PlanStats {
            simulations: sims,
            tree_nodes: self.nodes.len(),
            action,
            root_value,
            action_values: root
                .actions
                .iter()
                .map(|a| (a.visits > 0).then_some(a.value))
                .collect(),
            root_visits: root.actions.iter().map(|a| a.visits).collect(),
            pruned_root: root
                .actions
                .iter()
                .enumerate()
                .filter(|(_, a)| a.pruned)
                .map(|(i, _)| i)
                .collect(),
            pruned_total: self.pruned_this_step,
        };
        Ok((action, stats))
    }

    /// Brings a node up to the current step: expands it if needed, clears
    /// stale prune marks and applies the shield above the horizon.
    fn refresh(&mut self, ctx: &Ctx, id: usize, depth: usize) {
        let na = ctx.model.num_actions();
        let (n_init, v_init) = (self.cfg.n_init, self.cfg.v_init);
        let node = &mut self.nodes[id];
        if node.actions.is_empty() {
            node.actions = (0..na)
                .map(|_| ActionNode {
                    visits: n_init,
                    value: v_init,
                    pruned: false,
                    children: Vec::new(),
                })
                .collect();
            node.visits = n_init * na as u64;
        } else if node.epoch == self.epoch {
            return;
        }
        node.epoch = self.epoch;
        for an in &mut node.actions {
            an.pruned = false;
        }
        if depth < ctx.horizon && self.cfg.shield_check == ShieldCheck::Support {
            let shield = ctx.shield.expect("horizon implies a shield");
            let allowed = node.support.and_then(|sid| shield.allowed(sid, depth)).unwrap_or(&[]);
            for (a, an) in node.actions.iter_mut().enumerate() {
                if !allowed.contains(&a) {
                    an.pruned = true;
                    self.pruned_this_step += 1;
                }
            }
        }
    }

    fn select(&self, id: usize) -> Option<ActionId> {
        let node = &self.nodes[id];
        let mut best: Option<(ActionId, f64)> = None;
        for (a, an) in node.actions.iter().enumerate() {
            if an.pruned {
                continue;
            }
            let score = ucb_score(an.value, self.cfg.ucb_constant, node.visits as f64, an.visits as f64);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((a, score));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Paper-style particle test: the child's simulated states plus `next`
    /// must lie inside one support of `W^τ`.
    fn particles_allowed(shield: &Shield, states: &[StateId], next: StateId, tau: usize) -> bool {
        let bsts = shield.bsts();
        shield.winning().region(tau).iter().any(|&w| {
            let sup = bsts.support(w);
            sup.contains(next) && states.iter().all(|&s| sup.contains(s))
        })
    }

    /// One simulation from node `id` in state `s`. Returns `None` when the
    /// node is a dead end (every action pruned).
    fn simulate(&mut self, ctx: &Ctx, id: usize, s: StateId, depth: usize) -> Option<f64> {
        if depth >= self.cfg.max_depth {
            return Some(0.0);
        }
        let fresh = self.nodes[id].actions.is_empty();
        self.refresh(ctx, id, depth);
        if self.nodes[id].actions.iter().all(|a| a.pruned) {
            return None;
        }
        if fresh {
            let support = self.nodes[id].support;
            return Some(self.rollout(ctx, s, depth, support));
        }
        loop {
            let a = self.select(id)?;
            let step = ctx.model.generative_step(s, a, &mut self.rng);
            let child_depth = depth + 1;
            let child = match self.nodes[id].child(a, step.observation) {
                Some(c) => c,
                None => {
                    self.nodes.push(ObsNode::default());
                    let c = self.nodes.len() - 1;
                    self.nodes[id].actions[a].children.push((step.observation, c));
                    c
                }
            };
            if child_depth <= ctx.horizon {
                let shield = ctx.shield.expect("horizon implies a shield");
                let parent_support = self.nodes[id].support;
                let child_support =
                    parent_support.and_then(|p| shield.bsts().child(p, depth, a, step.observation));
                self.nodes[child].support = child_support;
                let allow = match self.cfg.shield_check {
                    ShieldCheck::Support => {
                        child_support.is_some_and(|c| shield.winning().contains(child_depth, c))
                    }
                    ShieldCheck::Particles => Self::particles_allowed(
                        shield,
                        &self.nodes[child].states,
                        step.next,
                        child_depth,
                    ),
                };
                if !allow {
                    self.nodes[id].actions[a].pruned = true;
                    self.pruned_this_step += 1;
                    continue;
                }
                self.nodes[child].add_state(step.next);
            }
            let (future, dead) = match self.simulate(ctx, child, step.next, child_depth) {
                Some(v) => (v, false),
                None => (0.0, true),
            };
            let ret = step.reward + ctx.gamma * future;
            let node = &mut self.nodes[id];
            node.visits += 1;
            let an = &mut node.actions[a];
            an.visits += 1;
            an.value += (ret - an.value) / an.visits as f64;
            if dead {
                an.pruned = true;
                self.pruned_this_step += 1;
            }
            return Some(ret);
        }
    }

    fn rollout(&mut self, ctx: &Ctx, mut s: StateId, depth: usize, mut support: Option<SupportId>) -> f64 {
        let all: Vec<ActionId> = (0..ctx.model.num_actions()).collect();
        let mut total = 0.0;
        let mut discount = 1.0;
        for d in depth..self.cfg.max_depth {
            let allowed = match (ctx.shield, support) {
                (Some(sh), Some(sup)) if d < ctx.horizon => match sh.allowed(sup, d) {
                    Some(acts) if !acts.is_empty() => acts,
                    _ => &all[..],
                },
                _ => &all[..],
            };
            let a = ctx.rollout.choose(s, allowed, &mut self.rng);
            let step = ctx.model.generative_step(s, a, &mut self.rng);
            total += discount * step.reward;
            discount *= ctx.gamma;
            support = match (ctx.shield, support) {
                (Some(sh), Some(sup)) if d + 1 <= ctx.horizon => sh.bsts().child(sup, d, a, step.observation),
                _ => None,
            };
            s = step.next;
        }
        total
    }

    /// Moves the root to `h a o`: keeps the matching subtree and refreshes
    /// the particle belief by rejection sampling through the simulator.
    pub fn advance_root(
        &mut self,
        model: &PomdpModel,
        action: ActionId,
        observation: ObsId,
    ) -> Result<(), PlannerError> {
        let want = self.cfg.particle_count;
        let mut next = ParticleBelief::with_capacity(want);
        let budget = want.saturating_mul(self.cfg.oversampling.max(1));
        for _ in 0..budget {
            if next.is_full() {
                break;
            }
            let s = self.particles.sample(&mut self.rng).ok_or(PlannerError::EmptyBelief)?;
            let step = model.generative_step(s, action, &mut self.rng);
            if step.observation == observation {
                next.push(step.next);
            }
        }
        if !next.is_full() {
            let pool: Vec<StateId> = if next.is_empty() {
                // Observation-consistent successors of the old support.
                let old = self.root_support();
                BeliefSupport::new(old.states().iter().flat_map(|&s| {
                    model
                        .successors(s, action)
                        .map(|(n, _)| n)
                        .filter(|&n| model.observation_prob(n, action, observation) > 0.0)
                        .collect::<Vec<_>>()
                }))
                .states()
                .to_vec()
            } else {
                next.particles().to_vec()
            };
            if pool.is_empty() {
                return Err(PlannerError::ParticleDeprivation { action, observation });
            }
            while !next.is_full() {
                next.push(pool[self.rng.random_range(0..pool.len())]);
            }
        }
        self.particles = next;
        let child = self.nodes[0]
            .actions
            .get(action)
            .and_then(|_| self.nodes[0].child(action, observation));
        self.nodes = match child {
            Some(c) => self.extract_subtree(c),
            None => vec![ObsNode::default()],
        };
        Ok(())
    }

    /// Copies the subtree rooted at `id` into a fresh arena with `id` at 0.
    fn extract_subtree(&mut self, id: usize) -> Vec<ObsNode> {
        let mut old = std::mem::take(&mut self.nodes);
        let mut out: Vec<ObsNode> = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        out.push(std::mem::take(&mut old[id]));
        queue.push_back(0usize);
        while let Some(i) = queue.pop_front() {
            for a in 0..out[i].actions.len() {
                for k in 0..out[i].actions[a].children.len() {
                    let (o, old_id) = out[i].actions[a].children[k];
                    out.push(std::mem::take(&mut old[old_id]));
                    let new_id = out.len() - 1;
                    out[i].actions[a].children[k] = (o, new_id);
                    queue.push_back(new_id);
                }
            }
        }
        for n in &mut out {
            n.support = None;
            n.states.clear();
            n.epoch = 0;
        }
        out
    }
}

/// Action with the largest worst-case one-step margin
/// `min_{s′} c(s′, X̂^1) − L·C^1` over successors of `support`; ties go to
/// the larger worst-case clearance, then the lowest index.
pub fn fallback_action(model: &PomdpModel, support: &BeliefSupport, unsafe_sets: &UnsafeSets) -> ActionId {
    let mut best = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for a in 0..model.num_actions() {
        let mut margin = f64::INFINITY;
        let mut clear = f64::INFINITY;
        for &s in support.states() {
            for (n, _) in model.successors(s, a) {
                if unsafe_sets.horizon() >= 1 {
                    margin = margin.min(unsafe_sets.margin(1, n));
                    clear = clear.min(unsafe_sets.clearance(1, n));
                }
            }
        }
        if a == 0 || margin > best.1 || (margin == best.1 && clear > best.2) {
            best = (a, margin, clear);
        }
    }
    best.0
}

#[cfg(test)]
mod tests;
