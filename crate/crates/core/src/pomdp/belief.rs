use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActionId, ObsId, PomdpModel, StateId};

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("observation {observation} has zero probability after action {action}")]
    ImpossibleObservation { action: ActionId, observation: ObsId },
    #[error("belief has no mass")]
    EmptyBelief,
    #[error("belief sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid probability {value} for state {state}")]
    InvalidProbability { state: StateId, value: f64 },
    #[error("state {state} out of range (size {size})")]
    StateOutOfRange { state: StateId, size: usize },
}

/// Exact belief `b(s)` stored densely over the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    probs: Vec<f64>,
}

impl BeliefState {
    pub fn new(probs: Vec<f64>) -> Result<Self, BeliefError> {
        for (state, &value) in probs.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(BeliefError::InvalidProbability { state, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(BeliefError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights over `n` states.
    pub fn from_weights(n: usize, weights: &[(StateId, f64)]) -> Result<Self, BeliefError> {
        let mut probs = vec![0.0; n];
        for &(state, w) in weights {
            if state >= n {
                return Err(BeliefError::StateOutOfRange { state, size: n });
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(BeliefError::InvalidProbability { state, value: w });
            }
            probs[state] += w;
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(BeliefError::EmptyBelief);
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n: usize, s: StateId) -> Self {
        let mut probs = vec![0.0; n];
        probs[s] = 1.0;
        Self { probs }
    }

    pub fn prob(&self, s: StateId) -> f64 {
        self.probs[s]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `supp(b) = { s | b(s) > 0 }`.
    pub fn support(&self) -> Result<BeliefSupport, BeliefError> {
        let support = BeliefSupport::new(
            self.probs
                .iter()
                .enumerate()
                .filter(|&(_, &p)| p > 0.0)
                .map(|(s, _)| s),
        );
        if support.is_empty() {
            Err(BeliefError::EmptyBelief)
        } else {
            Ok(support)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (s, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = s;
                if u < acc {
                    return s;
                }
            }
        }
        last
    }

    pub fn total_variation(&self, other: &BeliefState) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Bayes filter: `b'(s') ∝ Z(s',a,o) Σ_s T(s,a,s') b(s)`.
pub fn belief_update(
    model: &PomdpModel,
    b: &BeliefState,
    a: ActionId,
    o: ObsId,
) -> Result<BeliefState, BeliefError> {
    let n = model.num_states();
    let mut predicted = vec![0.0; n];
    for (s, &p) in b.probs.iter().enumerate() {
        if p > 0.0 {
            for (next, t) in model.successors(s, a) {
                predicted[next] += t * p;
            }
        }
    }
    let mut eta = 0.0;
    for (next, mass) in predicted.iter_mut().enumerate() {
        if *mass > 0.0 {
            *mass *= model.observation_prob(next, a, o);
            eta += *mass;
        }
    }
    if eta <= 0.0 {
        return Err(BeliefError::ImpossibleObservation {
            action: a,
            observation: o,
        });
    }
    predicted.iter_mut().for_each(|p| *p /= eta);
    Ok(BeliefState { probs: predicted })
}

/// `R(b, a) = Σ_s R(s, a) b(s)`.
pub fn expected_reward(model: &PomdpModel, b: &BeliefState, a: ActionId) -> f64 {
    b.probs
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(s, &p)| model.reward(s, a) * p)
        .sum()
}

/// Sampled belief: a multiset of states.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParticleBelief {
    particles: Vec<StateId>,
    capacity: usize,
}

impl ParticleBelief {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            particles: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn from_particles(particles: Vec<StateId>) -> Self {
        let capacity = particles.len();
        Self {
            particles,
            capacity,
        }
    }

    /// Draws `capacity` particles from an exact belief.
    pub fn sample_from<R: Rng + ?Sized>(b: &BeliefState, capacity: usize, rng: &mut R) -> Self {
        Self {
            particles: (0..capacity).map(|_| b.sample(rng)).collect(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.particles.len() >= self.capacity
    }

    /// Adds a particle unless the set is already at capacity.
    pub fn push(&mut self, s: StateId) -> bool {
        if self.is_full() {
            return false;
        }
        self.particles.push(s);
        true
    }

    pub fn particles(&self) -> &[StateId] {
        &self.particles
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<StateId> {
        if self.particles.is_empty() {
            None
        } else {
            Some(self.particles[rng.random_range(0..self.particles.len())])
        }
    }

    /// Distinct particle states.
    pub fn support(&self) -> Result<BeliefSupport, BeliefError> {
        if self.particles.is_empty() {
            Err(BeliefError::EmptyBelief)
        } else {
            Ok(BeliefSupport::new(self.particles.iter().copied()))
        }
    }

    /// Normalized histogram over `n` states.
    pub fn histogram(&self, n: usize) -> Result<BeliefState, BeliefError> {
        let weights: Vec<(StateId, f64)> = self.particles.iter().map(|&s| (s, 1.0)).collect();
        BeliefState::from_weights(n, &weights)
    }
}

/// A set of states with positive belief, kept sorted so equality and hashing
/// are canonical.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeliefSupport(Vec<StateId>);

impl BeliefSupport {
    pub fn new(states: impl IntoIterator<Item = StateId>) -> Self {
        let mut v: Vec<StateId> = states.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn from_set(set: &BTreeSet<StateId>) -> Self {
        Self(set.iter().copied().collect())
    }

    pub fn states(&self) -> &[StateId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.0.binary_search(&s).is_ok()
    }

    pub fn is_subset(&self, other: &BeliefSupport) -> bool {
        self.0.iter().all(|&s| other.contains(s))
    }

    /// True when every member can emit one common observation.
    pub fn shares_observation(&self, model: &PomdpModel) -> bool {
        let Some((&first, rest)) = self.0.split_first() else {
            return false;
        };
        model
            .obs_support(first)
            .iter()
            .any(|o| rest.iter().all(|&s| model.obs_support(s).contains(o)))
    }
}

/// Alternating action/observation sequence from the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct History(Vec<(ActionId, ObsId)>);

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, a: ActionId, o: ObsId) {
        self.0.push((a, o));
    }

    pub fn extended(&self, a: ActionId, o: ObsId) -> Self {
        let mut h = self.clone();
        h.push(a, o);
        h
    }

    pub fn steps(&self) -> &[(ActionId, ObsId)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::PomdpBuilder;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> PomdpModel {
        let mut b = PomdpBuilder::with_sizes(2, 1, 2);
        for s in 0..2 {
            b.transition(s, 0, 0, 0.5).transition(s, 0, 1, 0.5);
        }
        b.observation(0, 0, 0, 0.2).observation(0, 0, 1, 0.8);
        b.observation(1, 0, 0, 0.8).observation(1, 0, 1, 0.2);
        b.reward(0, 0, 0.0).reward(1, 0, 1000.0);
        b.build().unwrap()
    }

    #[test]
    fn deterministic_chain_update() {
        let mut b = PomdpBuilder::with_sizes(2, 1, 2);
        b.transition(0, 0, 1, 1.0).transition(1, 0, 1, 1.0);
        b.observation_all_actions(0, 0, 1.0).observation_all_actions(1, 1, 1.0);
        let m = b.build().unwrap();
        let post = belief_update(&m, &BeliefState::point(2, 0), 0, 1).unwrap();
        assert_eq!(post.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn two_state_update_matches_enumeration() {
        // Z(s0,a,o0)=0.2 and Z(s1,a,o0)=0.8
        let m = two_state();
        let b = BeliefState::point(2, 0);
        let post = belief_update(&m, &b, 0, 0).unwrap();
        // Enumerate every (s, s') term of the joint for o0.
        let mut joint = [0.0; 2];
        for s in 0..2 {
            for next in 0..2 {
                joint[next] += b.prob(s) * m.transition(s, 0, next) * m.observation_prob(next, 0, 0);
            }
        }
        let eta: f64 = joint.iter().sum();
        assert!((post.prob(0) - 0.2).abs() < 1e-12);
        assert!((post.prob(1) - 0.8).abs() < 1e-12);
        assert!((post.prob(0) - joint[0] / eta).abs() < 1e-12);
    }

    #[test]
    fn impossible_observation() {
        let mut b = PomdpBuilder::with_sizes(2, 1, 2);
        b.transition(0, 0, 1, 1.0).transition(1, 0, 1, 1.0);
        b.observation_all_actions(0, 0, 1.0).observation_all_actions(1, 1, 1.0);
        let m = b.build().unwrap();
        assert_eq!(
            belief_update(&m, &BeliefState::point(2, 0), 0, 0),
            Err(BeliefError::ImpossibleObservation {
                action: 0,
                observation: 0
            })
        );
    }

    #[test]
    fn expected_reward_examples() {
        let m = two_state();
        assert_eq!(expected_reward(&m, &BeliefState::new(vec![0.5, 0.5]).unwrap(), 0), 500.0);
        let mut b = PomdpBuilder::with_sizes(1, 1, 1);
        b.transition(0, 0, 0, 1.0).observation(0, 0, 0, 1.0).reward(0, 0, -1.0);
        let m = b.build().unwrap();
        assert_eq!(expected_reward(&m, &BeliefState::point(1, 0), 0), -1.0);
    }

    #[test]
    fn supports() {
        let b = BeliefState::new(vec![0.3, 0.7, 0.0]).unwrap();
        assert_eq!(b.support().unwrap().states(), &[0, 1]);
        let p = ParticleBelief::from_particles(vec![2, 2, 5]);
        assert_eq!(p.support().unwrap().states(), &[2, 5]);
        assert_eq!(
            ParticleBelief::with_capacity(4).support(),
            Err(BeliefError::EmptyBelief)
        );
    }

    #[test]
    fn particle_capacity_is_respected() {
        let mut p = ParticleBelief::with_capacity(2);
        assert!(p.push(1) && p.push(1));
        assert!(!p.push(3));
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn particle_histogram_converges() {
        let exact = BeliefState::new(vec![0.1, 0.6, 0.3]).unwrap();
        let mut mean_tv = Vec::new();
        for &count in &[100usize, 1_000, 10_000] {
            let tv: f64 = (0..10u64)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    ParticleBelief::sample_from(&exact, count, &mut rng)
                        .histogram(3)
                        .unwrap()
                        .total_variation(&exact)
                })
                .sum::<f64>()
                / 10.0;
            mean_tv.push(tv);
        }
        assert!(mean_tv[0] > mean_tv[1] && mean_tv[1] > mean_tv[2], "{mean_tv:?}");
    }

    fn random_model(seed: u64) -> PomdpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = rng.random_range(2..7);
        let na = rng.random_range(1..4);
        let no = rng.random_range(1..4);
        let mut b = PomdpBuilder::with_sizes(ns, na, no);
        for s in 0..ns {
            for a in 0..na {
                let w: Vec<f64> = (0..ns)
                    .map(|_| if rng.random_bool(0.5) { rng.random::<f64>() } else { 0.0 })
                    .collect();
                let total: f64 = w.iter().sum();
                if total == 0.0 {
                    b.transition(s, a, s, 1.0);
                } else {
                    for (t, x) in w.iter().enumerate() {
                        b.transition(s, a, t, x / total);
                    }
                }
                let z: Vec<f64> = (0..no)
                    .map(|_| if rng.random_bool(0.6) { rng.random::<f64>() } else { 0.0 })
                    .collect();
                let ztot: f64 = z.iter().sum();
                if ztot == 0.0 {
                    b.observation(s, a, 0, 1.0);
                } else {
                    for (o, x) in z.iter().enumerate() {
                        b.observation(s, a, o, x / ztot);
                    }
                }
            }
        }
        b.build().unwrap()
    }

    proptest! {
        #[test]
        fn update_normalized_and_support_consistent(seed in 0u64..500, steps in 1usize..4) {
            let m = random_model(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut b = m.initial_belief().clone();
            let mut s = b.sample(&mut rng);
            for _ in 0..steps {
                let a = rng.random_range(0..m.num_actions());
                let step = m.generative_step(s, a, &mut rng);
                let prior = b.support().unwrap();
                let post = belief_update(&m, &b, a, step.observation).unwrap();
                let sum: f64 = post.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for &next in post.support().unwrap().states() {
                    prop_assert!(m.observation_prob(next, a, step.observation) > 0.0);
                    prop_assert!(prior.states().iter().any(|&p| m.transition(p, a, next) > 0.0));
                }
                b = post;
                s = step.next;
            }
        }
    }
}
