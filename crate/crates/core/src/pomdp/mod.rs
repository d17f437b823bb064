//! Discrete POMDP models, beliefs, and the generative simulator.

mod belief;
mod file;
mod table;

pub use belief::{
    belief_update, expected_reward, BeliefError, BeliefState, BeliefSupport, History,
    ParticleBelief,
};
pub use file::{load_model, parse_model};
pub use table::{RowIter, StochasticTable, ROW_SUM_TOLERANCE};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateId = usize;
pub type ActionId = usize;
pub type ObsId = usize;

/// Default discount factor for models that do not specify one.
pub const DEFAULT_DISCOUNT: f64 = 0.95;

/// State count above which tables are stored sparsely.
pub const DEFAULT_SPARSE_THRESHOLD: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model needs at least one {0}")]
    Empty(&'static str),
    #[error("{table} row for ({source_index}, action {action}) sums to {sum}, expected 1")]
    RowSum {
        table: &'static str,
        source_index: usize,
        action: ActionId,
        sum: f64,
    },
    #[error("{table} entry ({source_index}, action {action}, {target}) is not a probability: {value}")]
    BadProbability {
        table: &'static str,
        source_index: usize,
        action: ActionId,
        target: usize,
        value: f64,
    },
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("discount {0} outside [0, 1]")]
    InvalidDiscount(f64),
    #[error("non-finite reward at state {state}, action {action}")]
    BadReward { state: StateId, action: ActionId },
    #[error("initial belief: {0}")]
    InitialBelief(#[from] BeliefError),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("model file: {0}")]
    Io(String),
}

/// An explicit finite POMDP `(S, A, O, T, R, Z, γ)`.
///
/// Immutable once built; safe to share between threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PomdpModel {
    state_names: Vec<String>,
    action_names: Vec<String>,
    observation_names: Vec<String>,
    /// Rows indexed by `state * |A| + action`, columns are successor states.
    transition: StochasticTable,
    /// Rows indexed by `successor * |A| + action`, columns are observations.
    observation: StochasticTable,
    reward: Vec<f64>,
    discount: f64,
    obs_support: Vec<Vec<ObsId>>,
    initial: BeliefState,
}

/// One draw `(s', o, r)` from the generative model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: StateId,
    pub observation: ObsId,
    pub reward: f64,
}

impl PomdpModel {
    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observation_names.len()
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.state_names[s]
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.action_names[a]
    }

    pub fn observation_name(&self, o: ObsId) -> &str {
        &self.observation_names[o]
    }

    pub fn action_index(&self, name: &str) -> Option<ActionId> {
        self.action_names.iter().position(|n| n == name)
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_belief(&self) -> &BeliefState {
        &self.initial
    }

    pub fn transition(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.transition.prob(self.row(s, a), next)
    }

    /// Successor states of `(s, a)` with positive probability.
    pub fn successors(&self, s: StateId, a: ActionId) -> RowIter<'_> {
        self.transition.row(self.row(s, a))
    }

    pub fn observation_prob(&self, next: StateId, a: ActionId, o: ObsId) -> f64 {
        self.observation.prob(self.row(next, a), o)
    }

    /// Observations with positive probability after reaching `next` via `a`.
    pub fn observations(&self, next: StateId, a: ActionId) -> RowIter<'_> {
        self.observation.row(self.row(next, a))
    }

    pub fn reward(&self, s: StateId, a: ActionId) -> f64 {
        self.reward[self.row(s, a)]
    }

    /// `obs(s)`: observations possible in `s` under some action.
    pub fn obs_support(&self, s: StateId) -> &[ObsId] {
        &self.obs_support[s]
    }

    pub fn uses_dense_tables(&self) -> bool {
        self.transition.is_dense()
    }

    /// Samples `(s', o, r) ~ G(s, a)`.
    pub fn generative_step<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> Step {
        let row = self.row(s, a);
        let next = self.transition.sample(row, rng);
        let observation = self.observation.sample(self.row(next, a), rng);
        Step {
            next,
            observation,
            reward: self.reward[row],
        }
    }

    /// Samples a state from the initial belief.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        self.initial.sample(rng)
    }

    #[inline]
    fn row(&self, s: StateId, a: ActionId) -> usize {
        s * self.action_names.len() + a
    }
}

/// Incremental constructor for [`PomdpModel`]; validation happens in
/// [`PomdpBuilder::build`].
#[derive(Debug, Clone)]
pub struct PomdpBuilder {
    state_names: Vec<String>,
    action_names: Vec<String>,
    observation_names: Vec<String>,
    transition: Vec<Vec<(usize, f64)>>,
    observation: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    discount: f64,
    initial: Option<Vec<(StateId, f64)>>,
    sparse_threshold: usize,
    index_error: Option<ModelError>,
}

impl PomdpBuilder {
    pub fn new<S: Into<String>>(
        states: impl IntoIterator<Item = S>,
        actions: impl IntoIterator<Item = S>,
        observations: impl IntoIterator<Item = S>,
    ) -> Self {
        let state_names: Vec<String> = states.into_iter().map(Into::into).collect();
        let action_names: Vec<String> = actions.into_iter().map(Into::into).collect();
        let observation_names: Vec<String> = observations.into_iter().map(Into::into).collect();
        let rows = state_names.len() * action_names.len();
        Self {
            state_names,
            action_names,
            observation_names,
            transition: vec![Vec::new(); rows],
            observation: vec![Vec::new(); rows],
            reward: vec![0.0; rows],
            discount: DEFAULT_DISCOUNT,
            initial: None,
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            index_error: None,
        }
    }

    /// Builder with anonymous `s0.., a0.., o0..` names.
    pub fn with_sizes(states: usize, actions: usize, observations: usize) -> Self {
        Self::new(
            (0..states).map(|i| format!("s{i}")).collect::<Vec<_>>(),
            (0..actions).map(|i| format!("a{i}")).collect::<Vec<_>>(),
            (0..observations).map(|i| format!("o{i}")).collect::<Vec<_>>(),
        )
    }

    fn check(&mut self, what: &'static str, index: usize, size: usize) -> bool {
        if index >= size {
            self.index_error
                .get_or_insert(ModelError::IndexOutOfRange { what, index, size });
            false
        } else {
            true
        }
    }

    fn checked_row(&mut self, s: StateId, a: ActionId) -> Option<usize> {
        let (ns, na) = (self.state_names.len(), self.action_names.len());
        (self.check("state", s, ns) && self.check("action", a, na)).then_some(s * na + a)
    }

    pub fn transition(&mut self, s: StateId, a: ActionId, next: StateId, p: f64) -> &mut Self {
        let ns = self.state_names.len();
        if let Some(row) = self.checked_row(s, a) {
            if self.check("state", next, ns) {
                self.transition[row].push((next, p));
            }
        }
        self
    }

    pub fn observation(&mut self, next: StateId, a: ActionId, o: ObsId, p: f64) -> &mut Self {
        let no = self.observation_names.len();
        if let Some(row) = self.checked_row(next, a) {
            if self.check("observation", o, no) {
                self.observation[row].push((o, p));
            }
        }
        self
    }

    /// Sets `Z(next, a, o) = p` for every action.
    pub fn observation_all_actions(&mut self, next: StateId, o: ObsId, p: f64) -> &mut Self {
        for a in 0..self.action_names.len() {
            self.observation(next, a, o, p);
        }
        self
    }

    pub fn reward(&mut self, s: StateId, a: ActionId, r: f64) -> &mut Self {
        if let Some(row) = self.checked_row(s, a) {
            self.reward[row] = r;
        }
        self
    }

    pub fn discount(&mut self, gamma: f64) -> &mut Self {
        self.discount = gamma;
        self
    }

    pub fn initial(&mut self, weights: Vec<(StateId, f64)>) -> &mut Self {
        self.initial = Some(weights);
        self
    }

    pub fn sparse_threshold(&mut self, states: usize) -> &mut Self {
        self.sparse_threshold = states;
        self
    }

    pub fn build(&self) -> Result<PomdpModel, ModelError> {
        if let Some(err) = &self.index_error {
            return Err(err.clone());
        }
        let (ns, na, no) = (
            self.state_names.len(),
            self.action_names.len(),
            self.observation_names.len(),
        );
        if ns == 0 {
            return Err(ModelError::Empty("state"));
        }
        if na == 0 {
            return Err(ModelError::Empty("action"));
        }
        if no == 0 {
            return Err(ModelError::Empty("observation"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(ModelError::InvalidDiscount(self.discount));
        }
        for (row, r) in self.reward.iter().enumerate() {
            if !r.is_finite() {
                return Err(ModelError::BadReward {
                    state: row / na,
                    action: row % na,
                });
            }
        }
        let dense = ns <= self.sparse_threshold;
        let lift = |table: &'static str, d: table::RowDefect| match d {
            table::RowDefect::Sum { row, sum } => ModelError::RowSum {
                table,
                source_index: row / na,
                action: row % na,
                sum,
            },
            table::RowDefect::Negative { row, col, value } => ModelError::BadProbability {
                table,
                source_index: row / na,
                action: row % na,
                target: col,
                value,
            },
            table::RowDefect::ColumnOutOfRange { col, .. } => ModelError::IndexOutOfRange {
                what: table,
                index: col,
                size: if table == "transition" { ns } else { no },
            },
        };
        let transition = StochasticTable::from_sparse_rows(ns, self.transition.clone(), dense)
            .map_err(|d| lift("transition", d))?;
        let observation = StochasticTable::from_sparse_rows(no, self.observation.clone(), dense)
            .map_err(|d| lift("observation", d))?;

        let obs_support = (0..ns)
            .map(|s| {
                let mut set: Vec<ObsId> = (0..na)
                    .flat_map(|a| observation.row(s * na + a).map(|(o, _)| o))
                    .collect();
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();

        let initial = match &self.initial {
            Some(weights) => BeliefState::from_weights(ns, weights)?,
            None => BeliefState::uniform(ns),
        };

        Ok(PomdpModel {
            state_names: self.state_names.clone(),
            action_names: self.action_names.clone(),
            observation_names: self.observation_names.clone(),
            transition,
            observation,
            reward: self.reward.clone(),
            discount: self.discount,
            obs_support,
            initial,
        })
    }
}
