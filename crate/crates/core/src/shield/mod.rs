//! Finite-horizon shields from winning regions of the belief-support
//! transition system.
//!
//! Given the root support, the predicted agent positions and their conformal
//! radii, [`Shield::compute`] marks unsafe states per horizon, evaluates the
//! winning regions `W^H … W^1` backward, and tabulates the allowed actions of
//! every node.

mod bsts;
mod verify;

pub use bsts::{successor_supports, Bsts, Post, SupportId};
pub use verify::{action_is_winning, verify_certificate, CertificateViolation};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acp::PredictionRegions;
use crate::geom::{DistanceMode, Point, StateGeometry};
use crate::pomdp::{ActionId, BeliefSupport, PomdpModel, StateId};
use crate::trajectory::PredictionSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShieldError {
    #[error("support is not a node of the transition system at depth {depth}")]
    UnknownSupport { depth: usize },
    #[error("prediction horizon {predictions} does not match region horizon {regions}")]
    HorizonMismatch { predictions: usize, regions: usize },
    #[error("depth {tau} outside 1..={horizon}")]
    DepthOutOfRange { tau: usize, horizon: usize },
}

/// Constraint parameters: buffer `ε`, Lipschitz constant `L` and the state
/// footprint used for distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyParams {
    pub epsilon: f64,
    pub lipschitz: f64,
    pub distance: DistanceMode,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            lipschitz: 1.0,
            distance: DistanceMode::Center,
        }
    }
}

/// `c(s, X) = min_i ‖s − X_i‖ − ε`, `+∞` for an empty agent set.
pub fn constraint_value<'a>(
    geometry: &StateGeometry,
    s: StateId,
    agents: impl IntoIterator<Item = &'a Point>,
    params: &SafetyParams,
) -> f64 {
    geometry.min_distance(s, agents, params.distance) - params.epsilon
}

/// Unsafe states `F^τ` for `τ = 1..=H`; `F^0` is always empty.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsafeSets {
    num_states: usize,
    /// `unsafe_[τ-1][s]`.
    flags: Vec<Vec<bool>>,
    /// `c(s, X̂^τ) − L·C^τ` per state.
    margins: Vec<Vec<f64>>,
    /// `c(s, X̂^τ)` per state.
    clearance: Vec<Vec<f64>>,
}

impl UnsafeSets {
    /// No unsafe states at any depth.
    pub fn none(num_states: usize, horizon: usize) -> Self {
        Self {
            num_states,
            flags: vec![vec![false; num_states]; horizon],
            margins: vec![vec![f64::INFINITY; num_states]; horizon],
            clearance: vec![vec![f64::INFINITY; num_states]; horizon],
        }
    }

    /// Explicit unsafe state lists, `sets[τ-1]`.
    pub fn from_states(num_states: usize, sets: &[Vec<StateId>]) -> Self {
        let mut u = Self::none(num_states, sets.len());
        for (i, set) in sets.iter().enumerate() {
            for &s in set {
                u.flags[i][s] = true;
                u.margins[i][s] = -1.0;
                u.clearance[i][s] = -1.0;
            }
        }
        u
    }

    /// `F^τ = {s | c(s, X̂^τ) < L·C^τ}`.
    pub fn from_predictions(
        geometry: &StateGeometry,
        predictions: &PredictionSet,
        regions: &PredictionRegions,
        params: &SafetyParams,
    ) -> Result<Self, ShieldError> {
        if predictions.horizon() != regions.horizon() {
            return Err(ShieldError::HorizonMismatch {
                predictions: predictions.horizon(),
                regions: regions.horizon(),
            });
        }
        let n = geometry.num_states();
        let mut flags = Vec::with_capacity(regions.horizon());
        let mut margins = Vec::with_capacity(regions.horizon());
        let mut clearance = Vec::with_capacity(regions.horizon());
        for tau in 1..=regions.horizon() {
            let threshold = params.lipschitz * regions.radius(tau);
            let agents: Vec<Point> = predictions.at(tau).positions().copied().collect();
            let mut f = Vec::with_capacity(n);
            let mut m = Vec::with_capacity(n);
            let mut cl = Vec::with_capacity(n);
            for s in 0..n {
                let c = constraint_value(geometry, s, &agents, params);
                f.push(c < threshold);
                m.push(if c == f64::INFINITY { c } else { c - threshold });
                cl.push(c);
            }
            flags.push(f);
            margins.push(m);
            clearance.push(cl);
        }
        Ok(Self {
            num_states: n,
            flags,
            margins,
            clearance,
        })
    }

    pub fn horizon(&self) -> usize {
        self.flags.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// `s ∈ F^τ`; false for `τ = 0` and beyond the horizon.
    pub fn is_unsafe(&self, tau: usize, s: StateId) -> bool {
        tau >= 1 && tau <= self.flags.len() && self.flags[tau - 1][s]
    }

    /// `c(s, X̂^τ) − L·C^τ`.
    pub fn margin(&self, tau: usize, s: StateId) -> f64 {
        self.margins[tau - 1][s]
    }

    /// `c(s, X̂^τ)`.
    pub fn clearance(&self, tau: usize, s: StateId) -> f64 {
        self.clearance[tau - 1][s]
    }

    /// `(Θ, q) ∈ Ψ`.
    pub fn support_unsafe(&self, support: &BeliefSupport, q: usize) -> bool {
        support.states().iter().any(|&s| self.is_unsafe(q, s))
    }

    pub fn states(&self, tau: usize) -> Vec<StateId> {
        (0..self.num_states).filter(|&s| self.is_unsafe(tau, s)).collect()
    }

    /// True when every `F^τ` is a subset of the matching set in `other`.
    pub fn is_subset(&self, other: &UnsafeSets) -> bool {
        self.flags
            .iter()
            .zip(&other.flags)
            .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }
}

/// `W^τ` for `τ = 1..=H`, as support ids of the transition system.
#[derive(Debug, Clone, PartialEq)]
pub struct WinningRegions {
    /// `sets[τ]`; index 0 is unused and empty.
    sets: Vec<BTreeSet<SupportId>>,
}

impl WinningRegions {
    pub fn horizon(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn contains(&self, tau: usize, id: SupportId) -> bool {
        tau >= 1 && tau < self.sets.len() && self.sets[tau].contains(&id)
    }

    pub fn region(&self, tau: usize) -> &BTreeSet<SupportId> {
        &self.sets[tau]
    }
}

/// Backward evaluation of the winning regions over the layered nodes.
pub fn compute_winning_regions(bsts: &Bsts, unsafe_sets: &UnsafeSets) -> WinningRegions {
    let h = bsts.horizon();
    let mut sets = vec![BTreeSet::new(); h + 1];
    if h == 0 {
        return WinningRegions { sets };
    }
    sets[h] = bsts
        .layer(h)
        .iter()
        .copied()
        .filter(|&id| !unsafe_sets.support_unsafe(bsts.support(id), h))
        .collect();
    for tau in (1..h).rev() {
        let (lower, upper) = sets.split_at_mut(tau + 1);
        let next = &upper[0];
        lower[tau] = bsts
            .layer(tau)
            .iter()
            .copied()
            .filter(|&id| {
                !unsafe_sets.support_unsafe(bsts.support(id), tau)
                    && (0..bsts.num_actions()).any(|a| {
                        bsts.post(id, tau, a)
                            .is_some_and(|p| p.iter().all(|(_, c)| next.contains(c)))
                    })
            })
            .collect();
    }
    WinningRegions { sets }
}

/// `ξ(Θ) = {a | post((Θ, τ−1), a) ⊆ W^τ}`.
pub fn shield_actions(
    bsts: &Bsts,
    winning: &WinningRegions,
    id: SupportId,
    tau: usize,
) -> Result<Vec<ActionId>, ShieldError> {
    if tau == 0 || tau > bsts.horizon() {
        return Err(ShieldError::DepthOutOfRange {
            tau,
            horizon: bsts.horizon(),
        });
    }
    if !bsts.is_node(id, tau - 1) {
        return Err(ShieldError::UnknownSupport { depth: tau - 1 });
    }
    Ok((0..bsts.num_actions())
        .filter(|&a| {
            bsts.post(id, tau - 1, a)
                .is_some_and(|p| p.iter().all(|&(_, c)| winning.contains(tau, c)))
        })
        .collect())
}

/// Transition system, unsafe sets, winning regions and the allowed actions
/// of every node above the horizon, for one planning step.
#[derive(Debug, Clone)]
pub struct Shield {
    bsts: Bsts,
    unsafe_sets: UnsafeSets,
    winning: WinningRegions,
    allowed: HashMap<(SupportId, usize), Vec<ActionId>>,
}

impl Shield {
    pub fn compute(model: &PomdpModel, root: &BeliefSupport, unsafe_sets: UnsafeSets) -> Self {
        let bsts = Bsts::build(model, root, unsafe_sets.horizon());
        let winning = compute_winning_regions(&bsts, &unsafe_sets);
        let mut allowed = HashMap::new();
        for q in 0..bsts.horizon() {
            for &id in bsts.layer(q) {
                let acts = shield_actions(&bsts, &winning, id, q + 1).expect("layer node");
                allowed.insert((id, q), acts);
            }
        }
        Self {
            bsts,
            unsafe_sets,
            winning,
            allowed,
        }
    }

    pub fn bsts(&self) -> &Bsts {
        &self.bsts
    }

    pub fn unsafe_sets(&self) -> &UnsafeSets {
        &self.unsafe_sets
    }

    pub fn winning(&self) -> &WinningRegions {
        &self.winning
    }

    pub fn horizon(&self) -> usize {
        self.bsts.horizon()
    }

    /// Allowed actions at node `(Θ, q)` for `q < H`.
    pub fn allowed(&self, id: SupportId, q: usize) -> Option<&[ActionId]> {
        self.allowed.get(&(id, q)).map(Vec::as_slice)
    }

    /// Allowed actions at the root.
    pub fn root_actions(&self) -> &[ActionId] {
        self.allowed(self.bsts.root(), 0).unwrap_or(&[])
    }

    pub fn snapshot(&self) -> ShieldSnapshot {
        let h = self.horizon();
        ShieldSnapshot {
            horizon: h,
            root: self.bsts.support(self.bsts.root()).clone(),
            root_actions: self.root_actions().to_vec(),
            nodes: self.bsts.num_nodes(),
            unsafe_states: (1..=h).map(|tau| self.unsafe_sets.states(tau)).collect(),
            winning: (1..=h)
                .map(|tau| {
                    self.winning
                        .region(tau)
                        .iter()
                        .map(|&id| self.bsts.support(id).clone())
                        .collect()
                })
                .collect(),
        }
    }
}

/// Serializable per-step view of a [`Shield`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldSnapshot {
    pub horizon: usize,
    pub root: BeliefSupport,
    pub root_actions: Vec<ActionId>,
    pub nodes: usize,
    /// `unsafe_states[τ-1]`.
    pub unsafe_states: Vec<Vec<StateId>>,
    /// `winning[τ-1]`.
    pub winning: Vec<Vec<BeliefSupport>>,
}
