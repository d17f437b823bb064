use serde::Serialize;

use super::{Bsts, SupportId, UnsafeSets, WinningRegions};
use crate::pomdp::{BeliefSupport, PomdpModel, StateId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CertificateViolation {
    NotANode { tau: usize, support: BeliefSupport },
    UnsafeMember { tau: usize, support: BeliefSupport, state: StateId },
    NoWinningAction { tau: usize, support: BeliefSupport },
}

/// Observation-split successors of `(Θ, a)` computed by scanning the full
/// tables; empty groups are omitted.
fn scan_successors(model: &PomdpModel, support: &BeliefSupport, a: usize) -> Vec<BeliefSupport> {
    let reachable: Vec<StateId> = (0..model.num_states())
        .filter(|&next| support.states().iter().any(|&s| model.transition(s, a, next) > 0.0))
        .collect();
    (0..model.num_observations())
        .map(|o| {
            BeliefSupport::new(
                reachable
                    .iter()
                    .copied()
                    .filter(|&next| model.observation_prob(next, a, o) > 0.0),
            )
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// True when every observation-split successor of `(Θ, a)`, computed from
/// the model tables, is a support in `W^τ`.
pub fn action_is_winning(
    model: &PomdpModel,
    bsts: &Bsts,
    winning: &WinningRegions,
    support: &BeliefSupport,
    a: usize,
    tau: usize,
) -> bool {
    scan_successors(model, support, a)
        .iter()
        .all(|s| bsts.id_of(s).is_some_and(|i| winning.contains(tau, i)))
}

/// Checks that every `Θ ∈ W^τ` has no unsafe member and, below the horizon,
/// an action whose successors all lie in `W^{τ+1}`. Successors come from the
/// model tables directly, not from the transition system's edges.
pub fn verify_certificate(
    model: &PomdpModel,
    bsts: &Bsts,
    unsafe_sets: &UnsafeSets,
    winning: &WinningRegions,
) -> Result<(), CertificateViolation> {
    let h = winning.horizon();
    for tau in 1..=h {
        for &id in winning.region(tau) {
            let support = bsts.support(id);
            if !bsts.is_node(id, tau) {
                return Err(CertificateViolation::NotANode {
                    tau,
                    support: support.clone(),
                });
            }
            if let Some(&state) = support.states().iter().find(|&&s| unsafe_sets.is_unsafe(tau, s)) {
                return Err(CertificateViolation::UnsafeMember {
                    tau,
                    support: support.clone(),
                    state,
                });
            }
            if tau == h {
                continue;
            }
            let in_next =
                |s: &BeliefSupport| bsts.id_of(s).is_some_and(|i: SupportId| winning.contains(tau + 1, i));
            let has_action = (0..model.num_actions())
                .any(|a| scan_successors(model, support, a).iter().all(in_next));
            if !has_action {
                return Err(CertificateViolation::NoWinningAction {
                    tau,
                    support: support.clone(),
                });
            }
        }
    }
    Ok(())
}
