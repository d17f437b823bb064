use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gridworld::{build_gridworld, Cell, GridSpec, EAST, NORTH};
use crate::pomdp::{belief_update, PomdpBuilder};
use crate::shield::{shield_actions, Bsts, UnsafeSets};

fn small_cfg(sims: usize, depth: usize) -> PlannerConfig {
    PlannerConfig {
        num_simulations: sims,
        max_depth: depth,
        ucb_constant: 1.0,
        particle_count: 200,
        ..PlannerConfig::default()
    }
}

fn bandit() -> PomdpModel {
    let mut b = PomdpBuilder::with_sizes(1, 2, 1);
    b.transition(0, 0, 0, 1.0).transition(0, 1, 0, 1.0);
    b.observation_all_actions(0, 0, 1.0);
    b.reward(0, 1, 1.0);
    b.build().unwrap()
}

#[test]
fn single_action_is_returned() {
    let mut b = PomdpBuilder::with_sizes(2, 1, 1);
    b.transition(0, 0, 1, 1.0).transition(1, 0, 1, 1.0);
    b.observation_all_actions(0, 0, 1.0).observation_all_actions(1, 0, 1.0);
    let m = b.build().unwrap();
    let mut p = Planner::from_model(&m, small_cfg(10, 3)).unwrap();
    assert_eq!(p.plan(&m, None, &UniformRollout).unwrap().0, 0);
}

#[test]
fn bandit_prefers_paying_arm() {
    let m = bandit();
    let mut p = Planner::from_model(&m, small_cfg(100, 1)).unwrap();
    let (a, stats) = p.plan(&m, None, &UniformRollout).unwrap();
    assert_eq!(a, 1);
    assert!((stats.root_value - 1.0).abs() < 1e-12);
    assert_eq!(stats.root_visits.iter().sum::<u64>(), 100);
}

#[test]
fn chain_value_is_exact_discounted_sum() {
    // s0 → s1 → s2 → s3 (absorbing), rewards 1, 2, 4 on leaving s0, s1, s2.
    let mut b = PomdpBuilder::with_sizes(4, 1, 1);
    for s in 0..4 {
        b.transition(s, 0, (s + 1).min(3), 1.0);
        b.observation_all_actions(s, 0, 1.0);
    }
    b.reward(0, 0, 1.0).reward(1, 0, 2.0).reward(2, 0, 4.0);
    b.discount(0.9).initial(vec![(0, 1.0)]);
    let m = b.build().unwrap();
    let mut p = Planner::from_model(&m, small_cfg(500, 10)).unwrap();
    let (_, stats) = p.plan(&m, None, &UniformRollout).unwrap();
    let exact = 1.0 + 0.9 * 2.0 + 0.81 * 4.0;
    assert!((stats.root_value - exact).abs() < 1e-6, "{}", stats.root_value);
}

#[test]
fn ucb_with_unit_log_equals_constant() {
    assert_eq!(ucb_score(0.0, 500.0, std::f64::consts::E, 1.0), 500.0);
    assert_eq!(ucb_score(3.0, 1.0, 10.0, 0.0), f64::INFINITY);
}

#[test]
fn depth_limit_truncates() {
    let m = bandit();
    let mut p = Planner::from_model(&m, small_cfg(1, 1)).unwrap();
    let ctx = Ctx {
        model: &m,
        shield: None,
        rollout: &UniformRollout,
        gamma: 0.95,
        horizon: 0,
    };
    assert_eq!(p.simulate(&ctx, 0, 0, 1), Some(0.0));
}

#[test]
fn rollout_mean_matches_analytic_value() {
    // Action 0 reaches the paying state, action 1 waits; the reward is
    // collected one step later, so two steps see it with probability 1/2.
    let mut b = PomdpBuilder::with_sizes(3, 2, 1);
    b.transition(0, 0, 1, 1.0).transition(0, 1, 0, 1.0);
    for a in 0..2 {
        b.transition(1, a, 2, 1.0).transition(2, a, 2, 1.0);
        b.reward(1, a, 10.0);
    }
    for s in 0..3 {
        b.observation_all_actions(s, 0, 1.0);
    }
    let m = b.build().unwrap();
    let mut p = Planner::from_model(&m, small_cfg(1, 2)).unwrap();
    let ctx = Ctx {
        model: &m,
        shield: None,
        rollout: &UniformRollout,
        gamma: 0.9,
        horizon: 0,
    };
    let n = 100_000;
    let mean: f64 = (0..n).map(|_| p.rollout(&ctx, 0, 0, None)).sum::<f64>() / n as f64;
    let expect = 0.5 * 0.9 * 10.0;
    // Standard error of a Bernoulli(1/2) scaled by 9 is 9·0.5/√n.
    assert!((mean - expect).abs() < 4.0 * 4.5 / (n as f64).sqrt(), "{mean}");
}

#[test]
fn same_seed_same_actions() {
    let spec = GridSpec {
        width: 8,
        height: 8,
        goal_cell: Cell::new(6, 6),
        ..GridSpec::default()
    };
    let g = build_gridworld(&spec).unwrap();
    let m = g.model();
    let run = || {
        let mut p = Planner::from_model(m, PlannerConfig {
            num_simulations: 200,
            max_depth: 20,
            particle_count: 300,
            seed: 5,
            ..PlannerConfig::default()
        })
        .unwrap();
        let mut env = ChaCha8Rng::seed_from_u64(9);
        let mut s = g.state_of(Cell::new(1, 1));
        let mut actions = Vec::new();
        for _ in 0..6 {
            let (a, _) = p.plan(m, None, &UniformRollout).unwrap();
            let step = m.generative_step(s, a, &mut env);
            p.advance_root(m, a, step.observation).unwrap();
            s = step.next;
            actions.push(a);
        }
        actions
    };
    assert_eq!(run(), run());
}

/// Root at (17,5), `F^2 = {(18,7)}`: east is allowed, and north from the
/// resulting support is pruned.
#[test]
fn north_after_east_is_pruned() {
    let g = build_gridworld(&GridSpec::default()).unwrap();
    let m = g.model();
    let root = BeliefSupport::new([g.state_of(Cell::new(17, 5))]);
    let u = UnsafeSets::from_states(m.num_states(), &[vec![], vec![g.state_of(Cell::new(18, 7))]]);
    let shield = Shield::compute(m, &root, u);
    assert!(shield.root_actions().contains(&EAST));
    let bsts = shield.bsts();
    let o = g.block_observation(Cell::new(18, 5));
    let after_east = bsts.child(bsts.root(), 0, EAST, o).unwrap();
    assert!(bsts.support(after_east).contains(g.state_of(Cell::new(18, 5))));
    assert!(shield.winning().contains(1, after_east));
    let allowed = shield.allowed(after_east, 1).unwrap();
    assert!(!allowed.contains(&NORTH));

    let mut p = Planner::new(
        PlannerConfig {
            num_simulations: 300,
            max_depth: 10,
            ..PlannerConfig::default()
        },
        ParticleBelief::from_particles(vec![root.states()[0]; 50]),
    )
    .unwrap();
    p.plan(m, Some(&shield), &UniformRollout).unwrap();
    let child = p.nodes[0].child(EAST, o).expect("east explored");
    assert!(p.nodes[child].actions[NORTH].pruned);
    assert_eq!(p.nodes[child].actions[NORTH].visits, 0);
}

#[test]
fn particle_check_prunes_the_same_branch() {
    let g = build_gridworld(&GridSpec::default()).unwrap();
    let m = g.model();
    let root = BeliefSupport::new([g.state_of(Cell::new(17, 5))]);
    let u = UnsafeSets::from_states(m.num_states(), &[vec![], vec![g.state_of(Cell::new(18, 7))]]);
    let shield = Shield::compute(m, &root, u);
    let mut p = Planner::new(
        PlannerConfig {
            num_simulations: 400,
            max_depth: 10,
            shield_check: ShieldCheck::Particles,
            ..PlannerConfig::default()
        },
        ParticleBelief::from_particles(vec![root.states()[0]; 50]),
    )
    .unwrap();
    p.plan(m, Some(&shield), &UniformRollout).unwrap();
    let o = g.block_observation(Cell::new(18, 5));
    let child = p.nodes[0].child(EAST, o).expect("east explored");
    assert!(p.nodes[child].actions[NORTH].pruned);
}

fn random_model(rng: &mut ChaCha8Rng, identity_obs: bool) -> PomdpModel {
    let ns = rng.random_range(2..=8);
    let na = rng.random_range(2..=3);
    let no = if identity_obs { ns } else { rng.random_range(1..=3) };
    let mut b = PomdpBuilder::with_sizes(ns, na, no);
    for s in 0..ns {
        for a in 0..na {
            let k = rng.random_range(1..=3usize);
            for _ in 0..k {
                b.transition(s, a, rng.random_range(0..ns), 1.0 / k as f64);
            }
            b.reward(s, a, rng.random_range(0.0..1.0));
            if identity_obs {
                b.observation(s, a, s, 1.0);
            } else {
                b.observation(s, a, rng.random_range(0..no), 1.0);
            }
        }
    }
    b.build().unwrap()
}

#[test]
fn support_check_never_allows_what_particle_check_prunes() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..100 {
        let m = random_model(&mut rng, false);
        let root = BeliefSupport::new([rng.random_range(0..m.num_states())]);
        let h = rng.random_range(1..=3);
        let sets: Vec<Vec<usize>> = (0..h)
            .map(|_| (0..m.num_states()).filter(|_| rng.random_bool(0.2)).collect())
            .collect();
        let shield = Shield::compute(&m, &root, UnsafeSets::from_states(m.num_states(), &sets));
        let bsts = shield.bsts();
        for q in 0..h {
            for &id in bsts.layer(q) {
                let allowed = shield.allowed(id, q).unwrap();
                for &a in allowed {
                    for &(_, child) in bsts.post(id, q, a).unwrap() {
                        let sup = bsts.support(child).states();
                        let particles: Vec<usize> = sup.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
                        for &next in sup {
                            assert!(Planner::particles_allowed(&shield, &particles, next, q + 1));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn root_pruning_matches_shield_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..30 {
        let m = random_model(&mut rng, false);
        let s0 = rng.random_range(0..m.num_states());
        let root = BeliefSupport::new([s0]);
        let sets: Vec<Vec<usize>> = (0..2)
            .map(|_| (0..m.num_states()).filter(|_| rng.random_bool(0.15)).collect())
            .collect();
        let shield = Shield::compute(&m, &root, UnsafeSets::from_states(m.num_states(), &sets));
        let expected = shield_actions(shield.bsts(), shield.winning(), shield.bsts().root(), 1).unwrap();
        let mut p = Planner::new(small_cfg(200, 6), ParticleBelief::from_particles(vec![s0; 20])).unwrap();
        match p.plan(&m, Some(&shield), &UniformRollout) {
            Ok((a, stats)) => {
                assert!(expected.contains(&a));
                let allowed: Vec<usize> = (0..m.num_actions()).filter(|a| !stats.pruned_root.contains(a)).collect();
                assert_eq!(allowed, expected);
            }
            Err(PlannerError::AllActionsShielded) => assert!(expected.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn dead_end_prunes_parent_action() {
    // Corridor 0-1-2; action 0 moves right, action 1 stays. Cells 1 and 2
    // are unsafe at depth 2, so the depth-1 node {1} has no safe action.
    let mut b = PomdpBuilder::with_sizes(3, 2, 3);
    for s in 0..3 {
        b.transition(s, 0, (s + 1).min(2), 1.0).transition(s, 1, s, 1.0);
        b.observation_all_actions(s, s, 1.0);
    }
    let m = b.build().unwrap();
    let root = BeliefSupport::new([0]);
    let u = UnsafeSets::from_states(3, &[vec![], vec![1, 2]]);
    let shield = Shield::compute(&m, &root, u);
    // Only staying keeps depth 2 at state 0.
    assert_eq!(shield.root_actions(), &[1]);
    let mut p = Planner::new(small_cfg(50, 4), ParticleBelief::from_particles(vec![0; 10])).unwrap();
    let (a, stats) = p.plan(&m, Some(&shield), &UniformRollout).unwrap();
    assert_eq!(a, 1);
    assert_eq!(stats.pruned_root, vec![0]);
}

#[test]
fn advance_root_matches_exact_posterior() {
    let mut b = PomdpBuilder::with_sizes(3, 1, 2);
    b.transition(0, 0, 0, 0.5).transition(0, 0, 1, 0.5);
    b.transition(1, 0, 1, 0.3).transition(1, 0, 2, 0.7);
    b.transition(2, 0, 0, 0.6).transition(2, 0, 2, 0.4);
    b.observation_all_actions(0, 0, 0.9).observation_all_actions(0, 1, 0.1);
    b.observation_all_actions(1, 0, 0.4).observation_all_actions(1, 1, 0.6);
    b.observation_all_actions(2, 0, 0.2).observation_all_actions(2, 1, 0.8);
    b.initial(vec![(0, 0.2), (1, 0.5), (2, 0.3)]);
    let m = b.build().unwrap();
    let cfg = PlannerConfig {
        particle_count: 10_000,
        seed: 3,
        ..small_cfg(1, 1)
    };
    let mut p = Planner::from_model(&m, cfg).unwrap();
    let prior = p.particles().histogram(3).unwrap();
    p.advance_root(&m, 0, 1).unwrap();
    let exact = belief_update(&m, &prior, 0, 1).unwrap();
    let got = p.particles().histogram(3).unwrap();
    assert!(got.total_variation(&exact) <= 0.02, "{got:?} vs {exact:?}");
}

#[test]
fn deterministic_advance_collapses_particles() {
    let mut b = PomdpBuilder::with_sizes(3, 1, 3);
    for s in 0..3 {
        b.transition(s, 0, (s + 1) % 3, 1.0);
        b.observation_all_actions(s, s, 1.0);
    }
    b.initial(vec![(0, 1.0)]);
    let m = b.build().unwrap();
    let mut p = Planner::from_model(&m, small_cfg(1, 1)).unwrap();
    p.advance_root(&m, 0, 1).unwrap();
    assert!(p.particles().particles().iter().all(|&s| s == 1));
    assert_eq!(p.particles().len(), 200);
}

#[test]
fn impossible_observation_deprives() {
    let mut b = PomdpBuilder::with_sizes(2, 1, 2);
    b.transition(0, 0, 0, 1.0).transition(1, 0, 1, 1.0);
    b.observation_all_actions(0, 0, 1.0).observation_all_actions(1, 1, 1.0);
    b.initial(vec![(0, 1.0)]);
    let m = b.build().unwrap();
    let mut p = Planner::from_model(&m, small_cfg(1, 1)).unwrap();
    assert_eq!(
        p.advance_root(&m, 0, 1),
        Err(PlannerError::ParticleDeprivation {
            action: 0,
            observation: 1
        })
    );
}

#[test]
fn fallback_maximizes_worst_margin() {
    let g = build_gridworld(&GridSpec::default()).unwrap();
    let m = g.model();
    let root = BeliefSupport::new([g.state_of(Cell::new(10, 10))]);
    let mut sets = vec![vec![]];
    sets[0] = (0..g.num_cells()).collect();
    let all = UnsafeSets::from_states(m.num_states(), &sets);
    // Equal margins everywhere: lowest index.
    assert_eq!(fallback_action(m, &root, &all), 0);

    let geom = g.geometry();
    let agent = crate::geom::Point::new(12.0, 10.0);
    let pred = crate::trajectory::PredictionSet::new(
        0,
        vec![crate::trajectory::JointAgentState::from_positions(1, &[agent])],
    );
    let regions = crate::acp::PredictionRegions::new(0, vec![5.0]);
    let u = UnsafeSets::from_predictions(&geom, &pred, &regions, &Default::default()).unwrap();
    let a = fallback_action(m, &root, &u);
    // Brute force over successor cells.
    let worst = |a: usize| {
        m.successors(root.states()[0], a)
            .map(|(n, _)| geom.position(n).unwrap().distance(&agent) - 0.5 - 5.0)
            .fold(f64::INFINITY, f64::min)
    };
    let best = (0..4).map(worst).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(worst(a), best);
    assert_eq!(a, crate::gridworld::WEST);
}

/// Depth-2 expectimax from a known state.
fn expectimax(m: &PomdpModel, s: usize, gamma: f64) -> Vec<f64> {
    (0..m.num_actions())
        .map(|a| {
            m.reward(s, a)
                + gamma
                    * m.successors(s, a)
                        .map(|(n, p)| {
                            p * (0..m.num_actions()).map(|b| m.reward(n, b)).fold(f64::NEG_INFINITY, f64::max)
                        })
                        .sum::<f64>()
        })
        .collect()
}

#[test]
fn matches_expectimax_on_fully_observed_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut agree = 0;
    for i in 0..20 {
        let m = random_model(&mut rng, true);
        let s0 = rng.random_range(0..m.num_states());
        let q = expectimax(&m, s0, m.discount());
        let best = (0..q.len()).fold(0, |b, a| if q[a] > q[b] { a } else { b });
        let mut p = Planner::new(
            PlannerConfig {
                num_simulations: 10_000,
                max_depth: 2,
                ucb_constant: 1.0,
                particle_count: 10,
                seed: i,
                ..PlannerConfig::default()
            },
            ParticleBelief::from_particles(vec![s0; 10]),
        )
        .unwrap();
        let (a, _) = p.plan(&m, None, &UniformRollout).unwrap();
        agree += usize::from(a == best);
    }
    assert!(agree >= 18, "{agree}/20");
}

#[test]
fn reused_subtree_is_reshielded() {
    let g = build_gridworld(&GridSpec::default()).unwrap();
    let m = g.model();
    let s0 = g.state_of(Cell::new(5, 5));
    let mut p = Planner::new(
        PlannerConfig {
            num_simulations: 200,
            max_depth: 8,
            particle_count: 100,
            ..PlannerConfig::default()
        },
        ParticleBelief::from_particles(vec![s0; 100]),
    )
    .unwrap();
    p.plan(m, None, &UniformRollout).unwrap();
    let o = g.block_observation(Cell::new(7, 5));
    p.advance_root(m, EAST, o).unwrap();
    let root = p.root_support();
    let bsts = Bsts::build(m, &root, 1);
    // Block every first-step successor of moving east again.
    let blocked: Vec<usize> = bsts
        .post(bsts.root(), 0, EAST)
        .unwrap()
        .iter()
        .flat_map(|&(_, c)| bsts.support(c).states().to_vec())
        .collect();
    let shield = Shield::compute(m, &root, UnsafeSets::from_states(m.num_states(), &[blocked]));
    let (a, stats) = p.plan(m, Some(&shield), &UniformRollout).unwrap();
    assert_ne!(a, EAST);
    assert!(stats.pruned_root.contains(&EAST));
}
