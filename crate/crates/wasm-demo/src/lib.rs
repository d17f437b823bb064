//! Browser bindings. Every export takes plain numbers or JSON text and
//! returns JSON text; failures come back as `{"error": "..."}`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use dynshield::acp::{AcpConfig, PredictionRegions};
use dynshield::geom::Point;
use dynshield::gridworld::{build_gridworld, Cell, GridSpec, Gridworld};
use dynshield::harness::{run_coverage, run_episode, AgentSource, CoverageConfig, ExperimentConfig, Method};
use dynshield::pomdp::{BeliefSupport, StateId};
use dynshield::shield::{SafetyParams, Shield, UnsafeSets};
use dynshield::trajectory::{JointAgentState, PredictionSet};

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn cells(world: &Gridworld, states: impl IntoIterator<Item = StateId>) -> Vec<(usize, usize)> {
    states
        .into_iter()
        .filter_map(|s| world.cell_of(s))
        .map(|c| (c.x, c.y))
        .collect()
}

pub fn coverage_json(steps: usize, sigma: f64, delta: f64, alpha: f64, seed: u64) -> Result<Value, String> {
    let cfg = CoverageConfig {
        steps,
        noise_sigma: sigma,
        acp: AcpConfig {
            delta,
            alpha,
            ..AcpConfig::default()
        },
        seed,
        record_trace: true,
        ..CoverageConfig::default()
    };
    cfg.acp.validate().map_err(|e| e.to_string())?;
    let report = run_coverage(&cfg).map_err(|e| e.to_string())?;
    serde_json::to_value(report).map_err(|e| e.to_string())
}

/// Shield for a robot at `(x, y)` on the default grid, with agents held at
/// their current positions over the horizon.
pub fn shield_json(agents: &str, x: usize, y: usize, epsilon: f64, radii: &str) -> Result<Value, String> {
    let agents: Vec<(f64, f64)> = serde_json::from_str(agents).map_err(|e| format!("agents: {e}"))?;
    let radii: Vec<f64> = serde_json::from_str(radii).map_err(|e| format!("radii: {e}"))?;
    if radii.is_empty() || radii.iter().any(|r| !(*r >= 0.0)) {
        return Err("radii must be a non-empty list of non-negative numbers".into());
    }
    let world = build_gridworld(&GridSpec::default()).map_err(|e| e.to_string())?;
    let spec = world.spec();
    if x >= spec.width || y >= spec.height {
        return Err(format!("cell ({x}, {y}) is outside the grid"));
    }
    let points: Vec<Point> = agents.iter().map(|&(ax, ay)| Point::new(ax, ay)).collect();
    let predicted = (1..=radii.len())
        .map(|tau| JointAgentState::from_positions(tau as i64, &points))
        .collect();
    let params = SafetyParams {
        epsilon,
        ..SafetyParams::default()
    };
    let unsafe_sets = UnsafeSets::from_predictions(
        &world.geometry(),
        &PredictionSet::new(0, predicted),
        &PredictionRegions::new(0, radii),
        &params,
    )
    .map_err(|e| e.to_string())?;
    let root = BeliefSupport::new([world.state_of(Cell::new(x, y))]);
    let snap = Shield::compute(world.model(), &root, unsafe_sets).snapshot();
    let winning: Vec<Vec<(usize, usize)>> = snap
        .winning
        .iter()
        .map(|layer| {
            let mut c = cells(&world, layer.iter().flat_map(|s| s.states().to_vec()));
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect();
    let unsafe_cells: Vec<_> = snap.unsafe_states.iter().map(|f| cells(&world, f.iter().copied())).collect();
    Ok(json!({
        "width": spec.width,
        "height": spec.height,
        "goal": spec.goal_cell,
        "root_actions": snap.root_actions,
        "nodes": snap.nodes,
        "unsafe": unsafe_cells,
        "winning": winning,
    }))
}

/// One desk-preset episode with frames recorded.
pub fn episode_json(method: &str, agents: usize, seed: u64, simulations: usize) -> Result<Value, String> {
    let mut cfg = ExperimentConfig::desk();
    cfg.method = method.parse::<Method>().map_err(|e| e.to_string())?;
    cfg.record_frames = true;
    cfg.planner.num_simulations = simulations.max(1);
    if let AgentSource::Synthetic(spec) = &mut cfg.agents {
        spec.agents = agents;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let ep = run_episode(&cfg, seed).map_err(|e| e.to_string())?;
    Ok(json!({
        "width": cfg.grid.width,
        "height": cfg.grid.height,
        "goal": cfg.grid.goal_cell,
        "steps": ep.steps,
        "success": ep.success,
        "safety_rate": ep.metrics.safety_rate,
        "collisions": ep.metrics.collisions,
        "deadlocks": ep.deadlocks,
        "frames": ep.frames,
    }))
}

/// ACP scores and radii over a synthetic stream.
#[wasm_bindgen]
pub fn coverage(steps: usize, sigma: f64, delta: f64, alpha: f64, seed: u64) -> String {
    respond(coverage_json(steps, sigma, delta, alpha, seed))
}

/// Unsafe cells and winning regions around fixed agents.
#[wasm_bindgen]
pub fn shield(agents: &str, x: usize, y: usize, epsilon: f64, radii: &str) -> String {
    respond(shield_json(agents, x, y, epsilon, radii))
}

/// A recorded episode, frame by frame.
#[wasm_bindgen]
pub fn episode(method: &str, agents: usize, seed: u64, simulations: usize) -> String {
    respond(episode_json(method, agents, seed, simulations))
}
