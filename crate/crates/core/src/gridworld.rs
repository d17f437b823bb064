//! Grid robot benchmark environment.
//!
//! The robot moves east, south, west or north. A move lands on the adjacent
//! cell with `near_prob` and one cell further with `far_prob`, clamped at the
//! walls. The robot observes which 2×2 block it occupies, so a belief support
//! never spans more than four cells. Entering the goal cell and then acting
//! moves to an absorbing terminal state and collects `goal_reward`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Point, StateGeometry};
use crate::pomdp::{ModelError, ObsId, PomdpBuilder, PomdpModel, StateId, DEFAULT_DISCOUNT};

pub const EAST: usize = 0;
pub const SOUTH: usize = 1;
pub const WEST: usize = 2;
pub const NORTH: usize = 3;
pub const ACTION_NAMES: [&str; 4] = ["east", "south", "west", "north"];

/// Side length of an observation block.
pub const BLOCK: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }
}

/// Euclidean distance from a cell center to a point.
pub fn cell_distance(cell: Cell, point: Point) -> f64 {
    cell.center().distance(&point)
}

/// Block observation for a cell: blocks start at even coordinates.
pub fn block_of(cell: Cell) -> (usize, usize) {
    (cell.x / BLOCK, cell.y / BLOCK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Start cells with relative weights.
    pub start_cells: Vec<(Cell, f64)>,
    pub goal_cell: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    /// Applied by the episode runner, not by the model's reward table.
    pub collision_reward: f64,
    pub near_prob: f64,
    pub far_prob: f64,
    /// Probability of reporting a neighbouring block instead of the true one.
    pub block_confusion: f64,
    pub discount: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 20,
            height: 20,
            start_cells: vec![(Cell::new(1, 1), 1.0)],
            goal_cell: Cell::new(18, 18),
            step_reward: -1.0,
            goal_reward: 1000.0,
            collision_reward: -10.0,
            near_prob: 0.1,
            far_prob: 0.9,
            block_confusion: 0.0,
            discount: DEFAULT_DISCOUNT,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("grid {}x{} is empty", self.width, self.height));
        }
        let inside = |c: &Cell| c.x < self.width && c.y < self.height;
        if !inside(&self.goal_cell) {
            return bad(format!("goal {:?} outside grid", self.goal_cell));
        }
        if self.start_cells.is_empty() {
            return bad("no start cells".into());
        }
        for (c, w) in &self.start_cells {
            if !inside(c) {
                return bad(format!("start {c:?} outside grid"));
            }
            if !(*w > 0.0) || !w.is_finite() {
                return bad(format!("start weight {w} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.near_prob) || !(0.0..=1.0).contains(&self.far_prob) {
            return bad("move probabilities must lie in [0, 1]".into());
        }
        if (self.near_prob + self.far_prob - 1.0).abs() > 1e-9 {
            return bad(format!(
                "near_prob + far_prob = {}, expected 1",
                self.near_prob + self.far_prob
            ));
        }
        if !(0.0..1.0).contains(&self.block_confusion) {
            return bad(format!("block_confusion {} outside [0, 1)", self.block_confusion));
        }
        Ok(())
    }
}

/// A gridworld POMDP together with its cell layout.
#[derive(Debug, Clone)]
pub struct Gridworld {
    spec: GridSpec,
    model: PomdpModel,
}

impl Gridworld {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn model(&self) -> &PomdpModel {
        &self.model
    }

    pub fn into_model(self) -> PomdpModel {
        self.model
    }

    pub fn num_cells(&self) -> usize {
        self.spec.width * self.spec.height
    }

    pub fn terminal(&self) -> StateId {
        self.num_cells()
    }

    pub fn state_of(&self, cell: Cell) -> StateId {
        cell.y * self.spec.width + cell.x
    }

    /// `None` for the absorbing terminal state.
    pub fn cell_of(&self, s: StateId) -> Option<Cell> {
        (s < self.num_cells()).then(|| Cell::new(s % self.spec.width, s / self.spec.width))
    }

    pub fn goal_state(&self) -> StateId {
        self.state_of(self.spec.goal_cell)
    }

    pub fn is_goal_or_terminal(&self, s: StateId) -> bool {
        s == self.goal_state() || s == self.terminal()
    }

    pub fn block_observation(&self, cell: Cell) -> ObsId {
        block_observation(&self.spec, cell)
    }

    /// Cell centers for every state; the terminal state has no position.
    pub fn geometry(&self) -> StateGeometry {
        let mut positions: Vec<Option<Point>> = (0..self.num_cells())
            .map(|s| self.cell_of(s).map(|c| c.center()))
            .collect();
        positions.push(None);
        StateGeometry::new(positions, 0.5)
    }

    /// Manhattan distance to the goal; used by the goal-biased rollout.
    pub fn goal_distance(&self, s: StateId) -> usize {
        match self.cell_of(s) {
            Some(c) => c.x.abs_diff(self.spec.goal_cell.x) + c.y.abs_diff(self.spec.goal_cell.y),
            None => 0,
        }
    }
}

fn blocks_across(spec: &GridSpec) -> (usize, usize) {
    (spec.width.div_ceil(BLOCK), spec.height.div_ceil(BLOCK))
}

pub fn block_observation(spec: &GridSpec, cell: Cell) -> ObsId {
    let (bw, _) = blocks_across(spec);
    let (bx, by) = block_of(cell);
    by * bw + bx
}

/// Landing cell after moving `steps` cells in direction `action`, clamped.
pub fn shifted(spec: &GridSpec, cell: Cell, action: usize, steps: usize) -> Cell {
    match action {
        EAST => Cell::new((cell.x + steps).min(spec.width - 1), cell.y),
        WEST => Cell::new(cell.x.saturating_sub(steps), cell.y),
        NORTH => Cell::new(cell.x, (cell.y + steps).min(spec.height - 1)),
        SOUTH => Cell::new(cell.x, cell.y.saturating_sub(steps)),
        _ => unreachable!("gridworld has four actions"),
    }
}

pub fn build_gridworld(spec: &GridSpec) -> Result<Gridworld, GridError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let cells = w * h;
    let terminal = cells;
    let (bw, bh) = blocks_across(spec);
    let terminal_obs = bw * bh;

    let mut state_names: Vec<String> = (0..cells).map(|s| format!("c{}_{}", s % w, s / w)).collect();
    state_names.push("terminal".into());
    let mut obs_names: Vec<String> = (0..bw * bh)
        .map(|o| format!("block{}_{}", o % bw, o / bw))
        .collect();
    obs_names.push("terminal".into());
    let mut b = PomdpBuilder::new(
        state_names,
        ACTION_NAMES.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        obs_names,
    );
    b.discount(spec.discount);

    let goal = spec.goal_cell.y * w + spec.goal_cell.x;
    for s in 0..cells {
        let cell = Cell::new(s % w, s / w);
        for a in 0..ACTION_NAMES.len() {
            if s == goal {
                b.transition(s, a, terminal, 1.0).reward(s, a, spec.goal_reward);
                continue;
            }
            let near = shifted(spec, cell, a, 1);
            let far = shifted(spec, cell, a, 2);
            b.transition(s, a, near.y * w + near.x, spec.near_prob);
            b.transition(s, a, far.y * w + far.x, spec.far_prob);
            b.reward(s, a, spec.step_reward);
        }

        let (bx, by) = block_of(cell);
        let own = by * bw + bx;
        let neighbours: Vec<ObsId> = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)]
            .iter()
            .filter_map(|&(dx, dy)| {
                let (nx, ny) = (bx as i64 + dx, by as i64 + dy);
                (nx >= 0 && ny >= 0 && (nx as usize) < bw && (ny as usize) < bh)
                    .then(|| ny as usize * bw + nx as usize)
            })
            .collect();
        if spec.block_confusion > 0.0 && !neighbours.is_empty() {
            b.observation_all_actions(s, own, 1.0 - spec.block_confusion);
            let share = spec.block_confusion / neighbours.len() as f64;
            for &o in &neighbours {
                b.observation_all_actions(s, o, share);
            }
        } else {
            b.observation_all_actions(s, own, 1.0);
        }
    }
    for a in 0..ACTION_NAMES.len() {
        b.transition(terminal, a, terminal, 1.0).reward(terminal, a, 0.0);
    }
    b.observation_all_actions(terminal, terminal_obs, 1.0);
    b.initial(
        spec.start_cells
            .iter()
            .map(|(c, wgt)| (c.y * w + c.x, *wgt))
            .collect(),
    );
    let model = b.build()?;
    Ok(Gridworld {
        spec: spec.clone(),
        model,
    })
}
