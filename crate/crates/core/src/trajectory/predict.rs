use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentId, JointAgentState, PredictionSet, Timestep, TrajectoryError};
use crate::geom::Point;

/// Produces `H`-step joint predictions from a window of past joint states.
pub trait Predictor {
    /// `history` is ordered oldest first; its last element is the current
    /// state and fixes `made_at`.
    fn predict(
        &self,
        history: &[JointAgentState],
        horizon: usize,
    ) -> Result<PredictionSet, TrajectoryError>;

    /// Number of past joint states the predictor looks at.
    fn window(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorKind {
    ConstantPosition,
    ConstantVelocity,
    LeastSquares { window: usize },
    #[serde(skip)]
    External(ExternalPredictions),
}

impl Default for PredictorKind {
    fn default() -> Self {
        PredictorKind::ConstantVelocity
    }
}

/// An agent's observations inside the window, oldest first.
fn track_of(history: &[JointAgentState], id: AgentId) -> Vec<(Timestep, Point)> {
    history
        .iter()
        .filter_map(|x| x.get(id).map(|p| (x.timestep, p)))
        .collect()
}

fn least_squares(track: &[(Timestep, Point)], at: Timestep) -> Point {
    let n = track.len() as f64;
    let t0 = track[track.len() - 1].0;
    // Center time on the last sample for conditioning.
    let ts: Vec<f64> = track.iter().map(|&(t, _)| (t - t0) as f64).collect();
    let mean_t = ts.iter().sum::<f64>() / n;
    let mean_x = track.iter().map(|(_, p)| p.x).sum::<f64>() / n;
    let mean_y = track.iter().map(|(_, p)| p.y).sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - mean_t).powi(2)).sum();
    let stx: f64 = ts.iter().zip(track).map(|(t, (_, p))| (t - mean_t) * (p.x - mean_x)).sum();
    let sty: f64 = ts.iter().zip(track).map(|(t, (_, p))| (t - mean_t) * (p.y - mean_y)).sum();
    let (vx, vy) = (stx / stt, sty / stt);
    let dt = (at - t0) as f64 - mean_t;
    Point::new(mean_x + vx * dt, mean_y + vy * dt)
}

impl PredictorKind {
    fn min_history(&self) -> usize {
        match self {
            PredictorKind::ConstantPosition | PredictorKind::External(_) => 1,
            PredictorKind::ConstantVelocity | PredictorKind::LeastSquares { .. } => 2,
        }
    }

    fn predict_agent(&self, track: &[(Timestep, Point)], at: Timestep) -> Point {
        let (t_last, last) = track[track.len() - 1];
        if track.len() < 2 {
            // Agents seen once are held in place.
            return last;
        }
        match self {
            PredictorKind::ConstantVelocity => {
                let (t_prev, prev) = track[track.len() - 2];
                let v = (last - prev) * (1.0 / (t_last - t_prev) as f64);
                last + v * (at - t_last) as f64
            }
            PredictorKind::LeastSquares { .. } => least_squares(track, at),
            _ => last,
        }
    }
}

impl Predictor for PredictorKind {
    fn predict(
        &self,
        history: &[JointAgentState],
        horizon: usize,
    ) -> Result<PredictionSet, TrajectoryError> {
        let needed = self.min_history();
        if history.len() < needed {
            return Err(TrajectoryError::HistoryTooShort {
                needed,
                got: history.len(),
            });
        }
        let current = &history[history.len() - 1];
        let t = current.timestep;
        if let PredictorKind::External(ext) = self {
            return ext.lookup(t, horizon);
        }
        let window = match self {
            PredictorKind::LeastSquares { window } => (*window).max(2).min(history.len()),
            _ => history.len(),
        };
        let recent = &history[history.len() - window..];
        let tracks: Vec<(AgentId, Vec<(Timestep, Point)>)> = current
            .agents()
            .iter()
            .map(|&(id, _)| (id, track_of(recent, id)))
            .collect();
        let predicted = (1..=horizon)
            .map(|tau| {
                let at = t + tau as Timestep;
                JointAgentState::new(
                    at,
                    tracks
                        .iter()
                        .map(|(id, track)| (*id, self.predict_agent(track, at)))
                        .collect(),
                )
            })
            .collect();
        Ok(PredictionSet::new(t, predicted))
    }

    fn window(&self) -> usize {
        match self {
            PredictorKind::ConstantPosition | PredictorKind::External(_) => 1,
            PredictorKind::ConstantVelocity => 2,
            PredictorKind::LeastSquares { window } => (*window).max(2),
        }
    }
}

/// Precomputed predictions keyed by `(t, tau)`, replayed verbatim.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalPredictions {
    rows: BTreeMap<(Timestep, usize), Vec<(AgentId, Point)>>,
}

impl ExternalPredictions {
    pub fn insert(&mut self, t: Timestep, tau: usize, agent: AgentId, p: Point) {
        self.rows.entry((t, tau)).or_default().push((agent, p));
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn lookup(&self, t: Timestep, horizon: usize) -> Result<PredictionSet, TrajectoryError> {
        let predicted = (1..=horizon)
            .map(|tau| {
                self.rows
                    .get(&(t, tau))
                    .map(|agents| JointAgentState::new(t + tau as Timestep, agents.clone()))
                    .ok_or(TrajectoryError::MissingPrediction { t, tau })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PredictionSet::new(t, predicted))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[(f64, f64)]) -> Vec<JointAgentState> {
        points
            .iter()
            .enumerate()
            .map(|(t, &(x, y))| JointAgentState::from_positions(t as Timestep, &[Point::new(x, y)]))
            .collect()
    }

    #[test]
    fn constant_velocity_extrapolates() {
        let p = PredictorKind::ConstantVelocity.predict(&line(&[(0.0, 0.0), (1.0, 0.0)]), 2).unwrap();
        assert_eq!(p.made_at, 1);
        assert_eq!(p.at(1).get(0), Some(Point::new(2.0, 0.0)));
        assert_eq!(p.at(2).get(0), Some(Point::new(3.0, 0.0)));
        assert_eq!(p.at(2).timestep, 3);
    }

    #[test]
    fn constant_position_holds() {
        let p = PredictorKind::ConstantPosition.predict(&line(&[(5.0, 5.0)]), 3).unwrap();
        assert_eq!(p.horizon(), 3);
        assert!(p.iter().all(|x| x.get(0) == Some(Point::new(5.0, 5.0))));
    }

    #[test]
    fn least_squares_matches_velocity_on_a_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (1.5 + 0.7 * i as f64, -2.0 + 0.3 * i as f64)).collect();
        let hist = line(&pts);
        let ls = PredictorKind::LeastSquares { window: 5 }.predict(&hist, 3).unwrap();
        let cv = PredictorKind::ConstantVelocity.predict(&hist, 3).unwrap();
        for tau in 1..=3 {
            let (a, b) = (ls.at(tau).get(0).unwrap(), cv.at(tau).get(0).unwrap());
            assert!(a.distance(&b) < 1e-9, "tau {tau}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn short_history_is_rejected() {
        assert_eq!(
            PredictorKind::ConstantVelocity.predict(&line(&[(0.0, 0.0)]), 1),
            Err(TrajectoryError::HistoryTooShort { needed: 2, got: 1 })
        );
    }

    #[test]
    fn new_agents_are_held_in_place() {
        let hist = vec![
            JointAgentState::new(0, vec![(1, Point::new(0.0, 0.0))]),
            JointAgentState::new(1, vec![(1, Point::new(1.0, 0.0)), (2, Point::new(9.0, 9.0))]),
        ];
        let p = PredictorKind::ConstantVelocity.predict(&hist, 2).unwrap();
        assert_eq!(p.at(2).get(2), Some(Point::new(9.0, 9.0)));
        assert_eq!(p.at(2).get(1), Some(Point::new(3.0, 0.0)));
        assert_eq!(p.at(1).len(), 2);
    }

    #[test]
    fn external_replay() {
        let mut ext = ExternalPredictions::default();
        ext.insert(4, 1, 3, Point::new(1.0, 2.0));
        ext.insert(4, 2, 3, Point::new(1.5, 2.5));
        let kind = PredictorKind::External(ext);
        let hist = vec![JointAgentState::new(4, vec![(3, Point::new(0.0, 0.0))])];
        let p = kind.predict(&hist, 2).unwrap();
        assert_eq!(p.at(2).get(3), Some(Point::new(1.5, 2.5)));
        assert_eq!(
            kind.predict(&hist, 3),
            Err(TrajectoryError::MissingPrediction { t: 4, tau: 3 })
        );
    }
}
