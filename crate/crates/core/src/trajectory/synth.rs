//! Synthetic agent populations for desk-scale experiments.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgentId, Timestep, TrajectorySource};
use crate::geom::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthModel {
    /// Gaussian increments with standard deviation `step_sigma` per axis.
    RandomWalk { step_sigma: f64 },
    /// Straight-line motion at a speed drawn from `[speed_min, speed_max]`,
    /// plus i.i.d. Gaussian step noise.
    ConstantVelocityWithNoise {
        speed_min: f64,
        speed_max: f64,
        noise_sigma: f64,
    },
    /// Walks toward uniformly drawn waypoints inside the bounds.
    Waypoint { speed: f64, noise_sigma: f64 },
}

/// What happens when an agent leaves the bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Unbounded,
    /// Mirror the position back inside and flip the velocity component.
    Reflect,
    /// End the agent's track and start a fresh agent on a random edge.
    Respawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub model: SynthModel,
    /// Number of simultaneous agents.
    pub agents: usize,
    /// Number of timesteps, starting at 0.
    pub length: usize,
    pub min: Point,
    pub max: Point,
    pub boundary: Boundary,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            model: SynthModel::ConstantVelocityWithNoise {
                speed_min: 0.3,
                speed_max: 0.8,
                noise_sigma: 0.1,
            },
            agents: 5,
            length: 300,
            min: Point::new(0.0, 0.0),
            max: Point::new(19.0, 19.0),
            boundary: Boundary::Respawn,
        }
    }
}

struct Walker {
    id: AgentId,
    pos: Point,
    vel: Point,
    waypoint: Point,
}

fn uniform_point<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Point {
    let x = if spec.max.x > spec.min.x { rng.random_range(spec.min.x..spec.max.x) } else { spec.min.x };
    let y = if spec.max.y > spec.min.y { rng.random_range(spec.min.y..spec.max.y) } else { spec.min.y };
    Point::new(x, y)
}

fn edge_point<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Point {
    let p = uniform_point(spec, rng);
    match rng.random_range(0..4) {
        0 => Point::new(spec.min.x, p.y),
        1 => Point::new(spec.max.x, p.y),
        2 => Point::new(p.x, spec.min.y),
        _ => Point::new(p.x, spec.max.y),
    }
}

fn heading<R: Rng + ?Sized>(from: Point, to: Point, speed: f64, rng: &mut R) -> Point {
    let d = to - from;
    let norm = d.x.hypot(d.y);
    if norm < 1e-12 {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        Point::new(angle.cos() * speed, angle.sin() * speed)
    } else {
        d * (speed / norm)
    }
}

impl SynthSpec {
    fn speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.model {
            SynthModel::ConstantVelocityWithNoise {
                speed_min,
                speed_max,
                ..
            } if speed_max > speed_min => rng.random_range(speed_min..speed_max),
            SynthModel::ConstantVelocityWithNoise { speed_min, .. } => speed_min,
            SynthModel::Waypoint { speed, .. } => speed,
            SynthModel::RandomWalk { .. } => 0.0,
        }
    }

    fn noise(&self) -> f64 {
        match self.model {
            SynthModel::RandomWalk { step_sigma } => step_sigma,
            SynthModel::ConstantVelocityWithNoise { noise_sigma, .. } => noise_sigma,
            SynthModel::Waypoint { noise_sigma, .. } => noise_sigma,
        }
    }

    fn spawn<R: Rng + ?Sized>(&self, id: AgentId, on_edge: bool, rng: &mut R) -> Walker {
        let pos = if on_edge { edge_point(self, rng) } else { uniform_point(self, rng) };
        let target = uniform_point(self, rng);
        let speed = self.speed(rng);
        let vel = if on_edge {
            heading(pos, target, speed, rng)
        } else {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            Point::new(angle.cos() * speed, angle.sin() * speed)
        };
        Walker {
            id,
            pos,
            vel,
            waypoint: target,
        }
    }

    fn inside(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

fn reflect(v: f64, lo: f64, hi: f64, vel: &mut f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let mut v = v;
    // A single bounce suffices unless the step exceeds the box width.
    for _ in 0..4 {
        if v < lo {
            v = 2.0 * lo - v;
            *vel = -*vel;
        } else if v > hi {
            v = 2.0 * hi - v;
            *vel = -*vel;
        } else {
            break;
        }
    }
    v.clamp(lo, hi)
}

/// Generates `spec.agents` simultaneous agents over `spec.length` steps.
/// Deterministic for a given rng state.
pub fn synth_trajectories<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> TrajectorySource {
    let mut tracks: BTreeMap<AgentId, Vec<(Timestep, Point)>> = BTreeMap::new();
    if spec.agents == 0 || spec.length == 0 {
        return TrajectorySource::empty();
    }
    let noise = Normal::new(0.0, spec.noise().max(0.0)).expect("finite sigma");
    let sigma_positive = spec.noise() > 0.0;
    let mut next_id = spec.agents as AgentId;
    let mut walkers: Vec<Walker> = (0..spec.agents)
        .map(|i| spec.spawn(i as AgentId, false, rng))
        .collect();
    for t in 0..spec.length as Timestep {
        for w in &mut walkers {
            tracks.entry(w.id).or_default().push((t, w.pos));
        }
        for w in &mut walkers {
            let (nx, ny) = if sigma_positive {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            if let SynthModel::Waypoint { speed, .. } = spec.model {
                if w.pos.distance(&w.waypoint) <= speed {
                    w.waypoint = uniform_point(spec, rng);
                }
                w.vel = heading(w.pos, w.waypoint, speed, rng);
            }
            let mut next = w.pos + w.vel + Point::new(nx, ny);
            match spec.boundary {
                Boundary::Unbounded => {}
                Boundary::Reflect => {
                    next.x = reflect(next.x, spec.min.x, spec.max.x, &mut w.vel.x);
                    next.y = reflect(next.y, spec.min.y, spec.max.y, &mut w.vel.y);
                }
                Boundary::Respawn => {
                    if !spec.inside(next) {
                        *w = spec.spawn(next_id, true, rng);
                        next_id += 1;
                        continue;
                    }
                }
            }
            w.pos = next;
        }
    }
    TrajectorySource::new(tracks).expect("generated tracks are time ordered")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_agents_is_empty() {
        let spec = SynthSpec {
            agents: 0,
            ..SynthSpec::default()
        };
        let src = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(src.is_empty());
        assert_eq!(src.span(), None);
    }

    #[test]
    fn noiseless_constant_velocity_is_linear() {
        let spec = SynthSpec {
            model: SynthModel::ConstantVelocityWithNoise {
                speed_min: 0.5,
                speed_max: 1.0,
                noise_sigma: 0.0,
            },
            agents: 3,
            length: 40,
            boundary: Boundary::Unbounded,
            ..SynthSpec::default()
        };
        let src = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        for track in src.tracks().values() {
            assert_eq!(track.len(), 40);
            let v = track[1].1 - track[0].1;
            for w in track.windows(2) {
                let d = w[1].1 - w[0].1;
                assert!((d.x - v.x).abs() < 1e-12 && (d.y - v.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        for model in [
            SynthModel::RandomWalk { step_sigma: 0.2 },
            SynthModel::Waypoint {
                speed: 0.6,
                noise_sigma: 0.05,
            },
            SynthSpec::default().model,
        ] {
            let spec = SynthSpec {
                model,
                ..SynthSpec::default()
            };
            let a = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(42));
            let b = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(42));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bounded_populations_stay_inside() {
        for boundary in [Boundary::Reflect, Boundary::Respawn] {
            let spec = SynthSpec {
                boundary,
                agents: 6,
                length: 200,
                ..SynthSpec::default()
            };
            let src = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(8));
            for t in 0..200 {
                let x = src.agents_at(t).unwrap();
                assert_eq!(x.len(), 6, "{boundary:?} t={t}");
                assert!(x.positions().all(|p| spec.inside(*p)));
            }
        }
    }
}
