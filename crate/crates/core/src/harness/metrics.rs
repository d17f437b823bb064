use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::geom::StateGeometry;
use crate::pomdp::StateId;
use crate::shield::{constraint_value, SafetyParams};
use crate::trajectory::JointAgentState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    /// Fraction of steps with `c(s_t, X_t) ≥ 0`.
    pub safety_rate: f64,
    /// `min_t min_i ‖s_t − X_{t,i}‖`; infinite when no agent was ever seen.
    pub min_distance: f64,
    pub collisions: usize,
}

/// Safety rate, minimum distance and collision count over a trace of robot
/// states and actual agent positions.
pub fn safety_metrics(
    geometry: &StateGeometry,
    trace: &[(StateId, JointAgentState)],
    params: &SafetyParams,
) -> SafetyMetrics {
    let mut safe = 0usize;
    let mut min_distance = f64::INFINITY;
    for (s, agents) in trace {
        let c = constraint_value(geometry, *s, agents.positions(), params);
        if c >= 0.0 {
            safe += 1;
        }
        min_distance = min_distance.min(c + params.epsilon);
    }
    let steps = trace.len();
    SafetyMetrics {
        safety_rate: if steps == 0 { 1.0 } else { safe as f64 / steps as f64 },
        min_distance,
        collisions: steps - safe,
    }
}

/// Sample mean and (n−1) standard deviation; std is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One-sided paired t-test of `a` against `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// p-value for `mean(a − b) > 0`.
    pub p_greater: f64,
    /// p-value for `mean(a − b) < 0`.
    pub p_less: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> PairedTTest {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let (mean, sd) = mean_std(&diffs);
    if n < 2 || sd == 0.0 {
        // Degenerate: every difference is identical.
        let (pg, pl) = if n == 0 || mean == 0.0 {
            (1.0, 1.0)
        } else if mean > 0.0 {
            (0.0, 1.0)
        } else {
            (1.0, 0.0)
        };
        let t = if mean == 0.0 || n == 0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return PairedTTest {
            n,
            mean_diff: if n == 0 { 0.0 } else { mean },
            t,
            p_greater: pg,
            p_less: pl,
        };
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n ≥ 2");
    PairedTTest {
        n,
        mean_diff: mean,
        t,
        p_greater: 1.0 - dist.cdf(t),
        p_less: dist.cdf(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;
    use crate::gridworld::{build_gridworld, GridSpec};

    fn grid() -> StateGeometry {
        build_gridworld(&GridSpec::default()).unwrap().geometry()
    }

    fn agents(t: i64, pts: &[(f64, f64)]) -> JointAgentState {
        let v: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        JointAgentState::from_positions(t, &v)
    }

    #[test]
    fn far_agents_are_always_safe() {
        let g = grid();
        let trace: Vec<_> = (0..5).map(|t| (t as usize, agents(t, &[(19.0, 19.0)]))).collect();
        let m = safety_metrics(&g, &trace, &SafetyParams::default());
        assert_eq!(m.safety_rate, 1.0);
        assert_eq!(m.collisions, 0);
        assert!(m.min_distance > 20.0);
    }

    #[test]
    fn one_violation_in_ten() {
        let g = grid();
        let mut trace: Vec<_> = (0..10).map(|t| (0usize, agents(t, &[(10.0, 10.0)]))).collect();
        trace[4].1 = agents(4, &[(0.2, 0.1)]);
        let m = safety_metrics(&g, &trace, &SafetyParams::default());
        assert!((m.safety_rate - 0.9).abs() < 1e-12);
        assert_eq!(m.collisions, 1);
        assert!((m.min_distance - 0.05f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_recompute() {
        use rand::{Rng, SeedableRng};
        let g = grid();
        let params = SafetyParams { epsilon: 1.5, ..SafetyParams::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let trace: Vec<(usize, JointAgentState)> = (0..200)
            .map(|t| {
                let n = rng.random_range(0..4);
                let pts: Vec<(f64, f64)> = (0..n)
                    .map(|_| (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)))
                    .collect();
                (rng.random_range(0..400), agents(t, &pts))
            })
            .collect();
        let m = safety_metrics(&g, &trace, &params);
        let (mut ok, mut dmin) = (0, f64::INFINITY);
        for (s, x) in &trace {
            let (sx, sy) = ((s % 20) as f64, (s / 20) as f64);
            let mut d = f64::INFINITY;
            for (_, p) in x.agents() {
                d = d.min(((sx - p.x).powi(2) + (sy - p.y).powi(2)).sqrt());
            }
            if d - 1.5 >= 0.0 {
                ok += 1;
            }
            dmin = dmin.min(d);
        }
        assert_eq!(m.collisions, 200 - ok);
        assert!((m.safety_rate - ok as f64 / 200.0).abs() < 1e-15);
        assert!((m.min_distance - dmin).abs() < 1e-12);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn t_test_reference_value() {
        // Differences 1,2,3,4,5: mean 3, sd √2.5, t = 3/(√2.5/√5) = 4.2426.
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &b);
        assert!((r.t - 18f64.sqrt()).abs() < 1e-9);
        // Upper tail of t(4) at 4.2426 is 0.00662.
        assert!((r.p_greater - 0.00662).abs() < 5e-5, "{}", r.p_greater);
        assert!((r.p_greater + r.p_less - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let same = paired_t_test(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!((same.p_greater, same.p_less), (1.0, 1.0));
        let shifted = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]);
        assert_eq!(shifted.p_greater, 0.0);
    }
}
