use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::acp::{AcpConfig, AcpSet};
use crate::geom::Point;
use crate::trajectory::{
    synth_trajectories, Boundary, Predictor, PredictorKind, SynthModel, SynthSpec, Timestep,
};

/// ACP-only simulation: agents with noisy constant velocity, a predictor, and
/// per-horizon violation counts of `β_{t+τ} > C_{t+τ}^τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub steps: usize,
    pub horizon: usize,
    pub agents: usize,
    pub noise_sigma: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub predictor: PredictorKind,
    pub acp: AcpConfig,
    pub seed: u64,
    /// Keep every scored sample in the report.
    pub record_trace: bool,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            horizon: 3,
            agents: 3,
            noise_sigma: 0.1,
            speed_min: 0.3,
            speed_max: 0.8,
            predictor: PredictorKind::ConstantVelocity,
            acp: AcpConfig::default(),
            seed: 0,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCoverage {
    pub tau: usize,
    /// Scores compared against a finite radius.
    pub scored: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub mean_radius: f64,
    pub final_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSample {
    pub t: usize,
    pub tau: usize,
    pub beta: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub steps: usize,
    pub delta: f64,
    pub per_tau: Vec<TauCoverage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<CoverageSample>,
}

pub fn run_coverage(cfg: &CoverageConfig) -> Result<CoverageReport, HarnessError> {
    if cfg.steps == 0 || cfg.horizon == 0 || cfg.agents == 0 {
        return Err(HarnessError::Config("steps, horizon and agents must be positive".into()));
    }
    let spec = SynthSpec {
        model: SynthModel::ConstantVelocityWithNoise {
            speed_min: cfg.speed_min,
            speed_max: cfg.speed_max,
            noise_sigma: cfg.noise_sigma,
        },
        agents: cfg.agents,
        length: cfg.steps + cfg.horizon + 1,
        min: Point::new(0.0, 0.0),
        max: Point::new(19.0, 19.0),
        boundary: Boundary::Unbounded,
    };
    let source = synth_trajectories(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut acp = AcpSet::new(cfg.horizon, cfg.acp.clone())?;
    let window = cfg.predictor.window();
    let h = cfg.horizon;
    // issued[τ-1][t] = radius issued for time t.
    let mut issued = vec![vec![f64::INFINITY; cfg.steps + h + 1]; h];
    let mut scored = vec![0usize; h];
    let mut violations = vec![0usize; h];
    let mut radius_sum = vec![0.0; h];
    let mut trace = Vec::new();
    for t in 0..cfg.steps {
        let actual = source.agents_at_unchecked(t as Timestep);
        let report = acp.step_lenient(&actual);
        for d in &report.per_tau {
            let i = d.tau - 1;
            if let Some(beta) = d.beta {
                let r = issued[i][t];
                if r.is_finite() {
                    scored[i] += 1;
                    radius_sum[i] += r;
                    if beta > r {
                        violations[i] += 1;
                    }
                    if cfg.record_trace {
                        trace.push(CoverageSample { t, tau: d.tau, beta, radius: r });
                    }
                }
            }
            issued[i][t + d.tau] = d.radius;
        }
        if t + 1 >= window {
            acp.record_prediction(cfg.predictor.predict(&source.history(t as Timestep, window), h)?);
        }
    }
    let per_tau = (1..=h)
        .map(|tau| {
            let i = tau - 1;
            TauCoverage {
                tau,
                scored: scored[i],
                violations: violations[i],
                violation_rate: if scored[i] == 0 { f64::NAN } else { violations[i] as f64 / scored[i] as f64 },
                mean_radius: if scored[i] == 0 { f64::NAN } else { radius_sum[i] / scored[i] as f64 },
                final_lambda: acp.tracker(tau).lambda(),
            }
        })
        .collect();
    Ok(CoverageReport {
        steps: cfg.steps,
        delta: cfg.acp.delta,
        per_tau,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_counts_are_consistent() {
        let r = run_coverage(&CoverageConfig {
            steps: 2000,
            ..CoverageConfig::default()
        })
        .unwrap();
        assert_eq!(r.per_tau.len(), 3);
        for c in &r.per_tau {
            assert!(c.violations <= c.scored);
            assert!(c.scored > 1900, "{}", c.scored);
            assert!(c.mean_radius > 0.0);
        }
    }

    #[test]
    fn noiseless_agents_give_vanishing_radii() {
        let r = run_coverage(&CoverageConfig {
            steps: 500,
            noise_sigma: 0.0,
            ..CoverageConfig::default()
        })
        .unwrap();
        for c in &r.per_tau {
            assert!(c.mean_radius < 1e-9, "tau {}: {}", c.tau, c.mean_radius);
        }
    }

    #[test]
    fn trace_matches_counts() {
        let r = run_coverage(&CoverageConfig {
            steps: 1000,
            record_trace: true,
            ..CoverageConfig::default()
        })
        .unwrap();
        for c in &r.per_tau {
            let samples: Vec<_> = r.trace.iter().filter(|s| s.tau == c.tau).collect();
            assert_eq!(samples.len(), c.scored);
            assert_eq!(samples.iter().filter(|s| s.beta > s.radius).count(), c.violations);
        }
    }

    #[test]
    fn rejects_empty_runs() {
        assert!(run_coverage(&CoverageConfig { steps: 0, ..CoverageConfig::default() }).is_err());
    }
}
