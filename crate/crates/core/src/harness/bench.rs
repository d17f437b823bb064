use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::episode::{EpisodeResult, Environment};
use super::metrics::{mean_std, paired_t_test, PairedTTest};
use super::{AgentSource, ExperimentConfig, HarnessError, Method};

/// A grid of environments × methods × agent counts over paired seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub environments: Vec<ExperimentConfig>,
    pub methods: Vec<Method>,
    /// Synthetic agent counts; ignored for recorded sources. Empty keeps
    /// each environment's own count.
    pub agent_counts: Vec<usize>,
    /// Overrides each environment's `runs` when set.
    pub runs: Option<usize>,
    /// Run episodes on the rayon pool when the `parallel` feature is on.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            environments: vec![ExperimentConfig::desk()],
            methods: Method::ALL.to_vec(),
            agent_counts: vec![5, 10],
            runs: None,
            parallel: true,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for env in &cfg.environments {
            env.validate()?;
        }
        Ok(cfg)
    }

    /// Every `(environment, method, N)` configuration with its run count.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for env in &self.environments {
            let counts: Vec<Option<usize>> = match (&env.agents, self.agent_counts.is_empty()) {
                (AgentSource::Synthetic(_), false) => self.agent_counts.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for n in counts {
                for &m in &self.methods {
                    let mut cfg = env.clone();
                    cfg.method = m;
                    if let (Some(n), AgentSource::Synthetic(spec)) = (n, &mut cfg.agents) {
                        spec.agents = n;
                    }
                    if let Some(r) = self.runs {
                        cfg.runs = r;
                    }
                    out.push(cfg);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    /// Ordered by configuration, then seed.
    pub episodes: Vec<EpisodeResult>,
}

/// Runs every configuration of the grid; run `i` of each configuration uses
/// seed `cfg.seed + i`, so methods see the same agents.
pub fn run_benchmark(bench: &BenchConfig) -> Result<BenchResult, HarnessError> {
    let configs = bench.expand();
    if configs.is_empty() {
        return Err(HarnessError::Config("benchmark has no configurations".into()));
    }
    let envs = configs
        .into_iter()
        .map(Environment::new)
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = envs
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.config().runs as u64).map(move |r| (i, e.config().seed.wrapping_add(r))))
        .collect();
    let run = |&(i, seed): &(usize, u64)| envs[i].run(seed);
    let episodes: Vec<Result<EpisodeResult, HarnessError>> = run_jobs(&jobs, bench.parallel, run);
    Ok(BenchResult {
        episodes: episodes.into_iter().collect::<Result<_, _>>()?,
    })
}

#[cfg(feature = "parallel")]
fn run_jobs<J: Sync, T: Send>(jobs: &[J], parallel: bool, f: impl Fn(&J) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    if parallel {
        jobs.par_iter().map(f).collect()
    } else {
        jobs.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_jobs<J: Sync, T: Send>(jobs: &[J], _parallel: bool, f: impl Fn(&J) -> T) -> Vec<T> {
    jobs.iter().map(f).collect()
}

/// Summary of one `(environment, method, N)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub environment: String,
    pub method: Method,
    pub agents: usize,
    pub runs: usize,
    pub safety_mean: f64,
    pub safety_std: f64,
    pub steps_mean: f64,
    pub steps_std: f64,
    pub success_rate: f64,
    /// Over episodes that met at least one agent.
    pub min_distance_mean: f64,
    pub min_distance_std: f64,
    pub collisions_mean: f64,
    pub deadlocks: usize,
    pub certificate_violations: usize,
    pub soundness_violations: usize,
    pub failures: usize,
}

type Key = (String, Method, usize);

fn group(episodes: &[EpisodeResult]) -> BTreeMap<Key, Vec<&EpisodeResult>> {
    let mut map: BTreeMap<Key, Vec<&EpisodeResult>> = BTreeMap::new();
    for e in episodes {
        map.entry((e.environment.clone(), e.method, e.agents)).or_default().push(e);
    }
    map
}

pub fn aggregate(episodes: &[EpisodeResult]) -> Vec<AggregateRow> {
    group(episodes)
        .into_iter()
        .map(|((environment, method, agents), eps)| {
            let col = |f: &dyn Fn(&EpisodeResult) -> f64| eps.iter().map(|e| f(e)).collect::<Vec<f64>>();
            let (safety_mean, safety_std) = mean_std(&col(&|e| e.metrics.safety_rate));
            let (steps_mean, steps_std) = mean_std(&col(&|e| e.steps as f64));
            let dists: Vec<f64> = col(&|e| e.metrics.min_distance).into_iter().filter(|d| d.is_finite()).collect();
            let (min_distance_mean, min_distance_std) = if dists.is_empty() {
                (f64::INFINITY, 0.0)
            } else {
                mean_std(&dists)
            };
            AggregateRow {
                environment,
                method,
                agents,
                runs: eps.len(),
                safety_mean,
                safety_std,
                steps_mean,
                steps_std,
                success_rate: col(&|e| e.success as u8 as f64).iter().sum::<f64>() / eps.len() as f64,
                min_distance_mean,
                min_distance_std,
                collisions_mean: mean_std(&col(&|e| e.metrics.collisions as f64)).0,
                deadlocks: eps.iter().map(|e| e.deadlocks).sum(),
                certificate_violations: eps.iter().map(|e| e.certificate_violations).sum(),
                soundness_violations: eps.iter().map(|e| e.soundness_violations).sum(),
                failures: eps.iter().filter(|e| e.failure.is_some()).count(),
            }
        })
        .collect()
}

/// Paired comparison of safety rates between two methods on shared seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub environment: String,
    pub agents: usize,
    pub better: Method,
    pub worse: Method,
    pub test: PairedTTest,
}

/// Tests `shield-acp ≥ shield-no-acp ≥ no-shield` per environment and N.
pub fn paired_comparisons(episodes: &[EpisodeResult]) -> Vec<PairedComparison> {
    let groups = group(episodes);
    let envs: std::collections::BTreeSet<(String, usize)> =
        groups.keys().map(|(e, _, n)| (e.clone(), *n)).collect();
    let pairs = [
        (Method::ShieldAcp, Method::ShieldNoAcp),
        (Method::ShieldNoAcp, Method::NoShield),
        (Method::ShieldAcp, Method::NoShield),
    ];
    let mut out = Vec::new();
    for (env, n) in envs {
        for (better, worse) in pairs {
            let (Some(a), Some(b)) = (
                groups.get(&(env.clone(), better, n)),
                groups.get(&(env.clone(), worse, n)),
            ) else {
                continue;
            };
            let by_seed: BTreeMap<u64, f64> = b.iter().map(|e| (e.seed, e.metrics.safety_rate)).collect();
            let (xa, xb): (Vec<f64>, Vec<f64>) = a
                .iter()
                .filter_map(|e| by_seed.get(&e.seed).map(|&sb| (e.metrics.safety_rate, sb)))
                .unzip();
            if xa.is_empty() {
                continue;
            }
            out.push(PairedComparison {
                environment: env.clone(),
                agents: n,
                better,
                worse,
                test: paired_t_test(&xa, &xb),
            });
        }
    }
    out
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

pub const RAW_HEADER: [&str; 17] = [
    "environment",
    "method",
    "agents",
    "seed",
    "t",
    "frame",
    "x",
    "y",
    "constraint",
    "min_distance",
    "safe",
    "at_goal",
    "action",
    "observation",
    "deadlock",
    "radii",
    "checks",
];

/// Per-step rows of every episode. Contains no timings, so identical inputs
/// give identical bytes.
pub fn write_raw_csv<W: Write>(episodes: &[EpisodeResult], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_HEADER).map_err(csv_err)?;
    for e in episodes {
        for r in &e.records {
            let radii: Vec<String> = r.radii.iter().map(|&v| fmt_f(v)).collect();
            let checks = format!(
                "{}{}",
                r.certificate_ok.map_or("", |ok| if ok { "C" } else { "c" }),
                r.sound.map_or("", |ok| if ok { "S" } else { "s" })
            );
            w.write_record([
                e.environment.clone(),
                e.method.to_string(),
                e.agents.to_string(),
                e.seed.to_string(),
                r.t.to_string(),
                r.frame.to_string(),
                opt(r.x),
                opt(r.y),
                fmt_f(r.constraint),
                fmt_f(r.min_distance),
                ((r.constraint >= 0.0) as u8).to_string(),
                (r.at_goal as u8).to_string(),
                opt(r.action),
                opt(r.observation),
                (r.deadlock as u8).to_string(),
                radii.join(";"),
                checks,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

/// Wall-clock seconds per planning step, split into shield and search time.
pub fn write_timing_csv<W: Write>(episodes: &[EpisodeResult], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["environment", "method", "agents", "seed", "t", "shield_seconds", "plan_seconds"])
        .map_err(csv_err)?;
    for e in episodes {
        for r in e.records.iter().filter(|r| r.action.is_some()) {
            w.write_record([
                e.environment.clone(),
                e.method.to_string(),
                e.agents.to_string(),
                e.seed.to_string(),
                r.t.to_string(),
                format!("{:.6e}", r.shield_seconds),
                format!("{:.6e}", r.plan_seconds),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "environment",
        "method",
        "agents",
        "runs",
        "safety_mean",
        "safety_std",
        "steps_mean",
        "steps_std",
        "success_rate",
        "min_distance_mean",
        "min_distance_std",
        "collisions_mean",
        "deadlocks",
        "certificate_violations",
        "soundness_violations",
        "failures",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.environment.clone(),
            r.method.to_string(),
            r.agents.to_string(),
            r.runs.to_string(),
            fmt_f(r.safety_mean),
            fmt_f(r.safety_std),
            fmt_f(r.steps_mean),
            fmt_f(r.steps_std),
            fmt_f(r.success_rate),
            fmt_f(r.min_distance_mean),
            fmt_f(r.min_distance_std),
            fmt_f(r.collisions_mean),
            r.deadlocks.to_string(),
            r.certificate_violations.to_string(),
            r.soundness_violations.to_string(),
            r.failures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Fixed-width table of the aggregate rows.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut s = format!(
        "{:<14} {:<14} {:>3} {:>5} {:>15} {:>15} {:>8} {:>15} {:>6}\n",
        "environment", "method", "N", "runs", "safety", "steps", "success", "min distance", "dlock"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:<14} {:>3} {:>5} {:>7.4} ± {:<5.3} {:>7.2} ± {:<5.2} {:>8.2} {:>7.3} ± {:<5.3} {:>6}\n",
            r.environment,
            r.method.name(),
            r.agents,
            r.runs,
            r.safety_mean,
            r.safety_std,
            r.steps_mean,
            r.steps_std,
            r.success_rate,
            r.min_distance_mean,
            r.min_distance_std,
            r.deadlocks
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Cell, GridSpec};
    use crate::trajectory::SynthSpec;

    fn tiny() -> BenchConfig {
        let mut env = ExperimentConfig::desk();
        env.name = "tiny".into();
        env.grid = GridSpec {
            width: 8,
            height: 8,
            start_cells: vec![(Cell::new(0, 0), 1.0)],
            goal_cell: Cell::new(7, 7),
            ..GridSpec::default()
        };
        env.agents = AgentSource::Synthetic(SynthSpec {
            max: crate::geom::Point::new(7.0, 7.0),
            ..SynthSpec::default()
        });
        env.planner.num_simulations = 64;
        env.planner.particle_count = 200;
        env.max_steps = 40;
        BenchConfig {
            environments: vec![env],
            methods: Method::ALL.to_vec(),
            agent_counts: vec![2, 4],
            runs: Some(3),
            parallel: true,
        }
    }

    #[test]
    fn expand_covers_the_grid() {
        let cfgs = tiny().expand();
        assert_eq!(cfgs.len(), 6);
        assert_eq!(cfgs.iter().filter(|c| c.agents.num_agents() == Some(4)).count(), 3);
        assert!(cfgs.iter().all(|c| c.runs == 3));
    }

    #[test]
    fn single_run_echoes_episode() {
        let mut b = tiny();
        b.methods = vec![Method::ShieldAcp];
        b.agent_counts = vec![3];
        b.runs = Some(1);
        let res = run_benchmark(&b).unwrap();
        let rows = aggregate(&res.episodes);
        assert_eq!(rows.len(), 1);
        let e = &res.episodes[0];
        assert_eq!(rows[0].safety_mean, e.metrics.safety_rate);
        assert_eq!(rows[0].steps_mean, e.steps as f64);
        assert_eq!(rows[0].safety_std, 0.0);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let mut b = tiny();
        b.agent_counts = vec![3];
        let par = run_benchmark(&b).unwrap();
        b.parallel = false;
        let ser = run_benchmark(&b).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_raw_csv(&par.episodes, &mut x).unwrap();
        write_raw_csv(&ser.episodes, &mut y).unwrap();
        assert_eq!(x, y);
    }

    /// Recomputes every aggregate from the emitted raw CSV alone.
    #[test]
    fn aggregates_recompute_from_raw_csv() {
        let res = run_benchmark(&tiny()).unwrap();
        let rows = aggregate(&res.episodes);
        let mut raw = Vec::new();
        write_raw_csv(&res.episodes, &mut raw).unwrap();

        #[derive(Default)]
        struct Ep {
            steps: usize,
            safe: usize,
            rows: usize,
            min_d: f64,
            goal: bool,
        }
        let mut eps: BTreeMap<(String, String, usize, u64), Ep> = BTreeMap::new();
        let mut rdr = csv::Reader::from_reader(raw.as_slice());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let key = (rec[0].to_string(), rec[1].to_string(), rec[2].parse().unwrap(), rec[3].parse().unwrap());
            let e = eps.entry(key).or_insert_with(|| Ep { min_d: f64::INFINITY, ..Ep::default() });
            e.rows += 1;
            e.safe += rec[10].parse::<usize>().unwrap();
            e.goal |= &rec[11] == "1";
            if !rec[12].is_empty() {
                e.steps += 1;
            }
            let d: f64 = rec[9].parse().unwrap();
            e.min_d = e.min_d.min(d);
        }
        for row in &rows {
            let mine: Vec<&Ep> = eps
                .iter()
                .filter(|(k, _)| k.0 == row.environment && k.1 == row.method.name() && k.2 == row.agents)
                .map(|(_, v)| v)
                .collect();
            assert_eq!(mine.len(), row.runs);
            let n = mine.len() as f64;
            let safety: Vec<f64> = mine.iter().map(|e| e.safe as f64 / e.rows as f64).collect();
            let m = safety.iter().sum::<f64>() / n;
            let sd = (safety.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((m - row.safety_mean).abs() < 1e-12);
            assert!((sd - row.safety_std).abs() < 1e-12, "{sd} vs {}", row.safety_std);
            let steps = mine.iter().map(|e| e.steps as f64).sum::<f64>() / n;
            assert!((steps - row.steps_mean).abs() < 1e-12);
            let succ = mine.iter().filter(|e| e.goal).count() as f64 / n;
            assert!((succ - row.success_rate).abs() < 1e-12);
            let d: Vec<f64> = mine.iter().map(|e| e.min_d).filter(|d| d.is_finite()).collect();
            if !d.is_empty() {
                let dm = d.iter().sum::<f64>() / d.len() as f64;
                assert!((dm - row.min_distance_mean).abs() < 1e-9, "{dm} vs {}", row.min_distance_mean);
            }
        }
    }

    #[test]
    fn comparisons_pair_by_seed() {
        let res = run_benchmark(&tiny()).unwrap();
        let cmp = paired_comparisons(&res.episodes);
        assert_eq!(cmp.len(), 6);
        assert!(cmp.iter().all(|c| c.test.n == 3));
    }

    #[test]
    fn table_has_a_line_per_row() {
        let res = run_benchmark(&tiny()).unwrap();
        let rows = aggregate(&res.episodes);
        assert_eq!(render_table(&rows).lines().count(), rows.len() + 1);
        let mut out = Vec::new();
        write_aggregate_csv(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), rows.len() + 1);
    }

    #[test]
    fn bench_config_parses() {
        let b = BenchConfig::from_toml(
            "methods = [\"no-shield\", \"shield-acp\"]\nagent_counts = [5]\nruns = 2\n[[environments]]\nname = \"a\"\n",
        )
        .unwrap();
        assert_eq!(b.methods.len(), 2);
        assert_eq!(b.environments[0].name, "a");
        assert_eq!(b.expand().len(), 2);
    }
}
