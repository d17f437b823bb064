use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dynshield::harness::{
    aggregate, paired_comparisons, render_table, run_benchmark, run_coverage, write_aggregate_csv,
    write_raw_csv, write_timing_csv, AgentSource, BenchConfig, CoverageConfig, Environment,
    EpisodeResult, ExperimentConfig, Method,
};
use dynshield::pomdp::{load_model, BeliefSupport};
use dynshield::shield::{verify_certificate, Shield, UnsafeSets};

#[derive(Parser)]
#[command(name = "dynshield", version, about = "Shielded POMCP among dynamic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode with a per-step log.
    Run(RunArgs),
    /// Run an environment × method × N grid and write CSV results.
    Bench(BenchArgs),
    /// Check shield certificates and soundness over episodes or a model file.
    Validate(ValidateArgs),
    /// ACP-only coverage simulation.
    Coverage(CoverageArgs),
}

/// Experiment selection plus flag overrides applied on top of it.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML experiment file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in preset: `default` (full-scale) or `desk`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of synthetic agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Recorded `frame_id,agent_id,x,y` trajectories instead of synthetic agents.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// World-to-grid scale for recorded trajectories.
    #[arg(long)]
    scale: Option<f64>,
    /// Keep every n-th recorded frame.
    #[arg(long)]
    stride: Option<i64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// ACP window length K.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    simulations: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    warmup_frames: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => {
                ExperimentConfig::preset(name).with_context(|| format!("unknown preset '{name}'"))?
            }
            (None, None) => ExperimentConfig::desk(),
        };
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(path) = &self.trajectories {
            let mut options = match &cfg.agents {
                AgentSource::Csv { options, .. } => options.clone(),
                AgentSource::Synthetic(_) => Default::default(),
            };
            if let Some(s) = self.scale {
                options.scale = s;
            }
            if let Some(s) = self.stride {
                options.frame_stride = s;
            }
            cfg.agents = AgentSource::Csv {
                path: path.clone(),
                options,
                start: 0,
            };
        }
        if let Some(n) = self.agents {
            match &mut cfg.agents {
                AgentSource::Synthetic(spec) => spec.agents = n,
                AgentSource::Csv { .. } => bail!("--agents applies to synthetic agents only"),
            }
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.epsilon {
            cfg.safety.epsilon = v;
        }
        if let Some(v) = self.delta {
            cfg.acp.delta = v;
        }
        if let Some(v) = self.alpha {
            cfg.acp.alpha = v;
        }
        if let Some(v) = self.window {
            cfg.acp.window_size = v;
        }
        if let Some(v) = self.simulations {
            cfg.planner.num_simulations = v;
        }
        if let Some(v) = self.particles {
            cfg.planner.particle_count = v;
        }
        if let Some(v) = self.warmup_frames {
            cfg.warmup_frames = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Raw per-step CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Per-step plot data and shield snapshots as JSON.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Episode summary as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Suppress the per-step log.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML benchmark file with `[[environments]]` tables.
    #[arg(short, long)]
    bench: Option<PathBuf>,
    /// Experiment used as the single environment when no benchmark file is given.
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Comma-separated synthetic agent counts.
    #[arg(long, value_delimiter = ',')]
    agent_counts: Option<Vec<usize>>,
    #[arg(long)]
    runs: Option<usize>,
    /// Run episodes one after another.
    #[arg(long)]
    serial: bool,
    /// Directory for raw.csv, aggregate.csv, timing.csv and comparisons.json.
    #[arg(short, long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Episodes to replay.
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    /// Check a TOML model file instead: builds the shield for its initial
    /// support with no unsafe states and verifies the certificate.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    model_horizon: usize,
    /// Diagnostics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// TOML coverage file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, value)?;
    Ok(())
}

#[derive(Serialize)]
struct EpisodeSummary<'a> {
    environment: &'a str,
    method: Method,
    seed: u64,
    steps: usize,
    success: bool,
    failure: &'a Option<String>,
    safety_rate: f64,
    min_distance: Option<f64>,
    collisions: usize,
    total_reward: f64,
    deadlocks: usize,
    certificate_violations: usize,
    soundness_violations: usize,
    mean_step_seconds: f64,
    coverage_violation_rate: Vec<Option<f64>>,
}

fn summary(r: &EpisodeResult, horizon: usize) -> EpisodeSummary<'_> {
    EpisodeSummary {
        environment: &r.environment,
        method: r.method,
        seed: r.seed,
        steps: r.steps,
        success: r.success,
        failure: &r.failure,
        safety_rate: r.metrics.safety_rate,
        min_distance: r.metrics.min_distance.is_finite().then_some(r.metrics.min_distance),
        collisions: r.metrics.collisions,
        total_reward: r.total_reward,
        deadlocks: r.deadlocks,
        certificate_violations: r.certificate_violations,
        soundness_violations: r.soundness_violations,
        mean_step_seconds: r.mean_step_seconds,
        coverage_violation_rate: (1..=horizon).map(|tau| r.coverage_violation_rate(tau)).collect(),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = args.config.load()?;
    cfg.record_frames = args.frames.is_some();
    let env = Environment::new(cfg.clone())?;
    let res = env.run(cfg.seed)?;
    if !args.quiet {
        let names = ["east", "south", "west", "north"];
        for r in &res.records {
            let pos = match (r.x, r.y) {
                (Some(x), Some(y)) => format!("({x:>2},{y:>2})"),
                _ => "terminal".into(),
            };
            let radii: Vec<String> = r.radii.iter().map(|v| format!("{v:.3}")).collect();
            println!(
                "t={:<3} robot={} c={:>8.3} action={:<5} allowed={} radii=[{}]{}",
                r.t,
                pos,
                r.constraint,
                r.action.map_or("-", |a| names.get(a).copied().unwrap_or("?")),
                r.allowed.map_or("-".into(), |n| n.to_string()),
                radii.join(", "),
                if r.deadlock { " deadlock" } else { "" }
            );
        }
    }
    let s = summary(&res, cfg.horizon);
    println!("{}", serde_json::to_string_pretty(&s)?);
    if let Some(p) = &args.raw {
        write_raw_csv(std::slice::from_ref(&res), create(p)?)?;
    }
    if let Some(p) = &args.frames {
        write_json(p, &res.frames)?;
    }
    if let Some(p) = &args.json {
        write_json(p, &s)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let mut bench = match &args.bench {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            BenchConfig::from_toml(&text)?
        }
        None => BenchConfig {
            environments: vec![args.config.load()?],
            ..BenchConfig::default()
        },
    };
    if let Some(m) = args.methods {
        bench.methods = m;
    }
    if let Some(n) = args.agent_counts {
        bench.agent_counts = n;
    }
    if args.runs.is_some() {
        bench.runs = args.runs;
    }
    if args.serial {
        bench.parallel = false;
    }
    let res = run_benchmark(&bench)?;
    let rows = aggregate(&res.episodes);
    std::fs::create_dir_all(&args.out)?;
    write_raw_csv(&res.episodes, create(&args.out.join("raw.csv"))?)?;
    write_timing_csv(&res.episodes, create(&args.out.join("timing.csv"))?)?;
    write_aggregate_csv(&rows, create(&args.out.join("aggregate.csv"))?)?;
    let cmp = paired_comparisons(&res.episodes);
    write_json(&args.out.join("comparisons.json"), &cmp)?;
    print!("{}", render_table(&rows));
    for c in &cmp {
        println!(
            "{} N={}: {} vs {} diff={:+.4} p(>)={:.4} p(<)={:.4}",
            c.environment, c.agents, c.better, c.worse, c.test.mean_diff, c.test.p_greater, c.test.p_less
        );
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ValidationReport {
    episodes: usize,
    planning_steps: usize,
    certificate_checks: usize,
    certificate_violations: usize,
    soundness_checks: usize,
    soundness_violations: usize,
    failures: Vec<String>,
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    if let Some(path) = &args.model {
        let model = load_model(path)?;
        let root = BeliefSupport::new(
            (0..model.num_states()).filter(|&s| model.initial_belief().prob(s) > 0.0),
        );
        let shield = Shield::compute(
            &model,
            &root,
            UnsafeSets::none(model.num_states(), args.model_horizon),
        );
        let verdict = verify_certificate(&model, shield.bsts(), shield.unsafe_sets(), shield.winning());
        let snapshot = shield.snapshot();
        println!("{}", serde_json::to_string_pretty(&snapshot)?);
        if let Some(p) = &args.json {
            write_json(p, &snapshot)?;
        }
        return Ok(match verdict {
            Ok(()) => {
                println!("certificate ok: {} nodes", shield.bsts().num_nodes());
                ExitCode::SUCCESS
            }
            Err(v) => {
                eprintln!("certificate violation: {}", serde_json::to_string(&v)?);
                ExitCode::FAILURE
            }
        });
    }
    let mut cfg = args.config.load()?;
    cfg.verify = true;
    let mut report = ValidationReport {
        episodes: 0,
        planning_steps: 0,
        certificate_checks: 0,
        certificate_violations: 0,
        soundness_checks: 0,
        soundness_violations: 0,
        failures: Vec::new(),
    };
    for method in [Method::ShieldNoAcp, Method::ShieldAcp] {
        cfg.method = method;
        let env = Environment::new(cfg.clone())?;
        for i in 0..args.episodes as u64 {
            let r = env.run(cfg.seed.wrapping_add(i))?;
            report.episodes += 1;
            report.planning_steps += r.steps;
            report.certificate_checks += r.certificate_checks;
            report.certificate_violations += r.certificate_violations;
            report.soundness_checks += r.soundness_checks;
            report.soundness_violations += r.soundness_violations;
            if let Some(f) = r.failure {
                report.failures.push(format!("{method} seed {}: {f}", r.seed));
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(p) = &args.json {
        write_json(p, &report)?;
    }
    let ok = report.certificate_violations == 0 && report.soundness_violations == 0;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_coverage(args: CoverageArgs) -> Result<ExitCode> {
    let mut cfg: CoverageConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text)?
        }
        None => CoverageConfig::default(),
    };
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.agents {
        cfg.agents = v;
    }
    if let Some(v) = args.delta {
        cfg.acp.delta = v;
    }
    if let Some(v) = args.alpha {
        cfg.acp.alpha = v;
    }
    if let Some(v) = args.window {
        cfg.acp.window_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.acp.validate()?;
    let report = run_coverage(&cfg)?;
    for c in &report.per_tau {
        println!(
            "tau={} scored={} violations={} rate={:.4} (target {:.3}) mean_radius={:.4} lambda={:.5}",
            c.tau, c.scored, c.violations, c.violation_rate, report.delta, c.mean_radius, c.final_lambda
        );
    }
    if let Some(p) = &args.json {
        write_json(p, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Coverage(a) => cmd_coverage(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
