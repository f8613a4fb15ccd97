use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prompt_bandit::demo::{DemoConfig, PoolFile};
use prompt_bandit::env::Task;
use prompt_bandit::exec::{self, Execution};
use prompt_bandit::harness::{
    build_policy, emit_outputs, generate_pools, load_pools, output, read_records, run_tuning,
    summary_table, write_reports, Method, RunConfig,
};
use prompt_bandit::policy::{informativeness_report, serve};
use prompt_bandit::{seeding, selftest};

/// Bandit-based prompt tuning for a prompt-conditioned navigation policy.
#[derive(Parser, Debug)]
#[command(name = "prompt-bandit", version)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate expert demonstration pools.
    GenData(GenData),
    /// Run prompt tuning and write records, curves and plots.
    Tune(Tune),
    /// Rebuild curves and plots from a run directory.
    Report(Report),
    /// Run the built-in invariant checks.
    Selftest(Selftest),
    /// Serve the surrogate policy over the external line protocol on stdio.
    #[command(hide = true)]
    ServeSurrogate {
        #[arg(long = "H", default_value_t = 3)]
        horizon: usize,
    },
}

#[derive(Args, Debug)]
struct GenData {
    /// Expert episodes per task before filtering.
    #[arg(long)]
    episodes: Option<usize>,
    /// Gaussian action-noise scale of the scripted expert.
    #[arg(long)]
    noise: Option<f64>,
    /// Percentage of highest-return episodes kept.
    #[arg(long = "top-pct")]
    top_pct: Option<f64>,
    /// Segment stride stored with the pool (default: H).
    #[arg(long)]
    stride: Option<usize>,
    /// Output directory for pool files.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Demonstration seed (falls back to PROMPT_BANDIT_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Only tasks with this radius (default: all 60).
    #[arg(long)]
    radius: Option<f64>,
    /// Segment length used for the informativeness check.
    #[arg(long = "H", default_value_t = 3)]
    horizon: usize,
    /// TOML config whose [env] and [demo] sections are used as defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Tune {
    /// Comma-separated methods: uniform, bandit_ucb, bandit_eps,
    /// bandit_thompson, gaussian_hc, zo_ranksgd, or `all`.
    #[arg(long)]
    method: Option<String>,
    /// Segments per prompt.
    #[arg(long = "J")]
    segments: Option<usize>,
    /// Transitions per segment.
    #[arg(long = "H")]
    horizon: Option<usize>,
    /// Tuning rounds.
    #[arg(long = "K")]
    rounds: Option<usize>,
    /// Task radius filter.
    #[arg(long)]
    radius: Option<f64>,
    /// Comma-separated task ids (overrides --radius).
    #[arg(long)]
    tasks: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pool directory written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// `surrogate` or `external:<shell command>`.
    #[arg(long)]
    policy: Option<String>,
    /// Build pools in memory instead of reading the data directory.
    #[arg(long)]
    generate: bool,
    /// Run cells one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct Report {
    /// Run directory written by `tune`.
    run: PathBuf,
}

#[derive(Args, Debug)]
struct Selftest {
    #[arg(long)]
    sequential: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData(a) => gen_data(a).map(|_| ExitCode::SUCCESS),
        Command::Tune(a) => tune(a).map(|_| ExitCode::SUCCESS),
        Command::Report(a) => report(a).map(|_| ExitCode::SUCCESS),
        Command::Selftest(a) => Ok(run_selftest(a)),
        Command::ServeSurrogate { horizon } => {
            let env = prompt_bandit::env::EnvConfig::default();
            serve(io::stdin().lock(), io::stdout().lock(), horizon, &env)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    RunConfig::from_toml_with_seed(&text, seeding::env_seed()).context("parsing config")
}

fn csv_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("bad {what} `{}`: {e}", p.trim()))
        })
        .collect()
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = load_config(a.config.as_ref())?;
    let demo = DemoConfig {
        episodes: a.episodes.unwrap_or(cfg.demo.episodes),
        noise: a.noise.unwrap_or(cfg.demo.noise),
        top_pct: a.top_pct.unwrap_or(cfg.demo.top_pct),
        stride: a.stride.or(cfg.demo.stride),
        seed: a.seed.unwrap_or(cfg.demo.seed),
    };
    if demo.stride == Some(0) || a.horizon == 0 {
        bail!("--stride and --H must be at least 1");
    }
    let tasks = match a.radius {
        Some(r) => Task::with_radius(r),
        None => Task::all(),
    };
    if tasks.is_empty() {
        bail!("no task has radius {:?}", a.radius);
    }
    let stride = demo.stride.unwrap_or(a.horizon);
    let files = Execution::default().map(&tasks, |t| PoolFile::generate(t, &cfg.env, &demo));
    let mut warned = 0;
    let mut worst: f64 = 0.0;
    for (task, file) in tasks.iter().zip(files) {
        let file = file?;
        let path = file.write(&a.out)?;
        let pool = file.into_pool(a.horizon, stride)?;
        let rep = informativeness_report(&pool, task, &cfg.env)?;
        if !rep.holds() {
            warned += 1;
            worst = worst.max(rep.max_shortfall);
            log::info!(
                "task {}: {} of {} segment pairs rank closer-to-goal prompts lower (worst shortfall {:.3})",
                task.task_id,
                rep.inversions,
                rep.pairs,
                rep.max_shortfall
            );
        }
        log::info!("wrote {} ({} segments)", path.display(), pool.len());
    }
    println!(
        "wrote {} pools to {} (episodes={} noise={} top_pct={} seed={})",
        tasks.len(),
        a.out.display(),
        demo.episodes,
        demo.noise,
        demo.top_pct,
        demo.seed
    );
    if warned > 0 {
        eprintln!(
            "warning: {warned} pools have segments closer to the goal that earn less \
             (worst shortfall {worst:.3}; -v lists them)"
        );
    }
    Ok(())
}

fn tune(a: Tune) -> Result<()> {
    let mut cfg = load_config(a.config.as_ref())?;
    if let Some(m) = &a.method {
        cfg.methods = if m.trim() == "all" {
            Method::ALL.to_vec()
        } else {
            csv_list(m, "method")?
        };
    }
    if let Some(v) = a.segments {
        cfg.segments = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = a.rounds {
        cfg.rounds = v;
    }
    if let Some(r) = a.radius {
        cfg.radius = Some(r);
        cfg.tasks = None;
    }
    if let Some(t) = &a.tasks {
        cfg.tasks = Some(csv_list(t, "task id")?);
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = csv_list(s, "seed")?;
    }
    if let Some(v) = a.out {
        cfg.out_dir = v;
    }
    if let Some(v) = a.data {
        cfg.data_dir = v;
    }
    if let Some(v) = a.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = a.policy {
        cfg.policy = v;
    }
    cfg.validate()?;

    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let tasks = cfg.task_list()?;
    let pools = if a.generate {
        exec::with_jobs(cfg.jobs, || {
            generate_pools(&tasks, &cfg.env, &cfg.demo, cfg.horizon, cfg.stride(), exec)
        })?
    } else {
        load_pools(&cfg.data_dir, &tasks, cfg.horizon, cfg.demo.stride)
            .context("loading pools (run `gen-data` first or pass --generate)")?
    };
    let policy = build_policy(&cfg)?;
    let records = run_tuning(&cfg, &pools, policy.as_ref(), exec)?;
    let failed = records.iter().filter(|r| r.failed).count();
    if failed > 0 {
        eprintln!("warning: {failed} episodes failed in the external policy");
    }
    let curves = emit_outputs(&cfg.out_dir, &cfg, &records)?;
    println!(
        "{} records for {} tasks x {} seeds -> {}",
        records.len(),
        tasks.len(),
        cfg.seeds.len(),
        cfg.out_dir.display()
    );
    print!("{}", summary_table(&curves, 50));
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let cfg = RunConfig::load(&a.run.join(output::CONFIG_ECHO))
        .with_context(|| format!("reading config echo in {}", a.run.display()))?;
    let records = read_records(&a.run)?;
    let curves = write_reports(&a.run, &cfg, &records)?;
    print!("{}", summary_table(&curves, 50));
    Ok(())
}

fn run_selftest(a: Selftest) -> ExitCode {
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let results = selftest::run_all(exec);
    let mut ok = true;
    for r in &results {
        ok &= r.passed;
        println!(
            "{} {:<28} {} ({:.0} ms)",
            if r.passed { "ok  " } else { "FAIL" },
            r.name,
            r.detail,
            r.millis
        );
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
