use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use alnlg_core::bench::{average_curves, run_benchmark, BenchTask, BenchmarkSpec, DEFAULT_SEEDS};
use alnlg_core::config::LabellerKind;
use alnlg_core::orchestrator::{load_run_data, RunDeps, RunOutcome, Runner};
use alnlg_core::presets::{dry_run, DRY_RUN_SIZE, PRESET_NAMES};
use alnlg_core::RunConfig;
use alnlg_server::ServerOptions;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "alnlg", version, about = "Active learning for text-generation annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON config file; defaults apply for anything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted overrides, e.g. `al=huds al.query_size=0.01 labeller=api_llm`.
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        self.resolve_on(RunConfig::default())
    }

    /// Like `resolve`, starting from `base` when no file is given.
    fn resolve_on(&self, base: RunConfig) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => base,
        };
        config.apply_overrides(&self.overrides)?;
        let config = config.normalized();
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) one active-learning loop.
    RunAl {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint directory. An existing checkpoint there is resumed.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Print the outcome as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Compare strategies over several seeds.
    Benchmark {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "random,facility_location,coreset")]
        strategies: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Use the clustered synthetic task instead of `data.path`.
        #[arg(long)]
        synthetic: bool,
        /// Report directory (per-strategy CSV plus summary.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Validate a preset end to end with in-process stand-ins for every model.
    DryRun {
        /// One of the preset names, or `all`.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = DRY_RUN_SIZE)]
        size: usize,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Serve the HTTP control API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Each run gets a checkpoint directory under this one.
        #[arg(long)]
        runs_root: Option<PathBuf>,
    },
}

fn print_outcome(out: &RunOutcome, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(out)?);
        return Ok(());
    }
    for r in &out.records {
        let metrics = match &r.metrics {
            Some(m) => m.values.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" "),
            None => "(eval skipped)".into(),
        };
        println!("round {:>3}  labeled {:>6}  spent {:>10.4}  {metrics}", r.iteration, r.labeled_count, r.ledger.spent);
    }
    println!(
        "stopped: {}  labeled: {}  spent: {:.4}  model: {}",
        out.stop_reason, out.labeled_count, out.ledger.spent, out.final_model_ref
    );
    Ok(())
}

fn run_al(config: RunConfig, run_dir: Option<&Path>, json: bool) -> Result<()> {
    if config.labeller.kind == LabellerKind::Human {
        bail!("human labelling needs annotators; start the control API with `alnlg serve` instead");
    }
    if let Some(d) = run_dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let (train, test) = load_run_data(&config.data)?;
    let deps = RunDeps::from_config(&config, run_dir)?;
    let out = Runner::open(config, train, test, deps, run_dir)?.run_to_end()?;
    print_outcome(&out, json)
}

fn benchmark(
    config: &ConfigArgs,
    strategies: Vec<String>,
    seeds: Option<Vec<u64>>,
    synthetic: bool,
    out: Option<PathBuf>,
    parallelism: Option<usize>,
) -> Result<()> {
    let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let names: Vec<&str> = strategies.iter().map(String::as_str).collect();
    let mut spec = BenchmarkSpec::synthetic(&names, &seeds);
    spec.base = config.resolve_on(spec.base)?;
    if !synthetic {
        spec.task = BenchTask::Dataset;
    }
    spec.out_dir = out;
    if let Some(p) = parallelism {
        spec.parallelism = p;
    }
    let result = run_benchmark(&spec)?;
    for (strategy, curves) in &result.curves {
        let mean = average_curves(curves)?;
        if let Some(last) = mean.last() {
            let metrics = last.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ");
            println!("{strategy:<20} seeds {:>2}  labeled {:>6}  {metrics}", curves.len(), last.labeled_count);
        }
    }
    for f in &result.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::RunAl { config, run_dir, json } => run_al(config.resolve()?, run_dir.as_deref(), json),
        Command::Benchmark { config, strategies, seeds, synthetic, out, parallelism } => {
            benchmark(&config, strategies, seeds, synthetic, out, parallelism)
        }
        Command::DryRun { preset, size, run_dir } => {
            let names: Vec<&str> = if preset == "all" { PRESET_NAMES.to_vec() } else { vec![preset.as_str()] };
            for name in names {
                let dir = run_dir.as_ref().map(|d| d.join(name));
                if let Some(d) = &dir {
                    std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
                }
                let t = Instant::now();
                let out = dry_run(name, size, dir.as_deref()).with_context(|| format!("preset `{name}`"))?;
                println!(
                    "{name:<10} ok  rounds {:>3}  labeled {:>5}  stopped: {}  [{:.2}s]",
                    out.records.len(),
                    out.labeled_count,
                    out.stop_reason,
                    t.elapsed().as_secs_f64()
                );
            }
            Ok(())
        }
        Command::Validate { config } => {
            print!("{}", toml::to_string_pretty(&config.resolve()?)?);
            Ok(())
        }
        Command::Serve { addr, runs_root } => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                eprintln!("control API on http://{}", listener.local_addr()?);
                alnlg_server::serve(listener, ServerOptions { runs_root }).await?;
                Ok::<_, anyhow::Error>(())
            })?;
            // Background run threads may still be waiting on annotators.
            rt.shutdown_timeout(Duration::from_secs(1));
            Ok(())
        }
    }
}
