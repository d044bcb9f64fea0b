use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use physmeta::meta::{ModelKind, Variant};
use physmeta_cli::commands::{self, GenerateOverrides, TrainOverrides};
use physmeta_cli::config::{Method, RunConfig};

#[derive(Parser)]
#[command(name = "physmeta", version, about = "Physics-aware modular meta-learning experiments")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: paper-metatrain, paper-metatest or desk.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed; overrides the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; must not exist yet.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate and sample the configured task suites.
    Generate {
        /// Tasks per suite.
        #[arg(long)]
        tasks: Option<usize>,
        /// Nodes per task.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Train one method on a meta-train suite.
    Train {
        /// Meta-train suite directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// modular, maml, scratch or weight-init.
        #[arg(long, default_value = "modular")]
        variant: Variant,
        /// padgn or rgn.
        #[arg(long, default_value = "padgn")]
        model: ModelKind,
        /// Inner-loop learning rate.
        #[arg(long)]
        beta: Option<f64>,
        /// Outer iterations (or pretraining epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adapt trained runs to a meta-test suite and report test MSE.
    Evaluate {
        /// Meta-test suite directory.
        #[arg(long)]
        data: PathBuf,
        /// Run directory written by `train`; repeatable.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Shot counts (default: from the configuration).
        #[arg(long, value_delimiter = ',')]
        shots: Vec<usize>,
    },
    /// Check reverse-mode gradients against finite differences.
    Gradcheck {
        /// padgn, rgn or all.
        #[arg(long, default_value = "all")]
        model: String,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        /// Number of seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 3)]
        hidden: usize,
    },
    /// Print finite-difference stencil coefficients.
    Fdm {
        /// Comma-separated offsets in units of the spacing.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        offsets: Vec<f64>,
        /// Derivative order.
        #[arg(long)]
        order: usize,
    },
    /// Generate, train every configured method and evaluate.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    Ok(commands::seeded(cfg, cli.seed))
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    cli.out.clone().context("--out is required for this command")
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Generate { tasks, nodes } => {
            commands::apply_generate_overrides(&mut cfg, GenerateOverrides { tasks: *tasks, nodes: *nodes })?;
            for m in commands::generate(&cfg, &out_dir(&cli)?)? {
                println!("{}: {} tasks, manifest {}", m.family.name, m.task_count, m.hash());
            }
        }
        Cmd::Train { data, variant, model, beta, epochs } => {
            let method = Method::of(*variant, *model)?;
            let o = TrainOverrides { beta: *beta, epochs: *epochs };
            commands::train(&cfg, method, data.as_deref(), &o, &out_dir(&cli)?)?;
            println!("trained {method}");
        }
        Cmd::Evaluate { data, runs, shots } => {
            let shots = if shots.is_empty() { cfg.shots.clone() } else { shots.clone() };
            let report = commands::evaluate(&cfg, data, runs, &shots, &out_dir(&cli)?)?;
            print!("{}", report.table());
        }
        Cmd::Gradcheck { model, nodes, seeds, hidden } => {
            let models = match model.as_str() {
                "all" => vec![ModelKind::Padgn, ModelKind::Rgn],
                m => vec![m.parse::<ModelKind>()?],
            };
            let seeds: Vec<u64> = (0..*seeds).collect();
            let mut ok = true;
            for l in commands::gradcheck(&models, *nodes, &seeds, *hidden)? {
                println!(
                    "{} seed {}: {} params, max rel err {:.3e} {}",
                    l.model.name(),
                    l.seed,
                    l.params,
                    l.max_rel_err,
                    if l.passed { "ok" } else { "FAIL" }
                );
                ok &= l.passed;
            }
            return Ok(ok);
        }
        Cmd::Fdm { offsets, order } => println!("{}", commands::fdm(offsets, *order)?),
        Cmd::Pipeline => {
            let report = commands::pipeline(&cfg, &out_dir(&cli)?)?;
            print!("{}", report.table());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
