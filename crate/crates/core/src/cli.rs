//! Command-line front end for the `ala` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::controller::StateComponent;
use crate::data::generate_dataset;
use crate::error::{AlaError, Result};
use crate::harness::{export_curves, loss_surface_curvature, GridConfig};
use crate::losses;
use crate::metrics::{MetricKind, RewardSource};
use crate::network::Network;
use crate::orchestrator::{
    load_dataset, run_baseline, run_training, run_transfer, write_csv, BaselineMode, RunReport, Task,
    TrainRunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "ala", version, about = "Adaptive loss alignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train child models while the controller learns.
    Train(RunArgs),
    /// Run a non-learning baseline.
    Baseline {
        #[arg(long, value_parser = ["fixed", "random-phi", "confusion-phi", "bandit"])]
        mode: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Drive a run with a stored policy.
    Transfer {
        #[arg(long)]
        policy: PathBuf,
        /// Keep updating the policy during the run.
        #[arg(long)]
        finetune: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Mean Gaussian curvature of a model's training-loss surface.
    AnalyzeSurface {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 21)]
        resolution: usize,
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Merge run directories into curve and summary CSVs.
    ExportCurves {
        /// Directories written by `train`, `baseline` or `transfer`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "curves")]
        out: PathBuf,
    },
    /// Write the configured dataset splits as CSV.
    GenData(RunArgs),
}

/// Flags shared by every run-like subcommand; each overrides the config file.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub children: Option<usize>,
    #[arg(long, value_parser = ["val-metric", "val-loss", "train-metric", "train-loss"])]
    pub reward: Option<String>,
    /// error, aucpr, recall@k or verification.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long = "episode-len")]
    pub episode_len: Option<usize>,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long = "controller-depth", value_parser = clap::value_parser!(u8).range(1..=3))]
    pub controller_depth: Option<u8>,
    #[arg(long, value_parser = ["history", "delta", "phi", "iter"])]
    pub ablate: Vec<String>,
    #[arg(long = "no-replay")]
    pub no_replay: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl RunArgs {
    /// The config file (or defaults) with every given flag applied, validated.
    pub fn config(&self) -> Result<TrainRunConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainRunConfig::load(p)?,
            None => TrainRunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.children {
            cfg.children = c;
        }
        if let Some(r) = &self.reward {
            cfg.reward = RewardSource::parse(r)?;
        }
        if let Some(m) = &self.metric {
            cfg.metric = match MetricKind::parse(m) {
                Ok(k) => k,
                Err(_) if m == "recall@k" => MetricKind::RecallAtK { k: 1 },
                Err(e) => return Err(e),
            };
        }
        if let Some(t) = self.episode_len {
            cfg.episode_len = t;
        }
        if let Some(h) = self.history {
            cfg.history = h;
        }
        if let Some(d) = self.controller_depth {
            cfg.controller_depth = d as usize;
        }
        for a in &self.ablate {
            cfg.ablate.insert(StateComponent::parse(a)?);
        }
        if self.no_replay {
            cfg.replay.enabled = false;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Process exit code for an error: 2 for bad input, 1 otherwise.
pub fn exit_code(e: &AlaError) -> i32 {
    match e {
        AlaError::Usage(_) | AlaError::Config(_) | AlaError::Layout(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let outcome = run_training(&cfg)?;
            outcome.write(&args.out)?;
            print_final(&outcome.report);
        }
        Command::Baseline { mode, run } => {
            let cfg = run.config()?;
            let outcome = run_baseline(&cfg, BaselineMode::parse(&mode)?)?;
            outcome.write(&run.out)?;
            print_final(&outcome.report);
        }
        Command::Transfer { policy, finetune, run } => {
            let cfg = run.config()?;
            let outcome = run_transfer(&cfg, &policy, finetune)?;
            outcome.write(&run.out)?;
            print_final(&outcome.report);
        }
        Command::AnalyzeSurface {
            checkpoint,
            resolution,
            extent,
            run,
        } => {
            let cfg = run.config()?;
            let net = Network::load(&checkpoint)?;
            let grid = GridConfig { resolution, extent };
            let s = analyze_surface(&cfg, &net, grid)?;
            create_dir(&run.out)?;
            let path = run.out.join("surface.json");
            std::fs::write(&path, serde_json::to_string_pretty(&s)?).map_err(|e| AlaError::io(&path, e))?;
            println!("mean gaussian curvature {:.6e}", s.mean_curvature);
        }
        Command::ExportCurves { runs, out } => {
            let reports = runs.iter().map(|d| RunReport::read(d)).collect::<Result<Vec<_>>>()?;
            let e = export_curves(&reports, &out)?;
            println!("{} detail rows, {} summary rows", e.detail.len(), e.summary.len());
        }
        Command::GenData(args) => {
            let cfg = args.config()?;
            let data = generate_dataset(&cfg.data, cfg.dataset_seed())?;
            create_dir(&args.out)?;
            for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
                let rows: Vec<Vec<f64>> = (0..split.len())
                    .map(|i| {
                        let mut r = vec![split.y[i] as f64];
                        r.extend_from_slice(split.x.row(i));
                        r
                    })
                    .collect();
                write_csv(&args.out.join(format!("{name}.csv")), &rows)?;
            }
            let path = args.out.join("spec.json");
            std::fs::write(&path, serde_json::to_string_pretty(&data.spec)?).map_err(|e| AlaError::io(&path, e))?;
        }
    }
    Ok(())
}

/// Curvature of the reference training loss (cross-entropy or triplet) on
/// the training split around `net`.
pub fn analyze_surface(cfg: &TrainRunConfig, net: &Network, grid: GridConfig) -> Result<crate::harness::SurfaceGrid> {
    if net.layer_sizes() != cfg.layer_sizes() {
        return Err(AlaError::Layout(format!(
            "checkpoint widths {:?} do not match the configured {:?}",
            net.layer_sizes(),
            cfg.layer_sizes()
        )));
    }
    let data = load_dataset(cfg)?;
    let ctx = crate::orchestrator::RunContext::new(cfg, &data);
    let seed = crate::orchestrator::seeds::derive(cfg.seed, "surface", 0);
    let train = &ctx.train_eval;
    match cfg.task {
        Task::Classification => loss_surface_curvature(
            net,
            |n| losses::cross_entropy_batch(&n.forward(&train.split.x)?, &train.split.y),
            grid,
            seed,
        ),
        Task::MetricLearning => loss_surface_curvature(
            net,
            |n| crate::orchestrator::evaluate(n, train, cfg, false).map(|e| e.loss),
            grid,
            seed,
        ),
    }
}

fn print_final(report: &RunReport) {
    let (m, s) = report.final_test_metric();
    println!(
        "{} seed {}: final test {} {m:.4} ± {s:.4} over {} children",
        report.mode,
        report.config.seed,
        report.config.metric.name(),
        report.final_test_values().len()
    );
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AlaError::io(dir, e))
}
