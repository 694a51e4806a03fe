use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmarl::harness::{self, AblationAxis, HarnessError, LoadedConfig, RunOptions};

/// Distributed neural actor-critic experiments on networked path-planning MDPs.
#[derive(Parser)]
#[command(name = "nmarl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the learner for every seed of a config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// One run per value along an axis, plus a summary table.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated values: batch sizes, or isolated agent sets such as `none,2+5`.
        #[arg(long, value_delimiter = ',', num_args = 0.., required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the learner and the centralized exact-gradient baseline side by side.
    Compare {
        config: PathBuf,
        /// Run only the centralized baseline.
        #[arg(long)]
        centralized_only: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Check a config and the communication schedule; prints a JSON report.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Seeds to run instead of the config's list (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory (default: config `[output] dir`, then $NMARL_OUT, then ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds or ablation cells to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Worker threads for the data-parallel kernels (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// No progress lines on stderr.
    #[arg(long, short)]
    quiet: bool,
}

impl Common {
    fn options(&self, cfg: &LoadedConfig) -> RunOptions {
        RunOptions {
            out_dir: harness::resolve_out_dir(self.out.as_deref(), &cfg.config),
            seeds: (!self.seed.is_empty()).then(|| self.seed.clone()),
            jobs: self.jobs.max(1),
            progress: !self.quiet,
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.6}"))
}

fn load(path: &Path) -> Result<LoadedConfig, HarnessError> {
    LoadedConfig::load(path)
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        nmarl::par::with_threads(threads, f)
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = load(&config)?;
            let opts = common.options(&cfg);
            let report = with_threads(common.threads, || harness::run(&cfg, &opts))?;
            let finals = report.completed.iter().filter_map(|s| s.final_j());
            println!(
                "run {}: {} seed(s) completed",
                report.run_id,
                report.completed.len()
            );
            println!("median final J: {}", fmt(harness::median(finals)));
            println!("summary: {}", report.summary_path.display());
            println!("metadata: {}", report.metadata_path.display());
        }
        Command::Ablate {
            config,
            axis,
            values,
            common,
        } => {
            let cfg = load(&config)?;
            let opts = common.options(&cfg);
            let report = with_threads(common.threads, || {
                harness::ablate(&cfg, axis, &values, &opts)
            })?;
            println!("ablation over {axis}:");
            for r in &report.rows {
                println!(
                    "  {:<10} J {}  |grad J| {}  schedule {}",
                    r.value,
                    fmt(r.final_j_exact),
                    fmt(r.final_grad_norm_exact),
                    if r.schedule_valid {
                        "ok"
                    } else {
                        "disconnected"
                    }
                );
            }
            println!("summary: {}", report.summary_path.display());
        }
        Command::Compare {
            config,
            centralized_only,
            common,
        } => {
            let mut cfg = load(&config)?;
            cfg.config.baseline.centralized_only |= centralized_only;
            let opts = common.options(&cfg);
            let report = with_threads(common.threads, || harness::compare(&cfg, &opts))?;
            let gap = &report.gap;
            println!(
                "median final J: distributed {}  centralized {}",
                fmt(gap.median_j_distributed),
                fmt(gap.median_j_centralized)
            );
            println!("relative gap: {}", fmt(gap.relative_gap));
            for (loc, g) in &gap.forward_gap {
                println!("forward-probability gap at {loc}: {g:.4}");
            }
            println!("gap summary: {}", report.gap_path.display());
            println!("paired: {}", report.paired_path.display());
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let summary = harness::validate(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("report serializes")
            );
            if !summary.schedule.passed {
                eprintln!(
                    "warning: schedule validation failed: {}",
                    summary.schedule.messages.join("; ")
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
