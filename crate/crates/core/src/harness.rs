//! Experiment execution: per-seed metric files, summaries, metadata, the
//! batch and isolation ablations and the centralized-baseline comparison.
//!
//! Files written for a run with id `R` into the output directory:
//!
//! | file | contents |
//! |---|---|
//! | `R-seed<s>.csv` | metrics rows (`# metrics-csv v1`) |
//! | `R-seed<s>-policy.csv` | forward-move probabilities at the start state |
//! | `R-summary.csv` | per-k medians over completed seeds |
//! | `R-metadata.json` | resolved config, hashes, env description, validation |
//! | `checkpoints/R-seed<s>-k<k>.ckpt` | actor parameters, when enabled |
//!
//! `compare` adds `R-seed<s>-centralized.csv`, `R-seed<s>-centralized-policy.csv`,
//! `R-paired.csv` and `R-gap.json`; `ablate` adds `R-ablation-<axis>.csv`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointHeader};
use crate::comm::ValidationReport;
use crate::config::{content_hash, ConfigError, ExperimentConfig};
use crate::env::{EnvDescription, EnvModel};
use crate::learner::{
    forward_probabilities, run_algorithm_with, start_state, ActorPolicy, IterationMetrics,
    LearnerError, PolicySnapshot, RunObserver, Sampler,
};
use crate::oracle;

pub const METRICS_VERSION: &str = "# metrics-csv v1";
pub const POLICY_VERSION: &str = "# policy-csv v1";
pub const SUMMARY_VERSION: &str = "# summary-csv v1";
pub const CENTRALIZED_VERSION: &str = "# centralized-csv v1";
pub const PAIRED_VERSION: &str = "# paired-csv v1";
pub const ABLATION_VERSION: &str = "# ablation-csv v1";
pub const METADATA_VERSION: &str = "run-metadata v1";
pub const GAP_VERSION: &str = "gap-summary v1";

/// Environment variable naming the output directory when neither the
/// command line nor the config sets one.
pub const OUT_DIR_ENV: &str = "NMARL_OUT";

pub const METRICS_COLUMNS: [&str; 10] = [
    "run_id",
    "seed",
    "k",
    "j_exact",
    "grad_norm_exact",
    "grad_mapping_norm",
    "grad_mapping_source",
    "critic_mse",
    "disagreement_final",
    "wallclock_s",
];

const FEATURES_NOTE: &str = "features are fixed random unit vectors phi_i(s, a_i), one standard-normal draw per \
(agent, state, local action) normalized to length one; they stand in for the unspecified feature map";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("seed {seed}: non-finite {what} at k={k}{}", .t.map(|t| format!(", t={t}")).unwrap_or_default())]
    Numeric {
        seed: u64,
        what: String,
        k: usize,
        t: Option<usize>,
    },
    #[error("{0}")]
    OracleInfeasible(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("seed {seed}: {source}")]
    Run { seed: u64, source: LearnerError },
}

impl HarnessError {
    /// 2 for configuration and usage problems, 3 for numeric failures, 4 when
    /// the oracle cannot handle the environment, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) => 2,
            HarnessError::Numeric { .. } => 3,
            HarnessError::OracleInfeasible(_) => 4,
            HarnessError::Io { .. } | HarnessError::Run { .. } => 1,
        }
    }

    fn from_learner(seed: u64, e: LearnerError) -> Self {
        match e {
            LearnerError::NonFinite { what, k, t } => HarnessError::Numeric { seed, what, k, t },
            LearnerError::Config(msg) => HarnessError::Config(ConfigError {
                source: None,
                line: None,
                message: msg,
            }),
            LearnerError::ExactInfeasible => HarnessError::Config(ConfigError {
                source: None,
                line: None,
                message: format!("[learner] sampler: {}", LearnerError::ExactInfeasible),
            }),
            other => HarnessError::Run {
                seed,
                source: other,
            },
        }
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How to execute an experiment.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces the config's seed list.
    pub seeds: Option<Vec<u64>>,
    /// Seeds (and ablation cells) run concurrently.
    pub jobs: usize,
    /// Progress lines on stderr.
    pub progress: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            seeds: None,
            jobs: 1,
            progress: false,
        }
    }
}

/// `--out`, else `[output] dir`, else `$NMARL_OUT`, else `./results`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = &cfg.output.dir {
        return dir.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("results"),
    }
}

/// A configuration together with the text it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: Option<PathBuf>,
    pub text: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let (config, text) = ExperimentConfig::load(path)?;
        Ok(Self {
            config,
            source: Some(path.to_path_buf()),
            text,
        })
    }

    pub fn from_config(config: ExperimentConfig) -> Self {
        let text = config.render();
        Self {
            config,
            source: None,
            text,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartialRun {
    pub seed: u64,
    pub error: String,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub format: String,
    pub run_id: String,
    pub command: String,
    pub config_source: Option<String>,
    /// Git-style SHA-256 of the config file as read.
    pub config_sha256: String,
    /// The configuration with every default filled in.
    pub resolved_config: String,
    pub resolved_sha256: String,
    pub seeds: Vec<u64>,
    pub completed: Vec<u64>,
    pub partial: Vec<PartialRun>,
    pub env: EnvDescription,
    pub num_states: usize,
    pub num_joint_actions: usize,
    pub oracle_feasible: bool,
    pub sampler: String,
    pub schedule_validation: serde_json::Value,
    pub schedule_valid: bool,
    pub features: String,
    pub parallel: bool,
    pub version: String,
    pub files: Vec<String>,
}

impl RunMetadata {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    }

    /// The configuration of the recorded run, seeds included.
    pub fn config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::parse(
            &self.resolved_config,
            &self.run_id,
            Path::new("."),
        )?)
    }
}

/// Result of one seed of the distributed learner.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<IterationMetrics>,
    pub snapshots: Vec<PolicySnapshot>,
    pub thetas: Vec<Vec<f64>>,
}

impl SeedResult {
    pub fn final_row(&self) -> Option<&IterationMetrics> {
        self.rows.last()
    }

    pub fn final_j(&self) -> Option<f64> {
        self.final_row().and_then(|r| r.j_exact)
    }

    pub fn final_forward(&self) -> Option<&[f64]> {
        self.snapshots.last().map(|s| s.forward.as_slice())
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub completed: Vec<SeedResult>,
    pub failures: Vec<(u64, HarnessError)>,
    pub validation: ValidationReport,
    pub metadata_path: PathBuf,
    pub summary_path: PathBuf,
}

impl RunReport {
    pub fn metrics_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(metrics_file(&self.run_id, seed))
    }

    /// The first failure, if any seed failed.
    pub fn into_result(mut self) -> Result<Self> {
        if self.failures.is_empty() {
            Ok(self)
        } else {
            Err(self.failures.remove(0).1)
        }
    }
}

pub fn metrics_file(run_id: &str, seed: u64) -> String {
    format!("{run_id}-seed{seed}.csv")
}

fn policy_file(run_id: &str, seed: u64) -> String {
    format!("{run_id}-seed{seed}-policy.csv")
}

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// A CSV file with a version line above the header.
struct CsvFile {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvFile {
    fn create(path: PathBuf, version: &str, columns: &[&str]) -> Result<Self> {
        let mut file = create(&path)?;
        writeln!(file, "{version}").map_err(io_err(&path))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(columns)
            .map_err(|e| csv_err(&path, e))?;
        writer.flush().map_err(io_err(&path))?;
        Ok(Self { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(io::Error::other)?;
        self.writer.flush()
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(io_err(&self.path))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    }
}

/// Streams rows, snapshots and checkpoints of one seed to disk.
struct FileObserver<'a> {
    run_id: &'a str,
    seed: u64,
    config_sha: &'a str,
    checkpoint_dir: PathBuf,
    metrics: CsvFile,
    policy: CsvFile,
    rows: Vec<IterationMetrics>,
    snapshots: Vec<PolicySnapshot>,
}

impl<'a> FileObserver<'a> {
    fn create(dir: &Path, run_id: &'a str, seed: u64, config_sha: &'a str) -> Result<Self> {
        Ok(Self {
            run_id,
            seed,
            config_sha,
            checkpoint_dir: dir.join("checkpoints"),
            metrics: CsvFile::create(
                dir.join(metrics_file(run_id, seed)),
                METRICS_VERSION,
                &METRICS_COLUMNS,
            )?,
            policy: CsvFile::create(
                dir.join(policy_file(run_id, seed)),
                POLICY_VERSION,
                &["run_id", "seed", "k", "agent", "forward_prob"],
            )?,
            rows: Vec::new(),
            snapshots: Vec::new(),
        })
    }
}

impl RunObserver for FileObserver<'_> {
    fn metrics(&mut self, row: &IterationMetrics) -> io::Result<()> {
        let mse = row
            .critic_mse
            .as_ref()
            .map(|v| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        self.metrics.row([
            self.run_id.to_string(),
            self.seed.to_string(),
            row.k.to_string(),
            fmt_opt(row.j_exact),
            fmt_opt(row.grad_norm_exact),
            fmt_opt(row.grad_mapping_norm),
            row.grad_mapping_source
                .map(|s| s.to_string())
                .unwrap_or_default(),
            mse,
            fmt_opt(row.disagreement_final),
            fmt_opt(row.wallclock_s),
        ])?;
        self.rows.push(row.clone());
        Ok(())
    }

    fn snapshot(&mut self, snap: &PolicySnapshot) -> io::Result<()> {
        write_snapshot(&mut self.policy, self.run_id, self.seed, snap)?;
        self.snapshots.push(snap.clone());
        Ok(())
    }

    fn checkpoint(&mut self, k: usize, thetas: &[Vec<f64>]) -> io::Result<()> {
        fs::create_dir_all(&self.checkpoint_dir)?;
        let header = CheckpointHeader {
            run_id: self.run_id.to_string(),
            seed: self.seed,
            k,
            num_agents: thetas.len(),
            actor_len: thetas.first().map_or(0, Vec::len),
            config_sha256: self.config_sha.to_string(),
        };
        let path = self
            .checkpoint_dir
            .join(format!("{}-seed{}-k{k}.ckpt", self.run_id, self.seed));
        checkpoint::write(&path, &header, thetas)
    }
}

fn write_snapshot(
    file: &mut CsvFile,
    run_id: &str,
    seed: u64,
    snap: &PolicySnapshot,
) -> io::Result<()> {
    for (i, p) in snap.forward.iter().enumerate() {
        file.row([
            run_id.to_string(),
            seed.to_string(),
            snap.k.to_string(),
            (i + 1).to_string(),
            fmt_f64(*p),
        ])?;
    }
    Ok(())
}

/// Runs `tasks` on up to `jobs` threads, returning results in task order.
fn run_tasks<'a, T: Send>(jobs: usize, tasks: Vec<Box<dyn FnOnce() -> T + Send + 'a>>) -> Vec<T> {
    let n = tasks.len();
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let queue: Vec<Mutex<Option<Box<dyn FnOnce() -> T + Send + 'a>>>> =
        tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let task = queue[i]
                    .lock()
                    .expect("task lock")
                    .take()
                    .expect("task taken once");
                let out = task();
                *results[i].lock().expect("result lock") = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|r| {
            r.into_inner()
                .expect("result lock")
                .expect("every task ran")
        })
        .collect()
}

struct Prepared {
    config: ExperimentConfig,
    config_sha: String,
    env: EnvModel,
    validation: ValidationReport,
    sampler: String,
}

fn prepare(loaded: &LoadedConfig, opts: &RunOptions) -> Result<Prepared> {
    let mut config = loaded.config.clone();
    if let Some(seeds) = &opts.seeds {
        if seeds.is_empty() {
            return Err(HarnessError::Usage(
                "--seed needs at least one value".into(),
            ));
        }
        config.seeds = seeds.clone();
    }
    let env = config.build_env()?;
    let sched = config.build_schedule(env.num_agents())?;
    let validation = sched.validate();
    let sampler =
        Sampler::new(&env, config.learner.sampler).map_err(|e| HarnessError::from_learner(0, e))?;
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    Ok(Prepared {
        config_sha: content_hash(&loaded.text),
        config,
        env,
        validation,
        sampler: if sampler.is_exact() { "exact" } else { "chain" }.into(),
    })
}

fn progress(opts: &RunOptions, msg: impl AsRef<str>) {
    if opts.progress {
        eprintln!("{}", msg.as_ref());
    }
}

fn run_seed(p: &Prepared, seed: u64, opts: &RunOptions) -> Result<SeedResult> {
    let cfg = &p.config;
    let problem = cfg.build_problem(&p.env, seed)?;
    let learner = cfg.learner_for_seed(seed);
    progress(opts, format!("{}: seed {seed} started", cfg.name));
    let mut observer = FileObserver::create(&opts.out_dir, &cfg.name, seed, &p.config_sha)?;
    let outcome = run_algorithm_with(&problem, &learner, &mut observer);
    let FileObserver {
        metrics,
        policy,
        rows,
        snapshots,
        ..
    } = observer;
    metrics.finish()?;
    policy.finish()?;
    let thetas = outcome.map_err(|e| match e {
        LearnerError::Checkpoint(source) => HarnessError::Io {
            path: opts.out_dir.clone(),
            source,
        },
        other => HarnessError::from_learner(seed, other),
    })?;
    progress(
        opts,
        format!(
            "{}: seed {seed} done, final J {}",
            cfg.name,
            rows.last()
                .and_then(|r| r.j_exact)
                .map_or("n/a".into(), |j| format!("{j:.6}"))
        ),
    );
    Ok(SeedResult {
        seed,
        rows,
        snapshots,
        thetas,
    })
}

fn write_metadata(
    p: &Prepared,
    loaded: &LoadedConfig,
    command: &str,
    completed: &[u64],
    partial: &[PartialRun],
    files: Vec<String>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let resolved = p.config.render();
    let meta = RunMetadata {
        format: METADATA_VERSION.into(),
        run_id: p.config.name.clone(),
        command: command.into(),
        config_source: loaded.source.as_ref().map(|s| s.display().to_string()),
        config_sha256: p.config_sha.clone(),
        resolved_sha256: content_hash(&resolved),
        resolved_config: resolved,
        seeds: p.config.seeds.clone(),
        completed: completed.to_vec(),
        partial: partial.to_vec(),
        env: p.env.description(),
        num_states: p.env.num_states(),
        num_joint_actions: p.env.num_actions(),
        oracle_feasible: oracle::is_feasible(&p.env),
        sampler: p.sampler.clone(),
        schedule_validation: serde_json::to_value(&p.validation).expect("report serializes"),
        schedule_valid: p.validation.passed,
        features: FEATURES_NOTE.into(),
        parallel: crate::par::is_parallel(),
        version: env!("CARGO_PKG_VERSION").into(),
        files,
    };
    let path = out_dir.join(format!("{}-metadata.json", p.config.name));
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

fn distributed(p: &Prepared, opts: &RunOptions) -> Vec<Result<SeedResult>> {
    let tasks: Vec<Box<dyn FnOnce() -> Result<SeedResult> + Send + '_>> = p
        .config
        .seeds
        .iter()
        .map(|&seed| Box::new(move || run_seed(p, seed, opts)) as Box<dyn FnOnce() -> _ + Send>)
        .collect();
    run_tasks(opts.jobs, tasks)
}

fn finish_run(
    p: &Prepared,
    loaded: &LoadedConfig,
    command: &str,
    results: Vec<Result<SeedResult>>,
    mut extra_files: Vec<String>,
    opts: &RunOptions,
) -> Result<RunReport> {
    let name = &p.config.name;
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in p.config.seeds.iter().zip(results) {
        match r {
            Ok(s) => completed.push(s),
            Err(e) => {
                progress(opts, format!("{name}: seed {seed} failed: {e}"));
                failures.push((seed, e));
            }
        }
    }
    let done: Vec<u64> = completed.iter().map(|s| s.seed).collect();
    let summary_path = opts.out_dir.join(format!("{name}-summary.csv"));
    let paths: Vec<PathBuf> = done
        .iter()
        .map(|&s| opts.out_dir.join(metrics_file(name, s)))
        .collect();
    write_summary(&summary_path, name, &paths)?;
    let partial: Vec<PartialRun> = failures
        .iter()
        .map(|(seed, e)| PartialRun {
            seed: *seed,
            error: e.to_string(),
        })
        .collect();
    let mut files: Vec<String> = p
        .config
        .seeds
        .iter()
        .flat_map(|&s| [metrics_file(name, s), policy_file(name, s)])
        .collect();
    files.push(format!("{name}-summary.csv"));
    files.append(&mut extra_files);
    let metadata_path = write_metadata(p, loaded, command, &done, &partial, files, &opts.out_dir)?;
    Ok(RunReport {
        run_id: name.clone(),
        out_dir: opts.out_dir.clone(),
        completed,
        failures,
        validation: p.validation.clone(),
        metadata_path,
        summary_path,
    })
}

/// Runs the distributed learner for every seed. A config with the baseline
/// enabled also runs the comparison.
pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunReport> {
    if loaded.config.baseline.enabled {
        // `centralized_only` only applies to `compare`
        let mut with_learner = loaded.clone();
        with_learner.config.baseline.centralized_only = false;
        return compare(&with_learner, opts).map(|c| c.distributed.expect("learner requested"));
    }
    let p = prepare(loaded, opts)?;
    if !p.validation.passed {
        progress(
            opts,
            format!(
                "{}: schedule validation failed: {}",
                p.config.name,
                p.validation.messages.join("; ")
            ),
        );
    }
    let results = distributed(&p, opts);
    finish_run(&p, loaded, "run", results, Vec::new(), opts)?.into_result()
}

/// A metrics row read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub k: usize,
    pub j_exact: Option<f64>,
    pub grad_norm_exact: Option<f64>,
    pub grad_mapping_norm: Option<f64>,
    pub grad_mapping_source: Option<String>,
    pub critic_mse: Option<Vec<f64>>,
    pub disagreement_final: Option<f64>,
    pub wallclock_s: Option<f64>,
}

fn parse_field(path: &Path, v: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        return Ok(None);
    }
    v.parse().map(Some).map_err(|_| HarnessError::Io {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, format!("bad number '{v}'")),
    })
}

/// Reads a `# metrics-csv v1` file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |msg: String| HarnessError::Io {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, msg),
    };
    let body = text
        .strip_prefix(METRICS_VERSION)
        .and_then(|rest| rest.strip_prefix('\n'))
        .ok_or_else(|| bad(format!("missing '{METRICS_VERSION}' line")))?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(bad("unexpected metrics columns".into()));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mse = if rec[7].is_empty() {
            None
        } else {
            Some(
                rec[7]
                    .split(';')
                    .map(|v| parse_field(path, v).map(|x| x.unwrap_or(f64::NAN)))
                    .collect::<Result<Vec<f64>>>()?,
            )
        };
        out.push(MetricsRecord {
            run_id: rec[0].to_string(),
            seed: rec[1]
                .parse()
                .map_err(|_| bad(format!("bad seed '{}'", &rec[1])))?,
            k: rec[2]
                .parse()
                .map_err(|_| bad(format!("bad k '{}'", &rec[2])))?,
            j_exact: parse_field(path, &rec[3])?,
            grad_norm_exact: parse_field(path, &rec[4])?,
            grad_mapping_norm: parse_field(path, &rec[5])?,
            grad_mapping_source: (!rec[6].is_empty()).then(|| rec[6].to_string()),
            critic_mse: mse,
            disagreement_final: parse_field(path, &rec[8])?,
            wallclock_s: parse_field(path, &rec[9])?,
        });
    }
    Ok(out)
}

/// Median of the values present; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-k medians over the given (completed) metrics files.
pub fn write_summary(path: &Path, run_id: &str, metrics: &[PathBuf]) -> Result<()> {
    let mut by_k: BTreeMap<usize, Vec<MetricsRecord>> = BTreeMap::new();
    for m in metrics {
        for rec in read_metrics(m)? {
            by_k.entry(rec.k).or_default().push(rec);
        }
    }
    let mut file = CsvFile::create(
        path.to_path_buf(),
        SUMMARY_VERSION,
        &[
            "run_id",
            "k",
            "seeds",
            "j_exact",
            "grad_norm_exact",
            "grad_mapping_norm",
            "critic_mse_mean",
            "disagreement_final",
        ],
    )?;
    for (k, recs) in &by_k {
        let med =
            |f: &dyn Fn(&MetricsRecord) -> Option<f64>| fmt_opt(median(recs.iter().filter_map(f)));
        file.row([
            run_id.to_string(),
            k.to_string(),
            recs.len().to_string(),
            med(&|r| r.j_exact),
            med(&|r| r.grad_norm_exact),
            med(&|r| r.grad_mapping_norm),
            med(&|r| r.critic_mse.as_deref().map(mean)),
            med(&|r| r.disagreement_final),
        ])
        .map_err(io_err(path))?;
    }
    file.finish()
}

/// Result of one seed of the centralized exact-gradient baseline.
#[derive(Clone, Debug)]
pub struct CentralizedResult {
    pub seed: u64,
    /// (k, J(θ(k)), ‖∇J‖) at the metrics cadence.
    pub rows: Vec<(usize, f64, f64)>,
    pub snapshots: Vec<PolicySnapshot>,
    pub thetas: Vec<Vec<f64>>,
}

impl CentralizedResult {
    pub fn final_j(&self) -> Option<f64> {
        self.rows.last().map(|r| r.1)
    }

    pub fn final_forward(&self) -> Option<&[f64]> {
        self.snapshots.last().map(|s| s.forward.as_slice())
    }
}

fn due(k: usize, every: usize, last: usize) -> bool {
    k % every == 0 || k == last
}

fn run_centralized_seed(p: &Prepared, seed: u64, opts: &RunOptions) -> Result<CentralizedResult> {
    let cfg = &p.config;
    let name = &cfg.name;
    let problem = cfg.build_problem(&p.env, seed)?;
    let (env, net, features) = (&problem.env, &problem.net, &problem.features);
    let k_max = cfg.learner.k;
    let eta = cfg.baseline_eta();
    let s0 = start_state(env);
    progress(opts, format!("{name}: centralized seed {seed} started"));
    let metrics_path = opts
        .out_dir
        .join(format!("{name}-seed{seed}-centralized.csv"));
    let mut metrics = CsvFile::create(
        metrics_path.clone(),
        CENTRALIZED_VERSION,
        &[
            "run_id",
            "seed",
            "k",
            "j_exact",
            "grad_norm_exact",
            "step",
            "halvings",
        ],
    )?;
    let mut policy = CsvFile::create(
        opts.out_dir
            .join(format!("{name}-seed{seed}-centralized-policy.csv")),
        POLICY_VERSION,
        &["run_id", "seed", "k", "agent", "forward_prob"],
    )?;
    let oracle_err =
        |e: oracle::OracleError| HarnessError::from_learner(seed, LearnerError::Oracle(e));
    let mut thetas = problem.initial_thetas();
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    for k in 0..=k_max {
        if due(k, cfg.learner.snapshot_every, k_max) {
            let pol = ActorPolicy::new(&problem, &thetas, false)
                .map_err(|e| HarnessError::from_learner(seed, e))?;
            let snap = PolicySnapshot {
                k,
                forward: forward_probabilities(env, &pol, s0),
            };
            write_snapshot(&mut policy, name, seed, &snap).map_err(io_err(&policy.path))?;
            snapshots.push(snap);
        }
        let (j, grad_norm, step, next) = if k < k_max {
            let st =
                oracle::centralized_step(env, net, features, &thetas, eta).map_err(oracle_err)?;
            (
                st.j_before,
                st.grad_norm,
                Some((st.step, st.halvings)),
                Some(st.thetas),
            )
        } else {
            let sol = oracle::solve(env, net, features, &thetas).map_err(oracle_err)?;
            let g = sol
                .grads
                .iter()
                .flatten()
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            (sol.j_value, g, None, None)
        };
        if !j.is_finite() || !grad_norm.is_finite() {
            return Err(HarnessError::Numeric {
                seed,
                what: "centralized J".into(),
                k,
                t: None,
            });
        }
        if due(k, cfg.learner.metrics_every, k_max) {
            metrics
                .row([
                    name.clone(),
                    seed.to_string(),
                    k.to_string(),
                    fmt_f64(j),
                    fmt_f64(grad_norm),
                    step.map(|s| fmt_f64(s.0)).unwrap_or_default(),
                    step.map(|s| s.1.to_string()).unwrap_or_default(),
                ])
                .map_err(io_err(&metrics_path))?;
            rows.push((k, j, grad_norm));
        }
        if let Some(next) = next {
            thetas = next;
        }
    }
    metrics.finish()?;
    policy.finish()?;
    progress(opts, format!("{name}: centralized seed {seed} done"));
    Ok(CentralizedResult {
        seed,
        rows,
        snapshots,
        thetas,
    })
}

/// Start location label of every agent.
pub fn start_labels(env: &EnvModel) -> Vec<String> {
    match env.path_dynamics() {
        Some(d) => d
            .spec()
            .starts
            .iter()
            .map(|&s| d.spec().node_label(s))
            .collect(),
        None => vec!["start".to_string(); env.num_agents()],
    }
}

/// Mean forward probability of the agents starting at each location.
fn by_location(labels: &[String], forward: &[f64]) -> BTreeMap<String, f64> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (l, &p) in labels.iter().zip(forward) {
        groups.entry(l.clone()).or_default().push(p);
    }
    groups.into_iter().map(|(l, v)| (l, mean(&v))).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedGap {
    pub seed: u64,
    pub j_distributed: Option<f64>,
    pub j_centralized: Option<f64>,
    pub forward_distributed: BTreeMap<String, f64>,
    pub forward_centralized: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapSummary {
    pub format: String,
    pub run_id: String,
    pub baseline_eta: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedGap>,
    pub median_j_distributed: Option<f64>,
    pub median_j_centralized: Option<f64>,
    /// |median J_dist − median J_central| / |median J_central|.
    pub relative_gap: Option<f64>,
    pub median_forward_distributed: BTreeMap<String, f64>,
    pub median_forward_centralized: BTreeMap<String, f64>,
    /// |median forward_dist − median forward_central| per start location.
    pub forward_gap: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub struct CompareReport {
    /// `None` with `centralized_only`.
    pub distributed: Option<RunReport>,
    pub centralized: Vec<CentralizedResult>,
    pub gap: GapSummary,
    pub gap_path: PathBuf,
    pub paired_path: PathBuf,
}

fn median_maps(maps: impl Iterator<Item = BTreeMap<String, f64>>) -> BTreeMap<String, f64> {
    let mut all: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            all.entry(k).or_default().push(v);
        }
    }
    all.into_iter()
        .map(|(k, v)| (k, median(v).expect("non-empty group")))
        .collect()
}

/// Runs the distributed learner and the centralized exact-gradient baseline
/// on the same environment and seeds.
pub fn compare(loaded: &LoadedConfig, opts: &RunOptions) -> Result<CompareReport> {
    let p = prepare(loaded, opts)?;
    if !oracle::is_feasible(&p.env) {
        return Err(HarnessError::OracleInfeasible(format!(
            "the centralized baseline needs exact gradients, but the environment has {} states x {} joint actions = {} \
             state-action pairs, above the oracle limit of {}",
            p.env.num_states(),
            p.env.num_actions(),
            p.env.num_states().saturating_mul(p.env.num_actions()),
            oracle::ORACLE_LIMIT
        )));
    }
    let name = p.config.name.clone();
    let seeds = p.config.seeds.clone();
    let with_learner = !p.config.baseline.centralized_only;

    enum Cell {
        Dist(Result<SeedResult>),
        Central(Result<CentralizedResult>),
    }
    let pr = &p;
    let mut tasks: Vec<Box<dyn FnOnce() -> Cell + Send + '_>> = Vec::new();
    for &seed in &seeds {
        if with_learner {
            tasks.push(Box::new(move || Cell::Dist(run_seed(pr, seed, opts))));
        }
        tasks.push(Box::new(move || {
            Cell::Central(run_centralized_seed(pr, seed, opts))
        }));
    }
    let mut dist = Vec::new();
    let mut central = Vec::new();
    for cell in run_tasks(opts.jobs, tasks) {
        match cell {
            Cell::Dist(r) => dist.push(r),
            Cell::Central(r) => central.push(r),
        }
    }
    let centralized: Vec<CentralizedResult> = central.into_iter().collect::<Result<_>>()?;

    let labels = start_labels(&p.env);
    let paired_path = opts.out_dir.join(format!("{name}-paired.csv"));
    let gap_path = opts.out_dir.join(format!("{name}-gap.json"));
    let mut extra: Vec<String> = seeds
        .iter()
        .flat_map(|s| {
            [
                format!("{name}-seed{s}-centralized.csv"),
                format!("{name}-seed{s}-centralized-policy.csv"),
            ]
        })
        .collect();
    extra.push(format!("{name}-paired.csv"));
    extra.push(format!("{name}-gap.json"));

    let distributed = if with_learner {
        Some(finish_run(&p, loaded, "compare", dist, extra, opts)?)
    } else {
        let files = extra;
        write_metadata(&p, loaded, "compare", &[], &[], files, &opts.out_dir)?;
        None
    };

    let dist_by_seed: BTreeMap<u64, &SeedResult> = distributed
        .iter()
        .flat_map(|r| r.completed.iter())
        .map(|s| (s.seed, s))
        .collect();
    let mut paired = CsvFile::create(
        paired_path.clone(),
        PAIRED_VERSION,
        &[
            "run_id",
            "seed",
            "k",
            "j_distributed",
            "j_centralized",
            "j_gap",
        ],
    )?;
    let mut per_seed = Vec::new();
    for c in &centralized {
        let d = dist_by_seed.get(&c.seed);
        let d_j: BTreeMap<usize, f64> = d
            .map(|d| {
                d.rows
                    .iter()
                    .filter_map(|r| r.j_exact.map(|j| (r.k, j)))
                    .collect()
            })
            .unwrap_or_default();
        for &(k, jc, _) in &c.rows {
            let jd = d_j.get(&k).copied();
            paired
                .row([
                    name.clone(),
                    c.seed.to_string(),
                    k.to_string(),
                    fmt_opt(jd),
                    fmt_f64(jc),
                    fmt_opt(jd.map(|jd| jd - jc)),
                ])
                .map_err(io_err(&paired_path))?;
        }
        per_seed.push(SeedGap {
            seed: c.seed,
            j_distributed: d.and_then(|d| d.final_j()),
            j_centralized: c.final_j(),
            forward_distributed: d
                .and_then(|d| d.final_forward())
                .map(|f| by_location(&labels, f))
                .unwrap_or_default(),
            forward_centralized: c
                .final_forward()
                .map(|f| by_location(&labels, f))
                .unwrap_or_default(),
        });
    }
    paired.finish()?;

    let median_j_distributed = median(per_seed.iter().filter_map(|s| s.j_distributed));
    let median_j_centralized = median(per_seed.iter().filter_map(|s| s.j_centralized));
    let relative_gap = match (median_j_distributed, median_j_centralized) {
        (Some(d), Some(c)) => Some((d - c).abs() / c.abs()),
        _ => None,
    };
    let completed_dist: Vec<&SeedGap> = per_seed
        .iter()
        .filter(|s| s.j_distributed.is_some())
        .collect();
    let median_forward_distributed =
        median_maps(completed_dist.iter().map(|s| s.forward_distributed.clone()));
    let median_forward_centralized =
        median_maps(per_seed.iter().map(|s| s.forward_centralized.clone()));
    let forward_gap = median_forward_distributed
        .iter()
        .filter_map(|(l, d)| {
            median_forward_centralized
                .get(l)
                .map(|c| (l.clone(), (d - c).abs()))
        })
        .collect();
    let gap = GapSummary {
        format: GAP_VERSION.into(),
        run_id: name.clone(),
        baseline_eta: p.config.baseline_eta(),
        seeds,
        per_seed,
        median_j_distributed,
        median_j_centralized,
        relative_gap,
        median_forward_distributed,
        median_forward_centralized,
        forward_gap,
    };
    let text = serde_json::to_string_pretty(&gap).expect("gap summary serializes");
    fs::write(&gap_path, text + "\n").map_err(io_err(&gap_path))?;

    let distributed = match distributed {
        Some(r) => Some(r.into_result()?),
        None => None,
    };
    Ok(CompareReport {
        distributed,
        centralized,
        gap,
        gap_path,
        paired_path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Batch,
    Isolation,
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "batch" => Ok(Self::Batch),
            "isolation" => Ok(Self::Isolation),
            _ => Err(format!(
                "unknown ablation axis '{s}' (expected batch or isolation)"
            )),
        }
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Batch => "batch",
            Self::Isolation => "isolation",
        })
    }
}

/// One ablation cell's summary.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub run_id: String,
    pub value: String,
    pub seeds_completed: usize,
    pub schedule_valid: bool,
    pub isolated_agents: Vec<usize>,
    pub window_start: usize,
    /// Medians over seeds of each seed's median over the final window.
    pub j_exact: Option<f64>,
    pub grad_norm_exact: Option<f64>,
    pub grad_mapping_norm: Option<f64>,
    pub disagreement_final: Option<f64>,
    /// Medians over seeds of the value at k = K.
    pub final_j_exact: Option<f64>,
    pub final_grad_norm_exact: Option<f64>,
}

#[derive(Debug)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub cells: Vec<RunReport>,
    pub rows: Vec<AblationRow>,
    pub summary_path: PathBuf,
}

fn parse_isolation(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    v.split('+')
        .map(|a| match a.trim().parse::<usize>() {
            Ok(i) if i >= 1 => Ok(i),
            _ => Err(format!(
                "isolation value '{v}': agents are 1-based labels joined by '+', e.g. 2+5"
            )),
        })
        .collect()
}

/// First k of the final window: the last tenth of the run.
pub fn final_window_start(k: usize) -> usize {
    k - k / 10
}

fn ablation_row(report: &RunReport, value: &str, k_max: usize) -> AblationRow {
    let start = final_window_start(k_max);
    let window = |f: &dyn Fn(&IterationMetrics) -> Option<f64>| {
        median(
            report
                .completed
                .iter()
                .filter_map(|s| median(s.rows.iter().filter(|r| r.k >= start).filter_map(f))),
        )
    };
    let last = |f: &dyn Fn(&IterationMetrics) -> Option<f64>| {
        median(
            report
                .completed
                .iter()
                .filter_map(|s| s.final_row().and_then(f)),
        )
    };
    AblationRow {
        run_id: report.run_id.clone(),
        value: value.to_string(),
        seeds_completed: report.completed.len(),
        schedule_valid: report.validation.passed,
        isolated_agents: report.validation.isolated_agents.clone(),
        window_start: start,
        j_exact: window(&|r| r.j_exact),
        grad_norm_exact: window(&|r| r.grad_norm_exact),
        grad_mapping_norm: window(&|r| r.grad_mapping_norm),
        disagreement_final: window(&|r| r.disagreement_final),
        final_j_exact: last(&|r| r.j_exact),
        final_grad_norm_exact: last(&|r| r.grad_norm_exact),
    }
}

/// One full run per value along `axis`, then a table of final-window medians.
pub fn ablate(
    loaded: &LoadedConfig,
    axis: AblationAxis,
    values: &[String],
    opts: &RunOptions,
) -> Result<AblationReport> {
    let values: Vec<String> = values
        .iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(HarnessError::Usage(format!(
            "ablate --axis {axis} needs at least one value"
        )));
    }
    let base = &loaded.config;
    let mut cells = Vec::new();
    for v in &values {
        let mut cfg = base.clone();
        cfg.baseline.enabled = false;
        match axis {
            AblationAxis::Batch => {
                let b: usize = v.parse().ok().filter(|&b| b >= 1).ok_or_else(|| {
                    HarnessError::Usage(format!("batch value '{v}' is not a positive integer"))
                })?;
                cfg.learner.batch_size = b;
                cfg.name = format!("{}-batch{b}", base.name);
            }
            AblationAxis::Isolation => {
                let agents = parse_isolation(v).map_err(HarnessError::Usage)?;
                cfg.name = if agents.is_empty() {
                    format!("{}-iso-none", base.name)
                } else {
                    let tag: Vec<String> = agents.iter().map(usize::to_string).collect();
                    format!("{}-iso-{}", base.name, tag.join("+"))
                };
                cfg.comm.isolate = agents;
            }
        }
        cells.push((v.clone(), cfg));
    }
    // surface config errors (e.g. a missing agent) before anything runs
    let mut prepared = Vec::new();
    for (v, cfg) in cells {
        let cell = LoadedConfig {
            config: cfg,
            source: loaded.source.clone(),
            text: loaded.text.clone(),
        };
        let p = prepare(&cell, opts)?;
        if !p.validation.passed {
            progress(
                opts,
                format!(
                    "{}: schedule validation failed: {}",
                    p.config.name,
                    p.validation.messages.join("; ")
                ),
            );
        }
        prepared.push((v, cell, p));
    }

    let jobs: Vec<(usize, u64)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(c, (_, _, p))| p.config.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let tasks: Vec<Box<dyn FnOnce() -> Result<SeedResult> + Send + '_>> = jobs
        .iter()
        .map(|&(c, seed)| {
            let p = &prepared[c].2;
            Box::new(move || run_seed(p, seed, opts)) as Box<dyn FnOnce() -> _ + Send>
        })
        .collect();
    let mut results = run_tasks(opts.jobs, tasks).into_iter();

    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (v, cell, p) in &prepared {
        let cell_results: Vec<Result<SeedResult>> =
            results.by_ref().take(p.config.seeds.len()).collect();
        let report = finish_run(p, cell, "ablate", cell_results, Vec::new(), opts)?;
        rows.push(ablation_row(&report, v, p.config.learner.k));
        reports.push(report);
    }

    let summary_path = opts
        .out_dir
        .join(format!("{}-ablation-{axis}.csv", base.name));
    let mut file = CsvFile::create(
        summary_path.clone(),
        ABLATION_VERSION,
        &[
            "run_id",
            "axis",
            "value",
            "seeds_completed",
            "schedule_valid",
            "isolated_agents",
            "window_start",
            "j_exact",
            "grad_norm_exact",
            "grad_mapping_norm",
            "disagreement_final",
            "final_j_exact",
            "final_grad_norm_exact",
        ],
    )?;
    for r in &rows {
        let isolated: Vec<String> = r.isolated_agents.iter().map(usize::to_string).collect();
        file.row([
            r.run_id.clone(),
            axis.to_string(),
            r.value.clone(),
            r.seeds_completed.to_string(),
            r.schedule_valid.to_string(),
            isolated.join("+"),
            r.window_start.to_string(),
            fmt_opt(r.j_exact),
            fmt_opt(r.grad_norm_exact),
            fmt_opt(r.grad_mapping_norm),
            fmt_opt(r.disagreement_final),
            fmt_opt(r.final_j_exact),
            fmt_opt(r.final_grad_norm_exact),
        ])
        .map_err(io_err(&summary_path))?;
    }
    file.finish()?;

    if let Some(e) = reports
        .iter_mut()
        .find_map(|r| (!r.failures.is_empty()).then(|| r.failures.remove(0).1))
    {
        return Err(e);
    }
    Ok(AblationReport {
        axis,
        cells: reports,
        rows,
        summary_path,
    })
}

/// What `validate` reports about a configuration.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationSummary {
    pub run_id: String,
    pub config_sha256: String,
    pub num_agents: usize,
    pub num_states: usize,
    pub num_joint_actions: usize,
    pub oracle_feasible: bool,
    pub sampler: String,
    pub critic_params_per_agent: usize,
    pub actor_params_per_agent: usize,
    pub schedule: ValidationReport,
    pub resolved_config: String,
}

/// Parses the config, builds the environment and schedule and validates the
/// schedule. Validation failures are reported, not raised.
pub fn validate(loaded: &LoadedConfig) -> Result<ValidationSummary> {
    let cfg = &loaded.config;
    let env = cfg.build_env()?;
    let sched = cfg.build_schedule(env.num_agents())?;
    let sampler =
        Sampler::new(&env, cfg.learner.sampler).map_err(|e| HarnessError::from_learner(0, e))?;
    let mut net = cfg.net.clone();
    net.num_agents = env.num_agents();
    Ok(ValidationSummary {
        run_id: cfg.name.clone(),
        config_sha256: content_hash(&loaded.text),
        num_agents: env.num_agents(),
        num_states: env.num_states(),
        num_joint_actions: env.num_actions(),
        oracle_feasible: oracle::is_feasible(&env),
        sampler: if sampler.is_exact() { "exact" } else { "chain" }.into(),
        critic_params_per_agent: net.critic_len(),
        actor_params_per_agent: net.actor_len(),
        schedule: sched.validate(),
        resolved_config: cfg.render(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(std::iter::empty()), None);
    }

    #[test]
    fn isolation_values() {
        assert_eq!(parse_isolation("none").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_isolation("2+5").unwrap(), vec![2, 5]);
        assert!(parse_isolation("0").is_err());
        assert!(parse_isolation("2,5").is_err());
    }

    #[test]
    fn tasks_keep_order() {
        for jobs in [1, 3] {
            let tasks: Vec<Box<dyn FnOnce() -> usize + Send>> = (0..10usize)
                .map(|i| Box::new(move || i * i) as Box<dyn FnOnce() -> usize + Send>)
                .collect();
            assert_eq!(
                run_tasks(jobs, tasks),
                (0..10).map(|i| i * i).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn window_start() {
        assert_eq!(final_window_start(4000), 3600);
        assert_eq!(final_window_start(5), 5);
        assert_eq!(final_window_start(0), 0);
    }
}
