//! Benchmark harness around the two-stage stochastic solver stack.
//!
//! The harness mirrors one experimental protocol end to end: `generate`
//! writes evaluation instances and labeled datasets, `train` fits the
//! per-family predictors, `solve` runs one method on one instance, `bench`
//! runs every configured method over fresh evaluation instances against the
//! extensive-form oracle, and `report` renders aggregated quantile tables.
//!
//! Seeds are split into disjoint streams (training, evaluation, tuning) so
//! evaluation instances never coincide with anything the predictors saw.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lshaped_core::families::{gen_examples, gen_examples_relaxed, Labeling};
use lshaped_core::lshaped::{
    extensive_form_optimum, solve, two_phase_solve, PredictorBundle, SecondStage, SolveConfig,
    SolveResult,
};
use lshaped_core::report::{aggregate, render_csv, render_text, ReportError, ReportRow};
use lshaped_core::surrogate::{
    avg_abs_relative_error, load_network, save_dataset, save_network, train_with_report, Network,
    NetworkSpec, TrainConfig,
};
use lshaped_core::{derive_seed, FamilyParams, TwoStageProblem};

/// Stream tags separating the seed spaces; evaluation instances must never
/// reuse training or tuning seeds.
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const TUNING_STREAM: u64 = 3;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exact integer L-shaped: integral-value pricing at every candidate.
    StdL,
    /// Exact alternating strategy: continuous cut first, integer fallback.
    AltL,
    /// Surrogate-driven standard strategy.
    MlStdL,
    /// Surrogate-driven alternating strategy.
    MlAltL,
    /// Surrogate phase, then exact phase warm-started with its incumbent.
    TwoPhase,
    /// Two-phase plus the probabilistic objective bound from past optima.
    TwoPhaseBound,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::StdL => "std-l",
            Method::AltL => "alt-l",
            Method::MlStdL => "ml-std-l",
            Method::MlAltL => "ml-alt-l",
            Method::TwoPhase => "two-phase",
            Method::TwoPhaseBound => "two-phase-bound",
        }
    }

    pub fn uses_predictors(self) -> bool {
        !matches!(self, Method::StdL | Method::AltL)
    }

    fn needs_relaxed_net(self) -> bool {
        matches!(self, Method::MlAltL | Method::TwoPhase | Method::TwoPhaseBound)
    }
}

fn default_instances() -> usize {
    50
}
fn default_methods() -> Vec<Method> {
    vec![Method::StdL, Method::AltL]
}
fn default_baseline() -> Method {
    Method::AltL
}
fn default_mu() -> f64 {
    0.98
}
fn default_nu() -> f64 {
    0.95
}
fn default_history() -> usize {
    10
}

/// Network size and optimizer settings for one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSettings {
    pub hidden_layers: usize,
    pub units_per_layer: usize,
}

fn default_n_examples() -> usize {
    20_000
}
fn default_value_net() -> NetSettings {
    NetSettings {
        hidden_layers: 4,
        units_per_layer: 64,
    }
}
fn default_relaxed_net() -> NetSettings {
    NetSettings {
        hidden_layers: 6,
        units_per_layer: 80,
    }
}
fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    3e-3
}
fn default_patience() -> usize {
    40
}
fn default_max_epochs() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    #[serde(default = "default_n_examples")]
    pub n_examples: usize,
    #[serde(default)]
    pub labeling: Labeling,
    #[serde(default = "default_value_net")]
    pub value_net: NetSettings,
    #[serde(default = "default_relaxed_net")]
    pub relaxed_net: NetSettings,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            n_examples: 20_000,
            labeling: Labeling::Full,
            value_net: NetSettings {
                hidden_layers: 4,
                units_per_layer: 64,
            },
            relaxed_net: NetSettings {
                hidden_layers: 6,
                units_per_layer: 80,
            },
            batch_size: 128,
            learning_rate: 3e-3,
            patience: 40,
            max_epochs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: FamilyParams,
    #[serde(default = "default_instances")]
    pub n_instances: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_baseline")]
    pub baseline: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub time_limit_secs: Option<f64>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Exactly solved extra instances feeding the probabilistic bound.
    #[serde(default = "default_history")]
    pub history_len: usize,
    /// Reference solve the gap columns are measured against.
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub training: TrainingSettings,
    /// Overrides for the predictor files; default `<out>/value_net.json` and
    /// `<out>/relaxed_net.json`.
    #[serde(default)]
    pub value_net_path: Option<PathBuf>,
    #[serde(default)]
    pub relaxed_net_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.n_instances < 1 {
            bail!("n_instances must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("at least one method must be configured");
        }
        if self.training.n_examples < 1 {
            bail!("training.n_examples must be at least 1");
        }
        for (name, v) in [("mu", self.mu), ("nu", self.nu)] {
            if !(v > 0.0 && v <= 1.0) {
                bail!("{name} must lie in (0, 1], got {v}");
            }
        }
        Ok(())
    }

    /// Base seed for example generation.
    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, TRAIN_STREAM)
    }

    /// Per-instance evaluation seeds; disjoint from the training stream.
    pub fn eval_seeds(&self) -> Vec<u64> {
        let base = derive_seed(self.seed, EVAL_STREAM);
        (0..self.n_instances)
            .map(|i| derive_seed(base, i as u64))
            .collect()
    }

    /// Seeds of the exactly solved instances backing the probabilistic
    /// bound; a third disjoint stream.
    pub fn tuning_seeds(&self) -> Vec<u64> {
        let base = derive_seed(self.seed, TUNING_STREAM);
        (0..self.history_len)
            .map(|i| derive_seed(base, i as u64))
            .collect()
    }

    pub fn value_net_path(&self, out: &Path) -> PathBuf {
        self.value_net_path
            .clone()
            .unwrap_or_else(|| out.join("value_net.json"))
    }

    pub fn relaxed_net_path(&self, out: &Path) -> PathBuf {
        self.relaxed_net_path
            .clone()
            .unwrap_or_else(|| out.join("relaxed_net.json"))
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub train_seed: u64,
    pub eval_seeds: Vec<u64>,
    pub n_examples: usize,
    /// 64/16/20 split sizes the trainer will produce.
    pub split_sizes: (usize, usize, usize),
    /// Relative file name → SHA-256 of contents.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Split sizes used by the dataset splitter: 64% train, 16% validation,
/// remainder test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 64 / 100;
    let val = n * 16 / 100;
    (train, val, n - train - val)
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(out.join("instances"))?;
    let mut files = BTreeMap::new();

    for (i, seed) in config.eval_seeds().iter().enumerate() {
        let problem = config.family.gen_instance(*seed)?;
        let name = format!("instances/instance_{i:03}.json");
        let path = out.join(&name);
        std::fs::write(&path, problem.to_json())?;
        files.insert(name, hash_file(&path)?);
    }

    let train_seed = config.train_seed();
    let (value_data, _) = gen_examples(
        &config.family,
        config.training.n_examples,
        config.training.labeling,
        train_seed,
    )?;
    let value_path = out.join("dataset_value.json");
    save_dataset(&value_data, &value_path)?;
    files.insert("dataset_value.json".into(), hash_file(&value_path)?);

    let (relaxed_data, _) = gen_examples_relaxed(
        &config.family,
        config.training.n_examples,
        derive_seed(train_seed, 1),
    )?;
    let relaxed_path = out.join("dataset_relaxed.json");
    save_dataset(&relaxed_data, &relaxed_path)?;
    files.insert("dataset_relaxed.json".into(), hash_file(&relaxed_path)?);

    let manifest = Manifest {
        config_sha256: sha256_hex(serde_json::to_string(config)?.as_bytes()),
        seed: config.seed,
        train_seed,
        eval_seeds: config.eval_seeds(),
        n_examples: config.training.n_examples,
        split_sizes: split_sizes(config.training.n_examples),
        files,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// One line of the training report: a (target, per-output test error) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReportRow {
    pub target: String,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_val_l1: f64,
    /// Average absolute relative test error per output, in percent.
    pub test_are_percent: Vec<f64>,
}

fn train_one(
    dataset_path: &Path,
    settings: &NetSettings,
    training: &TrainingSettings,
    output_len_hint: Option<usize>,
    seed: u64,
    target: &str,
) -> Result<(Network, TrainReportRow)> {
    let data = lshaped_core::surrogate::load_dataset(dataset_path)
        .with_context(|| format!("loading {}", dataset_path.display()))?;
    if let Some(expected) = output_len_hint {
        if data.label_len != expected {
            bail!(
                "dataset {} has label length {}, expected {expected}",
                dataset_path.display(),
                data.label_len
            );
        }
    }
    let spec = NetworkSpec::new(
        data.feature_len,
        data.label_len,
        settings.hidden_layers,
        settings.units_per_layer,
    )?;
    let (train_set, val_set, test_set) = data.split(seed);
    let config = TrainConfig {
        batch_size: training.batch_size,
        learning_rate: training.learning_rate,
        patience: training.patience,
        max_epochs: training.max_epochs,
        seed,
    };
    let (net, report) = train_with_report(&train_set, &val_set, &spec, &config)?;
    let are = avg_abs_relative_error(&net, &test_set)?;
    Ok((
        net,
        TrainReportRow {
            target: target.to_string(),
            epochs_run: report.epochs_run,
            stopped_early: report.stopped_early,
            best_val_l1: report.best_val_l1,
            test_are_percent: are.iter().map(|e| 100.0 * e).collect(),
        },
    ))
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<Vec<TrainReportRow>> {
    config.validate()?;
    let seed = derive_seed(config.train_seed(), 99);
    let mut rows = Vec::new();

    let (value_net, value_row) = train_one(
        &out.join("dataset_value.json"),
        &config.training.value_net,
        &config.training,
        Some(1),
        seed,
        "integral-value",
    )?;
    save_network(&value_net, &config.value_net_path(out))?;
    rows.push(value_row);

    let (relaxed_net, relaxed_row) = train_one(
        &out.join("dataset_relaxed.json"),
        &config.training.relaxed_net,
        &config.training,
        Some(config.family.relaxed_label_len()),
        derive_seed(seed, 1),
        "relaxed-value",
    )?;
    save_network(&relaxed_net, &config.relaxed_net_path(out))?;
    rows.push(relaxed_row);

    std::fs::write(
        out.join("train_report.json"),
        serde_json::to_string_pretty(&rows)?,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// solve / bench
// ---------------------------------------------------------------------------

/// Loaded predictor files shared across instances of one bench run.
pub struct LoadedNets {
    pub value: Option<Arc<Network>>,
    pub relaxed: Option<Arc<Network>>,
}

pub fn load_nets(config: &ExperimentConfig, out: &Path, methods: &[Method]) -> Result<LoadedNets> {
    let needs_value = methods.iter().any(|m| m.uses_predictors());
    let needs_relaxed = methods.iter().any(|m| m.needs_relaxed_net());
    let value = if needs_value {
        let path = config.value_net_path(out);
        Some(Arc::new(load_network(&path).with_context(|| {
            format!("loading value predictor {}", path.display())
        })?))
    } else {
        None
    };
    let relaxed = if needs_relaxed {
        let path = config.relaxed_net_path(out);
        Some(Arc::new(load_network(&path).with_context(|| {
            format!("loading relaxed predictor {}", path.display())
        })?))
    } else {
        None
    };
    Ok(LoadedNets { value, relaxed })
}

fn bundle_for(
    config: &ExperimentConfig,
    nets: &LoadedNets,
    problem: &TwoStageProblem,
    method: Method,
) -> Result<PredictorBundle> {
    let value = nets
        .value
        .clone()
        .context("value predictor required but not loaded")?;
    let relaxed = if method.needs_relaxed_net() {
        Some(
            nets.relaxed
                .clone()
                .context("relaxed predictor required but not loaded")?,
        )
    } else {
        None
    };
    Ok(PredictorBundle {
        feature_map: config.family.feature_map(problem),
        value_net: Some(value),
        relaxed_net: relaxed,
    })
}

/// Runs one method on one instance; `history` feeds the probabilistic bound
/// of [`Method::TwoPhaseBound`].
pub fn run_method(
    config: &ExperimentConfig,
    nets: &LoadedNets,
    problem: &TwoStageProblem,
    method: Method,
    history: &[f64],
) -> Result<SolveResult> {
    let base = SolveConfig {
        time_limit_secs: config.time_limit_secs,
        ..SolveConfig::exact(false)
    };
    let result = match method {
        Method::StdL => solve(problem, &base)?,
        Method::AltL => solve(
            problem,
            &SolveConfig {
                alternating: true,
                ..base
            },
        )?,
        Method::MlStdL | Method::MlAltL => {
            let alternating = method == Method::MlAltL;
            let cfg = SolveConfig {
                alternating,
                second_stage: SecondStage::Predicted(bundle_for(config, nets, problem, method)?),
                mu: config.mu,
                nu: config.nu,
                ..base
            };
            solve(problem, &cfg)?
        }
        Method::TwoPhase | Method::TwoPhaseBound => {
            let cfg = SolveConfig {
                alternating: true,
                second_stage: SecondStage::Predicted(bundle_for(config, nets, problem, method)?),
                mu: config.mu,
                nu: config.nu,
                ..base
            };
            two_phase_solve(problem, &cfg, method == Method::TwoPhaseBound, history)?
        }
    };
    Ok(result)
}

/// Exact optima of the tuning-stream instances, the history behind the
/// probabilistic bound.  Solved by the exact alternating-cut method, which
/// scales to families whose extensive form is out of reach.
pub fn build_history(config: &ExperimentConfig) -> Result<Vec<f64>> {
    config
        .tuning_seeds()
        .iter()
        .map(|seed| {
            let problem = config.family.gen_instance(*seed)?;
            Ok(solve(&problem, &SolveConfig::exact(true))?.first_stage_objective)
        })
        .collect()
}

/// Reference optimum each record's gap is measured against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Deterministic-equivalent MILP, solved independently of the
    /// decomposition; the strongest check but only viable on small desk
    /// instances.
    #[default]
    ExtensiveForm,
    /// Exact alternating-cut solve; same optimum, far cheaper on families
    /// whose extensive form is too large for plain branch-and-bound.
    ExactLShaped,
    /// Skip the reference solve; gap columns are absent.
    None,
}

fn compute_oracle(config: &ExperimentConfig, seed: u64) -> Result<Option<f64>> {
    let problem = config.family.gen_instance(seed)?;
    Ok(match config.oracle {
        OracleMode::ExtensiveForm => Some(extensive_form_optimum(&problem)?),
        OracleMode::ExactLShaped => {
            Some(solve(&problem, &SolveConfig::exact(true))?.first_stage_objective)
        }
        OracleMode::None => None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance: usize,
    pub seed: u64,
    pub method: Method,
    pub oracle: Option<f64>,
    pub wall_secs: f64,
    /// Signed optimality gap vs the oracle, in percent.
    pub gap_percent: Option<f64>,
    pub result: Option<SolveResult>,
    pub error: Option<String>,
}

impl InstanceRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs `f` over `0..n` on a scoped worker pool; the output order matches
/// the input order no matter which worker finished first.
pub fn run_indexed<T: Send, F: Fn(usize) -> T + Sync>(n: usize, jobs: usize, f: F) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let mut collected: Vec<(usize, T)> = Vec::with_capacity(n);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                let next = &next;
                let f = &f;
                scope.spawn(move || {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            return local;
                        }
                        local.push((i, f(i)));
                    }
                })
            })
            .collect();
        for handle in handles {
            collected.extend(handle.join().expect("worker panicked"));
        }
    });
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, t)| t).collect()
}

pub struct BenchOutput {
    pub records: Vec<InstanceRecord>,
    pub rows: Vec<ReportRow>,
    pub n_failures: usize,
}

fn record_one(
    config: &ExperimentConfig,
    nets: &LoadedNets,
    history: &[f64],
    instance: usize,
    seed: u64,
    method: Method,
    oracle: Option<f64>,
) -> InstanceRecord {
    let started = Instant::now();
    let outcome = config
        .family
        .gen_instance(seed)
        .map_err(anyhow::Error::from)
        .and_then(|problem| {
            let result = run_method(config, nets, &problem, method, history)?;
            if method.uses_predictors() && result.n_exact_subproblem_solves != 0 {
                bail!(
                    "surrogate run made {} exact in-tree subproblem solves",
                    result.n_exact_subproblem_solves
                );
            }
            Ok(result)
        });
    let wall_secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(result) => {
            let gap_percent = oracle.map(|o| {
                100.0 * (result.first_stage_objective - o) / o.abs().max(1e-9)
            });
            InstanceRecord {
                instance,
                seed,
                method,
                oracle,
                wall_secs,
                gap_percent,
                result: Some(result),
                error: None,
            }
        }
        Err(e) => InstanceRecord {
            instance,
            seed,
            method,
            oracle,
            wall_secs,
            gap_percent: None,
            result: None,
            error: Some(format!("{e:#}")),
        },
    }
}

pub fn cmd_bench(
    config: &ExperimentConfig,
    out: &Path,
    baseline: Method,
    jobs: usize,
) -> Result<BenchOutput> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let nets = load_nets(config, out, &config.methods)?;
    let history = if config.methods.contains(&Method::TwoPhaseBound) {
        build_history(config)?
    } else {
        Vec::new()
    };

    let seeds = config.eval_seeds();
    // One reference solve per instance, shared by every method's record.
    let oracles: Vec<std::result::Result<Option<f64>, String>> =
        run_indexed(seeds.len(), jobs, |i| {
            compute_oracle(config, seeds[i]).map_err(|e| format!("{e:#}"))
        });

    let work: Vec<(usize, u64, Method)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(i, seed)| config.methods.iter().map(move |m| (i, *seed, *m)))
        .collect();
    let records = run_indexed(work.len(), jobs, |k| {
        let (instance, seed, method) = work[k];
        match &oracles[instance] {
            Ok(oracle) => record_one(config, &nets, &history, instance, seed, method, *oracle),
            Err(e) => InstanceRecord {
                instance,
                seed,
                method,
                oracle: None,
                wall_secs: 0.0,
                gap_percent: None,
                result: None,
                error: Some(format!("reference solve failed: {e}")),
            },
        }
    });

    let n_failures = records.iter().filter(|r| !r.ok()).count();
    let rows = aggregate_records(&records, &config.methods, baseline)?;

    std::fs::write(
        out.join("records.json"),
        serde_json::to_string_pretty(&records)?,
    )?;
    std::fs::write(out.join("bench_report.csv"), render_csv(&rows))?;
    std::fs::write(out.join("bench_report.txt"), render_text(&rows))?;
    Ok(BenchOutput {
        records,
        rows,
        n_failures,
    })
}

// ---------------------------------------------------------------------------
// Aggregation over records
// ---------------------------------------------------------------------------

fn metric_of(record: &InstanceRecord, metric: &str) -> Option<f64> {
    let r = record.result.as_ref()?;
    Some(match metric {
        "wall_secs" => record.wall_secs,
        "objective" => r.first_stage_objective,
        "gap_percent" => record.gap_percent?,
        "nodes" => r.node_count as f64,
        "lp_solves" => r.lp_solves as f64,
        "integer_cuts" => r.n_integer_cuts as f64,
        "continuous_cuts" => r.n_continuous_cuts as f64,
        "exact_solves" => r.n_exact_subproblem_solves as f64,
        "relaxed_solves" => r.n_relaxed_subproblem_solves as f64,
        "predictions" => r.n_predictions as f64,
        "final_evals" => r.n_final_exact_evals as f64,
        "retries" => r.retries_used as f64,
        "exact_secs" => r.times.exact_second_stage_secs,
        "relaxed_secs" => r.times.relaxed_second_stage_secs,
        "predict_secs" => r.times.prediction_secs,
        "final_eval_secs" => r.times.final_eval_secs,
        "warm_start_secs" => r.times.warm_start_secs,
        _ => return None,
    })
}

pub const BENCH_METRICS: &[&str] = &[
    "wall_secs",
    "objective",
    "gap_percent",
    "nodes",
    "lp_solves",
    "integer_cuts",
    "continuous_cuts",
    "exact_solves",
    "relaxed_solves",
    "predictions",
    "final_evals",
    "retries",
    "exact_secs",
    "relaxed_secs",
    "predict_secs",
    "final_eval_secs",
    "warm_start_secs",
];

/// Metrics where a ratio against the baseline is meaningful.
const RATIO_METRICS: &[&str] = &["wall_secs", "nodes", "lp_solves"];

/// Aggregates per-instance records into one row per (method, metric).
/// Failed instances are excluded; ratio columns pair each method with the
/// baseline on the instances where both succeeded.
pub fn aggregate_records(
    records: &[InstanceRecord],
    methods: &[Method],
    baseline: Method,
) -> Result<Vec<ReportRow>> {
    let by_method = |m: Method| -> BTreeMap<usize, &InstanceRecord> {
        records
            .iter()
            .filter(|r| r.method == m && r.ok())
            .map(|r| (r.instance, r))
            .collect()
    };
    let baseline_records = by_method(baseline);
    let mut rows = Vec::new();
    for &method in methods {
        let own = by_method(method);
        if own.is_empty() {
            continue;
        }
        for metric in BENCH_METRICS {
            let values: Vec<f64> = own
                .values()
                .filter_map(|&r| metric_of(r, metric))
                .collect();
            if values.is_empty() {
                continue;
            }
            let name = format!("{}.{}", method.name(), metric);
            let want_ratio = RATIO_METRICS.contains(metric) && !baseline_records.is_empty();
            let row = if want_ratio {
                // Pair on instances where both the method and baseline ran.
                let mut paired = Vec::new();
                let mut base = Vec::new();
                for (i, &r) in &own {
                    if let (Some(v), Some(b)) = (
                        metric_of(r, metric),
                        baseline_records
                            .get(i)
                            .copied()
                            .and_then(|b| metric_of(b, metric)),
                    ) {
                        paired.push(v);
                        base.push(b);
                    }
                }
                match aggregate(&name, &paired, Some(&base)) {
                    Ok(row) => row,
                    // Zero baseline values make the ratio undefined; fall
                    // back to the plain aggregate.
                    Err(ReportError::BaselineZero(_)) | Err(ReportError::Empty) => {
                        aggregate(&name, &values, None)?
                    }
                    Err(e) => return Err(e.into()),
                }
            } else {
                aggregate(&name, &values, None)?
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// solve / report commands
// ---------------------------------------------------------------------------

pub fn cmd_solve(
    config: &ExperimentConfig,
    out: &Path,
    instance_path: &Path,
    method: Method,
) -> Result<SolveResult> {
    let text = std::fs::read_to_string(instance_path)
        .with_context(|| format!("reading instance {}", instance_path.display()))?;
    let problem = TwoStageProblem::from_json(&text)?;
    let nets = load_nets(config, out, &[method])?;
    let history = if method == Method::TwoPhaseBound {
        build_history(config)?
    } else {
        Vec::new()
    };
    run_method(config, &nets, &problem, method, &history)
}

pub fn cmd_report(records_path: &Path, methods: &[Method], baseline: Method) -> Result<String> {
    let text = std::fs::read_to_string(records_path)
        .with_context(|| format!("reading records {}", records_path.display()))?;
    let records: Vec<InstanceRecord> = serde_json::from_str(&text)?;
    let methods: Vec<Method> = if methods.is_empty() {
        let mut seen: Vec<Method> = records.iter().map(|r| r.method).collect();
        seen.sort();
        seen.dedup();
        seen
    } else {
        methods.to_vec()
    };
    let rows = aggregate_records(&records, &methods, baseline)?;
    Ok(format!("{}\n{}", render_csv(&rows), render_text(&rows)))
}
