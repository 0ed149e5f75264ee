//! Multi-seed sweeps, distribution summaries and pairwise comparisons.
//!
//! A sweep trains every (activation, scheme) variant once per seed. Each run
//! writes its metric rows to `runs/<run_id>.jsonl` while it trains and a
//! `runs/<run_id>.json` outcome when it finishes; a rerun skips any run whose
//! outcome file exists.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::activations::{ActivationKind, ActivationSpec, SharingScheme};
use crate::data::{load_named, subset, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::{build_paper_model_with, paper_architecture, save_checkpoint, Model, CIFAR_INPUT};
use crate::rng::{stream, Stream};
use crate::training::{
    train_run_with, AdamConfig, L2Convention, LogLevel, MetricRow, RunRecord, TrainConfig,
};

/// One activation configuration under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub kind: ActivationKind,
    pub scheme: SharingScheme,
}

impl Variant {
    pub fn new(kind: ActivationKind, scheme: SharingScheme) -> Self {
        Self { kind, scheme }
    }

    /// `pilu_channel`, or just `relu` for kinds without adaptive parameters.
    pub fn id(&self) -> String {
        if self.kind.arity() == 0 {
            self.kind.name().to_string()
        } else {
            format!("{}_{}", self.kind.name(), self.scheme.name())
        }
    }

    pub fn label(&self) -> String {
        if self.kind.arity() == 0 {
            self.kind.label().to_string()
        } else {
            format!("{} ({})", self.kind.label(), self.scheme.name())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub activations: Vec<ActivationKind>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SharingScheme>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Stratified training subset size; `None` trains on the full split.
    #[serde(default)]
    pub subset: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Seed of the subset draw, shared by every run.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_l2")]
    pub l2_lambda: f64,
    #[serde(default)]
    pub l2_convention: L2Convention,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub log_level: LogLevel,
}

fn default_schemes() -> Vec<SharingScheme> {
    vec![SharingScheme::ChannelWise]
}

fn default_seeds() -> Vec<u64> {
    (0..30).collect()
}

fn default_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    32
}

fn default_l2() -> f64 {
    1e-3
}

pub const DEFAULT_ACTIVATIONS: [ActivationKind; 4] = [
    ActivationKind::Relu,
    ActivationKind::Prelu,
    ActivationKind::DoubleRelu,
    ActivationKind::Pilu,
];

impl ExperimentConfig {
    /// 30 seeds × 50 epochs on the full training split.
    pub fn full(dataset: &str, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.to_string(),
            activations: DEFAULT_ACTIVATIONS.to_vec(),
            schemes: default_schemes(),
            seeds: default_seeds(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            subset: None,
            output_dir: output_dir.into(),
            data_dir: None,
            data_seed: 0,
            l2_lambda: default_l2(),
            l2_convention: L2Convention::Full,
            adam: AdamConfig::default(),
            log_level: LogLevel::Metrics,
        }
    }

    /// 5 seeds × 10 epochs on a 5,000-image stratified subset.
    pub fn desk_scale(dataset: &str, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            seeds: (0..5).collect(),
            epochs: 10,
            subset: Some(5_000),
            ..Self::full(dataset, output_dir)
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.activations.is_empty() {
            return Err(Error::Config("no activations listed".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no sharing schemes listed".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds listed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.subset == Some(0) {
            return Err(Error::Config("subset must be positive".into()));
        }
        Ok(())
    }

    /// Variants in sweep order; kinds without parameters appear once.
    pub fn variants(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = Vec::new();
        for &kind in &self.activations {
            for &scheme in &self.schemes {
                let v = if kind.arity() == 0 {
                    Variant::new(kind, SharingScheme::ChannelWise)
                } else {
                    Variant::new(kind, scheme)
                };
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            l2_lambda: self.l2_lambda,
            l2_convention: self.l2_convention,
            seed,
            log_level: self.log_level,
            adam: self.adam,
            ..TrainConfig::default()
        }
    }

    /// Loads the dataset and applies the subset, if any.
    pub fn prepare_data(&self) -> Result<Dataset> {
        let data = load_named(&self.dataset, self.data_dir.as_deref(), self.data_seed)?;
        match self.subset {
            Some(n) if n < data.split(Split::Train).len() => subset(&data, n, self.data_seed),
            _ => Ok(data),
        }
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir.join("runs")
    }
}

pub fn run_id(variant: &Variant, seed: u64) -> String {
    format!("{}_seed{seed}", variant.id())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, loss: f64 },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub dataset: String,
    pub parameters: usize,
    #[serde(flatten)]
    pub status: RunStatus,
    pub record: RunRecord,
}

impl RunOutcome {
    pub fn final_test(&self) -> Option<&MetricRow> {
        match self.status {
            RunStatus::Completed => self.record.final_row(Split::Test),
            _ => None,
        }
    }
}

/// One row of a per-run metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub run_id: String,
    pub seed: u64,
    pub activation: ActivationKind,
    pub scheme: SharingScheme,
    pub dataset: String,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub error: f64,
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Trains one variant/seed pair, logging as it goes.
pub fn execute_run(
    cfg: &ExperimentConfig,
    data: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<RunOutcome> {
    let id = run_id(&variant, seed);
    let dir = cfg.runs_dir();
    let log_path = dir.join(format!("{id}.jsonl"));
    let stats_path = dir.join(format!("{id}.stats.jsonl"));
    let ckpt_path = dir.join(format!("{id}.ckpt"));
    let spec = ActivationSpec::new(variant.kind, variant.scheme);
    let mut model = build_paper_model_with(data.num_classes(), &spec, &mut stream(seed, Stream::Init))?;
    let parameters = model.count_parameters();

    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut stats = match cfg.log_level {
        LogLevel::Metrics => None,
        _ => Some(BufWriter::new(
            File::create(&stats_path).map_err(|e| Error::io(&stats_path, e))?,
        )),
    };
    let train_cfg = cfg.train_config(seed);
    let result = train_run_with(&mut model, data, &train_cfg, |report| {
        for r in report.rows {
            let row = LogRow {
                run_id: id.clone(),
                seed,
                activation: variant.kind,
                scheme: variant.scheme,
                dataset: cfg.dataset.clone(),
                epoch: r.epoch,
                split: r.split,
                loss: r.loss,
                accuracy: r.accuracy,
                error: r.error,
            };
            write_json_line(&mut log, &row, &log_path)?;
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        if let Some(w) = stats.as_mut() {
            for s in report.stats {
                write_json_line(w, s, &stats_path)?;
            }
            w.flush().map_err(|e| Error::io(&stats_path, e))?;
        }
        if cfg.log_level == LogLevel::Full {
            save_checkpoint(report.model, &ckpt_path)?;
        }
        Ok(())
    });
    let (status, record) = match result {
        Ok(record) => (RunStatus::Completed, record),
        Err(Error::Diverged { epoch, loss }) => (RunStatus::Diverged { epoch, loss }, RunRecord::default()),
        Err(Error::NonFiniteGradient { param }) => (
            RunStatus::Failed {
                message: format!("non-finite gradient in {param}"),
            },
            RunRecord::default(),
        ),
        Err(e) => return Err(e),
    };
    Ok(RunOutcome {
        run_id: id,
        variant,
        seed,
        dataset: cfg.dataset.clone(),
        parameters,
        status,
        record,
    })
}

fn outcome_path(cfg: &ExperimentConfig, id: &str) -> PathBuf {
    cfg.runs_dir().join(format!("{id}.json"))
}

fn read_outcome(path: &Path) -> Result<RunOutcome> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn write_outcome(path: &Path, outcome: &RunOutcome) -> Result<()> {
    // write then rename so an interrupted write never looks complete
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(outcome)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Progress callback: `(run_id, resumed, outcome)`.
pub type Progress<'a> = &'a (dyn Fn(&str, bool, &RunOutcome) + Sync);

/// Runs (or resumes) the whole sweep on `jobs` worker threads.
///
/// Every run is deterministic given its seed, so the outcomes do not depend
/// on `jobs`. With `force`, existing outcomes are recomputed. Errors other
/// than divergence are recorded as [`RunStatus::Failed`] for that run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &Dataset,
    jobs: usize,
    force: bool,
    progress: Option<Progress<'_>>,
) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let dir = cfg.runs_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let todo: Vec<(Variant, u64)> = cfg
        .variants()
        .into_iter()
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let one = |&(variant, seed): &(Variant, u64)| -> RunOutcome {
        let id = run_id(&variant, seed);
        let path = outcome_path(cfg, &id);
        if !force && path.exists() {
            if let Ok(done) = read_outcome(&path) {
                if let Some(p) = progress {
                    p(&id, true, &done);
                }
                return done;
            }
        }
        let outcome = execute_run(cfg, data, variant, seed)
            .and_then(|o| write_outcome(&path, &o).map(|_| o))
            .unwrap_or_else(|e| RunOutcome {
                run_id: id.clone(),
                variant,
                seed,
                dataset: cfg.dataset.clone(),
                parameters: 0,
                status: RunStatus::Failed {
                    message: e.to_string(),
                },
                record: RunRecord::default(),
            });
        if let Some(p) = progress {
            p(&id, false, &outcome);
        }
        outcome
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| todo.par_iter().map(one).collect()))
}

/// Reads every finished outcome under `<dir>/runs`.
pub fn load_outcomes(dir: &Path) -> Result<Vec<RunOutcome>> {
    let runs = dir.join("runs");
    let entries = match fs::read_dir(&runs) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&runs, e)),
    };
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(&runs, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_outcome(p)).collect()
}

/// Sample statistics of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

impl Stats {
    /// Needs at least two values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 values, got {n}")));
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let std = var.sqrt();
        Ok(Self {
            n,
            mean,
            std,
            stderr: std / nf.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            values: values.to_vec(),
        })
    }
}

/// Final-epoch test metrics of one variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub parameters: usize,
    pub seeds: Vec<u64>,
    pub accuracy: Stats,
    pub error: Stats,
    pub loss: Stats,
}

impl VariantSummary {
    /// Builds a summary from per-seed values given in seed order.
    pub fn from_values(
        variant: Variant,
        parameters: usize,
        seeds: Vec<u64>,
        accuracy: &[f64],
        loss: &[f64],
    ) -> Result<Self> {
        if seeds.len() != accuracy.len() || seeds.len() != loss.len() {
            return Err(Error::InvalidArgument("seed/value count mismatch".into()));
        }
        let error: Vec<f64> = accuracy.iter().map(|a| 1.0 - a).collect();
        Ok(Self {
            variant,
            parameters,
            seeds,
            accuracy: Stats::from_values(accuracy)?,
            error: Stats::from_values(&error)?,
            loss: Stats::from_values(loss)?,
        })
    }
}

/// Summaries of completed runs per variant, sorted by variant.
///
/// Values are ordered by seed before any arithmetic, so the result does not
/// depend on the order of `outcomes`.
pub fn summarize(outcomes: &[RunOutcome]) -> Result<Vec<VariantSummary>> {
    let mut groups: BTreeMap<Variant, Vec<(u64, usize, MetricRow)>> = BTreeMap::new();
    for o in outcomes {
        if let Some(row) = o.final_test() {
            groups
                .entry(o.variant)
                .or_default()
                .push((o.seed, o.parameters, *row));
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no completed runs found".into()));
    }
    groups
        .into_iter()
        .map(|(variant, mut runs)| {
            runs.sort_by_key(|r| r.0);
            runs.dedup_by_key(|r| r.0);
            let seeds = runs.iter().map(|r| r.0).collect();
            let acc: Vec<f64> = runs.iter().map(|r| r.2.accuracy).collect();
            let loss: Vec<f64> = runs.iter().map(|r| r.2.loss).collect();
            VariantSummary::from_values(variant, runs[0].1, seeds, &acc, &loss)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", variant.id())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom for Welch's test; unused for Mann-Whitney.
    pub df: f64,
    pub p_two_sided: f64,
    /// Alternative: the challenger's values are larger.
    pub p_one_sided: f64,
    pub exact: bool,
}

/// Welch's unequal-variance t-test of `challenger` against `baseline`.
pub fn welch_t_test(baseline: &[f64], challenger: &[f64]) -> Result<TestResult> {
    let b = Stats::from_values(baseline)?;
    let c = Stats::from_values(challenger)?;
    let vb = b.std * b.std / b.n as f64;
    let vc = c.std * c.std / c.n as f64;
    let se2 = vb + vc;
    let diff = c.mean - b.mean;
    if se2 == 0.0 {
        // both samples constant: the difference is either nil or certain
        let (t, p2, p1) = if diff == 0.0 {
            (0.0, 1.0, 0.5)
        } else if diff > 0.0 {
            (f64::INFINITY, 0.0, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0, 1.0)
        };
        return Ok(TestResult {
            statistic: t,
            df: f64::NAN,
            p_two_sided: p2,
            p_one_sided: p1,
            exact: false,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (vb * vb / (b.n as f64 - 1.0) + vc * vc / (c.n as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TestResult {
        statistic: t,
        df,
        p_two_sided: (2.0 * dist.cdf(-t.abs())).min(1.0),
        p_one_sided: dist.sf(t),
        exact: false,
    })
}

/// Midranks (1-based) of the pooled sample plus the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of arrangements giving each value of U for sample sizes `m`, `n`.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u]: arrangements of i + j values with statistic u; built by
    // whether the largest value comes from the first sample.
    let max = m * n;
    let mut prev: Vec<Vec<f64>> = (0..=n).map(|_| vec![0.0; max + 1]).collect();
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = (0..=n).map(|_| vec![0.0; max + 1]).collect();
        cur[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                let with_first = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = with_first + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Mann-Whitney U test of `challenger` against `baseline`.
///
/// The statistic counts pairs in which the challenger value is larger, with
/// ties counting one half. The exact null distribution is used when the
/// smaller sample has at most 8 values and there are no ties; otherwise the
/// tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_u(baseline: &[f64], challenger: &[f64]) -> Result<TestResult> {
    let (n1, n2) = (challenger.len(), baseline.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidArgument(
            "Mann-Whitney needs two non-empty samples".into(),
        ));
    }
    if challenger.iter().chain(baseline).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Mann-Whitney needs finite values".into()));
    }
    let pooled: Vec<f64> = challenger.iter().chain(baseline).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let nn = (n1 * n2) as f64;
    let u2 = nn - u1;
    if ties.is_empty() && n1.min(n2) <= 8 {
        let counts = u_counts(n1, n2);
        let total: f64 = counts.iter().sum();
        let sf = |u: f64| counts[u as usize..].iter().sum::<f64>() / total;
        return Ok(TestResult {
            statistic: u1,
            df: f64::NAN,
            p_two_sided: (2.0 * sf(u1.max(u2))).min(1.0),
            p_one_sided: sf(u1),
            exact: true,
        });
    }
    let n = (n1 + n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let sigma = (nn / 12.0 * ((n + 1.0) - tie_term)).sqrt();
    let mu = nn / 2.0;
    let std_normal = Normal::standard();
    let tail = |u: f64| {
        if sigma == 0.0 {
            return if u - mu > 0.0 { 0.0 } else { 1.0 };
        }
        std_normal.sf((u - mu - 0.5) / sigma)
    };
    Ok(TestResult {
        statistic: u1,
        df: f64::NAN,
        p_two_sided: (2.0 * tail(u1.max(u2))).min(1.0),
        p_one_sided: tail(u1),
        exact: false,
    })
}

/// `(err_base − err_chal) / err_base`.
pub fn rel_err_improvement(baseline_error: f64, challenger_error: f64) -> f64 {
    (baseline_error - challenger_error) / baseline_error
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Variant,
    pub challenger: Variant,
    /// Difference of mean accuracies in percentage points.
    pub delta_pp: f64,
    pub rel_err_improvement: f64,
    pub welch: TestResult,
    pub mann_whitney: TestResult,
}

/// Compares final test accuracy of `challenger` against `baseline`.
pub fn compare(baseline: &VariantSummary, challenger: &VariantSummary) -> Result<Comparison> {
    Ok(Comparison {
        baseline: baseline.variant,
        challenger: challenger.variant,
        delta_pp: 100.0 * (challenger.accuracy.mean - baseline.accuracy.mean),
        rel_err_improvement: if baseline.variant == challenger.variant {
            0.0
        } else {
            rel_err_improvement(baseline.error.mean, challenger.error.mean)
        },
        welch: welch_t_test(&baseline.accuracy.values, &challenger.accuracy.values)?,
        mann_whitney: mann_whitney_u(&baseline.accuracy.values, &challenger.accuracy.values)?,
    })
}

/// Every variant against the ReLU variant, or against the first variant when
/// ReLU is absent.
pub fn default_comparisons(summaries: &[VariantSummary]) -> Result<Vec<Comparison>> {
    let Some(base) = summaries
        .iter()
        .find(|s| s.variant.kind == ActivationKind::Relu)
        .or_else(|| summaries.first())
    else {
        return Ok(Vec::new());
    };
    summaries
        .iter()
        .filter(|s| s.variant != base.variant)
        .map(|s| compare(base, s))
        .collect()
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub raw: PathBuf,
    pub summary: PathBuf,
    pub comparison: PathBuf,
}

#[derive(Serialize)]
struct RawRow<'a> {
    run_id: &'a str,
    activation: &'a str,
    scheme: &'a str,
    seed: u64,
    test_accuracy: f64,
    test_error: f64,
    test_loss: f64,
    parameters: usize,
}

#[derive(Serialize)]
struct SummaryCsvRow {
    variant: String,
    label: String,
    n: usize,
    accuracy_mean: f64,
    accuracy_std: f64,
    accuracy_stderr: f64,
    accuracy_min: f64,
    accuracy_max: f64,
    error_mean: f64,
    error_std: f64,
    error_stderr: f64,
    loss_mean: f64,
    loss_std: f64,
    loss_stderr: f64,
    parameters: usize,
}

#[derive(Serialize)]
struct ComparisonCsvRow {
    baseline: String,
    challenger: String,
    delta_pp: f64,
    rel_err_improvement: f64,
    welch_t: f64,
    welch_df: f64,
    welch_p_two_sided: f64,
    welch_p_one_sided: f64,
    mann_whitney_u: f64,
    mann_whitney_p_two_sided: f64,
    mann_whitney_p_one_sided: f64,
    mann_whitney_exact: bool,
}

/// Writes `raw.csv` (one row per completed run), `summary.csv` (one row per
/// variant) and `comparison.csv` into `dir`.
pub fn emit_report(
    outcomes: &[RunOutcome],
    summaries: &[VariantSummary],
    comparisons: &[Comparison],
    dir: &Path,
) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        raw: dir.join("raw.csv"),
        summary: dir.join("summary.csv"),
        comparison: dir.join("comparison.csv"),
    };

    let mut sorted: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.final_test().is_some()).collect();
    sorted.sort_by_key(|o| (o.variant, o.seed));
    let mut w = csv::Writer::from_path(&files.raw)?;
    for o in sorted {
        let row = o.final_test().expect("filtered to completed runs");
        w.serialize(RawRow {
            run_id: &o.run_id,
            activation: o.variant.kind.name(),
            scheme: if o.variant.kind.arity() == 0 {
                ""
            } else {
                o.variant.scheme.name()
            },
            seed: o.seed,
            test_accuracy: row.accuracy,
            test_error: row.error,
            test_loss: row.loss,
            parameters: o.parameters,
        })?;
    }
    w.flush().map_err(|e| Error::io(&files.raw, e))?;

    let mut w = csv::Writer::from_path(&files.summary)?;
    for s in summaries {
        w.serialize(SummaryCsvRow {
            variant: s.variant.id(),
            label: s.variant.label(),
            n: s.accuracy.n,
            accuracy_mean: s.accuracy.mean,
            accuracy_std: s.accuracy.std,
            accuracy_stderr: s.accuracy.stderr,
            accuracy_min: s.accuracy.min,
            accuracy_max: s.accuracy.max,
            error_mean: s.error.mean,
            error_std: s.error.std,
            error_stderr: s.error.stderr,
            loss_mean: s.loss.mean,
            loss_std: s.loss.std,
            loss_stderr: s.loss.stderr,
            parameters: s.parameters,
        })?;
    }
    w.flush().map_err(|e| Error::io(&files.summary, e))?;

    let mut w = csv::Writer::from_path(&files.comparison)?;
    for c in comparisons {
        w.serialize(ComparisonCsvRow {
            baseline: c.baseline.id(),
            challenger: c.challenger.id(),
            delta_pp: c.delta_pp,
            rel_err_improvement: c.rel_err_improvement,
            welch_t: c.welch.statistic,
            welch_df: c.welch.df,
            welch_p_two_sided: c.welch.p_two_sided,
            welch_p_one_sided: c.welch.p_one_sided,
            mann_whitney_u: c.mann_whitney.statistic,
            mann_whitney_p_two_sided: c.mann_whitney.p_two_sided,
            mann_whitney_p_one_sided: c.mann_whitney.p_one_sided,
            mann_whitney_exact: c.mann_whitney.exact,
        })?;
    }
    w.flush().map_err(|e| Error::io(&files.comparison, e))?;
    Ok(files)
}

/// Parameter count of the reference CNN for `variant`.
pub fn variant_parameters(variant: Variant, num_classes: usize) -> Result<usize> {
    let spec = ActivationSpec::new(variant.kind, variant.scheme);
    Ok(Model::skeleton(&CIFAR_INPUT, &paper_architecture(num_classes, &spec))?.count_parameters())
}

/// Human-readable summary and comparison tables.
pub fn format_tables(summaries: &[VariantSummary], comparisons: &[Comparison]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:>4} {:>16} {:>16} {:>9} {:>8} {:>8}",
        "activation", "n", "accuracy % (sd)", "error % (sd)", "loss", "se acc", "params"
    );
    for v in summaries {
        let _ = writeln!(
            s,
            "{:<22} {:>4} {:>9.2} ± {:<4.2} {:>9.2} ± {:<4.2} {:>9.4} {:>8.3} {:>8}",
            v.variant.label(),
            v.accuracy.n,
            100.0 * v.accuracy.mean,
            100.0 * v.accuracy.std,
            100.0 * v.error.mean,
            100.0 * v.error.std,
            v.loss.mean,
            100.0 * v.accuracy.stderr,
            v.parameters
        );
    }
    for c in comparisons {
        let _ = writeln!(
            s,
            "{} vs {}: {:+.2} pp, relative error improvement {:.2}%, Welch p = {:.3e} (one-sided {:.3e}), Mann-Whitney U = {} p = {:.3e} (one-sided {:.3e})",
            c.challenger.label(),
            c.baseline.label(),
            c.delta_pp,
            100.0 * c.rel_err_improvement,
            c.welch.p_two_sided,
            c.welch.p_one_sided,
            c.mann_whitney.statistic,
            c.mann_whitney.p_two_sided,
            c.mann_whitney.p_one_sided
        );
    }
    s
}
