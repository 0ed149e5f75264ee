use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};

use pilu::activations::{ActivationKind, ActivationSpec, SharingScheme};
use pilu::bench::{self, DEFAULT_ITERS, DEFAULT_KINDS, DEFAULT_SIZES};
use pilu::data::{load_named, subset, Split, DATA_DIR_ENV};
use pilu::experiments::{
    default_comparisons, emit_report, format_tables, load_outcomes, run_experiment, summarize,
    ExperimentConfig, LogRow, RunOutcome, RunStatus, Variant,
};
use pilu::network::{build_paper_model_with, paper_architecture, save_checkpoint, Model, CIFAR_INPUT};
use pilu::rng::{stream, Stream};
use pilu::training::gradcheck::{
    check_activation_layer, check_activation_scalar, check_linear_model, check_paper_model, GradCheckConfig,
    GradCheckReport,
};
use pilu::training::{train_run_with, LogLevel, TrainConfig};

/// Adaptive piecewise-linear activations: training, sweeps, benchmarks and checks.
#[derive(Parser)]
#[command(name = "pilu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its metrics log and final checkpoint.
    Train(TrainArgs),
    /// Run a multi-seed sweep and write summary and comparison tables.
    Experiment(ExperimentArgs),
    /// Time activation forward passes across input sizes.
    Bench(BenchArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Rebuild summary and comparison tables from an experiment directory.
    Report(ReportArgs),
    /// Print the layer table and parameter count of the reference CNN.
    ModelSummary(ModelSummaryArgs),
}

#[derive(Args)]
struct DataArgs {
    /// cifar10, cifar100 or synthetic.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Directory holding the CIFAR binary files.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "pilu")]
    activation: ActivationKind,
    #[arg(long, default_value = "channel")]
    scheme: SharingScheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Train on a stratified subset of this many images.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// metrics, stats or full.
    #[arg(long, default_value = "metrics", value_parser = parse_log_level)]
    log_level: LogLevel,
    /// Recompute even if the output directory holds a finished run.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config; flags given alongside override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 5 seeds × 10 epochs on a 5,000-image subset.
    #[arg(long, conflicts_with = "full")]
    desk_scale: bool,
    /// 30 seeds × 50 epochs on the full training split.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Comma-separated, e.g. relu,pilu.
    #[arg(long, value_delimiter = ',')]
    activations: Option<Vec<ActivationKind>>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<SharingScheme>>,
    /// Comma-separated seeds, or a count N meaning 0..N with --num-seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, conflicts_with = "seeds")]
    num_seeds: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Recompute runs that already finished.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    iters: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KINDS)]
    kinds: Vec<ActivationKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("target").required(true).args(["activation", "full_model"])))]
struct GradcheckArgs {
    /// Check one activation's scalar and layer gradients.
    #[arg(long)]
    activation: Option<ActivationKind>,
    /// Check the whole reference CNN on a random 4-image batch.
    #[arg(long)]
    full_model: bool,
    /// Activation used with --full-model.
    #[arg(long, default_value = "pilu", requires = "full_model")]
    model_activation: ActivationKind,
    #[arg(long, default_value = "channel")]
    scheme: SharingScheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directory (containing runs/).
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the CSVs; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelSummaryArgs {
    #[arg(long, default_value = "cifar10")]
    dataset: String,
    #[arg(long, default_value = "pilu")]
    activation: ActivationKind,
    #[arg(long, default_value = "channel")]
    scheme: SharingScheme,
}

fn parse_log_level(s: &str) -> Result<LogLevel, String> {
    match s {
        "metrics" => Ok(LogLevel::Metrics),
        "stats" => Ok(LogLevel::Stats),
        "full" => Ok(LogLevel::Full),
        _ => Err(format!(
            "unknown log level `{s}` (expected metrics, stats or full)"
        )),
    }
}

/// A failed check or verification, as opposed to an operational error.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Invalid flag values discovered after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn num_classes(dataset: &str) -> Result<usize> {
    match dataset {
        "cifar10" | "synthetic" => Ok(10),
        "cifar100" => Ok(100),
        other => Err(usage(format!(
            "unknown dataset `{other}` (expected cifar10, cifar100 or synthetic)"
        ))),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    num_classes(&args.data.dataset)?;
    if args.epochs == 0 || args.batch_size == 0 || args.subset == Some(0) {
        return Err(usage("--epochs, --batch-size and --subset must be positive"));
    }
    let outcome_path = args.out.join("outcome.json");
    if outcome_path.exists() && !args.force {
        let done: RunOutcome = serde_json::from_str(&fs::read_to_string(&outcome_path)?)?;
        println!("{} already trained (pass --force to retrain)", args.out.display());
        print_final(&done);
        return Ok(());
    }
    let mut data = load_named(&args.data.dataset, args.data.data_dir.as_deref(), 0)?;
    if let Some(n) = args.subset {
        data = subset(&data, n, 0)?;
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let variant = Variant::new(args.activation, args.scheme);
    let spec = ActivationSpec::new(args.activation, args.scheme);
    let mut model = build_paper_model_with(data.num_classes(), &spec, &mut stream(args.seed, Stream::Init))?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        log_level: args.log_level,
        ..TrainConfig::default()
    };
    cfg.validate(data.split(Split::Train).len())
        .map_err(|e| usage(e.to_string()))?;

    let log_path = args.out.join("metrics.jsonl");
    let ckpt_path = args.out.join("model.ckpt");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut stats = match args.log_level {
        LogLevel::Metrics => None,
        _ => Some(BufWriter::new(File::create(args.out.join("stats.jsonl"))?)),
    };
    let run_id = format!("{}_seed{}", variant.id(), args.seed);
    eprintln!(
        "training {} on {} ({} train images), seed {}, {} epochs",
        variant.label(),
        data.name(),
        data.split(Split::Train).len(),
        args.seed,
        args.epochs
    );
    let result = train_run_with(&mut model, &data, &cfg, |report| {
        for r in report.rows {
            let row = LogRow {
                run_id: run_id.clone(),
                seed: args.seed,
                activation: args.activation,
                scheme: args.scheme,
                dataset: args.data.dataset.clone(),
                epoch: r.epoch,
                split: r.split,
                loss: r.loss,
                accuracy: r.accuracy,
                error: r.error,
            };
            serde_json::to_writer(&mut log, &row)?;
            log.write_all(b"\n").map_err(|e| pilu::Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
            if r.split == Split::Test {
                eprintln!(
                    "epoch {:>3}  test loss {:.4}  accuracy {:.4}",
                    r.epoch, r.loss, r.accuracy
                );
            }
        }
        log.flush().map_err(|e| pilu::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if let Some(w) = stats.as_mut() {
            for s in report.stats {
                serde_json::to_writer(&mut *w, s)?;
                w.write_all(b"\n").map_err(|e| pilu::Error::Io {
                    path: log_path.clone(),
                    source: e,
                })?;
            }
        }
        if args.log_level == LogLevel::Full {
            save_checkpoint(
                report.model,
                &args.out.join(format!("epoch{:03}.ckpt", report.epoch)),
            )?;
        }
        Ok(())
    });
    if let Some(mut w) = stats {
        w.flush()?;
    }
    let record = result?;
    save_checkpoint(&model, &ckpt_path)?;
    let outcome = RunOutcome {
        run_id,
        variant,
        seed: args.seed,
        dataset: args.data.dataset.clone(),
        parameters: model.count_parameters(),
        status: RunStatus::Completed,
        record,
    };
    fs::write(&outcome_path, serde_json::to_vec(&outcome)?)?;
    print_final(&outcome);
    println!("wrote {} and {}", log_path.display(), ckpt_path.display());
    Ok(())
}

fn print_final(outcome: &RunOutcome) {
    if let Some(t) = outcome.final_test() {
        println!(
            "final test: loss {:.4}, accuracy {:.2}%, error {:.2}% ({} parameters)",
            t.loss,
            100.0 * t.accuracy,
            100.0 * t.error,
            outcome.parameters
        );
    }
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let dataset = args.dataset.clone().unwrap_or_else(|| "synthetic".into());
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs/experiment"));
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None if args.full => ExperimentConfig::full(&dataset, &out),
        None if args.desk_scale => ExperimentConfig::desk_scale(&dataset, &out),
        None => ExperimentConfig {
            seeds: (0..5).collect(),
            epochs: 10,
            ..ExperimentConfig::full(&dataset, &out)
        },
    };
    if let Some(d) = args.dataset {
        cfg.dataset = d;
    }
    if let Some(o) = args.out {
        cfg.output_dir = o;
    }
    if args.data_dir.is_some() {
        cfg.data_dir = args.data_dir;
    }
    if let Some(a) = args.activations {
        cfg.activations = a;
    }
    if let Some(s) = args.schemes {
        cfg.schemes = s;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(n) = args.num_seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if args.subset.is_some() {
        cfg.subset = args.subset;
    }
    num_classes(&cfg.dataset)?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }

    let data = cfg.prepare_data()?;
    let total = cfg.variants().len() * cfg.seeds.len();
    eprintln!(
        "{} runs ({} variants × {} seeds), {} epochs, {} train images, {} job(s)",
        total,
        cfg.variants().len(),
        cfg.seeds.len(),
        cfg.epochs,
        data.split(Split::Train).len(),
        args.jobs
    );
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), toml::to_string(&cfg)?)?;
    let progress = |id: &str, resumed: bool, o: &RunOutcome| {
        let what = match (&o.status, resumed) {
            (_, true) => "already done".to_string(),
            (RunStatus::Completed, false) => match o.final_test() {
                Some(t) => format!("test accuracy {:.4}", t.accuracy),
                None => "completed".into(),
            },
            (RunStatus::Diverged { epoch, .. }, false) => format!("diverged at epoch {epoch}"),
            (RunStatus::Failed { message }, false) => format!("failed: {message}"),
        };
        eprintln!("{id}: {what}");
    };
    let outcomes = run_experiment(&cfg, &data, args.jobs, args.force, Some(&progress))?;
    let completed = outcomes
        .iter()
        .filter(|o| o.status == RunStatus::Completed)
        .count();
    let failed: Vec<&RunOutcome> = outcomes
        .iter()
        .filter(|o| o.status != RunStatus::Completed)
        .collect();
    for f in &failed {
        eprintln!("warning: {} did not complete: {:?}", f.run_id, f.status);
    }
    if completed == 0 {
        bail!("no runs completed");
    }
    write_report(&outcomes, &cfg.output_dir)
}

fn write_report(outcomes: &[RunOutcome], dir: &Path) -> Result<()> {
    let summaries = summarize(outcomes)?;
    let comparisons = default_comparisons(&summaries)?;
    let files = emit_report(outcomes, &summaries, &comparisons, dir)?;
    print!("{}", format_tables(&summaries, &comparisons));
    println!(
        "wrote {}, {} and {}",
        files.raw.display(),
        files.summary.display(),
        files.comparison.display()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let outcomes = load_outcomes(&args.input)?;
    if outcomes.iter().all(|o| o.final_test().is_none()) {
        return Err(CheckFailed(format!("no runs found in {}", args.input.display())).into());
    }
    write_report(&outcomes, args.out.as_deref().unwrap_or(&args.input))
}

fn run_bench(args: BenchArgs) -> Result<()> {
    if args.iters == 0 || args.sizes.is_empty() || args.sizes.contains(&0) || args.kinds.is_empty() {
        return Err(usage(
            "--sizes, --iters and --kinds must be non-empty and positive",
        ));
    }
    let mut kinds = args.kinds.clone();
    if !kinds.contains(&ActivationKind::Relu) {
        kinds.insert(0, ActivationKind::Relu);
    }
    let results = bench::bench_activation(&kinds, &args.sizes, args.iters, args.seed)?;
    println!(
        "{:<12} {:>8} {:>10} {:>14} {:>12}",
        "kind", "size", "iters", "per call ns", "vs ReLU"
    );
    for r in &results {
        println!(
            "{:<12} {:>8} {:>10} {:>14.1} {:>12.3}{}",
            r.kind.name(),
            r.size,
            r.iters,
            r.per_call_ns(),
            r.rel_to_relu,
            if r.resolution_flag {
                "  (iters raised for timer resolution)"
            } else {
                ""
            }
        );
    }
    if args.sizes.len() >= 3 {
        for &k in &kinds {
            let f = bench::fit_kind(&results, k)?;
            println!(
                "{:<12} linear fit: {:.4} ns/element + {:.1} ns, r² = {:.5}",
                k.name(),
                f.slope,
                f.intercept,
                f.r_squared
            );
        }
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    bench::write_csv(&results, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn prefixed(prefix: &str, mut r: GradCheckReport) -> GradCheckReport {
    for e in &mut r.entries {
        e.name = format!("{prefix}{}", e.name);
    }
    r
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let report = if let Some(kind) = args.activation {
        let tol = if kind == ActivationKind::Linear {
            1e-8
        } else {
            1e-6
        };
        let cfg = GradCheckConfig {
            step: 1e-6,
            tol,
            seed: args.seed,
            ..GradCheckConfig::default()
        };
        let mut all = prefixed(
            "scalar ",
            check_activation_scalar(kind, 10_000, args.seed, 1e-6, tol, 1e-3),
        );
        if kind == ActivationKind::Linear {
            let lin = check_linear_model(args.seed, &GradCheckConfig { step: 1e-5, ..cfg })?;
            all.entries.extend(prefixed("softmax regression ", lin).entries);
        } else {
            let schemes: &[SharingScheme] = if kind.arity() == 0 {
                &[SharingScheme::LayerWise]
            } else {
                &SharingScheme::ALL
            };
            for &scheme in schemes {
                let r = check_activation_layer(kind, scheme, args.seed, &cfg, None)?;
                all.entries.extend(prefixed(&format!("{scheme} "), r).entries);
            }
        }
        all
    } else {
        let cfg = GradCheckConfig {
            seed: args.seed,
            ..GradCheckConfig::default()
        };
        check_paper_model(args.model_activation, args.scheme, &cfg, None)?
    };
    println!("{}", report.table());
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|e| e.name.as_str()).collect();
        Err(CheckFailed(format!("gradient check failed for {}", names.join(", "))).into())
    }
}

fn model_summary(args: ModelSummaryArgs) -> Result<()> {
    let k = num_classes(&args.dataset)?;
    let spec = ActivationSpec::new(args.activation, args.scheme);
    let model = Model::skeleton(&CIFAR_INPUT, &paper_architecture(k, &spec))?;
    println!(
        "{} ({} classes), {} {}",
        args.dataset,
        k,
        args.activation.label(),
        args.scheme
    );
    println!("{}", model.summary_table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Experiment(a) => experiment(a),
        Command::Bench(a) => run_bench(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
        Command::ModelSummary(a) => model_summary(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
