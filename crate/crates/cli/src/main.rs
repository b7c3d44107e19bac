mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use idconf::data::{load_dataset, write_dataset, LabelNames, RecordDataset, Schema};
use idconf::error::Error;
use idconf::forest::{Classifier, ForestParams, RandomForest};
use idconf::perm::{Metric, PermConfig, PermEngine};
use idconf::report::{RunSettings, SplitReport, TestReport};
use idconf::seed::{Purpose, Seed};
use idconf::shuffle::{self, SplitStrategy};
use idconf::sim::study::{design, null_study, NullStudy, NullStudyConfig, ParameterBox};
use idconf::sim::{simulate_dataset, Preset, SimSpec};
use idconf::workflow::{analyze, recommend_split, TestSelection};
use ndarray::Axis;

use config::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    Output(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(_) | CliError::Output(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) if e.is_data_error() => write!(f, "data error: {e}"),
            CliError::Core(e) => write!(f, "runtime error: {e}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "idconf", version, about = "Permutation tests for identity confounding in record-level classification")]
struct Cli {
    /// More log output (-v progress, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Flat `key = value` file supplying defaults for the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a CSV dataset for disease recognition and identity confounding.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic dataset, optionally analysing it.
    Simulate(SimulateArgs),
    /// Check type-I error rates on simulated null datasets.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// `record` or `subject`.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Label shuffles for the disease-recognition test.
    #[arg(long)]
    perms: Option<usize>,
    /// Label shuffles inside each feature shuffle.
    #[arg(long)]
    label_perms: Option<usize>,
    /// Feature shuffles for the identity-confounding test.
    #[arg(long)]
    feature_perms: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `json` or `csv`.
    #[arg(long)]
    format: Option<String>,
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    features_per_split: Option<usize>,
    #[arg(long)]
    min_node_size: Option<usize>,
    /// `auc` or `error-rate`.
    #[arg(long)]
    metric: Option<String>,
    /// `disease-recognition`, `identity-confounding` or `both`.
    #[arg(long)]
    test: Option<String>,
    /// Run the split recommendation ladder instead of a single test.
    #[arg(long)]
    recommend: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    subject_column: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    case_value: Option<String>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct SimulateArgs {
    /// example1 .. example6.
    #[arg(long)]
    preset: Option<String>,
    /// Model overrides such as `a=1,b=2,c=1,d=0.5`, applied on top of the
    /// preset (or of the standard cohort with every term off).
    #[arg(long)]
    custom: Option<String>,
    /// Dataset CSV path; stdout when omitted and not analysing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Analyse the generated dataset.
    #[arg(long)]
    analyze: bool,
    /// Report path for `--analyze`; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 100)]
    datasets: usize,
    /// Long-format p-value table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file for the uniformity summary.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Refuse to start when the estimated runtime exceeds this many minutes.
    #[arg(long, default_value_t = 120.0)]
    time_cap: f64,
    /// Start even when the estimate exceeds the time cap.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

struct Defaults {
    perms: usize,
    label_perms: usize,
    feature_perms: usize,
}

const ANALYSIS_DEFAULTS: Defaults = Defaults {
    perms: 10_000,
    label_perms: 300,
    feature_perms: 1_000,
};

/// Flags merged with the config file and defaults.
struct Resolved {
    seed: Seed,
    threads: usize,
    split: Option<SplitStrategy>,
    train_fraction: f64,
    alpha: f64,
    format: Option<Format>,
    metric: Metric,
    tests: TestSelection,
    recommend: bool,
    perm: PermConfig,
    forest: ForestParams,
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn resolve(f: &RunFlags, cfg: &ConfigFile, d: Defaults) -> Result<Resolved, CliError> {
    let seed = cfg.pick(f.seed, "seed", 0u64)?;
    let split = match cfg.pick_opt(f.split.clone(), "split")? {
        Some(s) => Some(s.parse::<SplitStrategy>().map_err(|e| CliError::Usage(e.to_string()))?),
        None => None,
    };
    let train_fraction = cfg.pick(f.train_fraction, "train-fraction", 0.5)?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return usage(format!("--train-fraction must be in (0, 1), got {train_fraction}"));
    }
    let alpha = cfg.pick(f.alpha, "alpha", 0.05)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return usage(format!("--alpha must be in (0, 1), got {alpha}"));
    }
    let format = match cfg.pick_opt(f.format.clone(), "format")?.as_deref() {
        None => None,
        Some("json") => Some(Format::Json),
        Some("csv") => Some(Format::Csv),
        Some(o) => return usage(format!("unknown format '{o}' (json or csv)")),
    };
    let metric = match cfg.pick(f.metric.clone(), "metric", "auc".into())?.as_str() {
        "auc" => Metric::Auc,
        "error-rate" | "error_rate" => Metric::ErrorRate,
        o => return usage(format!("unknown metric '{o}' (auc or error-rate)")),
    };
    let test = cfg.pick_opt(f.test.clone(), "test")?;
    let tests = match test.as_deref().map(|t| t.replace('_', "-")).as_deref() {
        None | Some("both") => TestSelection::BOTH,
        Some("disease-recognition") => TestSelection {
            disease_recognition: true,
            identity_confounding: false,
        },
        Some("identity-confounding") => TestSelection {
            disease_recognition: false,
            identity_confounding: true,
        },
        Some(o) => return usage(format!("unknown test '{o}'")),
    };
    if f.recommend && (split.is_some() || test.is_some()) {
        return usage("--recommend chooses the split and tests itself; drop --split/--test");
    }
    if f.recommend && metric != Metric::Auc {
        return usage("--recommend needs the AUC metric");
    }
    let perm = PermConfig {
        perms: cfg.pick(f.perms, "perms", d.perms)?,
        label_perms: cfg.pick(f.label_perms, "label-perms", d.label_perms)?,
        feature_perms: cfg.pick(f.feature_perms, "feature-perms", d.feature_perms)?,
        metric,
        seed: Seed::new(seed),
    };
    if perm.validate().is_err() {
        return usage("--perms, --label-perms and --feature-perms must be at least 1");
    }
    let forest = ForestParams {
        tree_count: cfg.pick(f.trees, "trees", 500usize)?,
        features_per_split: cfg.pick_opt(f.features_per_split, "features-per-split")?,
        min_node_size: cfg.pick(f.min_node_size, "min-node-size", 1usize)?,
        ..ForestParams::default()
    };
    if forest.tree_count == 0 || forest.features_per_split == Some(0) || forest.min_node_size == 0 {
        return usage("--trees, --features-per-split and --min-node-size must be at least 1");
    }
    Ok(Resolved {
        seed: Seed::new(seed),
        threads: cfg.pick(f.threads, "threads", 0usize)?,
        split,
        train_fraction,
        alpha,
        format,
        metric,
        tests,
        recommend: f.recommend,
        perm,
        forest,
    })
}

/// Buffered writer to a file, or to stdout for `None`.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut w: Box<dyn Write>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}

fn engine(r: &Resolved, cancel: &Arc<AtomicBool>) -> Result<PermEngine<RandomForest>, CliError> {
    Ok(PermEngine::new(RandomForest::new(r.forest))
        .with_threads(r.threads)?
        .with_cancel_flag(cancel.clone())
        .with_progress(Arc::new(|stage, done, total| {
            let step = (total / 10).max(1);
            if done % step == 0 || done == total {
                log::info!("{stage}: {done}/{total}");
            }
        })))
}

fn run_analysis(
    ds: &RecordDataset,
    r: &Resolved,
    cancel: &Arc<AtomicBool>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let eng = engine(r, cancel)?;
    let settings = RunSettings {
        seed: r.seed,
        strategy: if r.recommend {
            None
        } else {
            Some(r.split.unwrap_or(SplitStrategy::RecordWise))
        },
        train_fraction: r.train_fraction,
        perms: r.perm.perms,
        label_perms: r.perm.label_perms,
        feature_perms: r.perm.feature_perms,
        metric: r.metric,
        tests: r.tests,
        alpha: r.alpha,
        recommend: r.recommend,
        forest: r.forest,
    };
    let report = if r.recommend {
        let rec = recommend_split(&eng, ds, r.train_fraction, r.alpha, &r.perm)?;
        for step in &rec.steps {
            eprintln!("{step}");
        }
        if rec.pseudo_permutation_disagree {
            eprintln!("note: the pseudo p-value and the permutation test disagree");
        }
        TestReport::from_recommendation(ds, settings, &rec)?
    } else {
        let strategy = settings.strategy.expect("set when not recommending");
        let a = analyze(&eng, ds, strategy, r.train_fraction, r.tests, &r.perm)?;
        TestReport::from_analysis(ds, settings, &a)?
    };
    for run in &report.runs {
        eprintln!("{}", summary_line(run));
    }
    let mut w = open_output(out)?;
    match r.format.unwrap_or(Format::Json) {
        Format::Json => {
            report.to_json(&mut w)?;
            writeln!(w).map_err(|e| CliError::Output(e.to_string()))?;
        }
        Format::Csv => report.write_null_csv(&mut w)?,
    }
    finish(w)
}

fn summary_line(run: &SplitReport) -> String {
    let mut s = format!("{}-wise split: observed {:.4}", run.split.strategy.name(), run.observed);
    if let Some(n) = &run.disease_recognition {
        s += &format!(", disease-recognition p = {} (null median {:.4})", n.p_value, n.median);
    }
    if let Some(n) = &run.identity_confounding {
        s += &format!(", identity-confounding p = {}", n.p_value);
    }
    if let Some(p) = &run.pseudo_p {
        s += &format!(", pseudo p = {:.3e}", p.p_value);
    }
    s
}

fn schema_from(a: &AnalyzeArgs, cfg: &ConfigFile) -> Result<Schema, CliError> {
    let d = Schema::default();
    Ok(Schema {
        subject_column: cfg.pick(a.subject_column.clone(), "subject-column", d.subject_column)?,
        label_column: cfg.pick(a.label_column.clone(), "label-column", d.label_column)?,
        case_value: cfg.pick(a.case_value.clone(), "case-value", d.case_value)?,
        feature_columns: None,
    })
}

fn cmd_analyze(a: &AnalyzeArgs, cfg: &ConfigFile, cancel: &Arc<AtomicBool>) -> Result<(), CliError> {
    let r = resolve(&a.run, cfg, ANALYSIS_DEFAULTS)?;
    let ds = load_dataset(&a.input, &schema_from(a, cfg)?)?;
    let s = ds.summarize();
    log::info!(
        "{} records from {} subjects ({} cases, {} controls), {} features",
        s.records,
        s.subjects,
        s.cases,
        s.controls,
        s.features
    );
    run_analysis(&ds, &r, cancel, a.out.as_deref())
}

fn cmd_simulate(a: &SimulateArgs, cfg: &ConfigFile, cancel: &Arc<AtomicBool>) -> Result<(), CliError> {
    let r = resolve(&a.run, cfg, ANALYSIS_DEFAULTS)?;
    let base = match &a.preset {
        Some(p) => p.parse::<Preset>().map_err(|e| CliError::Usage(e.to_string()))?.spec(),
        None if a.custom.is_some() => SimSpec::default(),
        None => return usage("give --preset and/or --custom"),
    };
    let spec = match &a.custom {
        Some(text) => base
            .with_assignments(text)
            .map_err(|e| CliError::Usage(e.to_string()))?,
        None => base,
    };
    let ds = simulate_dataset(&spec, r.seed.derive(Purpose::Dataset, 0))?;
    if a.out.is_some() || !a.analyze {
        let mut w = open_output(a.out.as_deref())?;
        write_dataset(&ds, &mut w, LabelNames::default())?;
        finish(w)?;
    }
    if a.analyze {
        run_analysis(&ds, &r, cancel, a.report.as_deref())?;
    }
    Ok(())
}

/// Seconds per forest fit, measured on the first design point.
fn time_one_fit(study: &NullStudyConfig, forest: ForestParams) -> Result<f64, CliError> {
    let point = design(1, &study.space, study.seed)[0];
    let ds = simulate_dataset(&point.spec(), study.seed.derive(Purpose::Dataset, 0))?;
    let split = shuffle::record_wise_split(&ds, study.train_fraction, study.seed)?;
    let x = ds.features().select(Axis(0), &split.train_rows);
    let y: Vec<bool> = split.train_rows.iter().map(|&i| ds.labels()[i]).collect();
    let rf = RandomForest::new(forest);
    let t = Instant::now();
    let reps = 3;
    for k in 0..reps {
        rf.fit(x.view(), &y, Seed::new(k))?;
    }
    Ok(t.elapsed().as_secs_f64() / reps as f64)
}

fn cmd_calibrate(a: &CalibrateArgs, cfg: &ConfigFile, cancel: &Arc<AtomicBool>) -> Result<(), CliError> {
    if a.datasets == 0 {
        return usage("--datasets must be at least 1");
    }
    let r = resolve(
        &a.run,
        cfg,
        Defaults {
            perms: 100,
            label_perms: 10,
            feature_perms: 100,
        },
    )?;
    if r.recommend || r.split.is_some() {
        return usage("calibrate always runs both split strategies; drop --split/--recommend");
    }
    let study_cfg = NullStudyConfig {
        n_datasets: a.datasets,
        perms: r.perm.perms,
        label_perms: r.perm.label_perms,
        train_fraction: r.train_fraction,
        seed: r.seed,
        space: ParameterBox::default(),
    };
    let fits = a.datasets as f64 * 2.0 * (1 + study_cfg.perms + study_cfg.perms * study_cfg.label_perms) as f64;
    let workers = if r.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        r.threads
    };
    let minutes = fits * time_one_fit(&study_cfg, r.forest)? / workers as f64 / 60.0;
    eprintln!("estimated runtime: {minutes:.1} min for {fits:.0} forest fits on {workers} worker(s)");
    if minutes > a.time_cap && !a.force {
        return usage(format!(
            "estimated {minutes:.1} min exceeds --time-cap {}; lower the budgets or pass --force",
            a.time_cap
        ));
    }
    let eng = engine(&r, cancel)?;
    let study = null_study(&eng, &study_cfg)?;
    for (k, s, msg) in &study.failures {
        log::warn!("dataset {k} ({}): {msg}", s.name());
    }
    print_uniformity(&study);
    if let Some(path) = &a.summary {
        let mut w = open_output(Some(path))?;
        serde_json::to_writer_pretty(
            &mut w,
            &serde_json::json!({ "summary": study.summary(), "failures": study.failures, "config": study.config }),
        )
        .map_err(|e| CliError::Output(e.to_string()))?;
        finish(w)?;
    }
    let mut w = open_output(a.out.as_deref())?;
    match r.format.unwrap_or(Format::Csv) {
        Format::Json => serde_json::to_writer_pretty(&mut w, &study).map_err(|e| CliError::Output(e.to_string()))?,
        Format::Csv => write_study_csv(&study, &mut w)?,
    }
    finish(w)
}

fn print_uniformity(study: &NullStudy) {
    eprintln!("split    test                  n     <0.01  <0.05  <0.10  median");
    for s in study.summary() {
        let f: Vec<String> = s.below.iter().map(|(_, v)| format!("{v:.3}")).collect();
        eprintln!(
            "{:8} {:21} {:5} {}  {:.3}",
            s.strategy.name(),
            s.test.name(),
            s.count,
            f.join("  "),
            s.median
        );
    }
}

fn write_study_csv(study: &NullStudy, w: &mut dyn Write) -> Result<(), CliError> {
    let io_err = |e: io::Error| CliError::Output(e.to_string());
    writeln!(w, "dataset,strategy,test,p_value,c,d,cases,controls,records").map_err(io_err)?;
    for row in &study.rows {
        let p = &study.design[row.dataset];
        writeln!(
            w,
            "{},{},{},{:?},{:?},{:?},{},{},{}",
            row.dataset,
            row.strategy.name(),
            row.test.name(),
            row.p_value,
            p.c,
            p.d,
            p.n_cases,
            p.n_controls,
            p.records
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)) {
        log::debug!("no interrupt handler: {e}");
    }

    let cfg = match cli.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, &cfg, &cancel),
        Command::Simulate(a) => cmd_simulate(a, &cfg, &cancel),
        Command::Calibrate(a) => cmd_calibrate(a, &cfg, &cancel),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
