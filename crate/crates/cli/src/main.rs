//! `socketfit` — batch pipeline for socket-shape prediction experiments.
//!
//! Subcommands compose into the full workflow:
//!
//! ```text
//! socketfit synth      --out data/raw --n 118 --seed 7
//! socketfit preprocess --data data/raw --out data/corpus
//! socketfit train      --corpus data/corpus --out runs/forest-adapt-raw
//! socketfit eval       --experiments runs --corpus data/corpus --out eval
//! socketfit report     --experiments runs
//! ```
//!
//! Every command is deterministic given its config and seed, and writes the
//! effective config next to its outputs. Exit codes: 0 success, 1 usage,
//! 2 data error, 3 numeric failure.

use clap::{Args, Parser, Subcommand};
use socketfit_core::eval::triptych_indices;
use socketfit_core::eval::export_distance_map;
use socketfit_core::experiment::{
    comparison_csv, comparison_table, evaluate_experiment, load_experiment, preprocess_corpus,
    run_experiment, ComparisonRow, Corpus, ExperimentConfig, ExperimentError, ExperimentRun,
};
use socketfit_core::models::{Method, ModelError, PredictionTarget, Representation};
use socketfit_core::pca::PcaError;
use socketfit_core::preprocess::{PreprocessConfig, PreprocessError, RegistrationError};
use socketfit_core::synth::{generate_dataset, SynthConfig, SynthError};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable holding the default output root for `--out`.
const OUT_ROOT_ENV: &str = "SOCKETFIT_OUT";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

#[derive(Parser)]
#[command(
    name = "socketfit",
    version,
    about = "Predicts prosthetic socket interiors from residual-limb scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stump/socket corpus.
    Synth(SynthArgs),
    /// Mirror, reorient and register a raw corpus onto the template grid.
    Preprocess(PreprocessArgs),
    /// Cross-validate one experiment configuration and persist its artifacts.
    Train(TrainArgs),
    /// Re-evaluate trained experiments and export distance maps.
    Eval(EvalArgs),
    /// Tabulate persisted experiment reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (default: $SOCKETFIT_OUT/raw).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON generation config; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of stump/socket pairs.
    #[arg(long)]
    n: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Landmark annotations per sample (1-3).
    #[arg(long)]
    raters: Option<usize>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw corpus directory (holds manifest.json).
    #[arg(long)]
    data: PathBuf,
    /// Output directory (default: $SOCKETFIT_OUT/corpus).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON pre-processing config; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registration iterations override.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Pre-processed corpus directory (holds index.json).
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory (default: $SOCKETFIT_OUT/<method>-<target>-<representation>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment config; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Regressor: forest | ffnn | pointset.
    #[arg(long)]
    method: Option<String>,
    /// Predicted quantity: adaptations | socket-shape.
    #[arg(long)]
    target: Option<String>,
    /// Input/output encoding: raw | reduced.
    #[arg(long)]
    representation: Option<String>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Explained-variance threshold for the reduced representation.
    #[arg(long)]
    pca_threshold: Option<f64>,
    /// Training epochs override (networks).
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (networks).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate override (networks).
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Use the reduced point budget for the point-set network.
    #[arg(long)]
    compact_pointset: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// One experiment directory, or a root whose children are experiments.
    #[arg(long)]
    experiments: PathBuf,
    /// Pre-processed corpus directory the experiments were trained on.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory (default: $SOCKETFIT_OUT/eval).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// One experiment directory, or a root whose children are experiments.
    #[arg(long)]
    experiments: PathBuf,
    /// Optional directory to write comparison.csv into.
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Error classification
// ---------------------------------------------------------------------------

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(err: ExperimentError) -> Self {
        match &err {
            ExperimentError::BadConfig(_) => Self::Usage(err.to_string()),
            ExperimentError::Model(ModelError::NonFiniteLoss { .. })
            | ExperimentError::NonFiniteMetrics { .. } => Self::Numeric(err.to_string()),
            ExperimentError::Model(ModelError::BadConfig(_))
            | ExperimentError::Model(ModelError::ModeMismatch(_)) => Self::Usage(err.to_string()),
            ExperimentError::Preprocess(PreprocessError::Registration(
                RegistrationError::Diverged { .. },
            )) => Self::Numeric(err.to_string()),
            ExperimentError::Pca(PcaError::NonFinite) => Self::Numeric(err.to_string()),
            _ => Self::Data(err.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(err: SynthError) -> Self {
        match &err {
            SynthError::BadConfig(_) => Self::Usage(err.to_string()),
            _ => Self::Data(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::Data(err.to_string())
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn data_error(message: impl Into<String>) -> CliError {
    CliError::Data(message.into())
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn resolve_out(out: Option<PathBuf>, default_name: &str) -> Result<PathBuf, CliError> {
    if let Some(path) = out {
        return Ok(path);
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(default_name)),
        None => Err(usage(format!(
            "no output directory: pass --out or set {OUT_ROOT_ENV}"
        ))),
    }
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| data_error(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s {
        "forest" => Ok(Method::Forest),
        "ffnn" => Ok(Method::Ffnn),
        "pointset" => Ok(Method::PointSet),
        _ => Err(usage(format!(
            "unknown method '{s}' (expected forest | ffnn | pointset)"
        ))),
    }
}

fn parse_target(s: &str) -> Result<PredictionTarget, CliError> {
    match s {
        "adaptations" => Ok(PredictionTarget::Adaptations),
        "socket-shape" | "socket_shape" => Ok(PredictionTarget::SocketShape),
        _ => Err(usage(format!(
            "unknown target '{s}' (expected adaptations | socket-shape)"
        ))),
    }
}

fn parse_representation(s: &str) -> Result<Representation, CliError> {
    match s {
        "raw" => Ok(Representation::Raw),
        "reduced" => Ok(Representation::Reduced),
        _ => Err(usage(format!(
            "unknown representation '{s}' (expected raw | reduced)"
        ))),
    }
}

fn method_slug(m: Method) -> &'static str {
    match m {
        Method::Forest => "forest",
        Method::Ffnn => "ffnn",
        Method::PointSet => "pointset",
    }
}

fn target_slug(t: PredictionTarget) -> &'static str {
    match t {
        PredictionTarget::Adaptations => "adaptations",
        PredictionTarget::SocketShape => "socket-shape",
    }
}

fn representation_slug(r: Representation) -> &'static str {
    match r {
        Representation::Raw => "raw",
        Representation::Reduced => "reduced",
    }
}

/// Directories to treat as experiments: the path itself if it holds a
/// report.json, else every child directory that does.
fn experiment_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join("report.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    let entries = fs::read_dir(root)
        .map_err(|e| data_error(format!("cannot read {}: {e}", root.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() && path.join("report.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(data_error(format!(
            "no experiments (report.json) found under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

fn print_comparison(rows: &[ComparisonRow]) {
    println!(
        "{:<28} {:<8} {:<12} {:<7} {:>4} {:>10} {:>9} {:>9} {:>10}",
        "experiment", "method", "target", "repr", "n", "median", "q1", "q3", "euclidean"
    );
    for r in rows {
        let euclid = r
            .mean_euclidean_mm
            .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<28} {:<8} {:<12} {:<7} {:>4} {:>10.3} {:>9.3} {:>9.3} {:>10}",
            r.name,
            method_slug(r.method),
            target_slug(r.target),
            representation_slug(r.representation),
            r.n,
            r.median_mm,
            r.q1_mm,
            r.q3_mm,
            euclid
        );
    }
}

fn print_run_summary(run: &ExperimentRun) {
    for fold in &run.report.folds {
        println!(
            "fold {}: n={} median={:.3} mm (q1 {:.3}, q3 {:.3})",
            fold.fold,
            fold.aggregates.n,
            fold.aggregates.median_mm,
            fold.aggregates.q1_mm,
            fold.aggregates.q3_mm
        );
    }
    let o = &run.report.overall;
    println!(
        "overall: n={} median={:.3} mm (q1 {:.3}, q3 {:.3}) mean-of-medians={:.3} mm",
        o.n, o.median_mm, o.q1_mm, o.q3_mm, o.mean_of_medians_mm
    );
    if let Some(e) = o.mean_euclidean_mm {
        println!("mean euclidean: {e:.3} mm");
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut config: SynthConfig = load_json_config(args.config.as_deref())?;
    if let Some(n) = args.n {
        config.n_samples = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(raters) = args.raters {
        config.raters = raters;
    }
    let out = resolve_out(args.out, "raw")?;
    let manifest = generate_dataset(&config, &out)?;
    println!(
        "wrote {} stump/socket pairs to {}",
        manifest.samples.len(),
        out.display()
    );
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let mut config: PreprocessConfig = load_json_config(args.config.as_deref())?;
    if let Some(iterations) = args.iterations {
        config.registration.iterations = iterations;
    }
    let out = resolve_out(args.out, "corpus")?;
    fs::create_dir_all(&out)?;
    fs::write(
        out.join("preprocess_config.json"),
        serde_json::to_string_pretty(&config)
            .map_err(|e| data_error(e.to_string()))?
            + "\n",
    )?;
    let outcome = preprocess_corpus(&args.data, &out, &config)?;
    println!(
        "pre-processed {} samples into {} ({} failures)",
        outcome.index.samples.len(),
        out.display(),
        outcome.failures.len()
    );
    for failure in &outcome.failures {
        eprintln!("  skipped {}: {}", failure.id, failure.error);
    }
    if outcome.index.samples.is_empty() {
        return Err(data_error("no sample survived pre-processing"));
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut config: ExperimentConfig = load_json_config(args.config.as_deref())?;
    if let Some(s) = &args.method {
        config.method = parse_method(s)?;
    }
    if let Some(s) = &args.target {
        config.target = parse_target(s)?;
    }
    if let Some(s) = &args.representation {
        config.representation = parse_representation(s)?;
    }
    if let Some(folds) = args.folds {
        config.folds = folds;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = args.pca_threshold {
        config.pca_threshold = t;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = Some(epochs);
    }
    if let Some(batch) = args.batch_size {
        config.batch_size = batch;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = Some(lr);
    }
    if args.compact_pointset {
        config.compact_pointset = true;
    }
    config.validate()?;

    let default_name = format!(
        "{}-{}-{}",
        method_slug(config.method),
        target_slug(config.target),
        representation_slug(config.representation)
    );
    let out = resolve_out(args.out, &default_name)?;
    let corpus = Corpus::load(&args.corpus)?;
    if corpus.is_empty() {
        return Err(data_error(format!(
            "corpus at {} is empty",
            args.corpus.display()
        )));
    }
    println!(
        "training {} on {} samples ({} folds) into {}",
        default_name,
        corpus.len(),
        config.folds,
        out.display()
    );
    let run = run_experiment(&corpus, &config, &out)?;
    print_run_summary(&run);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let out = resolve_out(args.out, "eval")?;
    fs::create_dir_all(&out)?;
    let corpus = Corpus::load(&args.corpus)?;
    let dirs = experiment_dirs(&args.experiments)?;

    let mut rows = Vec::new();
    for dir in &dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let saved = load_experiment(dir)?;
        let run = evaluate_experiment(&saved, &corpus)?;

        let exp_out = out.join(&name);
        fs::create_dir_all(&exp_out)?;

        // Flatten fold artifacts for the best/median/worst export.
        let mut medians = Vec::new();
        let mut flat = Vec::new();
        for fold in &run.folds {
            for (i, record) in fold.records.iter().enumerate() {
                medians.push(record.median_mm);
                flat.push((record.id.clone(), &fold.predictions[i], &fold.maps[i]));
            }
        }
        if let Some((best, mid, worst)) = triptych_indices(&medians) {
            for (label, index) in [("best", best), ("median", mid), ("worst", worst)] {
                let (id, prediction, map) = &flat[index];
                let path = exp_out.join(format!("{label}_{id}.ply"));
                export_distance_map(&path, &prediction.to_mesh(), map)
                    .map_err(|e| data_error(e.to_string()))?;
            }
        }
        let report = socketfit_core::experiment::ReportFile {
            config: run.config.clone(),
            report: run.report.clone(),
        };
        fs::write(
            exp_out.join("report.json"),
            serde_json::to_string_pretty(&report)
                .map_err(|e| data_error(e.to_string()))?
                + "\n",
        )?;
        let matches_stored = run.report == saved.report;
        println!(
            "{name}: re-evaluated {} samples, overall median {:.3} mm{}",
            run.report.overall.n,
            run.report.overall.median_mm,
            if matches_stored {
                ""
            } else {
                " (differs from training-time report)"
            }
        );
        rows.push((dir.clone(), name));
    }

    let table = comparison_table(&rows.iter().map(|(d, _)| d.clone()).collect::<Vec<_>>())?;
    fs::write(out.join("comparison.csv"), comparison_csv(&table))?;
    print_comparison(&table);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let dirs = experiment_dirs(&args.experiments)?;
    let table = comparison_table(&dirs)?;
    print_comparison(&table);
    if let Some(out) = args.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("comparison.csv"), comparison_csv(&table))?;
        println!("wrote {}", out.join("comparison.csv").display());
    }
    Ok(())
}
