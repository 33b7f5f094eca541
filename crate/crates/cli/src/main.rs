//! `patchfuse` command line. Every stage reads and writes files so stages can
//! be rerun independently; `run-all` chains them in-process.
//!
//! Exit codes: 0 success, 2 usage or validation, 3 missing data, 4 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use patchfuse::dataset::{
    self, DatasetError, DatasetRecord, Fractions, Magnification, Split, SyntheticSpec,
};
use patchfuse::features::{
    self, CacheBackend, FeatureCache, FeatureError, FeatureExtractor, SyntheticExtractor,
};
use patchfuse::fusion::FusionRule;
use patchfuse::head::{self, HeadError, TrainConfig};
use patchfuse::metrics::{self, MetricsError};
use patchfuse::pipeline::{self, BackendSelector, CorpusSource, ExperimentConfig, PipelineError};

#[derive(Parser)]
#[command(
    name = "patchfuse",
    version,
    about = "Quadtree patch classification with probability fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class corpus and its manifest.
    Synth(SynthArgs),
    /// Assign images to train/validation/test, disjoint by patient.
    Split(SplitArgs),
    /// Compute (or verify) patch features for one segmentation level.
    Extract(ExtractArgs),
    /// Train a classifier head on patch features.
    Train(TrainArgs),
    /// Predict the test split, fuse, and write the report.
    Eval(EvalArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Full experiment grid in one process.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    patients: usize,
    #[arg(long, default_value_t = 10)]
    images_per_patient: usize,
    /// `WxH`, e.g. 64x64.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Comma-separated, e.g. 40,100.
    #[arg(long, default_value = "40", value_parser = parse_mags)]
    magnifications: List<Magnification>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_fractions)]
    fractions: Fractions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Synthetic,
    Cache,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Restrict to images listed in this split file.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    level: u32,
    /// `cache` only checks that `--cache` already holds every patch.
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: BackendKind,
    #[arg(long)]
    cache: PathBuf,
    /// Projection seed of the synthetic extractor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct HeadArgs {
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

impl HeadArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    level: u32,
    /// Train only on this magnification.
    #[arg(long, value_parser = parse_mag)]
    magnification: Option<Magnification>,
    #[command(flatten)]
    head: HeadArgs,
    /// Master seed: initialization uses seed+1 and shuffling seed+2, as in
    /// `run-all`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    level: u32,
    #[arg(long, value_parser = parse_mag)]
    magnification: Option<Magnification>,
    #[arg(long, default_value = "sum,product,max", value_parser = parse_rules)]
    rules: List<FusionRule>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    level: u32,
    #[arg(long, default_value = "sum", value_parser = parse_rule)]
    rule: FusionRule,
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: BackendKind,
    /// Feature cache for `--backend cache`; patches are looked up under the
    /// image file stem.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Projection seed of the synthetic extractor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunAllArgs {
    /// Manifest of an existing corpus. Without it a synthetic corpus is
    /// generated in memory from the `--patients`, `--images-per-patient` and
    /// `--size` flags.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    patients: usize,
    #[arg(long, default_value_t = 10)]
    images_per_patient: usize,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Magnifications to run; all present in the corpus by default.
    #[arg(long, value_parser = parse_mags)]
    magnifications: Option<List<Magnification>>,
    #[arg(long, default_value = "1,2,3", value_parser = parse_levels)]
    levels: List<u32>,
    #[arg(long, default_value = "sum,product,max", value_parser = parse_rules)]
    rules: List<FusionRule>,
    #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_fractions)]
    fractions: Fractions,
    #[command(flatten)]
    head: HeadArgs,
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: BackendKind,
    /// Precomputed features for `--backend cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Master seed; also seeds corpus generation and the synthetic extractor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?} is not WxH"))?;
    let dim = |t: &str| t.parse::<usize>().ok().filter(|v| *v > 0);
    match (dim(w), dim(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("{s:?} is not WxH with positive integers")),
    }
}

/// A comma-separated flag value. A bare `Vec` field would make clap expect
/// the flag repeated instead.
#[derive(Debug, Clone)]
struct List<T>(Vec<T>);

fn parse_mags(s: &str) -> Result<List<Magnification>, String> {
    Magnification::parse_list(s).map(List)
}

fn parse_mag(s: &str) -> Result<Magnification, String> {
    s.parse()
        .map_err(|_| format!("{s:?} is not one of 40, 100, 200, 400"))
}

fn parse_rules(s: &str) -> Result<List<FusionRule>, String> {
    FusionRule::parse_list(s)
        .map(List)
        .map_err(|e| e.to_string())
}

fn parse_rule(s: &str) -> Result<FusionRule, String> {
    s.parse()
        .map_err(|e: patchfuse::fusion::FusionError| e.to_string())
}

fn parse_levels(s: &str) -> Result<List<u32>, String> {
    s.split(',')
        .map(|t| match t.trim().parse::<u32>() {
            Ok(l @ 1..=3) => Ok(l),
            _ => Err(format!("{t:?} is not a level in 1..=3")),
        })
        .collect::<Result<_, _>>()
        .map(List)
}

fn parse_fractions(s: &str) -> Result<Fractions, String> {
    s.parse().map_err(|e: DatasetError| e.to_string())
}

/// An error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::MissingFeatures(_) | PipelineError::EmptySplit { .. } => 3,
            PipelineError::Feature(f) => feature_code(f),
            PipelineError::Head(h) => head_code(h),
            PipelineError::Metrics(MetricsError::Empty | MetricsError::EmptyGroup(_)) => 3,
            PipelineError::Dataset(DatasetError::Unassigned(_)) => 3,
            _ => 2,
        };
        let message = match &e {
            PipelineError::MissingFeatures(ids) => format!(
                "{} feature ids missing; first missing id: {}",
                ids.len(),
                ids[0]
            ),
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

fn feature_code(e: &FeatureError) -> u8 {
    match e {
        FeatureError::Missing(_) => 3,
        FeatureError::NonFinite { .. } => 4,
        _ => 2,
    }
}

fn head_code(e: &HeadError) -> u8 {
    match e {
        HeadError::Diverged { .. } => 4,
        HeadError::EmptyDataset(_) => 3,
        _ => 2,
    }
}

macro_rules! impl_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

impl_from!(DatasetError, FeatureError, HeadError, MetricsError);

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::RunAll(a) => run_all(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        magnifications: a.magnifications.0,
        ..SyntheticSpec::new(a.patients, a.images_per_patient, a.size.0, a.size.1, a.seed)
    };
    if spec.n_patients == 0 || spec.images_per_patient == 0 {
        return Err(Failure::usage(
            "--patients and --images-per-patient must be positive",
        ));
    }
    let records = dataset::write_synthetic_corpus(&a.out, &spec)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.out.display())))?;
    eprintln!("wrote {} images to {}", records.len(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs) -> CmdResult {
    let records = pipeline::read_manifest(&a.manifest)?;
    let assignment = dataset::split(&records, a.fractions, a.seed)?;
    let mut bytes = Vec::new();
    assignment.write_csv(&mut bytes)?;
    pipeline::write_atomic(&a.out, &bytes)?;
    eprintln!(
        "train {} / validation {} / test {}",
        assignment.count(Split::Train),
        assignment.count(Split::Validation),
        assignment.count(Split::Test)
    );
    Ok(())
}

/// Manifest records, optionally restricted to a split file and magnification.
fn select_records(
    manifest: &Path,
    split: Option<&Path>,
    magnification: Option<Magnification>,
) -> Result<Vec<DatasetRecord>, Failure> {
    let mut records = pipeline::read_manifest(manifest)?;
    if let Some(path) = split {
        let assignment = pipeline::read_split(path)?;
        records.retain(|r| assignment.get(&r.image_id).is_some());
    }
    if let Some(m) = magnification {
        records.retain(|r| r.magnification == m);
    }
    Ok(records)
}

fn extract(a: ExtractArgs) -> CmdResult {
    let records = select_records(&a.manifest, a.split.as_deref(), None)?;
    match a.backend {
        BackendKind::Cache => {
            let cache = pipeline::read_cache_file(&a.cache)?;
            pipeline::require_cached(&records, a.level, &cache)?;
            eprintln!(
                "{}: all {} patches present",
                a.cache.display(),
                records.len() * patchfuse::quadtree::patch_count(a.level)
            );
        }
        BackendKind::Synthetic => {
            let backend = SyntheticExtractor::new(a.seed);
            let cache = if a.cache.exists() {
                pipeline::read_cache_file(&a.cache)?
            } else {
                FeatureCache::new(backend.dim())
            };
            let images = pipeline::load_images(&records, &pipeline::manifest_base(&a.manifest))?;
            let mut inputs = pipeline::patch_inputs(&records, &images, a.level)?;
            inputs.retain(|(id, _)| !cache.contains(id));
            let (cache, computed) = pipeline::fill_cache(&inputs, &backend, cache)?;
            if computed > 0 || !a.cache.exists() {
                pipeline::write_atomic(&a.cache, &features::cache_to_bytes(&cache))?;
            }
            eprintln!("computed {computed} vectors; cache holds {}", cache.len());
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> CmdResult {
    let records = select_records(&a.manifest, None, a.magnification)?;
    let assignment = pipeline::read_split(&a.split)?;
    let cache = pipeline::read_cache_file(&a.cache)?;
    let config = a.head.config(a.seed.wrapping_add(1));
    config.validate()?;
    let model = pipeline::train_level(&records, &assignment, a.level, &cache, &config)?;
    pipeline::write_atomic(&a.out, &head::save_model(&model))?;
    eprintln!(
        "trained {} epochs, best validation loss {}",
        model.meta.epochs,
        model
            .meta
            .val_loss
            .map_or("-".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let records = select_records(&a.manifest, None, a.magnification)?;
    let assignment = pipeline::read_split(&a.split)?;
    let model = pipeline::read_model(&a.model)?;
    let cache = pipeline::read_cache_file(&a.cache)?;
    if cache.dim() != model.in_dim() {
        return Err(Failure::usage(format!(
            "cache dim {} does not match model input dim {}",
            cache.dim(),
            model.in_dim()
        )));
    }
    let test = pipeline::records_in(&records, &assignment, Split::Test);
    if test.is_empty() {
        return Err(Failure {
            code: 3,
            message: "test split is empty".into(),
        });
    }
    let outcomes = pipeline::predict_cached(&model, &test, a.level, &a.rules.0, &cache)?;
    let groups =
        pipeline::write_predictions(&a.out.join("predictions"), &outcomes, a.level, &a.rules.0)?;
    let report = metrics::build_report(&groups)?;
    pipeline::write_report(&a.out, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn predict(a: PredictArgs) -> CmdResult {
    let image = pipeline::read_image(&a.image).map_err(|e| Failure::usage(e.to_string()))?;
    let model = pipeline::read_model(&a.model)?;
    let id = a
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Failure::usage(format!("{}: no usable file stem", a.image.display())))?
        .to_string();
    let backend: Box<dyn FeatureExtractor> = match a.backend {
        BackendKind::Synthetic => Box::new(SyntheticExtractor::new(a.seed)),
        BackendKind::Cache => {
            let path = a
                .cache
                .as_ref()
                .ok_or_else(|| Failure::usage("--backend cache needs --cache"))?;
            Box::new(CacheBackend::new(pipeline::read_cache_file(path)?))
        }
    };
    if a.level == 1 {
        eprintln!("note: level 1 has a single patch; --rule is ignored");
    }
    let d = pipeline::predict_image(&model, &image, &id, a.level, a.rule, backend.as_ref())?;
    let class = dataset::Label::from_index(d.predicted_class).expect("binary head");
    println!(
        "class={} scores={},{} rule={} patches={}",
        class.as_str(),
        d.per_class_scores[0],
        d.per_class_scores[1],
        if a.level == 1 {
            "none"
        } else {
            d.rule.as_str()
        },
        d.n_patches
    );
    Ok(())
}

fn run_all(a: RunAllArgs) -> CmdResult {
    let corpus = match a.manifest {
        Some(m) => CorpusSource::Manifest(m),
        None => CorpusSource::Synthetic(SyntheticSpec::new(
            a.patients,
            a.images_per_patient,
            a.size.0,
            a.size.1,
            a.seed,
        )),
    };
    let backend = match a.backend {
        BackendKind::Synthetic => BackendSelector::Synthetic { seed: a.seed },
        BackendKind::Cache => BackendSelector::CacheFile(
            a.cache
                .ok_or_else(|| Failure::usage("--backend cache needs --cache"))?,
        ),
    };
    let config = ExperimentConfig {
        corpus,
        magnifications: a.magnifications.map(|m| m.0),
        levels: a.levels.0,
        rules: a.rules.0,
        train: a.head.config(a.seed),
        fractions: a.fractions,
        backend,
        output_dir: a.out,
        seed: a.seed,
    };
    let report = pipeline::run_experiment(&config)?;
    print!("{}", report.to_text());
    Ok(())
}
