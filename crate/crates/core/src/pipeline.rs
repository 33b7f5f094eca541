//! End-to-end experiments: split → segment → resize → extract/cache →
//! train → predict per patch → fuse → evaluate.
//!
//! Output directory layout:
//!
//! ```text
//! splits/<mag>.csv
//! features/<mag>-L<level>.cache
//! models/<mag>-L<level>.model
//! predictions/<mag>-L<level>-<rule>.csv   (rule is "none" at level 1)
//! report.csv
//! report.txt
//! confusion.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{
    self, DatasetError, DatasetRecord, Fractions, Label, Magnification, Split, SplitAssignment,
    SyntheticSpec,
};
use crate::features::{
    self, CacheBackend, FeatureCache, FeatureError, FeatureExtractor, SyntheticExtractor,
};
use crate::fusion::{self, FusionDecision, FusionError, FusionRule};
use crate::head::{
    self, ClassifierModel, ExampleMatrix, HeadError, ProbabilityVector, TrainConfig,
};
use crate::metrics::{self, Configuration, EvaluationReport, MetricsError, Prediction};
use crate::quadtree::{self, QuadtreeError};
use crate::raster::{self, RasterError, RasterImage};

/// Side length every patch is resized to before feature extraction.
pub const INPUT_SIZE: usize = 299;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: RasterError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{} feature ids missing from cache, first: {}", .0.len(), .0[0])]
    MissingFeatures(Vec<String>),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Quadtree(#[from] QuadtreeError),
    #[error("magnification {magnification}: {split} split is empty")]
    EmptySplit {
        magnification: Magnification,
        split: Split,
    },
    #[error("invalid experiment configuration: {0}")]
    Config(String),
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    /// Manifest CSV; relative image paths resolve against its directory.
    Manifest(PathBuf),
    /// Generated in memory.
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSelector {
    Synthetic {
        seed: u64,
    },
    /// Precomputed features, e.g. exported from a pretrained CNN.
    CacheFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    /// `None` runs every magnification present in the corpus.
    pub magnifications: Option<Vec<Magnification>>,
    pub levels: Vec<u32>,
    pub rules: Vec<FusionRule>,
    /// Its `seed` is ignored; see [`ExperimentConfig::seed`].
    pub train: TrainConfig,
    pub fractions: Fractions,
    pub backend: BackendSelector,
    pub output_dir: PathBuf,
    /// Split uses `seed`, weight init `seed + 1`, shuffling `seed + 2`.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(PipelineError::Config("no segmentation levels".into()));
        }
        for &l in &self.levels {
            quadtree::check_level(l)?;
        }
        if self.rules.is_empty() {
            return Err(PipelineError::Config("no fusion rules".into()));
        }
        self.train.validate()?;
        self.fractions.validate()?;
        Ok(())
    }

    fn stage_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(1),
            ..self.train.clone()
        }
    }
}

/// Wraps a backend so that every image is first resized to `size`×`size`.
pub struct Resizing<'a> {
    pub inner: &'a dyn FeatureExtractor,
    pub size: usize,
}

impl FeatureExtractor for Resizing<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn extract(&self, id: &str, image: &RasterImage) -> Result<Vec<f32>, FeatureError> {
        let resized = raster::resize_bilinear(image, self.size, self.size).map_err(|e| {
            FeatureError::Backend {
                id: id.to_string(),
                reason: e.to_string(),
            }
        })?;
        self.inner.extract(id, &resized)
    }
}

pub fn read_image(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    raster::decode_ppm(&bytes).map_err(|source| PipelineError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(dataset::load_manifest(BufReader::new(f))?)
}

pub fn read_split(path: &Path) -> Result<SplitAssignment> {
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(dataset::read_split_csv(BufReader::new(f))?)
}

pub fn read_cache_file(path: &Path) -> Result<FeatureCache> {
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(features::read_cache(BufReader::new(f))?)
}

pub fn read_model(path: &Path) -> Result<ClassifierModel> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(head::load_model(&bytes)?)
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

/// Directory that relative manifest paths are resolved against.
pub fn manifest_base(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_images(records: &[DatasetRecord], base: &Path) -> Result<Vec<RasterImage>> {
    records
        .iter()
        .map(|r| read_image(&base.join(&r.path)))
        .collect()
}

/// Unresized patches of every image at `level`, keyed by patch id.
pub fn patch_inputs(
    records: &[DatasetRecord],
    images: &[RasterImage],
    level: u32,
) -> Result<Vec<(String, RasterImage)>> {
    let mut out = Vec::new();
    for (r, img) in records.iter().zip(images) {
        let set = quadtree::split(img, &r.image_id, level)?;
        let ids: Vec<String> = set.ids().collect();
        out.extend(
            ids.into_iter()
                .zip(set.patches.into_iter().map(|p| p.image)),
        );
    }
    Ok(out)
}

/// Extracts every patch not already in `cache`. Any backend failure is fatal;
/// ids a cache-file backend lacks are all listed.
pub fn fill_cache(
    inputs: &[(String, RasterImage)],
    backend: &dyn FeatureExtractor,
    cache: FeatureCache,
) -> Result<(FeatureCache, usize)> {
    let resizing = Resizing {
        inner: backend,
        size: INPUT_SIZE,
    };
    let outcome = features::extract_batch(inputs, &resizing, cache)?;
    let missing: Vec<String> = outcome
        .failures
        .iter()
        .filter(|(_, e)| matches!(e, FeatureError::Missing(_)))
        .map(|(id, _)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingFeatures(missing));
    }
    if let Some((_, err)) = outcome.failures.into_iter().next() {
        return Err(err.into());
    }
    Ok((outcome.cache, outcome.computed))
}

/// Checks that every patch of every record at `level` is cached.
pub fn require_cached(records: &[DatasetRecord], level: u32, cache: &FeatureCache) -> Result<()> {
    let missing: Vec<String> = records
        .iter()
        .flat_map(|r| quadtree::patch_ids(&r.image_id, level))
        .filter(|id| !cache.contains(id))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::MissingFeatures(missing))
    }
}

/// Patch-level examples: every patch inherits its parent's label.
pub fn patch_examples(
    records: &[&DatasetRecord],
    level: u32,
    cache: &FeatureCache,
) -> Result<ExampleMatrix> {
    let ids: Vec<(String, Label)> = records
        .iter()
        .flat_map(|r| {
            quadtree::patch_ids(&r.image_id, level)
                .into_iter()
                .map(move |id| (id, r.label))
        })
        .collect();
    let mut x = ndarray::Array2::zeros((ids.len(), cache.dim()));
    let mut labels = Vec::with_capacity(ids.len());
    let mut missing = Vec::new();
    for (mut row, (id, label)) in x.rows_mut().into_iter().zip(&ids) {
        match cache.get(id) {
            Some(v) => row.iter_mut().zip(v).for_each(|(d, &s)| *d = s as f64),
            None => missing.push(id.clone()),
        }
        labels.push(label.index());
    }
    if !missing.is_empty() {
        return Err(PipelineError::MissingFeatures(missing));
    }
    Ok(ExampleMatrix { x, labels })
}

pub fn records_in<'a>(
    records: &'a [DatasetRecord],
    split: &SplitAssignment,
    which: Split,
) -> Vec<&'a DatasetRecord> {
    records
        .iter()
        .filter(|r| split.get(&r.image_id) == Some(which))
        .collect()
}

/// Trains one head on the train split, with early stopping on validation.
pub fn train_level(
    records: &[DatasetRecord],
    split: &SplitAssignment,
    level: u32,
    cache: &FeatureCache,
    config: &TrainConfig,
) -> Result<ClassifierModel> {
    let mag = records
        .first()
        .map_or(Magnification::X40, |r| r.magnification);
    let train = records_in(records, split, Split::Train);
    let val = records_in(records, split, Split::Validation);
    for (set, which) in [(&train, Split::Train), (&val, Split::Validation)] {
        if set.is_empty() {
            return Err(PipelineError::EmptySplit {
                magnification: mag,
                split: which,
            });
        }
    }
    let train_m = patch_examples(&train, level, cache)?;
    let val_m = patch_examples(&val, level, cache)?;
    Ok(head::train_matrix(&train_m, &val_m, config)?.0)
}

/// Fused decisions for one image from its cached patch features.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub record: DatasetRecord,
    pub decisions: Vec<FusionDecision>,
}

/// Predicts each record from cached features. Patch probabilities are
/// computed once per image and shared by all rules; level 1 uses a single
/// pass-through decision.
pub fn predict_cached(
    model: &ClassifierModel,
    records: &[&DatasetRecord],
    level: u32,
    rules: &[FusionRule],
    cache: &FeatureCache,
) -> Result<Vec<ImageOutcome>> {
    let rules = effective_rules(level, rules);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let m = patch_examples(&[*r], level, cache)?;
        let p = model.predict_matrix(&m.x)?;
        let probs: Vec<ProbabilityVector> = p
            .rows()
            .into_iter()
            .map(|row| ProbabilityVector::new(row.to_vec()).expect("softmax output"))
            .collect();
        out.push(ImageOutcome {
            record: (*r).clone(),
            decisions: fusion::fuse_all(&probs, &rules)?,
        });
    }
    Ok(out)
}

fn effective_rules(level: u32, rules: &[FusionRule]) -> Vec<FusionRule> {
    if level == 1 {
        vec![FusionRule::Summation]
    } else {
        rules.to_vec()
    }
}

/// Groups outcomes by configuration for [`metrics::build_report`].
pub fn to_predictions(
    outcomes: &[ImageOutcome],
    level: u32,
) -> BTreeMap<(Magnification, Configuration), Vec<Prediction>> {
    let mut groups: BTreeMap<_, Vec<Prediction>> = BTreeMap::new();
    for o in outcomes {
        for d in &o.decisions {
            let config = Configuration::new(level, d.rule);
            groups
                .entry((o.record.magnification, config))
                .or_default()
                .push(Prediction {
                    image_id: o.record.image_id.clone(),
                    patient_id: o.record.patient_id.clone(),
                    true_label: o.record.label,
                    predicted_label: Label::from_index(d.predicted_class).expect("binary head"),
                    magnification: o.record.magnification,
                });
        }
    }
    groups
}

/// One CSV per rule: `image_id,patient_id,magnification,true_label,predicted_label,score_benign,score_malignant`.
pub fn predictions_csv(outcomes: &[ImageOutcome], rule_index: usize) -> String {
    let mut s = String::from("image_id,patient_id,magnification,true_label,predicted_label,score_benign,score_malignant\n");
    for o in outcomes {
        let d = &o.decisions[rule_index];
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            o.record.image_id,
            o.record.patient_id,
            o.record.magnification,
            o.record.label,
            Label::from_index(d.predicted_class).expect("binary head"),
            crate::textfmt::sci(d.per_class_scores[0], 17),
            crate::textfmt::sci(d.per_class_scores[1], 17),
        )
        .unwrap();
    }
    s
}

pub fn prediction_file_name(mag: Magnification, level: u32, rule: Option<FusionRule>) -> String {
    format!(
        "{mag}-L{level}-{}.csv",
        rule.map_or("none", FusionRule::as_str)
    )
}

/// Writes predictions and returns the grouped predictions for reporting.
pub fn write_predictions(
    dir: &Path,
    outcomes: &[ImageOutcome],
    level: u32,
    rules: &[FusionRule],
) -> Result<BTreeMap<(Magnification, Configuration), Vec<Prediction>>> {
    let rules = effective_rules(level, rules);
    let mut by_mag: BTreeMap<Magnification, Vec<ImageOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_mag
            .entry(o.record.magnification)
            .or_default()
            .push(o.clone());
    }
    for (mag, outs) in &by_mag {
        for (i, rule) in rules.iter().enumerate() {
            let name = prediction_file_name(*mag, level, (level > 1).then_some(*rule));
            write_atomic(&dir.join(name), predictions_csv(outs, i).as_bytes())?;
        }
    }
    Ok(to_predictions(outcomes, level))
}

pub fn write_report(dir: &Path, report: &EvaluationReport) -> Result<()> {
    write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())?;
    write_atomic(
        &dir.join("confusion.csv"),
        report.confusion_csv().as_bytes(),
    )
}

/// Classifies one image: split → resize each patch → extract → forward → fuse.
/// Each patch goes through the backend and the head exactly once regardless
/// of how many rules are requested.
pub fn predict_image_rules(
    model: &ClassifierModel,
    image: &RasterImage,
    image_id: &str,
    level: u32,
    rules: &[FusionRule],
    backend: &dyn FeatureExtractor,
) -> Result<Vec<FusionDecision>> {
    if backend.dim() != model.in_dim() {
        return Err(HeadError::DimMismatch {
            expected: model.in_dim(),
            found: backend.dim(),
        }
        .into());
    }
    let set = quadtree::split(image, image_id, level)?;
    let resizing = Resizing {
        inner: backend,
        size: INPUT_SIZE,
    };
    let mut probs = Vec::with_capacity(set.len());
    for (id, patch) in set.ids().zip(&set.patches) {
        let f = resizing.extract(&id, &patch.image)?;
        probs.push(model.forward_f32(&f)?);
    }
    Ok(fusion::fuse_all(&probs, &effective_rules(level, rules))?)
}

pub fn predict_image(
    model: &ClassifierModel,
    image: &RasterImage,
    image_id: &str,
    level: u32,
    rule: FusionRule,
    backend: &dyn FeatureExtractor,
) -> Result<FusionDecision> {
    let mut d = predict_image_rules(model, image, image_id, level, &[rule], backend)?;
    Ok(d.remove(0))
}

fn load_corpus(source: &CorpusSource) -> Result<(Vec<DatasetRecord>, Vec<RasterImage>)> {
    match source {
        CorpusSource::Manifest(path) => {
            let records = read_manifest(path)?;
            let images = load_images(&records, &manifest_base(path))?;
            Ok((records, images))
        }
        CorpusSource::Synthetic(spec) => Ok(dataset::generate_synthetic(spec)),
    }
}

/// Per-run statistics beyond the report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    /// Feature vectors computed (cache misses) over the whole run.
    pub extracted: usize,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<EvaluationReport> {
    let backend: Box<dyn FeatureExtractor> = match &config.backend {
        BackendSelector::Synthetic { seed } => Box::new(SyntheticExtractor::new(*seed)),
        BackendSelector::CacheFile(path) => Box::new(CacheBackend::new(read_cache_file(path)?)),
    };
    run_experiment_with(config, backend.as_ref()).map(|(r, _)| r)
}

/// [`run_experiment`] with an explicit backend.
///
/// Feature caches under the output directory are reused, so a second run
/// over the same corpus extracts nothing.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    backend: &dyn FeatureExtractor,
) -> Result<(EvaluationReport, RunSummary)> {
    config.validate()?;
    let out = &config.output_dir;
    let (records, images) = load_corpus(&config.corpus)?;
    let wanted: Option<BTreeSet<Magnification>> = config
        .magnifications
        .as_ref()
        .map(|m| m.iter().copied().collect());
    let (records, images): (Vec<_>, Vec<_>) = records
        .into_iter()
        .zip(images)
        .filter(|(r, _)| wanted.as_ref().is_none_or(|w| w.contains(&r.magnification)))
        .unzip();
    if records.is_empty() {
        return Err(PipelineError::Config(
            "no images for the requested magnifications".into(),
        ));
    }

    let assignment = dataset::split(&records, config.fractions, config.seed)?;
    let levels: BTreeSet<u32> = config.levels.iter().copied().collect();
    let rules: Vec<FusionRule> = config
        .rules
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let train_cfg = config.stage_train_config();

    let mut mags: BTreeMap<Magnification, (Vec<DatasetRecord>, Vec<RasterImage>)> = BTreeMap::new();
    for (r, img) in records.into_iter().zip(images) {
        let e = mags.entry(r.magnification).or_default();
        e.0.push(r);
        e.1.push(img);
    }

    let mut groups = BTreeMap::new();
    let mut summary = RunSummary::default();
    for (mag, (recs, imgs)) in &mags {
        let mut split_csv = Vec::new();
        assignment.write_csv_subset(recs.iter().map(|r| r.image_id.as_str()), &mut split_csv)?;
        write_atomic(&out.join("splits").join(format!("{mag}.csv")), &split_csv)?;
        if records_in(recs, &assignment, Split::Test).is_empty() {
            return Err(PipelineError::EmptySplit {
                magnification: *mag,
                split: Split::Test,
            });
        }

        for &level in &levels {
            let cache_path = out.join("features").join(format!("{mag}-L{level}.cache"));
            let cache = if cache_path.exists() {
                let c = read_cache_file(&cache_path)?;
                if c.dim() != backend.dim() {
                    return Err(PipelineError::Config(format!(
                        "{} has dim {}, backend produces {}",
                        cache_path.display(),
                        c.dim(),
                        backend.dim()
                    )));
                }
                c
            } else {
                FeatureCache::new(backend.dim())
            };
            let mut inputs = patch_inputs(recs, imgs, level)?;
            inputs.retain(|(id, _)| !cache.contains(id));
            let (cache, computed) = fill_cache(&inputs, backend, cache)?;
            summary.extracted += computed;
            if computed > 0 || !cache_path.exists() {
                write_atomic(&cache_path, &features::cache_to_bytes(&cache))?;
            }

            let model = train_level(recs, &assignment, level, &cache, &train_cfg)?;
            write_atomic(
                &out.join("models").join(format!("{mag}-L{level}.model")),
                &head::save_model(&model),
            )?;

            let test = records_in(recs, &assignment, Split::Test);
            let outcomes = predict_cached(&model, &test, level, &rules, &cache)?;
            groups.extend(write_predictions(
                &out.join("predictions"),
                &outcomes,
                level,
                &rules,
            )?);
        }
    }

    let report = metrics::build_report(&groups)?;
    write_report(out, &report)?;
    Ok((report, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Features are the mean RGB of the patch plus a constant.
    struct MeanColor {
        calls: AtomicUsize,
    }

    impl FeatureExtractor for MeanColor {
        fn dim(&self) -> usize {
            4
        }
        fn extract(&self, _id: &str, image: &RasterImage) -> Result<Vec<f32>, FeatureError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let n = (image.width() * image.height()) as f32;
            let mut m = [0f32; 3];
            for px in image.pixels().chunks_exact(3) {
                for c in 0..3 {
                    m[c] += px[c] as f32 / 255.0;
                }
            }
            Ok(vec![m[0] / n, m[1] / n, m[2] / n, 1.0])
        }
    }

    fn quadrant_image() -> RasterImage {
        // Left half white, right half black.
        let (w, h) = (8, 6);
        let px = (0..w * h)
            .flat_map(|i| if i % w < w / 2 { [255u8; 3] } else { [0u8; 3] })
            .collect();
        RasterImage::new(w, h, px).unwrap()
    }

    fn model_preferring_bright() -> ClassifierModel {
        let mut m = ClassifierModel::zeros(4);
        // One hidden unit carries brightness; class 0 grows with it.
        m.w1[[0, 0]] = 1.0;
        m.w1[[0, 1]] = 1.0;
        m.w1[[0, 2]] = 1.0;
        m.w2[[0, 0]] = 2.0;
        m.b2[1] = 1.0;
        m
    }

    #[test]
    fn level_one_matches_direct_forward() {
        let backend = MeanColor {
            calls: AtomicUsize::new(0),
        };
        let model = model_preferring_bright();
        let img = quadrant_image();
        let d = predict_image(&model, &img, "x", 1, FusionRule::Maximum, &backend).unwrap();
        let resized = raster::resize_bilinear(&img, INPUT_SIZE, INPUT_SIZE).unwrap();
        let p = model
            .forward_f32(&backend.extract("x", &resized).unwrap())
            .unwrap();
        assert_eq!(d.predicted_class, p.argmax());
        assert_eq!(d.per_class_scores, p.as_slice());
        assert_eq!(d.n_patches, 1);
    }

    #[test]
    fn level_two_composes_manually() {
        let backend = MeanColor {
            calls: AtomicUsize::new(0),
        };
        let model = model_preferring_bright();
        let img = quadrant_image();
        let got = predict_image_rules(&model, &img, "x", 2, &FusionRule::ALL, &backend).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);

        let set = quadtree::split(&img, "x", 2).unwrap();
        let probs: Vec<_> = set
            .patches
            .iter()
            .map(|p| {
                let r = raster::resize_bilinear(&p.image, INPUT_SIZE, INPUT_SIZE).unwrap();
                model
                    .forward_f32(&backend.extract("", &r).unwrap())
                    .unwrap()
            })
            .collect();
        for (d, rule) in got.iter().zip(FusionRule::ALL) {
            assert_eq!(*d, fusion::fuse(&probs, rule).unwrap());
        }
    }

    #[test]
    fn backend_dim_must_match_model() {
        let backend = MeanColor {
            calls: AtomicUsize::new(0),
        };
        let model = ClassifierModel::zeros(5);
        assert!(matches!(
            predict_image(
                &model,
                &quadrant_image(),
                "x",
                1,
                FusionRule::Summation,
                &backend
            ),
            Err(PipelineError::Head(HeadError::DimMismatch { .. }))
        ));
    }

    #[test]
    fn missing_features_are_listed() {
        let rec = DatasetRecord {
            image_id: "a".into(),
            path: "a.ppm".into(),
            label: Label::Benign,
            magnification: Magnification::X40,
            patient_id: "p".into(),
        };
        let mut cache = FeatureCache::new(1);
        cache
            .insert(features::FeatureVector::new("a#L2R0C0", vec![0.0], 1).unwrap())
            .unwrap();
        match require_cached(&[rec], 2, &cache) {
            Err(PipelineError::MissingFeatures(ids)) => {
                assert_eq!(ids, vec!["a#L2R0C1", "a#L2R1C0", "a#L2R1C1"])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prediction_file_names() {
        assert_eq!(
            prediction_file_name(Magnification::X200, 1, None),
            "200-L1-none.csv"
        );
        assert_eq!(
            prediction_file_name(Magnification::X40, 3, Some(FusionRule::Product)),
            "40-L3-product.csv"
        );
    }
}
