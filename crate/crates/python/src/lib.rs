//! Python bindings. Images cross the boundary as PPM bytes or raw RGB
//! buffers, features and probabilities as lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use patchfuse::dataset::{Fractions, Label, SyntheticSpec};
use patchfuse::features::{self, FeatureError, FeatureExtractor};
use patchfuse::fusion::{self, FusionRule};
use patchfuse::head::{self, HeadError, LabeledExample, TrainConfig};
use patchfuse::metrics::{self, Prediction};
use patchfuse::pipeline::{self, BackendSelector, CorpusSource, ExperimentConfig, PipelineError};
use patchfuse::{quadtree, raster, Magnification};

fn to_py(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Io { .. } => PyOSError::new_err(e.to_string()),
        PipelineError::MissingFeatures(_) | PipelineError::Feature(FeatureError::Missing(_)) => {
            PyKeyError::new_err(e.to_string())
        }
        PipelineError::Head(HeadError::Diverged { .. })
        | PipelineError::Feature(FeatureError::NonFinite { .. }) => {
            PyArithmeticError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn err<E: Into<PipelineError>>(e: E) -> PyErr {
    to_py(e.into())
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rule(name: &str) -> PyResult<FusionRule> {
    name.parse().map_err(err)
}

/// An RGB raster, 8 bits per channel.
#[pyclass(module = "patchfuse_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct RasterImage(raster::RasterImage);

#[pymethods]
impl RasterImage {
    /// From interleaved RGB bytes, row-major.
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<u8>) -> PyResult<Self> {
        raster::RasterImage::new(width, height, pixels)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_ppm(data: &[u8]) -> PyResult<Self> {
        raster::decode_ppm(data).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        pipeline::read_image(&path).map(Self).map_err(to_py)
    }

    fn to_ppm<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &raster::encode_ppm(&self.0))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.pixels())
    }

    fn resize(&self, width: usize, height: usize) -> PyResult<Self> {
        raster::resize_bilinear(&self.0, width, height)
            .map(Self)
            .map_err(value_err)
    }

    /// Quadtree patches at `level` as `(patch_id, image)` pairs in row-major order.
    fn split(&self, parent_id: &str, level: u32) -> PyResult<Vec<(String, RasterImage)>> {
        let set = quadtree::split(&self.0, parent_id, level).map_err(err)?;
        let ids: Vec<String> = set.ids().collect();
        Ok(ids
            .into_iter()
            .zip(set.patches)
            .map(|(id, p)| (id, Self(p.image)))
            .collect())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("RasterImage({}x{})", self.0.width(), self.0.height())
    }
}

#[pyfunction]
fn patch_ids(parent_id: &str, level: u32) -> PyResult<Vec<String>> {
    quadtree::check_level(level).map_err(err)?;
    Ok(quadtree::patch_ids(parent_id, level))
}

/// Deterministic stand-in for the CNN feature extractor.
#[pyclass(module = "patchfuse_py", frozen)]
struct SyntheticExtractor(features::SyntheticExtractor);

#[pymethods]
impl SyntheticExtractor {
    #[new]
    fn new(seed: u64) -> Self {
        Self(features::SyntheticExtractor::new(seed))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn extract(&self, image: &RasterImage) -> PyResult<Vec<f32>> {
        self.0.extract("", &image.0).map_err(err)
    }
}

/// Patch features keyed by patch id, in the text cache format.
#[pyclass(module = "patchfuse_py")]
struct FeatureCache(features::FeatureCache);

#[pymethods]
impl FeatureCache {
    #[new]
    fn new(dim: usize) -> Self {
        Self(features::FeatureCache::new(dim))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        features::read_cache(data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        pipeline::read_cache_file(&path).map(Self).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &features::cache_to_bytes(&self.0))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, id: &str) -> bool {
        self.0.contains(id)
    }

    fn get(&self, id: &str) -> Option<Vec<f32>> {
        self.0.get(id).map(<[f32]>::to_vec)
    }

    fn insert(&mut self, id: &str, values: Vec<f32>) -> PyResult<()> {
        let fv = features::FeatureVector::new(id, values, self.0.dim()).map_err(err)?;
        self.0.insert(fv).map_err(err)
    }

    fn ids(&self) -> Vec<String> {
        self.0.iter().map(|(id, _)| id.to_string()).collect()
    }
}

/// The 512-unit ReLU head with a two-way softmax.
#[pyclass(module = "patchfuse_py", frozen)]
struct ClassifierModel(head::ClassifierModel);

#[pymethods]
impl ClassifierModel {
    #[staticmethod]
    fn zeros(in_dim: usize) -> Self {
        Self(head::ClassifierModel::zeros(in_dim))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        head::load_model(data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        pipeline::read_model(&path).map(Self).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &head::save_model(&self.0))
    }

    #[getter]
    fn in_dim(&self) -> usize {
        self.0.in_dim()
    }

    /// `(seed, epochs, val_loss)`.
    #[getter]
    fn meta(&self) -> (u64, usize, Option<f64>) {
        let m = &self.0.meta;
        (m.seed, m.epochs, m.val_loss)
    }

    fn forward(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0
            .forward(&features)
            .map(|p| p.as_slice().to_vec())
            .map_err(err)
    }

    /// Classifies one image with the synthetic extractor seeded by `feature_seed`.
    /// Returns `(class, scores, n_patches)`.
    #[pyo3(signature = (image, level, rule="sum", feature_seed=0, image_id="image"))]
    fn predict_image(
        &self,
        image: &RasterImage,
        level: u32,
        rule: &str,
        feature_seed: u64,
        image_id: &str,
    ) -> PyResult<(usize, Vec<f64>, usize)> {
        let backend = features::SyntheticExtractor::new(feature_seed);
        let d = pipeline::predict_image(
            &self.0,
            &image.0,
            image_id,
            level,
            self::rule(rule)?,
            &backend,
        )
        .map_err(to_py)?;
        Ok((d.predicted_class, d.per_class_scores, d.n_patches))
    }
}

/// Trains a head on `(features, label)` rows with early stopping on the
/// validation rows.
#[pyfunction]
#[pyo3(signature = (train_x, train_y, val_x, val_y, seed=0, learning_rate=0.01, batch_size=32, max_epochs=200, patience=10))]
#[allow(clippy::too_many_arguments)]
fn train(
    train_x: Vec<Vec<f64>>,
    train_y: Vec<usize>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<usize>,
    seed: u64,
    learning_rate: f64,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
) -> PyResult<ClassifierModel> {
    let examples = |x: Vec<Vec<f64>>, y: Vec<usize>| -> PyResult<Vec<LabeledExample>> {
        if x.len() != y.len() {
            return Err(PyValueError::new_err(format!(
                "{} rows but {} labels",
                x.len(),
                y.len()
            )));
        }
        Ok(x.into_iter()
            .zip(y)
            .map(|(features, label)| LabeledExample { features, label })
            .collect())
    };
    let config = TrainConfig {
        learning_rate,
        batch_size,
        max_epochs,
        patience,
        seed,
    };
    let model = head::train(
        &examples(train_x, train_y)?,
        &examples(val_x, val_y)?,
        &config,
    )
    .map_err(err)?;
    Ok(ClassifierModel(model))
}

/// Fuses per-patch probability vectors. Returns `(class, scores)`.
#[pyfunction]
fn fuse(patch_probs: Vec<Vec<f64>>, rule: &str) -> PyResult<(usize, Vec<f64>)> {
    let probs = patch_probs
        .into_iter()
        .map(|p| {
            head::ProbabilityVector::new(p)
                .ok_or_else(|| PyValueError::new_err("not a probability vector"))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let d = fusion::fuse(&probs, self::rule(rule)?).map_err(err)?;
    Ok((d.predicted_class, d.per_class_scores))
}

/// Mean over patients of per-patient accuracy, from
/// `(patient_id, true_class, predicted_class)` rows.
#[pyfunction]
fn patient_accuracy(rows: Vec<(String, usize, usize)>) -> PyResult<f64> {
    let label = |i: usize| {
        Label::from_index(i).ok_or_else(|| PyValueError::new_err(format!("class {i} out of range")))
    };
    let preds = rows
        .into_iter()
        .map(|(patient_id, t, p)| {
            Ok(Prediction {
                image_id: String::new(),
                patient_id,
                true_label: label(t)?,
                predicted_label: label(p)?,
                magnification: Magnification::X40,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    metrics::patient_accuracy(&preds).map_err(err)
}

/// Runs the experiment grid and returns the report CSV. Without `manifest`
/// a synthetic corpus of `patients` × `images_per_patient` images is used.
#[pyfunction]
#[pyo3(signature = (
    output_dir, manifest=None, patients=8, images_per_patient=10, size=64,
    levels=vec![1, 2, 3], rules=vec!["sum".to_string(), "product".to_string(), "max".to_string()],
    max_epochs=200, seed=0, cache=None,
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    output_dir: PathBuf,
    manifest: Option<PathBuf>,
    patients: usize,
    images_per_patient: usize,
    size: usize,
    levels: Vec<u32>,
    rules: Vec<String>,
    max_epochs: usize,
    seed: u64,
    cache: Option<PathBuf>,
) -> PyResult<String> {
    let config = ExperimentConfig {
        corpus: match manifest {
            Some(m) => CorpusSource::Manifest(m),
            None => CorpusSource::Synthetic(SyntheticSpec::new(
                patients,
                images_per_patient,
                size,
                size,
                seed,
            )),
        },
        magnifications: None,
        levels,
        rules: rules
            .iter()
            .map(|r| self::rule(r))
            .collect::<PyResult<_>>()?,
        train: TrainConfig {
            max_epochs,
            ..TrainConfig::default()
        },
        fractions: Fractions::default(),
        backend: match cache {
            Some(c) => BackendSelector::CacheFile(c),
            None => BackendSelector::Synthetic { seed },
        },
        output_dir,
        seed,
    };
    let report = py
        .detach(|| pipeline::run_experiment(&config))
        .map_err(to_py)?;
    Ok(report.to_csv())
}

#[pymodule]
fn patchfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RasterImage>()?;
    m.add_class::<SyntheticExtractor>()?;
    m.add_class::<FeatureCache>()?;
    m.add_class::<ClassifierModel>()?;
    m.add_function(wrap_pyfunction!(patch_ids, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(patient_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("FEATURE_DIM", features::FEATURE_DIM)?;
    Ok(())
}
