//! Patch-based classification of microscopy images: quadtree segmentation,
//! per-patch features, a small softmax head and probability fusion.

pub mod dataset;
pub mod features;
pub mod fusion;
pub mod head;
pub mod metrics;
pub mod pipeline;
pub mod quadtree;
pub mod raster;
pub mod rng;
pub mod textfmt;

pub use dataset::{DatasetRecord, Label, Magnification, Split, SplitAssignment};
pub use features::{FeatureCache, FeatureExtractor, FeatureVector, SyntheticExtractor};
pub use fusion::{fuse, FusionDecision, FusionRule};
pub use head::{ClassifierModel, ProbabilityVector, TrainConfig};
pub use metrics::{EvaluationReport, Prediction};
pub use pipeline::{predict_image, run_experiment, ExperimentConfig};
pub use quadtree::PatchSet;
pub use raster::RasterImage;
pub use rng::SplitMix64;
