//! Fully connected classifier head: `in_dim → 512 (ReLU) → 2 → softmax`,
//! trained with cross-entropy by plain mini-batch gradient descent.
//!
//! All arithmetic is `f64`; features stored as `f32` are widened on entry.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::textfmt::push_sci;

pub const HIDDEN_UNITS: usize = 512;
pub const NUM_CLASSES: usize = 2;
/// Smallest probability the loss and the product fusion rule will take a log of.
pub const PROB_FLOOR: f64 = 1e-12;

const MODEL_MAGIC: &str = "# patchfuse-model v1 in=";

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("label {0} out of range (expected 0 or 1)")]
    LabelOutOfRange(usize),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {which} loss is not finite")]
    Diverged { epoch: usize, which: &'static str },
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("model file line {line}: dimension error: {reason}")]
    Dimension { line: usize, reason: String },
}

/// Softmax output, class 0 = benign, class 1 = malignant.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Accepts any finite, non-negative vector summing to one within 1e-9.
    pub fn new(probs: Vec<f64>) -> Option<Self> {
        let ok = !probs.is_empty()
            && probs
                .iter()
                .all(|p| p.is_finite() && *p >= 0.0 && *p <= 1.0)
            && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        ok.then_some(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Highest-probability class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> ProbabilityVector {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbabilityVector(exps.into_iter().map(|e| e / sum).collect())
}

/// Cross-entropy of one prediction: `-ln p[label]`, with `p` floored at 1e-12.
pub fn loss(probs: &ProbabilityVector, label: usize) -> f64 {
    // `0.0 -` rather than negation keeps a perfect prediction at +0.
    0.0 - probs.0[label].max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn from_f32(features: &[f32], label: usize) -> Self {
        Self {
            features: features.iter().map(|&v| v as f64).collect(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(HeadError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(HeadError::InvalidConfig(
                "batch size must be positive".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(HeadError::InvalidConfig(
                "max epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Mean validation loss of the retained parameters; `None` if untrained.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// `HIDDEN_UNITS × in_dim`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `NUM_CLASSES × HIDDEN_UNITS`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub meta: TrainingMeta,
}

/// Parameter-shaped gradient of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ClassifierModel {
    pub fn zeros(in_dim: usize) -> Self {
        Self {
            w1: Array2::zeros((HIDDEN_UNITS, in_dim)),
            b1: Array1::zeros(HIDDEN_UNITS),
            w2: Array2::zeros((NUM_CLASSES, HIDDEN_UNITS)),
            b2: Array1::zeros(NUM_CLASSES),
            meta: TrainingMeta::default(),
        }
    }

    /// Biases zero, weights uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn initialized(in_dim: usize, rng: &mut SplitMix64) -> Self {
        let mut m = Self::zeros(in_dim);
        let a1 = (6.0 / (in_dim + HIDDEN_UNITS) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.uniform(-a1, a1));
        let a2 = (6.0 / (HIDDEN_UNITS + NUM_CLASSES) as f64).sqrt();
        m.w2.iter_mut().for_each(|w| *w = rng.uniform(-a2, a2));
        m
    }

    pub fn in_dim(&self) -> usize {
        self.w1.ncols()
    }

    fn check_dim(&self, found: usize) -> Result<(), HeadError> {
        if found != self.in_dim() {
            return Err(HeadError::DimMismatch {
                expected: self.in_dim(),
                found,
            });
        }
        Ok(())
    }

    fn hidden_pre(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.w1.dot(&x) + &self.b1
    }

    fn logits(&self, hidden: &Array1<f64>) -> Array1<f64> {
        self.w2.dot(hidden) + &self.b2
    }

    pub fn forward(&self, features: &[f64]) -> Result<ProbabilityVector, HeadError> {
        self.check_dim(features.len())?;
        let h = self.hidden_pre(ArrayView1::from(features)).mapv(relu);
        Ok(softmax(self.logits(&h).as_slice().unwrap()))
    }

    pub fn forward_f32(&self, features: &[f32]) -> Result<ProbabilityVector, HeadError> {
        let x: Vec<f64> = features.iter().map(|&v| v as f64).collect();
        self.forward(&x)
    }

    /// Gradient of the single-example cross-entropy.
    pub fn backward(&self, example: &LabeledExample) -> Result<Gradients, HeadError> {
        self.check_dim(example.features.len())?;
        if example.label >= NUM_CLASSES {
            return Err(HeadError::LabelOutOfRange(example.label));
        }
        let x = ArrayView1::from(&example.features[..]);
        let pre = self.hidden_pre(x);
        let h = pre.mapv(relu);
        let probs = softmax(self.logits(&h).as_slice().unwrap());
        let mut delta2 = Array1::from(probs.0);
        delta2[example.label] -= 1.0;

        let w2 = outer(&delta2, &h);
        let mut delta1 = self.w2.t().dot(&delta2);
        delta1.zip_mut_with(&pre, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        let w1 = outer(&delta1, &x.to_owned());
        Ok(Gradients {
            w1,
            b1: delta1,
            w2,
            b2: delta2,
        })
    }

    /// Probabilities for each row of `x`, as an `n × NUM_CLASSES` matrix.
    pub fn predict_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>, HeadError> {
        self.check_dim(x.ncols())?;
        let h = (x.dot(&self.w1.t()) + &self.b1).mapv(relu);
        let mut z = h.dot(&self.w2.t()) + &self.b2;
        for mut row in z.rows_mut() {
            let p = softmax(row.as_slice().unwrap());
            row.assign(&ArrayView1::from(p.as_slice()));
        }
        Ok(z)
    }

    /// Mean cross-entropy over a batch.
    pub fn mean_loss(&self, x: &Array2<f64>, labels: &[usize]) -> Result<f64, HeadError> {
        let p = self.predict_matrix(x)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| 0.0 - p[[i, y]].max(PROB_FLOOR).ln())
            .sum();
        Ok(total / labels.len() as f64)
    }

    /// Mean gradient over the rows of `x`.
    pub fn batch_gradients(
        &self,
        x: &Array2<f64>,
        labels: &[usize],
    ) -> Result<Gradients, HeadError> {
        self.check_dim(x.ncols())?;
        let n = x.nrows() as f64;
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let h = pre.mapv(relu);
        let mut delta2 = self.predict_from_hidden(&h);
        for (mut row, &y) in delta2.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        delta2 /= n;
        let g_w2 = delta2.t().dot(&h);
        let g_b2 = delta2.sum_axis(Axis(0));
        let mut delta1 = delta2.dot(&self.w2);
        delta1.zip_mut_with(&pre, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        let g_w1 = delta1.t().dot(x);
        let g_b1 = delta1.sum_axis(Axis(0));
        Ok(Gradients {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
        })
    }

    fn predict_from_hidden(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut z = h.dot(&self.w2.t()) + &self.b2;
        for mut row in z.rows_mut() {
            let p = softmax(row.as_slice().unwrap());
            row.assign(&ArrayView1::from(p.as_slice()));
        }
        z
    }

    fn step(&mut self, g: &Gradients, lr: f64) {
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }

    fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (mut row, &ai) in out.rows_mut().into_iter().zip(a) {
        row.assign(&(b * ai));
    }
    out
}

/// Examples stacked into a design matrix.
#[derive(Debug, Clone)]
pub struct ExampleMatrix {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ExampleMatrix {
    pub fn from_examples(examples: &[LabeledExample]) -> Result<Self, HeadError> {
        let dim = examples.first().map_or(0, |e| e.features.len());
        let mut x = Array2::zeros((examples.len(), dim));
        let mut labels = Vec::with_capacity(examples.len());
        for (mut row, e) in x.rows_mut().into_iter().zip(examples) {
            if e.features.len() != dim {
                return Err(HeadError::DimMismatch {
                    expected: dim,
                    found: e.features.len(),
                });
            }
            if e.label >= NUM_CLASSES {
                return Err(HeadError::LabelOutOfRange(e.label));
            }
            row.assign(&ArrayView1::from(&e.features[..]));
            labels.push(e.label);
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Per-epoch mean losses. Index 0 of `train_loss` is the initial model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

pub fn train(
    data_train: &[LabeledExample],
    data_val: &[LabeledExample],
    config: &TrainConfig,
) -> Result<ClassifierModel, HeadError> {
    train_with_history(data_train, data_val, config).map(|(m, _)| m)
}

pub fn train_with_history(
    data_train: &[LabeledExample],
    data_val: &[LabeledExample],
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainHistory), HeadError> {
    if data_train.is_empty() {
        return Err(HeadError::EmptyDataset("training"));
    }
    if data_val.is_empty() {
        return Err(HeadError::EmptyDataset("validation"));
    }
    let train = ExampleMatrix::from_examples(data_train)?;
    let val = ExampleMatrix::from_examples(data_val)?;
    train_matrix(&train, &val, config)
}

/// Mini-batch gradient descent with early stopping on validation loss.
///
/// Weights are drawn from a stream seeded with `config.seed`; the per-epoch
/// shuffles use a second stream seeded with `config.seed + 1`.
pub fn train_matrix(
    train: &ExampleMatrix,
    val: &ExampleMatrix,
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainHistory), HeadError> {
    config.validate()?;
    if train.is_empty() {
        return Err(HeadError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(HeadError::EmptyDataset("validation"));
    }
    if train.dim() != val.dim() {
        return Err(HeadError::DimMismatch {
            expected: train.dim(),
            found: val.dim(),
        });
    }

    let mut model = ClassifierModel::initialized(train.dim(), &mut SplitMix64::new(config.seed));
    let mut shuffle_rng = SplitMix64::new(config.seed.wrapping_add(1));
    let mut history = TrainHistory {
        train_loss: vec![model.mean_loss(&train.x, &train.labels)?],
        ..Default::default()
    };
    let mut best: Option<(f64, ClassifierModel)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = 0;

    for epoch in 1..=config.max_epochs {
        epochs = epoch;
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let xb = train.x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let g = model.batch_gradients(&xb, &yb)?;
            model.step(&g, config.learning_rate);
        }
        if !model.is_finite() {
            return Err(HeadError::Diverged {
                epoch,
                which: "training",
            });
        }
        let tl = model.mean_loss(&train.x, &train.labels)?;
        let vl = model.mean_loss(&val.x, &val.labels)?;
        if !tl.is_finite() {
            return Err(HeadError::Diverged {
                epoch,
                which: "training",
            });
        }
        if !vl.is_finite() {
            return Err(HeadError::Diverged {
                epoch,
                which: "validation",
            });
        }
        history.train_loss.push(tl);
        history.val_loss.push(vl);

        if best.as_ref().is_none_or(|(b, _)| vl < *b) {
            best = Some((vl, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience.max(1) {
                break;
            }
        }
    }

    let (val_loss, mut model) = best.expect("at least one epoch ran");
    model.meta = TrainingMeta {
        seed: config.seed,
        epochs,
        val_loss: Some(val_loss),
    };
    Ok((model, history))
}

fn push_row<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    for (i, &v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        push_sci(out, v, 17);
    }
    out.push('\n');
}

/// Text serialization; 17 significant digits round-trip every `f64`.
pub fn save_model(model: &ClassifierModel) -> Vec<u8> {
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}{}", model.in_dim()).unwrap();
    let val = model
        .meta
        .val_loss
        .map_or_else(|| "none".to_string(), |v| crate::textfmt::sci(v, 17));
    writeln!(
        out,
        "meta seed={} epochs={} val_loss={val}",
        model.meta.seed, model.meta.epochs
    )
    .unwrap();
    writeln!(out, "w1 {} {}", model.w1.nrows(), model.w1.ncols()).unwrap();
    for row in model.w1.rows() {
        push_row(&mut out, row);
    }
    writeln!(out, "b1 {}", model.b1.len()).unwrap();
    push_row(&mut out, &model.b1);
    writeln!(out, "w2 {} {}", model.w2.nrows(), model.w2.ncols()).unwrap();
    for row in model.w2.rows() {
        push_row(&mut out, row);
    }
    writeln!(out, "b2 {}", model.b2.len()).unwrap();
    push_row(&mut out, &model.b2);
    out.into_bytes()
}

struct ModelReader<'a> {
    lines: std::iter::Enumerate<std::str::Split<'a, char>>,
    line: usize,
}

impl<'a> ModelReader<'a> {
    fn next(&mut self) -> Result<&'a str, HeadError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(HeadError::Format {
                line: self.line + 1,
                reason: "unexpected end of file".into(),
            }),
        }
    }

    fn format(&self, reason: impl Into<String>) -> HeadError {
        HeadError::Format {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn dimension(&self, reason: impl Into<String>) -> HeadError {
        HeadError::Dimension {
            line: self.line,
            reason: reason.into(),
        }
    }

    /// Reads a `<name> <dims...>` block header and checks it against `expected`.
    fn block_header(&mut self, name: &str, expected: &[usize]) -> Result<(), HeadError> {
        let l = self.next()?;
        let mut toks = l.split(' ');
        if toks.next() != Some(name) {
            return Err(self.format(format!("expected block {name:?}, found {l:?}")));
        }
        let dims: Vec<usize> = toks
            .map(|t| {
                t.parse()
                    .map_err(|_| self.format(format!("bad dimension {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        if dims != expected {
            return Err(self.dimension(format!("{name} declared {dims:?}, expected {expected:?}")));
        }
        Ok(())
    }

    fn row(&mut self, len: usize, name: &str) -> Result<Vec<f64>, HeadError> {
        let l = self.next()?;
        let vals: Vec<f64> = l
            .split(' ')
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(self.format(format!("non-finite value {t:?} in {name}"))),
                Err(_) => Err(self.format(format!("non-numeric token {t:?} in {name}"))),
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != len {
            return Err(self.dimension(format!(
                "{name} row has {} values, expected {len}",
                vals.len()
            )));
        }
        Ok(vals)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>, HeadError> {
        self.block_header(name, &[rows, cols])?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols, name)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Array1<f64>, HeadError> {
        self.block_header(name, &[len])?;
        Ok(Array1::from(self.row(len, name)?))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<ClassifierModel, HeadError> {
    let text = std::str::from_utf8(bytes).map_err(|e| HeadError::Format {
        line: 0,
        reason: format!("not ASCII: {e}"),
    })?;
    let mut rd = ModelReader {
        lines: text.split('\n').enumerate(),
        line: 0,
    };
    let header = rd.next()?;
    let in_dim: usize = header
        .strip_prefix(MODEL_MAGIC)
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| rd.format(format!("bad header {header:?}")))?;

    let meta_line = rd.next()?;
    let meta =
        parse_meta(meta_line).ok_or_else(|| rd.format(format!("bad meta line {meta_line:?}")))?;
    let w1 = rd.matrix("w1", HIDDEN_UNITS, in_dim)?;
    let b1 = rd.vector("b1", HIDDEN_UNITS)?;
    let w2 = rd.matrix("w2", NUM_CLASSES, HIDDEN_UNITS)?;
    let b2 = rd.vector("b2", NUM_CLASSES)?;
    match rd.lines.next() {
        Some((_, "")) | None => {}
        Some((i, l)) => {
            return Err(HeadError::Format {
                line: i + 1,
                reason: format!("trailing content {l:?}"),
            })
        }
    }
    if let Some((i, _)) = rd.lines.next() {
        return Err(HeadError::Format {
            line: i + 1,
            reason: "trailing content".into(),
        });
    }
    Ok(ClassifierModel {
        w1,
        b1,
        w2,
        b2,
        meta,
    })
}

fn parse_meta(line: &str) -> Option<TrainingMeta> {
    let rest = line.strip_prefix("meta ")?;
    let mut meta = TrainingMeta::default();
    let mut seen = 0;
    for kv in rest.split(' ') {
        let (k, v) = kv.split_once('=')?;
        match k {
            "seed" => meta.seed = v.parse().ok()?,
            "epochs" => meta.epochs = v.parse().ok()?,
            "val_loss" if v == "none" => meta.val_loss = None,
            "val_loss" => meta.val_loss = Some(v.parse().ok().filter(|x: &f64| x.is_finite())?),
            _ => return None,
        }
        seen += 1;
    }
    (seen == 3).then_some(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(in_dim: usize, seed: u64) -> ClassifierModel {
        let mut rng = SplitMix64::new(seed);
        let mut m = ClassifierModel::initialized(in_dim, &mut rng);
        m.b1.iter_mut().for_each(|b| *b = rng.uniform(-0.1, 0.1));
        m.b2.iter_mut().for_each(|b| *b = rng.uniform(-0.1, 0.1));
        m
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ClassifierModel::zeros(5);
        let p = m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn bias_only_model() {
        let mut m = ClassifierModel::zeros(3);
        m.b2[0] = 1.0;
        let p = m.forward(&[0.3, 0.2, 0.1]).unwrap();
        // e/(1+e) and 1/(1+e) evaluated to 20 digits
        assert!((p.as_slice()[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.268_941_421_369_995_1).abs() < 1e-15);
    }

    #[test]
    fn logit_shift_invariance() {
        let mut m = random_model(4, 3);
        let x = [0.1, 0.7, -0.4, 1.2];
        let p = m.forward(&x).unwrap();
        m.b2 += 123.25;
        let q = m.forward(&x).unwrap();
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_dim_mismatch() {
        let m = ClassifierModel::zeros(4);
        assert!(matches!(
            m.forward(&[1.0; 3]),
            Err(HeadError::DimMismatch {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn loss_values() {
        let half = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert!((loss(&half, 0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss(&half, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        let p = ProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        assert!((loss(&p, 0) - 1.203_972_804_325_936).abs() < 1e-12);
        let sure = ProbabilityVector::new(vec![1.0 - 1e-15, 1e-15]).unwrap();
        assert!(loss(&sure, 0) < 1e-14);
        let wrong = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        assert!((loss(&wrong, 1) - 12.0 * std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn confident_prediction_has_tiny_gradient() {
        let mut m = random_model(6, 8);
        m.b2[1] = 60.0;
        let g = m
            .backward(&LabeledExample {
                features: vec![0.5; 6],
                label: 1,
            })
            .unwrap();
        let max =
            g.w1.iter()
                .chain(&g.b1)
                .chain(&g.w2)
                .chain(&g.b2)
                .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max < 1e-20, "{max}");
    }

    #[test]
    fn zero_input_zero_w1_gradient() {
        let mut m = random_model(5, 2);
        m.b1.fill(0.3);
        let g = m
            .backward(&LabeledExample {
                features: vec![0.0; 5],
                label: 0,
            })
            .unwrap();
        assert!(g.w1.iter().all(|v| *v == 0.0));
        assert!(g.b1.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let m = random_model(4, 21);
        let mut rng = SplitMix64::new(5);
        let ex: Vec<LabeledExample> = (0..7)
            .map(|i| LabeledExample {
                features: (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                label: i % 2,
            })
            .collect();
        let mat = ExampleMatrix::from_examples(&ex).unwrap();
        let batch = m.batch_gradients(&mat.x, &mat.labels).unwrap();
        let mut sum = m.backward(&ex[0]).unwrap();
        for e in &ex[1..] {
            let g = m.backward(e).unwrap();
            sum.w1 += &g.w1;
            sum.b1 += &g.b1;
            sum.w2 += &g.w2;
            sum.b2 += &g.b2;
        }
        let n = ex.len() as f64;
        for (a, b) in batch.w1.iter().zip(sum.w1.iter()) {
            assert!((a - b / n).abs() < 1e-12);
        }
        for (a, b) in batch.b2.iter().zip(sum.b2.iter()) {
            assert!((a - b / n).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn train_rejects_empty() {
        let ex = vec![LabeledExample {
            features: vec![0.0; 2],
            label: 0,
        }];
        assert!(matches!(
            train(&[], &ex, &TrainConfig::default()),
            Err(HeadError::EmptyDataset("training"))
        ));
        assert!(matches!(
            train(&ex, &[], &TrainConfig::default()),
            Err(HeadError::EmptyDataset("validation"))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let ex: Vec<LabeledExample> = (0..8)
            .map(|i| LabeledExample {
                features: vec![if i % 2 == 0 { 1e150 } else { -1e150 }; 4],
                label: i % 2,
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e10,
            max_epochs: 5,
            ..Default::default()
        };
        let r = train(&ex, &ex, &cfg);
        assert!(
            matches!(r, Err(HeadError::Diverged { epoch: 1..=5, .. })),
            "{r:?}"
        );
    }

    #[test]
    fn model_round_trip() {
        let mut m = random_model(3, 77);
        m.w1[[0, 0]] = -0.0;
        m.w1[[1, 1]] = 5e-324;
        m.meta = TrainingMeta {
            seed: 9,
            epochs: 4,
            val_loss: Some(0.125),
        };
        let back = load_model(&save_model(&m)).unwrap();
        assert_eq!(back.meta, m.meta);
        for (a, b) in m.w1.iter().chain(&m.b1).chain(&m.w2).chain(&m.b2).zip(
            back.w1
                .iter()
                .chain(&back.b1)
                .chain(&back.w2)
                .chain(&back.b2),
        ) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let x = [0.2, -0.1, 0.9];
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn model_header_layout() {
        let text = String::from_utf8(save_model(&ClassifierModel::zeros(2))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# patchfuse-model v1 in=2"));
        assert_eq!(lines.next(), Some("meta seed=0 epochs=0 val_loss=none"));
        assert_eq!(lines.next(), Some("w1 512 2"));
        assert_eq!(
            lines.next(),
            Some("0.0000000000000000e+00 0.0000000000000000e+00")
        );
    }

    #[test]
    fn short_w1_is_dimension_error() {
        let m = ClassifierModel::zeros(2048);
        let text = String::from_utf8(save_model(&m)).unwrap();
        // drop the last value of the first w1 row
        let mut lines: Vec<String> = text.split('\n').map(str::to_string).collect();
        let row = &mut lines[3];
        let cut = row.rfind(' ').unwrap();
        row.truncate(cut);
        let broken = lines.join("\n");
        assert!(matches!(
            load_model(broken.as_bytes()),
            Err(HeadError::Dimension { line: 4, .. })
        ));

        let mislabeled = text.replacen("w1 512 2048", "w1 512 2047", 1);
        assert!(matches!(
            load_model(mislabeled.as_bytes()),
            Err(HeadError::Dimension { line: 3, .. })
        ));
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(matches!(
            load_model(b"hello\n"),
            Err(HeadError::Format { line: 1, .. })
        ));
        let text = String::from_utf8(save_model(&ClassifierModel::zeros(1))).unwrap();
        let bad = text.replacen("0.0000000000000000e+00", "zero", 1);
        assert!(matches!(
            load_model(bad.as_bytes()),
            Err(HeadError::Format { line: 4, .. })
        ));
        let extra = format!("{text}junk\n");
        assert!(load_model(extra.as_bytes()).is_err());
    }
}
