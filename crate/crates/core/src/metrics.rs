//! Image- and patient-level accuracy, and the segmentation × fusion ×
//! magnification report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::dataset::{Label, Magnification};
use crate::fusion::FusionRule;

pub const REPORT_HEADER: &str =
    "magnification,segmentation,fusion,image_accuracy,patient_accuracy,n_images,n_correct,n_patients";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no predictions to score")]
    Empty,
    #[error("configuration {0} has no predictions")]
    EmptyGroup(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub image_id: String,
    pub patient_id: String,
    pub true_label: Label,
    pub predicted_label: Label,
    pub magnification: Magnification,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

/// Correct predictions over all predictions.
pub fn image_accuracy(predictions: &[Prediction]) -> Result<f64, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let correct = predictions.iter().filter(|p| p.is_correct()).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Unweighted mean over patients of each patient's own accuracy.
pub fn patient_accuracy(predictions: &[Prediction]) -> Result<f64, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut per_patient: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in predictions {
        let e = per_patient.entry(&p.patient_id).or_default();
        e.0 += p.is_correct() as usize;
        e.1 += 1;
    }
    let sum: f64 = per_patient
        .values()
        .map(|&(c, n)| c as f64 / n as f64)
        .sum();
    Ok(sum / per_patient.len() as f64)
}

/// Quadtree level as shown in reports.
pub fn segmentation_name(level: u32) -> &'static str {
    match level {
        1 => "non-split",
        2 => "quarter-split",
        3 => "16-way-split",
        _ => "unknown",
    }
}

/// One experiment configuration. Level 1 never carries a fusion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub level: u32,
    pub rule: Option<FusionRule>,
}

impl Configuration {
    pub fn new(level: u32, rule: FusionRule) -> Self {
        Self {
            level,
            rule: (level > 1).then_some(rule),
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}",
            segmentation_name(self.level),
            self.rule.map_or("-", FusionRule::as_str)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub magnification: Magnification,
    pub config: Configuration,
    pub image_accuracy: f64,
    pub patient_accuracy: f64,
    pub n_images: usize,
    pub n_correct: usize,
    pub n_patients: usize,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    /// Sorted by configuration, then magnification.
    pub rows: Vec<ReportRow>,
}

/// Accuracy as a percentage with one decimal, e.g. `0.928` → `"92.8"`.
pub fn percent(acc: f64) -> String {
    format!("{:.1}", acc * 100.0)
}

pub fn build_report(
    groups: &BTreeMap<(Magnification, Configuration), Vec<Prediction>>,
) -> Result<EvaluationReport, MetricsError> {
    let mut rows = Vec::with_capacity(groups.len());
    for ((mag, config), preds) in groups {
        if preds.is_empty() {
            return Err(MetricsError::EmptyGroup(format!(
                "{mag}X {}",
                config.label()
            )));
        }
        let mut confusion = [[0usize; 2]; 2];
        for p in preds {
            confusion[p.true_label.index()][p.predicted_label.index()] += 1;
        }
        let mut patients: Vec<&str> = preds.iter().map(|p| p.patient_id.as_str()).collect();
        patients.sort_unstable();
        patients.dedup();
        rows.push(ReportRow {
            magnification: *mag,
            config: *config,
            image_accuracy: image_accuracy(preds)?,
            patient_accuracy: patient_accuracy(preds)?,
            n_images: preds.len(),
            n_correct: preds.iter().filter(|p| p.is_correct()).count(),
            n_patients: patients.len(),
            confusion,
        });
    }
    rows.sort_by_key(|r| (r.config, r.magnification));
    Ok(EvaluationReport { rows })
}

impl EvaluationReport {
    pub fn configurations(&self) -> Vec<Configuration> {
        let mut c: Vec<_> = self.rows.iter().map(|r| r.config).collect();
        c.dedup();
        c
    }

    pub fn magnifications(&self) -> Vec<Magnification> {
        let mut m: Vec<_> = self.rows.iter().map(|r| r.magnification).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn row(&self, mag: Magnification, config: Configuration) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.magnification == mag && r.config == config)
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        sink.write_all(self.to_csv().as_bytes())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.magnification,
                segmentation_name(r.config.level),
                r.config.rule.map_or("-", FusionRule::as_str),
                percent(r.image_accuracy),
                percent(r.patient_accuracy),
                r.n_images,
                r.n_correct,
                r.n_patients
            )
            .unwrap();
        }
        out
    }

    /// Confusion counts per row: `tn,fp,fn,tp` with malignant as positive.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("magnification,segmentation,fusion,tn,fp,fn,tp\n");
        for r in &self.rows {
            let c = r.confusion;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.magnification,
                segmentation_name(r.config.level),
                r.config.rule.map_or("-", FusionRule::as_str),
                c[0][0],
                c[0][1],
                c[1][0],
                c[1][1]
            )
            .unwrap();
        }
        out
    }

    /// Two aligned grids (image level, patient level): one row per
    /// configuration, one column per magnification.
    pub fn to_text(&self) -> String {
        let mags = self.magnifications();
        let configs = self.configurations();
        let mut out = String::new();
        for (title, pick) in [
            (
                "Image level",
                (|r: &ReportRow| r.image_accuracy) as fn(&ReportRow) -> f64,
            ),
            ("Patient level", |r: &ReportRow| r.patient_accuracy),
        ] {
            writeln!(out, "{title}").unwrap();
            write!(out, "{:<15} {:<9}", "Segmentation", "Fusion").unwrap();
            for m in &mags {
                write!(out, " {:>6}", format!("{m}X")).unwrap();
            }
            out.push('\n');
            let mut last_level = 0;
            for c in &configs {
                let seg = if c.level != last_level {
                    segmentation_name(c.level)
                } else {
                    ""
                };
                last_level = c.level;
                let fusion = c.rule.map_or("-", |r| match r {
                    FusionRule::Summation => "Summation",
                    FusionRule::Product => "Product",
                    FusionRule::Maximum => "Maximum",
                });
                write!(out, "{seg:<15} {fusion:<9}").unwrap();
                for m in &mags {
                    let cell = self
                        .row(*m, *c)
                        .map_or_else(|| "-".to_string(), |r| percent(pick(r)));
                    write!(out, " {cell:>6}").unwrap();
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
