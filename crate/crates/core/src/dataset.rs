//! Labeled corpora: manifest I/O, patient-disjoint splits and a synthetic
//! two-class generator for desk-scale runs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::raster::{encode_ppm, RasterImage};
use crate::rng::SplitMix64;

pub const MANIFEST_HEADER: [&str; 5] = ["image_id", "path", "label", "magnification", "patient_id"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest is missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("line {line}: bad magnification {value:?} (expected 40, 100, 200 or 400)")]
    BadMagnification { line: u64, value: String },
    #[error("line {line}: bad label {value:?} (expected benign, malignant, 0 or 1)")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: duplicate image id {id:?}")]
    DuplicateId { line: u64, id: String },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("magnification {magnification} has {found} patients; at least 3 are needed to fill every split")]
    TooFewPatients {
        magnification: Magnification,
        found: usize,
    },
    #[error("invalid split fractions: {0}")]
    BadFractions(String),
    #[error("split file does not cover image {0:?}")]
    Unassigned(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign = 0,
    Malignant = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Benign),
            1 => Some(Label::Malignant),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }
}

impl FromStr for Label {
    type Err = ();

    /// Case-insensitive class name, or the class index.
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "0" => Ok(Label::Benign),
            "malignant" | "1" => Ok(Label::Malignant),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Magnification {
    X40,
    X100,
    X200,
    X400,
}

impl Magnification {
    pub const ALL: [Magnification; 4] = [
        Magnification::X40,
        Magnification::X100,
        Magnification::X200,
        Magnification::X400,
    ];

    pub fn value(self) -> u32 {
        match self {
            Magnification::X40 => 40,
            Magnification::X100 => 100,
            Magnification::X200 => 200,
            Magnification::X400 => 400,
        }
    }

    pub fn from_value(v: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.value() == v)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Magnification>, String> {
        let mut out = BTreeSet::new();
        for tok in s.split(',') {
            out.insert(
                tok.parse::<Magnification>()
                    .map_err(|_| format!("bad magnification {tok:?}"))?,
            );
        }
        Ok(out.into_iter().collect())
    }
}

impl FromStr for Magnification {
    type Err = ();

    /// `40`, `40X` or `40x`.
    fn from_str(s: &str) -> Result<Self, ()> {
        let s = s.trim();
        let digits = s.strip_suffix(['x', 'X']).unwrap_or(s);
        digits.parse().ok().and_then(Self::from_value).ok_or(())
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub magnification: Magnification,
    pub patient_id: String,
}

pub fn load_manifest<R: Read>(source: R) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 5];
    for (slot, name) in col.iter_mut().zip(MANIFEST_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(DatasetError::MissingColumn(name))?;
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(col[i]).map(str::trim).unwrap_or("");
        let image_id = field(0);
        if image_id.is_empty() {
            return Err(DatasetError::Malformed {
                line,
                reason: "empty image_id".into(),
            });
        }
        let label = field(2).parse().map_err(|_| DatasetError::BadLabel {
            line,
            value: field(2).to_string(),
        })?;
        let magnification = field(3)
            .parse()
            .map_err(|_| DatasetError::BadMagnification {
                line,
                value: field(3).to_string(),
            })?;
        let patient_id = field(4);
        if patient_id.is_empty() {
            return Err(DatasetError::Malformed {
                line,
                reason: "empty patient_id".into(),
            });
        }
        if !seen.insert(image_id.to_string()) {
            return Err(DatasetError::DuplicateId {
                line,
                id: image_id.to_string(),
            });
        }
        records.push(DatasetRecord {
            image_id: image_id.to_string(),
            path: PathBuf::from(field(1)),
            label,
            magnification,
            patient_id: patient_id.to_string(),
        });
    }
    Ok(records)
}

pub fn write_manifest<W: Write>(records: &[DatasetRecord], sink: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        w.write_record([
            r.image_id.as_str(),
            &r.path.to_string_lossy(),
            r.label.as_str(),
            &r.magnification.to_string(),
            r.patient_id.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fields recovered from a BreaKHis file name such as
/// `SOB_B_TA-14-4659CD-40-001.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BreakhisName {
    pub label: Label,
    pub magnification: Magnification,
    /// Slide identifier, e.g. `TA-14-4659CD`.
    pub patient_id: String,
}

pub fn parse_breakhis_filename(name: &str) -> Option<BreakhisName> {
    let file = Path::new(name).file_name()?.to_str()?;
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    let mut parts = stem.splitn(3, '_');
    let _method = parts.next().filter(|m| !m.is_empty())?;
    let label = match parts.next()? {
        "B" => Label::Benign,
        "M" => Label::Malignant,
        _ => return None,
    };
    let rest = parts.next()?;
    let (head, seq) = rest.rsplit_once('-')?;
    if seq.is_empty() || !seq.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let (patient, mag) = head.rsplit_once('-')?;
    if patient.is_empty() || !mag.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(BreakhisName {
        label,
        magnification: Magnification::from_value(mag.parse().ok()?)?,
        patient_id: patient.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl Fractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, DatasetError> {
        let f = Self {
            train,
            validation,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let all = self.as_array();
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DatasetError::BadFractions(format!(
                "{all:?} must all be positive"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadFractions(format!(
                "{all:?} sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl FromStr for Fractions {
    type Err = DatasetError;

    /// `a,b,c`
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| DatasetError::BadFractions(format!("{s:?} is not three numbers")))?;
        match vals[..] {
            [a, b, c] => Fractions::new(a, b, c),
            _ => Err(DatasetError::BadFractions(format!(
                "{s:?} is not three numbers"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub seed: u64,
    pub fractions: Fractions,
}

impl SplitAssignment {
    pub fn get(&self, image_id: &str) -> Option<Split> {
        self.assignments.get(image_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|s| **s == split).count()
    }

    /// `image_id,split` rows sorted by id.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), DatasetError> {
        write_split_rows(self.assignments.iter().map(|(k, v)| (k.as_str(), *v)), sink)
    }

    /// Only the rows for `ids`.
    pub fn write_csv_subset<'a, W: Write>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
        sink: W,
    ) -> Result<(), DatasetError> {
        let mut rows: Vec<(&str, Split)> = ids
            .into_iter()
            .filter_map(|id| self.get(id).map(|s| (id, s)))
            .collect();
        rows.sort();
        write_split_rows(rows, sink)
    }
}

fn write_split_rows<'a, W: Write>(
    rows: impl IntoIterator<Item = (&'a str, Split)>,
    sink: W,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["image_id", "split"])?;
    for (id, s) in rows {
        w.write_record([id, s.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `image_id,split` file. Seed and fractions are not stored in the
/// file and come back as zero/default.
pub fn read_split_csv<R: Read>(source: R) -> Result<SplitAssignment, DatasetError> {
    let mut rdr = csv::Reader::from_reader(source);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "image_id")
        .ok_or(DatasetError::MissingColumn("image_id"))?;
    let split_col = headers
        .iter()
        .position(|h| h == "split")
        .ok_or(DatasetError::MissingColumn("split"))?;
    let mut assignments = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        let raw = row.get(split_col).unwrap_or("");
        let split = raw.parse().map_err(|_| DatasetError::Malformed {
            line,
            reason: format!("unknown split {raw:?}"),
        })?;
        if assignments.insert(id.clone(), split).is_some() {
            return Err(DatasetError::DuplicateId { line, id });
        }
    }
    Ok(SplitAssignment {
        assignments,
        seed: 0,
        fractions: Fractions::default(),
    })
}

fn magnification_stream(seed: u64, mag: Magnification) -> SplitMix64 {
    SplitMix64::new(seed ^ (mag.value() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Patient-disjoint train/validation/test assignment, computed independently
/// for each magnification.
///
/// Patients (sorted, then shuffled) are handed one at a time to the split
/// with the largest shortfall against its target image count. Once the
/// remaining patients are only just enough to give every still-empty split
/// one patient, they are sent there instead, so all three splits are
/// populated whenever a magnification has at least three patients.
pub fn split(
    records: &[DatasetRecord],
    fractions: Fractions,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    fractions.validate()?;
    let mut by_mag: BTreeMap<Magnification, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for r in records {
        by_mag
            .entry(r.magnification)
            .or_default()
            .entry(r.patient_id.as_str())
            .or_default()
            .push(r.image_id.as_str());
    }

    let targets = fractions.as_array();
    let mut assignments = BTreeMap::new();
    for (mag, patients) in by_mag {
        if patients.len() < 3 {
            return Err(DatasetError::TooFewPatients {
                magnification: mag,
                found: patients.len(),
            });
        }
        let total: usize = patients.values().map(Vec::len).sum();
        let mut order: Vec<(&str, &Vec<&str>)> =
            patients.iter().map(|(p, ims)| (*p, ims)).collect();
        magnification_stream(seed, mag).shuffle(&mut order);

        let mut images = [0usize; 3];
        let mut members = [0usize; 3];
        for (k, (_, ims)) in order.iter().enumerate() {
            let remaining = order.len() - k;
            let empty: Vec<usize> = (0..3).filter(|&s| members[s] == 0).collect();
            let pick = if remaining <= empty.len() {
                empty[0]
            } else {
                let deficit = |s: usize| targets[s] * total as f64 - images[s] as f64;
                (1..3).fold(
                    0,
                    |best, s| if deficit(s) > deficit(best) { s } else { best },
                )
            };
            images[pick] += ims.len();
            members[pick] += 1;
            for id in ims.iter() {
                assignments.insert(id.to_string(), Split::ALL[pick]);
            }
        }
    }
    Ok(SplitAssignment {
        assignments,
        seed,
        fractions,
    })
}

/// Parameters of the synthetic corpus.
///
/// Class 0 (benign) images are bright and smooth: base colour
/// (228, 196, 214) with ±12 uniform noise and a faint stripe texture.
/// Class 1 (malignant) images are darker and busier: base (182, 128, 170)
/// with ±30 noise and dark (70, 40, 100) discs of radius ~min(w,h)/10.
/// Each patient gets a fixed ±8 colour tint. Patients alternate classes,
/// starting with benign.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub images_per_patient: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Every patient gets `images_per_patient` images at each of these.
    pub magnifications: Vec<Magnification>,
}

impl SyntheticSpec {
    pub fn new(
        n_patients: usize,
        images_per_patient: usize,
        width: usize,
        height: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_patients,
            images_per_patient,
            width,
            height,
            seed,
            magnifications: vec![Magnification::X40],
        }
    }
}

fn synthetic_image(
    spec: &SyntheticSpec,
    label: Label,
    tint: [f64; 3],
    rng: &mut SplitMix64,
) -> RasterImage {
    let (w, h) = (spec.width, spec.height);
    let (base, noise) = match label {
        Label::Benign => ([228.0, 196.0, 214.0], 12.0),
        Label::Malignant => ([182.0, 128.0, 170.0], 30.0),
    };
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let mut px = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let stripe = 4.0 * ((x + y) as f64 * 0.4 + phase).sin();
            for c in 0..3 {
                px[(y * w + x) * 3 + c] = base[c] + tint[c] + stripe + rng.uniform(-noise, noise);
            }
        }
    }
    if label == Label::Malignant {
        let area_scale = ((w * h) as f64 / 4096.0).max(1.0);
        let blobs = ((6 + rng.below(6) as usize) as f64 * area_scale).round() as usize;
        let r_base = (w.min(h) as f64 / 10.0).max(1.0);
        for _ in 0..blobs {
            let cx = rng.uniform(0.0, w as f64);
            let cy = rng.uniform(0.0, h as f64);
            let r = r_base * rng.uniform(0.6, 1.4);
            let (x0, x1) = (
                (cx - r).floor().max(0.0) as usize,
                ((cx + r).ceil() as usize).min(w),
            );
            let (y0, y1) = (
                (cy - r).floor().max(0.0) as usize,
                ((cy + r).ceil() as usize).min(h),
            );
            for y in y0..y1 {
                for x in x0..x1 {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        for (c, v) in [70.0, 40.0, 100.0].into_iter().enumerate() {
                            px[(y * w + x) * 3 + c] = v + rng.uniform(-15.0, 15.0);
                        }
                    }
                }
            }
        }
    }
    let bytes = px
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    RasterImage::new(w, h, bytes).expect("dimensions are positive")
}

/// Deterministic synthetic corpus. Record paths are relative:
/// `<class>/<patient>/<image>.ppm`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> (Vec<DatasetRecord>, Vec<RasterImage>) {
    assert!(
        spec.n_patients >= 1 && spec.images_per_patient >= 1,
        "counts must be at least 1"
    );
    assert!(
        spec.width >= 1 && spec.height >= 1,
        "dimensions must be at least 1"
    );
    let mut records = Vec::new();
    let mut images = Vec::new();
    for p in 0..spec.n_patients {
        let label = if p % 2 == 0 {
            Label::Benign
        } else {
            Label::Malignant
        };
        let patient_id = format!("P{p:03}");
        let mut tint_rng = SplitMix64::new(
            spec.seed
                .wrapping_add(p as u64)
                .wrapping_mul(0xA24B_AED4_963E_E407),
        );
        let tint = [0; 3].map(|_: u8| tint_rng.uniform(-8.0, 8.0));
        for &mag in &spec.magnifications {
            for i in 0..spec.images_per_patient {
                let image_id = format!("{patient_id}-{mag}-{i:03}");
                let key = ((p as u64) << 32) ^ ((mag.value() as u64) << 16) ^ i as u64;
                let mut rng = SplitMix64::new(SplitMix64::new(spec.seed ^ key).next_u64());
                images.push(synthetic_image(spec, label, tint, &mut rng));
                records.push(DatasetRecord {
                    path: PathBuf::from(label.as_str())
                        .join(&patient_id)
                        .join(format!("{image_id}.ppm")),
                    image_id,
                    label,
                    magnification: mag,
                    patient_id: patient_id.clone(),
                });
            }
        }
    }
    (records, images)
}

/// Writes the PPM tree and `manifest.csv` under `dir`.
pub fn write_synthetic_corpus(
    dir: &Path,
    spec: &SyntheticSpec,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let (records, images) = generate_synthetic(spec);
    std::fs::create_dir_all(dir)?;
    for (r, img) in records.iter().zip(&images) {
        let path = dir.join(&r.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, encode_ppm(img))?;
    }
    write_manifest(&records, std::fs::File::create(dir.join("manifest.csv"))?)?;
    Ok(records)
}
