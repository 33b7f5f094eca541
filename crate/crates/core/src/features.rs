//! Feature extraction backends and the on-disk feature cache.
//!
//! Any backend maps an image to a fixed-length vector (2048 for real
//! pipelines). The cache file is plain ASCII:
//!
//! ```text
//! # patchfuse-features v1 dim=2048
//! <id>\t<v0> <v1> ... <v2047>
//! ```
//!
//! Records are sorted by identifier and every value is written with nine
//! significant digits, which round-trips any `f32` exactly. Further `#` lines
//! after the header are comments and are skipped on read.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::raster::{RasterImage, CHANNELS};
use crate::rng::SplitMix64;
use crate::textfmt::push_sci_f32;

pub const FEATURE_DIM: usize = 2048;
pub const HIST_BINS: usize = 32;
pub const BLOCK_GRID: usize = 4;
/// 3×32 histogram bins plus 16 blocks × (3 means + pooled variance).
pub const DESCRIPTOR_DIM: usize = CHANNELS * HIST_BINS + BLOCK_GRID * BLOCK_GRID * 4;

const CACHE_MAGIC: &str = "# patchfuse-features v1 dim=";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature vector for {id:?} has {found} values, expected {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("feature vector for {id:?} has a non-finite value at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("invalid feature identifier {0:?} (must be nonempty, no tabs or line breaks, not starting with '#')")]
    InvalidId(String),
    #[error("backend failed on {id:?}: {reason}")]
    Backend { id: String, reason: String },
    #[error("no cached features for {0:?}")]
    Missing(String),
    #[error("cache header invalid: {0}")]
    Header(String),
    #[error("cache line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cache line {line}: duplicate identifier {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub id: String,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(id: impl Into<String>, values: Vec<f32>, dim: usize) -> Result<Self, FeatureError> {
        let id = id.into();
        validate_id(&id)?;
        validate_values(&id, &values, dim)?;
        Ok(Self { id, values })
    }
}

fn validate_id(id: &str) -> Result<(), FeatureError> {
    if id.is_empty() || id.starts_with('#') || id.contains(['\t', '\n', '\r']) {
        return Err(FeatureError::InvalidId(id.to_string()));
    }
    Ok(())
}

fn validate_values(id: &str, values: &[f32], dim: usize) -> Result<(), FeatureError> {
    if values.len() != dim {
        return Err(FeatureError::DimMismatch {
            id: id.to_string(),
            expected: dim,
            found: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite {
            id: id.to_string(),
            index,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    dim: usize,
    records: BTreeMap<String, Vec<f32>>,
}

impl Default for FeatureCache {
    fn default() -> Self {
        Self::new(FEATURE_DIM)
    }
}

impl FeatureCache {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.records.get(id).map(Vec::as_slice)
    }

    /// Inserts or replaces a record after validating it against `dim`.
    pub fn insert(&mut self, fv: FeatureVector) -> Result<(), FeatureError> {
        validate_id(&fv.id)?;
        validate_values(&fv.id, &fv.values, self.dim)?;
        self.records.insert(fv.id, fv.values);
        Ok(())
    }

    /// Records in identifier order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// First identifier from `ids` that has no record.
    pub fn first_missing<'a, I>(&self, ids: I) -> Option<&'a str>
    where
        I: IntoIterator<Item = &'a str>,
    {
        ids.into_iter().find(|id| !self.contains(id))
    }
}

pub fn write_cache<W: Write>(cache: &FeatureCache, mut sink: W) -> Result<(), FeatureError> {
    writeln!(sink, "{CACHE_MAGIC}{}", cache.dim)?;
    let mut line = String::with_capacity(cache.dim * 16);
    for (id, values) in cache.iter() {
        line.clear();
        line.push_str(id);
        line.push('\t');
        for (i, &v) in values.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            push_sci_f32(&mut line, v, 9);
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn cache_to_bytes(cache: &FeatureCache) -> Vec<u8> {
    let mut out = Vec::new();
    write_cache(cache, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn read_cache<R: BufRead>(source: R) -> Result<FeatureCache, FeatureError> {
    let mut lines = source.split(b'\n');
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(FeatureError::Header("empty input".into())),
    };
    let header = std::str::from_utf8(&header)
        .map_err(|_| FeatureError::Header("header is not ASCII".into()))?;
    let dim = header.strip_prefix(CACHE_MAGIC).ok_or_else(|| {
        FeatureError::Header(format!("expected \"{CACHE_MAGIC}<n>\", found {header:?}"))
    })?;
    let dim: usize = dim
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| FeatureError::Header(format!("bad dimension {dim:?}")))?;

    let mut cache = FeatureCache::new(dim);
    for (idx, raw) in lines.enumerate() {
        let line_no = idx + 2;
        let raw = raw?;
        if raw.is_empty() || raw.starts_with(b"#") {
            continue;
        }
        let parse_err = |reason: String| FeatureError::Parse {
            line: line_no,
            reason,
        };
        let text = std::str::from_utf8(&raw).map_err(|_| parse_err("not ASCII".into()))?;
        let (id, body) = text
            .split_once('\t')
            .ok_or_else(|| parse_err("missing tab after identifier".into()))?;
        if id.is_empty() {
            return Err(parse_err("empty identifier".into()));
        }
        let mut values = Vec::with_capacity(dim);
        for (i, tok) in body.split(' ').enumerate() {
            if i >= dim {
                return Err(parse_err(format!(
                    "{} values, expected {dim}",
                    body.split(' ').count()
                )));
            }
            let v: f32 = tok
                .parse()
                .map_err(|_| parse_err(format!("non-numeric token {tok:?} at position {i}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!(
                    "non-finite value {tok:?} at position {i}"
                )));
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(parse_err(format!(
                "{} values, expected {dim}",
                values.len()
            )));
        }
        if cache.records.insert(id.to_string(), values).is_some() {
            return Err(FeatureError::DuplicateId {
                line: line_no,
                id: id.to_string(),
            });
        }
    }
    Ok(cache)
}

/// A feature backend. Implementations must be pure functions of their input.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn extract(&self, id: &str, image: &RasterImage) -> Result<Vec<f32>, FeatureError>;
}

/// Deterministic stand-in for a pretrained CNN: a 160-dim colour/texture
/// descriptor expanded to `FEATURE_DIM` by a seeded random projection.
#[derive(Debug, Clone)]
pub struct SyntheticExtractor {
    seed: u64,
    /// Row-major `FEATURE_DIM × DESCRIPTOR_DIM`, entries uniform in [-1, 1).
    projection: Vec<f64>,
}

impl SyntheticExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let projection = (0..FEATURE_DIM * DESCRIPTOR_DIM)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        Self { seed, projection }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Projects a descriptor. Outputs are scaled by `1/sqrt(DESCRIPTOR_DIM)`
    /// to keep feature magnitudes near unity.
    pub fn project(&self, descriptor: &[f64; DESCRIPTOR_DIM]) -> Vec<f32> {
        let norm = 1.0 / (DESCRIPTOR_DIM as f64).sqrt();
        self.projection
            .chunks_exact(DESCRIPTOR_DIM)
            .map(|row| {
                let dot: f64 = row.iter().zip(descriptor).map(|(m, d)| m * d).sum();
                (dot * norm) as f32
            })
            .collect()
    }
}

impl FeatureExtractor for SyntheticExtractor {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn extract(&self, _id: &str, image: &RasterImage) -> Result<Vec<f32>, FeatureError> {
        Ok(self.project(&descriptor(image)))
    }
}

pub fn extract_synthetic(image: &RasterImage, seed: u64) -> FeatureVector {
    FeatureVector {
        id: String::new(),
        values: SyntheticExtractor::new(seed).project(&descriptor(image)),
    }
}

/// Colour histograms and a coarse block-statistics grid.
///
/// Layout: `[c*32 + bin]` holds the fraction of pixels whose channel `c`
/// falls in `bin = value / 8`; then for each of the 4×4 blocks in row-major
/// order, the three channel means and the mean of the three channel
/// variances, all on a [0, 1] intensity scale. Block edges use the same
/// floor cut points as quadtree splitting, widened to one pixel for images
/// narrower than the grid.
pub fn descriptor(image: &RasterImage) -> [f64; DESCRIPTOR_DIM] {
    let mut d = [0.0; DESCRIPTOR_DIM];
    let n = (image.width() * image.height()) as f64;
    for px in image.pixels().chunks_exact(CHANNELS) {
        for (c, &v) in px.iter().enumerate() {
            d[c * HIST_BINS + v as usize / (256 / HIST_BINS)] += 1.0;
        }
    }
    d[..CHANNELS * HIST_BINS].iter_mut().for_each(|v| *v /= n);

    let span = |dim: usize, i: usize| {
        let lo = (dim * i / BLOCK_GRID).min(dim - 1);
        let hi = (dim * (i + 1) / BLOCK_GRID).max(lo + 1);
        lo..hi
    };
    let mut out = CHANNELS * HIST_BINS;
    for by in 0..BLOCK_GRID {
        for bx in 0..BLOCK_GRID {
            let mut sum = [0.0f64; CHANNELS];
            let mut sq = [0.0f64; CHANNELS];
            let mut count = 0.0;
            for y in span(image.height(), by) {
                for x in span(image.width(), bx) {
                    for (c, &v) in image.pixel(x, y).iter().enumerate() {
                        let v = v as f64 / 255.0;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                    count += 1.0;
                }
            }
            let mut var_sum = 0.0;
            for c in 0..CHANNELS {
                let mean = sum[c] / count;
                d[out + c] = mean;
                var_sum += (sq[c] / count - mean * mean).max(0.0);
            }
            d[out + 3] = var_sum / CHANNELS as f64;
            out += 4;
        }
    }
    d
}

/// Result of [`extract_batch`].
#[derive(Debug)]
pub struct BatchOutcome {
    pub cache: FeatureCache,
    /// Number of backend invocations that succeeded.
    pub computed: usize,
    pub failures: Vec<(String, FeatureError)>,
}

/// Fills `cache` with features for every image whose id it lacks.
///
/// Cached ids are never recomputed. Misses run in parallel; a failing id is
/// reported in `failures` and does not affect the others.
pub fn extract_batch(
    images: &[(String, RasterImage)],
    backend: &dyn FeatureExtractor,
    mut cache: FeatureCache,
) -> Result<BatchOutcome, FeatureError> {
    if backend.dim() != cache.dim() {
        return Err(FeatureError::DimMismatch {
            id: "<backend>".into(),
            expected: cache.dim(),
            found: backend.dim(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    let misses: Vec<&(String, RasterImage)> = images
        .iter()
        .filter(|(id, _)| !cache.contains(id) && seen.insert(id.as_str()))
        .collect();
    let dim = cache.dim();
    let results: Vec<(String, Result<Vec<f32>, FeatureError>)> = misses
        .par_iter()
        .map(|(id, img)| {
            let r = validate_id(id)
                .and_then(|_| backend.extract(id, img))
                .and_then(|v| validate_values(id, &v, dim).map(|_| v));
            (id.clone(), r)
        })
        .collect();
    let mut computed = 0;
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(values) => {
                cache.records.insert(id, values);
                computed += 1;
            }
            Err(e) => failures.push((id, e)),
        }
    }
    Ok(BatchOutcome {
        cache,
        computed,
        failures,
    })
}

/// Backend that only serves precomputed vectors, e.g. from an external
/// CNN export. Any id absent from the cache is an error.
#[derive(Debug, Clone)]
pub struct CacheBackend {
    cache: FeatureCache,
}

impl CacheBackend {
    pub fn new(cache: FeatureCache) -> Self {
        Self { cache }
    }

    pub fn cache(&self) -> &FeatureCache {
        &self.cache
    }
}

impl FeatureExtractor for CacheBackend {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn extract(&self, id: &str, _image: &RasterImage) -> Result<Vec<f32>, FeatureError> {
        self.cache
            .get(id)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| FeatureError::Missing(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
        dim: usize,
        fail_on: Option<&'static str>,
    }

    impl Counting {
        fn new(dim: usize) -> Self {
            Self {
                calls: AtomicUsize::new(0),
                dim,
                fail_on: None,
            }
        }
    }

    impl FeatureExtractor for Counting {
        fn dim(&self) -> usize {
            self.dim
        }
        fn extract(&self, id: &str, image: &RasterImage) -> Result<Vec<f32>, FeatureError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if Some(id) == self.fail_on {
                return Err(FeatureError::Backend {
                    id: id.into(),
                    reason: "boom".into(),
                });
            }
            Ok(vec![image.pixels()[0] as f32; self.dim])
        }
    }

    fn img(v: u8) -> RasterImage {
        RasterImage::filled(4, 4, [v; 3]).unwrap()
    }

    fn named(ids: &[&str]) -> Vec<(String, RasterImage)> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), img(i as u8)))
            .collect()
    }

    #[test]
    fn empty_cache_is_header_only() {
        let bytes = cache_to_bytes(&FeatureCache::new(2048));
        assert_eq!(bytes, b"# patchfuse-features v1 dim=2048\n");
    }

    #[test]
    fn zero_record_line() {
        let mut cache = FeatureCache::default();
        cache
            .insert(FeatureVector::new("a", vec![0.0; 2048], 2048).unwrap())
            .unwrap();
        let text = String::from_utf8(cache_to_bytes(&cache)).unwrap();
        let line = text.lines().nth(1).unwrap();
        let (id, body) = line.split_once('\t').unwrap();
        assert_eq!(id, "a");
        let toks: Vec<_> = body.split(' ').collect();
        assert_eq!(toks.len(), 2048);
        assert!(toks.iter().all(|t| *t == "0.00000000e+00"));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn records_sorted_by_id() {
        let mut cache = FeatureCache::new(1);
        for id in ["b", "a#L2R0C1", "a#L2R0C0", "B"] {
            cache
                .insert(FeatureVector::new(id, vec![1.0], 1).unwrap())
                .unwrap();
        }
        let text = String::from_utf8(cache_to_bytes(&cache)).unwrap();
        let ids: Vec<_> = text
            .lines()
            .skip(1)
            .map(|l| l.split('\t').next().unwrap())
            .collect();
        assert_eq!(ids, vec!["B", "a#L2R0C0", "a#L2R0C1", "b"]);
    }

    #[test]
    fn short_line_names_line() {
        let mut text = String::from("# patchfuse-features v1 dim=2048\n");
        text.push_str("ok\t");
        text.push_str(&vec!["1e0"; 2048].join(" "));
        text.push_str("\nbad\t");
        text.push_str(&vec!["1e0"; 2047].join(" "));
        text.push('\n');
        match read_cache(text.as_bytes()) {
            Err(FeatureError::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("2047"), "{reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_driven_dim() {
        let text = "# patchfuse-features v1 dim=3\n# exporter: preprocessing=inception\nx\t1.0 -2.5e-3 0\n";
        let cache = read_cache(text.as_bytes()).unwrap();
        assert_eq!(cache.dim(), 3);
        assert_eq!(cache.get("x").unwrap(), &[1.0, -2.5e-3, 0.0]);
    }

    #[test]
    fn read_errors() {
        assert!(matches!(read_cache(&b""[..]), Err(FeatureError::Header(_))));
        assert!(matches!(
            read_cache(&b"# patchfuse-features v2 dim=3\n"[..]),
            Err(FeatureError::Header(_))
        ));
        assert!(matches!(
            read_cache(&b"# patchfuse-features v1 dim=0\n"[..]),
            Err(FeatureError::Header(_))
        ));
        assert!(matches!(
            read_cache(&b"# patchfuse-features v1 dim=2\na\t1 x\n"[..]),
            Err(FeatureError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_cache(&b"# patchfuse-features v1 dim=2\na\t1 inf\n"[..]),
            Err(FeatureError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_cache(&b"# patchfuse-features v1 dim=2\na\t1 2\nb\t1 2\na\t3 4\n"[..]),
            Err(FeatureError::DuplicateId { line: 4, .. })
        ));
        assert!(matches!(
            read_cache(&b"# patchfuse-features v1 dim=2\na 1 2\n"[..]),
            Err(FeatureError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn insert_validates() {
        let mut cache = FeatureCache::new(2);
        assert!(cache
            .insert(FeatureVector {
                id: "a".into(),
                values: vec![1.0]
            })
            .is_err());
        assert!(cache
            .insert(FeatureVector {
                id: "a".into(),
                values: vec![1.0, f32::NAN]
            })
            .is_err());
        assert!(cache
            .insert(FeatureVector {
                id: "a\tb".into(),
                values: vec![1.0, 2.0]
            })
            .is_err());
        assert!(cache
            .insert(FeatureVector {
                id: "a".into(),
                values: vec![1.0, 2.0]
            })
            .is_ok());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let image = RasterImage::new(5, 3, (0..45).map(|v| v as u8 * 5).collect()).unwrap();
        let a = extract_synthetic(&image, 11);
        let b = extract_synthetic(&image, 11);
        assert_eq!(a.values.len(), FEATURE_DIM);
        assert!(a
            .values
            .iter()
            .zip(&b.values)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.values, extract_synthetic(&image, 12).values);
    }

    #[test]
    fn black_and_white_differ() {
        let black = extract_synthetic(&img(0), 5);
        let white = extract_synthetic(&img(255), 5);
        assert_ne!(black.values, white.values);
        let db = descriptor(&img(0));
        let dw = descriptor(&img(255));
        assert_eq!(db[0], 1.0);
        assert_eq!(dw[31], 1.0);
    }

    #[test]
    fn constant_gray_matches_hand_descriptor() {
        // Independent reconstruction: one-hot histograms at bin 128/8 = 16,
        // block means 128/255, zero variances; projection rows rebuilt from
        // a locally written splitmix64 stream.
        let gray = RasterImage::filled(8, 8, [128; 3]).unwrap();
        let mut expected_desc = vec![0.0f64; 160];
        for c in 0..3 {
            expected_desc[c * 32 + 16] = 1.0;
        }
        for b in 0..16 {
            for c in 0..3 {
                expected_desc[96 + b * 4 + c] = 128.0 / 255.0;
            }
        }
        assert_eq!(descriptor(&gray).to_vec(), expected_desc);

        let seed = 0xDEAD_BEEFu64;
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };
        let mut expected = Vec::with_capacity(2048);
        for _ in 0..2048 {
            let mut acc = 0.0f64;
            for d in &expected_desc {
                let u = (next() >> 11) as f64 / 9007199254740992.0;
                acc += (-1.0 + 2.0 * u) * d;
            }
            expected.push((acc / 160f64.sqrt()) as f32);
        }
        let got = extract_synthetic(&gray, seed).values;
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-6 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    #[test]
    fn descriptor_handles_tiny_images() {
        let d = descriptor(&RasterImage::new(1, 2, vec![0, 0, 0, 255, 255, 255]).unwrap());
        assert!(d.iter().all(|v| v.is_finite()));
        let hist_mass: f64 = d[..32].iter().sum();
        assert!((hist_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_all_hits() {
        let backend = Counting::new(3);
        let first = extract_batch(&named(&["a", "b"]), &backend, FeatureCache::new(3)).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
        let again = extract_batch(&named(&["a", "b"]), &backend, first.cache.clone()).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
        assert_eq!(again.computed, 0);
        assert_eq!(again.cache, first.cache);
    }

    #[test]
    fn batch_mixed_counts_misses() {
        let backend = Counting::new(3);
        let seeded = extract_batch(&named(&["a", "b"]), &backend, FeatureCache::new(3))
            .unwrap()
            .cache;
        let out = extract_batch(&named(&["a", "c", "b", "d", "e"]), &backend, seeded).unwrap();
        assert_eq!(out.computed, 3);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 5);
        assert_eq!(out.cache.len(), 5);
    }

    #[test]
    fn batch_reports_failure_and_keeps_rest() {
        let mut backend = Counting::new(2);
        backend.fail_on = Some("b");
        let out = extract_batch(&named(&["a", "b", "c"]), &backend, FeatureCache::new(2)).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, "b");
        assert!(out.cache.contains("a") && out.cache.contains("c") && !out.cache.contains("b"));
    }

    #[test]
    fn batch_rejects_dim_mismatch() {
        let backend = Counting::new(4);
        assert!(extract_batch(&named(&["a"]), &backend, FeatureCache::new(3)).is_err());
    }

    #[test]
    fn cache_backend_serves_and_misses() {
        let mut cache = FeatureCache::new(1);
        cache
            .insert(FeatureVector::new("a", vec![2.0], 1).unwrap())
            .unwrap();
        let backend = CacheBackend::new(cache);
        assert_eq!(backend.extract("a", &img(0)).unwrap(), vec![2.0]);
        assert!(matches!(
            backend.extract("z", &img(0)),
            Err(FeatureError::Missing(_))
        ));
    }

    fn finite_f32() -> impl Strategy<Value = f32> {
        prop_oneof![
            any::<u32>()
                .prop_map(f32::from_bits)
                .prop_filter("finite", |v| v.is_finite()),
            Just(-0.0f32),
            Just(f32::MIN_POSITIVE / 3.0),
            Just(-f32::from_bits(1)),
            Just(f32::MAX),
        ]
    }

    proptest! {
        #[test]
        fn cache_round_trip_bit_exact(
            records in proptest::collection::btree_map("[a-zA-Z0-9_#-]{1,12}", proptest::collection::vec(finite_f32(), 7), 0..6)
        ) {
            let mut cache = FeatureCache::new(7);
            for (id, values) in records {
                if id.starts_with('#') { continue; }
                cache.insert(FeatureVector::new(id, values, 7).unwrap()).unwrap();
            }
            let back = read_cache(&cache_to_bytes(&cache)[..]).unwrap();
            prop_assert_eq!(back.len(), cache.len());
            for ((ia, va), (ib, vb)) in cache.iter().zip(back.iter()) {
                prop_assert_eq!(ia, ib);
                for (a, b) in va.iter().zip(vb) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
