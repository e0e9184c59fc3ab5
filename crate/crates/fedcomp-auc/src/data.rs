//! Datasets: synthetic Gaussian mixtures, CSV ingestion, stratified
//! splitting, and controlled class imbalance.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::Error;
use crate::model::Sample;
use crate::rng::{RngStream, STREAM_BASE_INTERNAL};
use crate::Result;

pub(crate) const STREAM_DATA: u64 = STREAM_BASE_INTERNAL + 1;
pub(crate) const STREAM_SPLIT: u64 = STREAM_BASE_INTERNAL + 2;
pub(crate) const STREAM_SUBSAMPLE: u64 = STREAM_BASE_INTERNAL + 3;

/// A named, non-empty collection of labeled samples with uniform feature
/// width and cached class counts.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    name: String,
    samples: Vec<Sample>,
    feature_dim: usize,
    positive_count: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let name = name.into();
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let feature_dim = samples[0].features().len();
        for (i, s) in samples.iter().enumerate() {
            if s.features().len() != feature_dim {
                return Err(Error::Dimension {
                    what: "sample feature width",
                    expected: feature_dim,
                    got: samples[i].features().len(),
                });
            }
        }
        let positive_count = samples.iter().filter(|s| s.is_positive()).count();
        Ok(Self {
            name,
            samples,
            feature_dim,
            positive_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn negative_count(&self) -> usize {
        self.samples.len() - self.positive_count
    }

    pub fn positive_fraction(&self) -> f64 {
        self.positive_count as f64 / self.samples.len() as f64
    }
}

/// Balanced two-Gaussian mixture: class means at `+/- separation / sqrt(d)`
/// in every coordinate (so the between-class distance is `2 * separation`
/// regardless of dimension), unit isotropic covariance. Positives first,
/// `n / 2` of them; `separation = 0` makes the classes indistinguishable.
pub fn gen_gaussian_mixture(
    n: usize,
    feature_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::Config(format!(
            "mixture needs at least 2 samples, got {n}"
        )));
    }
    if feature_dim == 0 {
        return Err(Error::Config("mixture needs at least 1 feature".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Config(format!(
            "class separation must be finite and non-negative, got {separation}"
        )));
    }
    let mut rng = RngStream::new(seed, STREAM_DATA);
    let shift = separation / (feature_dim as f64).sqrt();
    let n_pos = n / 2;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (mean, label) = if i < n_pos { (shift, 1) } else { (-shift, -1) };
        let feats: Vec<f64> = (0..feature_dim)
            .map(|_| mean + rng.standard_normal())
            .collect();
        samples.push(Sample::new(feats, label)?);
    }
    LabeledDataset::new(format!("gaussian(n={n},sep={separation})"), samples)
}

/// Largest number of positives `k` such that `k / (k + negatives)` does not
/// exceed `target`, found by exact integer search around the float estimate.
fn max_positives_for_ratio(target: f64, negatives: usize) -> usize {
    let neg = negatives as f64;
    let mut k = ((target * neg) / (1.0 - target)).floor() as usize;
    // The float estimate can be off by one in either direction at exact
    // boundaries; settle it with the true predicate.
    let fits = |k: usize| (k as f64) / ((k + negatives) as f64) <= target;
    while k > 0 && !fits(k) {
        k -= 1;
    }
    while fits(k + 1) {
        k += 1;
    }
    k
}

/// Keep all negatives and a uniform random subset of positives so the
/// positive fraction is the largest achievable value not exceeding
/// `target_ratio`. A target equal to the current fraction returns the
/// dataset unchanged; a target above it is unachievable by subsampling.
pub fn imbalance_subsample(
    ds: &LabeledDataset,
    target_ratio: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(Error::Config(format!(
            "imbalance ratio must lie in (0, 1), got {target_ratio}"
        )));
    }
    let current = ds.positive_fraction();
    if ds.positive_count() == 0 || ds.negative_count() == 0 {
        return Err(Error::SingleClass {
            name: ds.name().to_string(),
            positives: ds.positive_count(),
            negatives: ds.negative_count(),
        });
    }
    if current < target_ratio {
        return Err(Error::UnachievableRatio {
            target: target_ratio,
            current,
        });
    }
    if current == target_ratio {
        return Ok(ds.clone());
    }
    let keep = max_positives_for_ratio(target_ratio, ds.negative_count()).min(ds.positive_count());
    if keep == 0 {
        return Err(Error::Config(format!(
            "imbalance ratio {target_ratio} would remove every positive sample \
             ({} negatives present)",
            ds.negative_count()
        )));
    }

    let mut pos_idx: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.samples()[i].is_positive())
        .collect();
    RngStream::new(seed, STREAM_SUBSAMPLE).shuffle(&mut pos_idx);
    pos_idx.truncate(keep);
    pos_idx.sort_unstable();

    let mut selected = vec![false; ds.len()];
    for &i in &pos_idx {
        selected[i] = true;
    }
    let samples: Vec<Sample> = ds
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, s)| !s.is_positive() || selected[*i])
        .map(|(_, s)| s.clone())
        .collect();
    LabeledDataset::new(format!("{}|ratio={target_ratio}", ds.name()), samples)
}

/// Load `label,feature,feature,...` rows. Labels may be `1`/`+1`, `-1`, or
/// `0` (mapped to the negative class). Errors carry the 1-based line number.
pub fn load_csv(path: &Path, has_header: bool) -> Result<LabeledDataset> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("{display}:{line_no}"), e))?;
        if idx == 0 && has_header {
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split(',');
        let label_field = fields.next().expect("split yields at least one field");
        let label: i64 = match label_field.trim() {
            "1" | "+1" => 1,
            "-1" => -1,
            "0" => -1,
            other => other.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                msg: format!("invalid label {other:?} (expected 1, +1, -1, or 0)"),
            })?,
        };
        let mut feats = Vec::new();
        for (col, f) in fields.enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                msg: format!("invalid feature value {:?} in column {}", f.trim(), col + 2),
            })?;
            feats.push(v);
        }
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    msg: format!("row has {} features, expected {w}", feats.len()),
                });
            }
            _ => {}
        }
        let sample = Sample::new(feats, label).map_err(|e| Error::Parse {
            path: display.clone(),
            line: line_no,
            msg: e.to_string(),
        })?;
        samples.push(sample);
    }
    LabeledDataset::new(display, samples)
}

/// Stratified split: the test set receives `round(test_fraction * count)`
/// samples of each class, drawn without replacement; the rest train.
pub fn train_test_split(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = RngStream::new(seed, STREAM_SPLIT);
    let mut pos_idx: Vec<usize> = Vec::new();
    let mut neg_idx: Vec<usize> = Vec::new();
    for (i, s) in ds.samples().iter().enumerate() {
        if s.is_positive() {
            pos_idx.push(i);
        } else {
            neg_idx.push(i);
        }
    }
    rng.shuffle(&mut pos_idx);
    rng.shuffle(&mut neg_idx);

    let n_test_pos = ((test_fraction * pos_idx.len() as f64).round() as usize).min(pos_idx.len());
    let n_test_neg = ((test_fraction * neg_idx.len() as f64).round() as usize).min(neg_idx.len());

    let mut in_test = vec![false; ds.len()];
    for &i in pos_idx.iter().take(n_test_pos) {
        in_test[i] = true;
    }
    for &i in neg_idx.iter().take(n_test_neg) {
        in_test[i] = true;
    }

    let mut train = Vec::with_capacity(ds.len());
    let mut test = Vec::with_capacity(n_test_pos + n_test_neg);
    for (i, s) in ds.samples().iter().enumerate() {
        if in_test[i] {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((
        LabeledDataset::new(format!("{}|train", ds.name()), train)?,
        LabeledDataset::new(format!("{}|test", ds.name()), test)?,
    ))
}
