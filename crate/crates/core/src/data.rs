//! Datasets: synthetic generation, single-positive masking, CSV I/O, and
//! label statistics.
//!
//! CSV layout: a header `f0..f{d-1},y0..y{C-1},s0..s{C-1}` followed by one row
//! per instance. Feature values are written with the shortest representation
//! that parses back to the same `f64`, so save→load is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SpmlError};
use crate::numerics::{BinaryMatrix, DenseMatrix, RngStream};

/// Resampling budget per row before generation gives up.
const MAX_ROW_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Fully labeled pool that has not been assigned to a split yet.
    Full,
}

/// Features `X` (N×d), ground truth `Y` (N×C), observed labels `S` (N×C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: DenseMatrix,
    pub truth: BinaryMatrix,
    pub observed: BinaryMatrix,
    pub split: Split,
    pub scar_rate: Option<f64>,
}

impl LabeledDataset {
    /// Builds and validates a dataset.
    pub fn new(features: DenseMatrix, truth: BinaryMatrix, observed: BinaryMatrix, split: Split) -> Result<Self> {
        let ds = LabeledDataset { features, truth, observed, split, scar_rate: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.truth.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.truth.rows() != n || self.observed.rows() != n {
            return Err(SpmlError::Dataset(format!(
                "row counts differ: X {n}, Y {}, S {}",
                self.truth.rows(),
                self.observed.rows()
            )));
        }
        if self.truth.cols() != self.observed.cols() {
            return Err(SpmlError::Dataset(format!(
                "Y has {} classes but S has {}",
                self.truth.cols(),
                self.observed.cols()
            )));
        }
        if let Some(r) = self.truth.row_counts().iter().position(|&k| k == 0) {
            return Err(SpmlError::Dataset(format!("row {r} has no positive label")));
        }
        match self.split {
            Split::Train => {
                if let Some(r) = self.observed.row_counts().iter().position(|&k| k != 1) {
                    return Err(SpmlError::Dataset(format!("train row {r} does not have exactly one observed positive")));
                }
                if !self.observed.is_subset_of(&self.truth) {
                    return Err(SpmlError::Dataset("observed label marked where ground truth is negative".into()));
                }
            }
            Split::Val | Split::Test | Split::Full => {
                if self.observed != self.truth {
                    return Err(SpmlError::Dataset(format!("{:?} split must be fully labeled", self.split)));
                }
            }
        }
        Ok(())
    }

    /// Same rows, fully labeled, tagged as `split` (val or test).
    pub fn as_fully_labeled(&self, split: Split) -> Result<Self> {
        LabeledDataset::new(self.features.clone(), self.truth.clone(), self.truth.clone(), split)
    }

    /// Masks to one observed positive per row and tags the result as train.
    pub fn into_single_positive(self, rng: &mut RngStream) -> Result<Self> {
        let observed = mask_single_positive(&self.truth, rng)?;
        let mut ds = LabeledDataset::new(self.features, self.truth, observed, Split::Train)?;
        ds.scar_rate = Some(scar_rate(&ds.truth, &ds.observed)?);
        Ok(ds)
    }

    pub fn select_rows(&self, indices: &[usize], split: Split) -> Result<Self> {
        let mut ds = LabeledDataset::new(
            self.features.select_rows(indices),
            self.truth.select_rows(indices),
            self.observed.select_rows(indices),
            split,
        )?;
        if split == Split::Train {
            ds.scar_rate = Some(scar_rate(&ds.truth, &ds.observed)?);
        }
        Ok(ds)
    }
}

/// Parameters of the latent linear generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    /// Scale of the class hyperplane normals.
    pub weight_scale: f64,
    /// Target fraction of positive entries in `Y`.
    pub positive_rate: f64,
    /// Standard deviation of the Gaussian noise added to each class score.
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    pub seed: u64,
}

fn default_label_noise() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be at least 1".to_string());
        }
        if self.c == 0 {
            problems.push("c must be at least 1".to_string());
        }
        if self.d == 0 {
            problems.push("d must be at least 1".to_string());
        }
        if !(self.weight_scale.is_finite() && self.weight_scale > 0.0) {
            problems.push(format!("weight_scale must be positive, got {}", self.weight_scale));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            problems.push(format!("positive_rate must lie in (0, 1), got {}", self.positive_rate));
        }
        if !(self.label_noise.is_finite() && self.label_noise >= 0.0) {
            problems.push(format!("label_noise must be nonnegative, got {}", self.label_noise));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SpmlError::Config(problems))
        }
    }
}

/// Per-class hyperplanes `y_i = 1 ⇔ w_i·x + b_i + ε > 0`, `x ~ N(0, I)`,
/// `ε ~ N(0, noise²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub weights: DenseMatrix,
    pub biases: Vec<f64>,
    pub noise: f64,
}

impl LatentModel {
    /// Draws normals `w_i ~ scale·N(0, I/d)` and sets each bias so that the
    /// marginal class rate `r` makes the rate after the ≥1-positive
    /// conditioning, `r / (1 − (1 − r)^C)`, equal the target.
    pub fn sample(spec: &SyntheticSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let r = per_class_rate(spec.positive_rate, spec.c)?;
        let std_normal = Normal::new(0.0, 1.0).map_err(|e| SpmlError::Parameter(e.to_string()))?;
        let quantile = std_normal.inverse_cdf(r);
        let scale = spec.weight_scale / (spec.d as f64).sqrt();
        let mut weights = DenseMatrix::zeros(spec.c, spec.d);
        let mut biases = Vec::with_capacity(spec.c);
        for i in 0..spec.c {
            let row = weights.row_mut(i);
            for w in row.iter_mut() {
                *w = scale * rng.standard_normal();
            }
            let norm2: f64 = row.iter().map(|w| w * w).sum();
            biases.push((norm2 + spec.label_noise * spec.label_noise).sqrt() * quantile);
        }
        Ok(LatentModel { weights, biases, noise: spec.label_noise })
    }

    /// Draws `n` rows, resampling any row without a positive label.
    pub fn draw(&self, n: usize, rng: &mut RngStream) -> Result<(DenseMatrix, BinaryMatrix)> {
        let (c, d) = self.weights.shape();
        let mut x = DenseMatrix::zeros(n, d);
        let mut y = BinaryMatrix::zeros(n, c);
        for r in 0..n {
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > MAX_ROW_ATTEMPTS {
                    return Err(SpmlError::Parameter(format!(
                        "could not draw a row with a positive label after {MAX_ROW_ATTEMPTS} attempts; positive rate infeasible"
                    )));
                }
                let row = x.row_mut(r);
                for v in row.iter_mut() {
                    *v = rng.standard_normal();
                }
                let mut any = false;
                for i in 0..c {
                    let score: f64 = self.weights.row(i).iter().zip(x.row(r)).map(|(w, v)| w * v).sum::<f64>()
                        + self.biases[i]
                        + self.noise * rng.standard_normal();
                    let positive = score > 0.0;
                    y.set(r, i, positive);
                    any |= positive;
                }
                if any {
                    break;
                }
            }
        }
        Ok((x, y))
    }
}

/// Solves `r / (1 − (1 − r)^C) = target` for the unconditioned class rate.
fn per_class_rate(target: f64, c: usize) -> Result<f64> {
    if c == 1 {
        // a single class is always positive after conditioning
        return Ok(target);
    }
    let floor = 1.0 / c as f64;
    if target <= floor {
        return Err(SpmlError::Parameter(format!(
            "positive_rate {target} is infeasible: every row has a positive, so the rate is at least 1/C = {floor}"
        )));
    }
    let f = |r: f64| r / (1.0 - (1.0 - r).powi(c as i32));
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A fully labeled dataset of `spec.n` rows tagged [`Split::Full`].
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let latent = LatentModel::sample(spec, &mut RngStream::new(spec.seed, 0))?;
    let (x, y) = latent.draw(spec.n, &mut RngStream::new(spec.seed, 1))?;
    LabeledDataset::new(x, y.clone(), y, Split::Full)
}

/// Train / val / test datasets from one latent model.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// `spec.n` single-positive training rows plus fully labeled val and test
/// sets drawn from the same hyperplanes with independent streams.
pub fn generate_splits(spec: &SyntheticSpec, n_val: usize, n_test: usize) -> Result<DatasetSplits> {
    if n_val == 0 || n_test == 0 {
        return Err(SpmlError::config("validation and test sets need at least one row"));
    }
    let latent = LatentModel::sample(spec, &mut RngStream::new(spec.seed, 0))?;
    let draw = |n: usize, stream: u64, split: Split| -> Result<LabeledDataset> {
        let (x, y) = latent.draw(n, &mut RngStream::new(spec.seed, stream))?;
        LabeledDataset::new(x, y.clone(), y, split)
    };
    Ok(DatasetSplits {
        train: generate_train(spec)?,
        val: draw(n_val, 2, Split::Val)?,
        test: draw(n_test, 3, Split::Test)?,
    })
}

/// The single-positive training split of [`generate_splits`] on its own.
pub fn generate_train(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let full = generate_synthetic(spec)?;
    full.into_single_positive(&mut RngStream::new(spec.seed, 4))
}

/// Keeps one positive per row, chosen uniformly among the row's positives.
pub fn mask_single_positive(truth: &BinaryMatrix, rng: &mut RngStream) -> Result<BinaryMatrix> {
    let (n, c) = truth.shape();
    let mut observed = BinaryMatrix::zeros(n, c);
    for r in 0..n {
        let positives: Vec<usize> = (0..c).filter(|&i| truth.get(r, i)).collect();
        if positives.is_empty() {
            return Err(SpmlError::Dataset(format!("row {r} has no positive label to keep")));
        }
        observed.set(r, positives[rng.below(positives.len())], true);
    }
    Ok(observed)
}

/// `#{s = 1} / #{y = 1}`.
pub fn scar_rate(truth: &BinaryMatrix, observed: &BinaryMatrix) -> Result<f64> {
    let positives = truth.count_ones();
    if positives == 0 {
        return Err(SpmlError::Dataset("no positive labels".into()));
    }
    Ok(observed.count_ones() as f64 / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub classes: usize,
    pub positives_per_class: Vec<usize>,
    pub mean_positives_per_instance: f64,
    /// `#{y = 1, s = 0}`.
    pub missing_positives: usize,
    /// `#{s = 0}`.
    pub unobserved: usize,
    /// `#{y = 1, s = 0} / #{s = 0}`; absent when every label is observed positive.
    pub missing_positive_prior: Option<f64>,
    /// `#{s = 1} / #{y = 1}`.
    pub scar_a: Option<f64>,
}

pub fn dataset_stats(ds: &LabeledDataset) -> DatasetStats {
    let (n, c) = ds.truth.shape();
    let missing_positives =
        ds.truth.data().iter().zip(ds.observed.data()).filter(|&(&y, &s)| y && !s).count();
    let unobserved = ds.observed.data().iter().filter(|&&s| !s).count();
    let positives = ds.truth.count_ones();
    DatasetStats {
        instances: n,
        classes: c,
        positives_per_class: ds.truth.col_counts(),
        mean_positives_per_instance: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
        missing_positives,
        unobserved,
        missing_positive_prior: (unobserved > 0).then(|| missing_positives as f64 / unobserved as f64),
        scar_a: (positives > 0).then(|| ds.observed.count_ones() as f64 / positives as f64),
    }
}

// ---------------------------------------------------------------------------
// CSV

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_csv(ds, file)
}

pub fn write_csv(ds: &LabeledDataset, out: impl Write) -> Result<()> {
    let (d, c) = (ds.num_features(), ds.num_classes());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..d)
        .map(|j| format!("f{j}"))
        .chain((0..c).map(|i| format!("y{i}")))
        .chain((0..c).map(|i| format!("s{i}")))
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    for r in 0..ds.len() {
        let bit = |b: bool| if b { "1".to_string() } else { "0".to_string() };
        let record: Vec<String> = ds
            .features
            .row(r)
            .iter()
            .map(|v| v.to_string())
            .chain(ds.truth.row(r).iter().map(|&b| bit(b)))
            .chain(ds.observed.row(r).iter().map(|&b| bit(b)))
            .collect();
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> SpmlError {
    SpmlError::Io(std::io::Error::other(e.to_string()))
}

pub fn load_csv(path: &Path, split: Split) -> Result<LabeledDataset> {
    let file = File::open(path)?;
    read_csv(file, split)
}

pub fn read_csv(input: impl Read, split: Split) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(SpmlError::Parse { line: 1, message: "empty file, header required".into() }),
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let (d, c) = parse_header(&header)?;
    let width = d + 2 * c;
    let mut features = Vec::new();
    let mut truth = Vec::new();
    let mut observed = Vec::new();
    let mut rows = 0usize;
    for record in records {
        let line = rows as u64 + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            if j < d {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("feature column {j}: {field:?} is not a number")))?;
                features.push(v);
            } else {
                let b = match field.trim() {
                    "0" => false,
                    "1" => true,
                    other => return Err(parse_err(line, format!("label column {j}: {other:?} is not 0/1"))),
                };
                if j < d + c {
                    truth.push(b);
                } else {
                    observed.push(b);
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    let truth = BinaryMatrix::from_vec(rows, c, truth)?;
    let observed = BinaryMatrix::from_vec(rows, c, observed)?;
    let mut ds = LabeledDataset::new(DenseMatrix::from_vec(rows, d, features)?, truth, observed, split)?;
    if split == Split::Train {
        ds.scar_rate = Some(scar_rate(&ds.truth, &ds.observed)?);
    }
    Ok(ds)
}

fn parse_err(line: u64, message: String) -> SpmlError {
    SpmlError::Parse { line, message }
}

/// Checks the `f*, y*, s*` header and returns `(d, C)`.
fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let count_prefix = |start: usize, prefix: char| -> usize {
        header
            .iter()
            .skip(start)
            .enumerate()
            .take_while(|(k, name)| name.trim() == format!("{prefix}{k}"))
            .count()
    };
    let d = count_prefix(0, 'f');
    let c = count_prefix(d, 'y');
    let cs = count_prefix(d + c, 's');
    if c == 0 {
        return Err(parse_err(1, "header declares no ground-truth columns y0..".into()));
    }
    if cs != c {
        return Err(parse_err(1, format!("header declares {c} ground-truth columns but {cs} observed columns")));
    }
    if d + 2 * c != header.len() {
        return Err(parse_err(1, format!("unexpected column {:?} in header", header.get(d + 2 * c).unwrap_or(""))));
    }
    Ok((d, c))
}
