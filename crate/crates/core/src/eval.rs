//! Ranking metrics and the analyses behind the diagnostic plots: average
//! precision, 1-D Wasserstein distances between confidence distributions,
//! false-negative ratio buckets, and missing-label gradient curves.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpmlError};
use crate::numerics::{BinaryMatrix, DenseMatrix};

pub const HISTOGRAM_BINS: usize = 50;
pub const FN_RATIO_BUCKETS: usize = 100;

/// Mean over positives of the precision at each positive's rank. Scores are
/// ranked descending; equal scores keep index order.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(SpmlError::Shape(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(SpmlError::Domain("average precision undefined without positives".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    /// `None` for classes without positives, which are left out of the mean.
    pub per_class: Vec<Option<f64>>,
    pub skipped_classes: Vec<usize>,
}

pub fn mean_average_precision(scores: &DenseMatrix, truth: &BinaryMatrix) -> Result<MapReport> {
    if scores.shape() != truth.shape() {
        return Err(SpmlError::Shape(format!("scores {:?} vs truth {:?}", scores.shape(), truth.shape())));
    }
    let mut per_class = Vec::with_capacity(truth.cols());
    let mut skipped = Vec::new();
    for c in 0..truth.cols() {
        let labels = truth.column(c);
        if labels.iter().any(|&t| t) {
            per_class.push(Some(average_precision(&scores.column(c), &labels)?));
        } else {
            per_class.push(None);
            skipped.push(c);
        }
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(SpmlError::Domain("no class has a positive label".into()));
    }
    let map = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(MapReport { map, per_class, skipped_classes: skipped })
}

/// `∫ |F_A(x) − F_B(x)| dx` between the empirical CDFs.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(SpmlError::Domain("Wasserstein distance needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(SpmlError::Domain("Wasserstein distance needs finite samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
    all.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut total = 0.0;
    for k in 0..all.len() - 1 {
        let width = all[k + 1] - all[k];
        if width == 0.0 {
            continue;
        }
        let fa = a.partition_point(|&v| v <= all[k]) as f64 / na;
        let fb = b.partition_point(|&v| v <= all[k]) as f64 / nb;
        total += (fa - fb).abs() * width;
    }
    Ok(total)
}

/// Counts over `bins` equal-width bins on `[0, 1]`; `p = 1` lands in the last bin.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for &p in samples {
        counts[bin_index(p, bins)] += 1;
    }
    counts
}

fn bin_index(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distinguishability {
    /// Pooled over every class.
    pub w1: f64,
    pub per_class_w1: Vec<Option<f64>>,
    pub positive_count: usize,
    pub negative_count: usize,
    pub positive_histogram: Vec<usize>,
    pub negative_histogram: Vec<usize>,
}

/// Separation between confidences of unannotated true positives and
/// unannotated true negatives.
pub fn distinguishability(confidences: &DenseMatrix, truth: &BinaryMatrix, observed: &BinaryMatrix) -> Result<Distinguishability> {
    check_shapes(confidences, truth, observed)?;
    let (n, c) = truth.shape();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut per_class_w1 = Vec::with_capacity(c);
    for class in 0..c {
        let mut cp = Vec::new();
        let mut cn = Vec::new();
        for r in 0..n {
            if observed.get(r, class) {
                continue;
            }
            let p = confidences.get(r, class);
            if truth.get(r, class) {
                cp.push(p);
            } else {
                cn.push(p);
            }
        }
        per_class_w1.push(if cp.is_empty() || cn.is_empty() { None } else { Some(wasserstein1(&cp, &cn)?) });
        pos.extend(cp);
        neg.extend(cn);
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(SpmlError::Domain("unannotated positives or negatives are empty".into()));
    }
    Ok(Distinguishability {
        w1: wasserstein1(&pos, &neg)?,
        per_class_w1,
        positive_count: pos.len(),
        negative_count: neg.len(),
        positive_histogram: histogram(&pos, HISTOGRAM_BINS),
        negative_histogram: histogram(&neg, HISTOGRAM_BINS),
    })
}

fn check_shapes(confidences: &DenseMatrix, truth: &BinaryMatrix, observed: &BinaryMatrix) -> Result<()> {
    if confidences.shape() != truth.shape() || truth.shape() != observed.shape() {
        return Err(SpmlError::Shape(format!(
            "confidences {:?}, truth {:?}, observed {:?}",
            confidences.shape(),
            truth.shape(),
            observed.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnBucket {
    pub lo: f64,
    pub hi: f64,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// `FN / (FN + TN)`; `None` for empty buckets.
    pub ratio: Option<f64>,
}

impl FnBucket {
    pub fn count(&self) -> usize {
        self.false_negatives + self.true_negatives
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Among missing labels (`s = 0`), the fraction that are truly positive
/// within each confidence bucket.
pub fn fn_ratio_buckets(
    confidences: &DenseMatrix,
    truth: &BinaryMatrix,
    observed: &BinaryMatrix,
    n_buckets: usize,
) -> Result<Vec<FnBucket>> {
    check_shapes(confidences, truth, observed)?;
    if n_buckets == 0 {
        return Err(SpmlError::Parameter("bucket count must be positive".into()));
    }
    let mut fns = vec![0usize; n_buckets];
    let mut tns = vec![0usize; n_buckets];
    for ((&p, &y), &s) in confidences.data().iter().zip(truth.data()).zip(observed.data()) {
        if s {
            continue;
        }
        let k = bin_index(p, n_buckets);
        if y {
            fns[k] += 1;
        } else {
            tns[k] += 1;
        }
    }
    Ok((0..n_buckets)
        .map(|k| {
            let total = fns[k] + tns[k];
            FnBucket {
                lo: k as f64 / n_buckets as f64,
                hi: (k + 1) as f64 / n_buckets as f64,
                false_negatives: fns[k],
                true_negatives: tns[k],
                ratio: (total > 0).then(|| fns[k] as f64 / total as f64),
            }
        })
        .collect())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SpmlError::Shape("Spearman correlation needs two equal-length series of length ≥ 2".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SpmlError::Domain("correlation undefined for a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(SpmlError::Domain("coefficient of variation of an empty series".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(SpmlError::Domain("coefficient of variation undefined at zero mean".into()));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// How well a bucket curve follows `(1 − a)p / (1 − a·p)`, and how flat it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub buckets_used: usize,
    pub spearman: Option<f64>,
    pub coefficient_of_variation: Option<f64>,
}

/// Uses buckets holding at least `min_count` missing labels.
pub fn assumption_check(buckets: &[FnBucket], scar_a: f64, min_count: usize) -> Result<AssumptionCheck> {
    let used: Vec<&FnBucket> = buckets.iter().filter(|b| b.count() >= min_count && b.ratio.is_some()).collect();
    let ratios: Vec<f64> = used.iter().filter_map(|b| b.ratio).collect();
    let theory = used
        .iter()
        .map(|b| crate::gr_loss::theoretical_k(b.center(), scar_a))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AssumptionCheck {
        buckets_used: used.len(),
        spearman: spearman(&ratios, &theory).ok(),
        coefficient_of_variation: coefficient_of_variation(&ratios).ok(),
    })
}

// ---------------------------------------------------------------------------
// Gradient curves

/// Inputs for the missing-label gradient curves. Each series is evaluated
/// from its own closed form here, independently of the loss modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCurveSpec {
    pub w0: f64,
    pub b0: f64,
    pub w_t: f64,
    pub b_t: f64,
    pub q2: f64,
    pub q3: f64,
    #[serde(default = "default_hill_lambda")]
    pub hill_lambda: f64,
}

fn default_hill_lambda() -> f64 {
    1.5
}

impl Default for GradCurveSpec {
    fn default() -> Self {
        GradCurveSpec { w0: 0.0, b0: -2.0, w_t: 2.0, b_t: -2.0, q2: 0.01, q3: 1.0, hill_lambda: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

/// `∂L/∂z` on a missing label for GR at both schedule anchors, EM and Hill.
pub fn gradient_curves(spec: &GradCurveSpec, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if let Some(p) = grid.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(SpmlError::Domain(format!("gradient grid point {p} outside (0, 1)")));
    }
    let gr = |w: f64, b: f64, p: f64| {
        let k = 1.0 / (1.0 + (-(w * p + b)).exp());
        (1.0 - k) * (1.0 - p).powf(spec.q3) * p - k * p.powf(spec.q2) * (1.0 - p)
    };
    let em = |p: f64| (p / (1.0 - p)).ln() * p * (1.0 - p);
    let hill = |p: f64| {
        let lambda = spec.hill_lambda;
        p * p * (2.0 * lambda - 3.0 * p) * (1.0 - p)
    };
    let mut out = Vec::with_capacity(4 * grid.len());
    let mut push = |series: &str, f: &dyn Fn(f64) -> f64| {
        for &p in grid {
            out.push(CurvePoint { series: series.to_string(), x: p, y: f(p) });
        }
    };
    push("GR beta0", &|p| gr(spec.w0, spec.b0, p));
    push("GR betaT", &|p| gr(spec.w_t, spec.b_t, p));
    push("EM", &em);
    push("Hill", &hill);
    Ok(out)
}

/// `n` evenly spaced interior points `i/(n+1)`.
pub fn interior_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: MapReport,
    pub distinguishability: Option<Distinguishability>,
    pub fn_ratio: Option<Vec<FnBucket>>,
    pub assumption: Option<AssumptionCheck>,
    pub gradient_curves: Vec<CurvePoint>,
}

/// Writes `x,y,series` rows.
pub fn write_plot_csv(points: &[CurvePoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SpmlError::Io(std::io::Error::other(e.to_string()));
    w.write_record(["x", "y", "series"]).map_err(io)?;
    for pt in points {
        w.write_record([pt.x.to_string(), pt.y.to_string(), pt.series.clone()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram bins as plot points at bin centers.
pub fn histogram_points(counts: &[usize], series: &str) -> Vec<CurvePoint> {
    let bins = counts.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| CurvePoint { series: series.to_string(), x: (k as f64 + 0.5) / bins, y: c as f64 })
        .collect()
}

/// Defined bucket ratios as plot points at bucket centers.
pub fn bucket_points(buckets: &[FnBucket], series: &str) -> Vec<CurvePoint> {
    buckets
        .iter()
        .filter_map(|b| b.ratio.map(|r| CurvePoint { series: series.to_string(), x: b.center(), y: r }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gr_loss;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.7], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.8, 0.7], &[false, true, false]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.9, 0.8], &[true, true]).unwrap(), 1.0);
        assert!(average_precision(&[0.9, 0.8], &[false, false]).is_err());
        // ties keep index order
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn map_examples() {
        let scores = DenseMatrix::from_rows(&[vec![0.9, 0.9], vec![0.8, 0.8], vec![0.7, 0.7]]).unwrap();
        let truth = BinaryMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![0, 0]]).unwrap();
        let report = mean_average_precision(&scores, &truth).unwrap();
        assert_eq!(report.map, 0.75);
        let truth = BinaryMatrix::from_rows(&[vec![1, 0], vec![1, 0], vec![0, 0]]).unwrap();
        let report = mean_average_precision(&scores, &truth).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.skipped_classes, vec![1]);
        assert!(mean_average_precision(&scores, &BinaryMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn map_is_invariant_to_instance_order() {
        let mut rng = RngStream::new(4, 0);
        let (n, c) = (30, 4);
        let scores: Vec<f64> = (0..n * c).map(|_| rng.uniform()).collect();
        let truth: Vec<bool> = (0..n * c).map(|i| i % 3 == 0 || rng.uniform() < 0.3).collect();
        let s = DenseMatrix::from_vec(n, c, scores).unwrap();
        let t = BinaryMatrix::from_vec(n, c, truth).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let a = mean_average_precision(&s, &t).unwrap().map;
        let b = mean_average_precision(&s.select_rows(&perm), &t.select_rows(&perm)).unwrap().map;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1(&[0.1, 0.4], &[0.4, 0.1]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(wasserstein1(&[], &[0.5]).is_err());
    }

    #[test]
    fn distinguishability_examples() {
        let conf = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let truth = BinaryMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![1, 0]]).unwrap();
        let observed = BinaryMatrix::from_rows(&[vec![0, 0], vec![1, 0], vec![0, 0]]).unwrap();
        let d = distinguishability(&conf, &truth, &observed).unwrap();
        assert_eq!(d.w1, 1.0);
        assert_eq!(d.positive_count, 3);
        assert_eq!(d.negative_count, 2);
        assert_eq!(d.positive_histogram[HISTOGRAM_BINS - 1], 3);
        assert_eq!(d.negative_histogram[0], 2);

        let flat = DenseMatrix::from_rows(&[vec![0.3, 0.3], vec![0.3, 0.3], vec![0.3, 0.3]]).unwrap();
        assert_eq!(distinguishability(&flat, &truth, &observed).unwrap().w1, 0.0);
        assert!(distinguishability(&flat, &truth, &truth).is_err());
    }

    #[test]
    fn fn_ratio_examples() {
        let mut rng = RngStream::new(3, 0);
        let (n, c) = (200, 5);
        let conf = DenseMatrix::from_vec(n, c, vec![0.5; n * c]).unwrap();
        let truth = BinaryMatrix::from_vec(n, c, (0..n * c).map(|_| rng.uniform() < 0.3).collect()).unwrap();
        let observed = BinaryMatrix::from_vec(n, c, truth.data().iter().map(|&y| y && rng.uniform() < 0.5).collect()).unwrap();
        let buckets = fn_ratio_buckets(&conf, &truth, &observed, FN_RATIO_BUCKETS).unwrap();
        let occupied: Vec<&FnBucket> = buckets.iter().filter(|b| b.ratio.is_some()).collect();
        assert_eq!(occupied.len(), 1);
        let missing_pos = truth.data().iter().zip(observed.data()).filter(|&(&y, &s)| y && !s).count();
        let missing = observed.data().iter().filter(|&&s| !s).count();
        assert_eq!(occupied[0].ratio.unwrap(), missing_pos as f64 / missing as f64);
        let total: usize = buckets.iter().map(FnBucket::count).sum();
        assert_eq!(total, missing);

        let none = BinaryMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0]]).unwrap();
        let conf = DenseMatrix::from_rows(&[vec![0.9, 0.2, 0.6], vec![0.1, 0.7, 0.35]]).unwrap();
        let buckets = fn_ratio_buckets(&conf, &none, &none, FN_RATIO_BUCKETS).unwrap();
        assert!(buckets.iter().filter_map(|b| b.ratio).all(|r| r == 0.0));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!((coefficient_of_variation(&[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_curve_examples() {
        let grid = [0.25, 0.5, 0.75];
        let spec = GradCurveSpec { w0: 0.0, b0: -1e9, ..GradCurveSpec::default() };
        let pts = gradient_curves(&spec, &grid).unwrap();
        let get = |series: &str, x: f64| pts.iter().find(|c| c.series == series && c.x == x).unwrap().y;
        assert!((get("Hill", 0.5) - 0.1875).abs() < 1e-15);
        assert_eq!(get("EM", 0.5), 0.0);
        // k̂ ≡ 0 and q3 = 1 leave p(1 − p)
        for &p in &grid {
            assert_eq!(get("GR beta0", p), p * (1.0 - p));
        }
        assert!(gradient_curves(&spec, &[0.0]).is_err());
    }

    #[test]
    fn gradient_curves_match_loss_modules() {
        let spec = GradCurveSpec::default();
        let grid = interior_grid(99);
        let pts = gradient_curves(&spec, &grid).unwrap();
        for pt in &pts {
            let p = pt.x;
            let expect = match pt.series.as_str() {
                "GR beta0" | "GR betaT" => {
                    let (w, b) = if pt.series == "GR beta0" { (spec.w0, spec.b0) } else { (spec.w_t, spec.b_t) };
                    let k = gr_loss::k_hat(p, &gr_loss::PseudoLabelParams::new(w, b).unwrap());
                    gr_loss::grad_unannotated_wrt_logit(p, k, spec.q2, spec.q3)
                }
                "EM" => crate::adapters::em_missing_grad(p),
                "Hill" => crate::adapters::hill_grad(p, 1.5),
                other => panic!("unexpected series {other}"),
            };
            assert!((pt.y - expect).abs() <= 1e-15, "{} at {p}: {} vs {expect}", pt.series, pt.y);
        }
    }

    #[test]
    fn plot_csv_layout() {
        let mut buf = Vec::new();
        write_plot_csv(&[CurvePoint { series: "a".into(), x: 0.5, y: 2.0 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y,series\n0.5,2,a\n");
    }

    /// Replicates each sample to a common length and pairs sorted values.
    fn w1_by_quantile_coupling(a: &[f64], b: &[f64]) -> f64 {
        fn gcd(x: usize, y: usize) -> usize {
            if y == 0 {
                x
            } else {
                gcd(y, x % y)
            }
        }
        let l = a.len() / gcd(a.len(), b.len()) * b.len();
        let expand = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.iter().flat_map(|&x| std::iter::repeat_n(x, l / v.len())).collect::<Vec<f64>>()
        };
        let (ea, eb) = (expand(a), expand(b));
        ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum::<f64>() / l as f64
    }

    proptest! {
        #[test]
        fn w1_triangle_inequality(
            a in proptest::collection::vec(0.0f64..1.0, 1..12),
            b in proptest::collection::vec(0.0f64..1.0, 1..12),
            c in proptest::collection::vec(0.0f64..1.0, 1..12),
        ) {
            let ab = wasserstein1(&a, &b).unwrap();
            let bc = wasserstein1(&b, &c).unwrap();
            let ac = wasserstein1(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert!((ab - w1_by_quantile_coupling(&a, &b)).abs() < 1e-12);
        }
    }
}
