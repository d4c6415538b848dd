//! Classification and calibration metrics for action-probability models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::argmax;
use crate::net::Matrix;

pub const DEFAULT_SCE_BINS: usize = 15;
pub const DEFAULT_BOOTSTRAPS: usize = 1000;
const LOGIT_CLAMP: f64 = 1e-12;
/// Keeps the per-class logistic fit bounded on separable data.
const CALIBRATION_RIDGE: f64 = 1e-6;

/// Predicted action distributions with the observed actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub probs: Matrix,
    pub labels: Vec<usize>,
}

impl PredictionBatch {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: probs.rows(),
                actual: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::Empty("prediction batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= probs.cols()) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        for r in 0..probs.rows() {
            let row = probs.row(r);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p))
                || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidArgument(format!(
                    "row {r} is not a distribution"
                )));
            }
        }
        Ok(PredictionBatch { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn select(&self, rows: &[usize]) -> PredictionBatch {
        PredictionBatch {
            probs: self.probs.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

pub fn accuracy(batch: &PredictionBatch) -> f64 {
    let hits = (0..batch.len())
        .filter(|&r| argmax(batch.probs.row(r)) == batch.labels[r])
        .count();
    hits as f64 / batch.len() as f64
}

/// Mean negative log-likelihood of the observed labels.
pub fn mean_nll(batch: &PredictionBatch) -> f64 {
    let total: f64 = (0..batch.len())
        .map(|r| {
            -batch
                .probs
                .get(r, batch.labels[r])
                .max(f64::MIN_POSITIVE)
                .ln()
        })
        .sum();
    total / batch.len() as f64
}

/// Mann–Whitney AUC of `scores` for positives against negatives; ties count one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tied groups
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        rank_sum_pos += midrank * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Unweighted mean of one-vs-rest AUCs over the classes present in the labels.
pub fn auc_macro_ovr(batch: &PredictionBatch) -> Result<f64> {
    let mut present = vec![false; batch.n_classes()];
    for &l in &batch.labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }
    let mut total = 0.0;
    let mut classes = 0;
    for c in (0..batch.n_classes()).filter(|&c| present[c]) {
        let scores: Vec<f64> = (0..batch.len()).map(|r| batch.probs.get(r, c)).collect();
        let positive: Vec<bool> = batch.labels.iter().map(|&l| l == c).collect();
        total += binary_auc(&scores, &positive)?;
        classes += 1;
    }
    Ok(total / classes as f64)
}

/// Equal-width bin on [0, 1]; values on a boundary go to the lower bin.
pub fn bin_index(p: f64, n_bins: usize) -> usize {
    ((p * n_bins as f64).ceil() as usize)
        .saturating_sub(1)
        .min(n_bins - 1)
}

/// Per-(class, bin) calibration statistics behind [`sce`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub class: usize,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_prob: f64,
    pub frequency: f64,
}

pub fn calibration_bins(batch: &PredictionBatch, n_bins: usize) -> Result<Vec<BinStat>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
    }
    let k = batch.n_classes();
    let mut count = vec![0usize; k * n_bins];
    let mut prob_sum = vec![0.0; k * n_bins];
    let mut hits = vec![0usize; k * n_bins];
    for r in 0..batch.len() {
        for c in 0..k {
            let p = batch.probs.get(r, c);
            let slot = c * n_bins + bin_index(p, n_bins);
            count[slot] += 1;
            prob_sum[slot] += p;
            hits[slot] += usize::from(batch.labels[r] == c);
        }
    }
    let mut out = Vec::new();
    for c in 0..k {
        for b in 0..n_bins {
            let slot = c * n_bins + b;
            if count[slot] == 0 {
                continue;
            }
            out.push(BinStat {
                class: c,
                bin: b,
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[slot],
                mean_prob: prob_sum[slot] / count[slot] as f64,
                frequency: hits[slot] as f64 / count[slot] as f64,
            });
        }
    }
    Ok(out)
}

/// Static calibration error: the class-averaged, count-weighted gap between
/// empirical frequency and mean predicted probability per bin.
pub fn sce(batch: &PredictionBatch, n_bins: usize) -> Result<f64> {
    let m = batch.len() as f64;
    let total: f64 = calibration_bins(batch, n_bins)?
        .iter()
        .map(|b| b.count as f64 / m * (b.frequency - b.mean_prob).abs())
        .sum();
    Ok(total / batch.n_classes() as f64)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Penalized logistic NLL of `sigmoid(a·x + b)` against `y`.
fn platt_loss(x: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = a * xi + b;
            // log(1 + e^z) − y z, computed stably
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - if yi { z } else { 0.0 }
        })
        .sum();
    nll + CALIBRATION_RIDGE * (a * a + b * b)
}

/// Damped Newton fit of `(a, b)`; with `fixed_a` only the intercept moves.
fn fit_platt(x: &[f64], y: &[bool], fixed_a: Option<f64>) -> (f64, f64) {
    let (mut a, mut b) = (fixed_a.unwrap_or(1.0), 0.0);
    let mut loss = platt_loss(x, y, a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(a * xi + b);
            let r = p - f64::from(u8::from(yi));
            let w = p * (1.0 - p);
            ga += r * xi;
            gb += r;
            haa += w * xi * xi;
            hab += w * xi;
            hbb += w;
        }
        ga += 2.0 * CALIBRATION_RIDGE * a;
        gb += 2.0 * CALIBRATION_RIDGE * b;
        haa += 2.0 * CALIBRATION_RIDGE;
        hbb += 2.0 * CALIBRATION_RIDGE;
        let (da, db) = if fixed_a.is_some() {
            (0.0, gb / hbb)
        } else {
            let det = haa * hbb - hab * hab;
            if det <= 0.0 {
                break;
            }
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        };
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nl = platt_loss(x, y, na, nb);
            if nl <= loss {
                improved = loss - nl > 1e-14 * loss.abs().max(1.0);
                a = na;
                b = nb;
                loss = nl;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

/// Per-class one-vs-rest logistic recalibration of predicted probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidCalibration {
    /// `(a, b)` per class, mapping `p` to `sigmoid(a·logit(p) + b)`.
    pub coefs: Vec<(f64, f64)>,
}

impl SigmoidCalibration {
    /// Fits on a held-out batch. Slopes are kept non-negative so each class
    /// map is monotone.
    pub fn fit(batch: &PredictionBatch) -> Self {
        let coefs = (0..batch.n_classes())
            .map(|c| {
                let x: Vec<f64> = (0..batch.len())
                    .map(|r| logit(batch.probs.get(r, c)))
                    .collect();
                let y: Vec<bool> = batch.labels.iter().map(|&l| l == c).collect();
                let (a, b) = fit_platt(&x, &y, None);
                if a >= 0.0 {
                    (a, b)
                } else {
                    fit_platt(&x, &y, Some(0.0))
                }
            })
            .collect();
        SigmoidCalibration { coefs }
    }

    pub fn identity(n_classes: usize) -> Self {
        SigmoidCalibration {
            coefs: vec![(1.0, 0.0); n_classes],
        }
    }

    /// Calibrated scores before renormalization.
    pub fn scores(&self, probs: &Matrix) -> Result<Matrix> {
        if probs.cols() != self.coefs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefs.len(),
                actual: probs.cols(),
            });
        }
        let mut out = probs.clone();
        for r in 0..out.rows() {
            for (v, &(a, b)) in out.row_mut(r).iter_mut().zip(&self.coefs) {
                *v = sigmoid(a * logit(*v) + b);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, probs: &Matrix) -> Result<Matrix> {
        let mut out = self.scores(probs)?;
        let k = out.cols() as f64;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / k);
            }
        }
        Ok(out)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Point value with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile interval of `stat` over `n_boot` row resamples at the given
/// coverage. Resamples where `stat` fails (a single-class draw for AUC) are skipped.
pub fn bootstrap_interval<R: Rng + ?Sized>(
    batch: &PredictionBatch,
    stat: impl Fn(&PredictionBatch) -> Result<f64>,
    n_boot: usize,
    coverage: f64,
    rng: &mut R,
) -> Result<Interval> {
    let value = stat(batch)?;
    let m = batch.len();
    let mut draws = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let rows: Vec<usize> = (0..m).map(|_| rng.gen_range(0..m)).collect();
        if let Ok(v) = stat(&batch.select(&rows)) {
            draws.push(v);
        }
    }
    if draws.is_empty() {
        return Ok(Interval {
            value,
            lower: value,
            upper: value,
        });
    }
    draws.sort_by(f64::total_cmp);
    let tail = (1.0 - coverage) / 2.0;
    Ok(Interval {
        value,
        lower: quantile_sorted(&draws, tail),
        upper: quantile_sorted(&draws, 1.0 - tail),
    })
}

/// Accuracy, AUC and SCE with 95% bootstrap intervals, plus mean NLL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Interval,
    pub auc: Interval,
    pub sce: Interval,
    pub nll: f64,
    pub m: usize,
    pub n_bootstrap: usize,
}

pub fn metric_report<R: Rng + ?Sized>(
    batch: &PredictionBatch,
    n_boot: usize,
    rng: &mut R,
) -> Result<MetricReport> {
    Ok(MetricReport {
        accuracy: bootstrap_interval(batch, |b| Ok(accuracy(b)), n_boot, 0.95, rng)?,
        auc: bootstrap_interval(batch, auc_macro_ovr, n_boot, 0.95, rng)?,
        sce: bootstrap_interval(batch, |b| sce(b, DEFAULT_SCE_BINS), n_boot, 0.95, rng)?,
        nll: mean_nll(batch),
        m: batch.len(),
        n_bootstrap: n_boot,
    })
}
