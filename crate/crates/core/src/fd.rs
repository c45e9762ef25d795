//! Runtime failure detector: a binary classifier over observations plus
//! class-conditional conformal calibration of its decision threshold.
//!
//! The classifier maps pixels to a probability-of-failure score through a
//! sigmoid. Calibration computes nonconformity scores s = y(1-yhat) +
//! (1-y)yhat on held-out *positive* samples only and takes the
//! ceil((n+1)(1-alpha))-th smallest as the threshold q_hat; classifying an
//! observation as unsafe when yhat >= 1 - q_hat then guarantees recall of
//! at least 1-alpha on exchangeable data. Ties at the boundary classify as
//! unsafe.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::ObsRecord;
use crate::nn::{Activation, Adam, Arch, Mlp};
use crate::sensor::Observation;
use crate::vbc::TrainHyper;

/// Classifier network with its expected image dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FdParams {
    pub mlp: Mlp,
    pub width: usize,
    pub height: usize,
}

impl FdParams {
    pub fn arch_for(width: usize, height: usize, hidden: &[usize]) -> Arch {
        Arch::new(width * height, hidden, 1, Activation::Tanh)
    }

    pub fn init(width: usize, height: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FdParams { mlp: Mlp::init_xavier(Self::arch_for(width, height, hidden), &mut rng), width, height }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// Keeps scores strictly inside (0, 1) so nonconformity scores and log
// losses stay well-defined.
const SCORE_EPS: f64 = 1e-9;

fn center(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|&p| 2.0 * p - 1.0).collect()
}

fn score_pixels(params: &FdParams, pixels: &[f64]) -> Result<f64> {
    let logit = params.mlp.forward(&center(pixels))?[0];
    Ok(sigmoid(logit).clamp(SCORE_EPS, 1.0 - SCORE_EPS))
}

/// Probability-of-failure score in (0, 1).
pub fn fd_score(params: &FdParams, obs: &Observation) -> Result<f64> {
    if obs.width != params.width || obs.height != params.height {
        return Err(Error::DimMismatch {
            expected: params.width * params.height,
            got: obs.pixels.len(),
        });
    }
    score_pixels(params, &obs.pixels)
}

/// Unsafe iff the score clears the conformal decision boundary 1 - q_hat
/// (ties classify unsafe).
pub fn classify_score(y_hat: f64, q_hat: f64) -> u8 {
    u8::from(y_hat >= 1.0 - q_hat)
}

/// Classify an observation with a calibrated threshold.
pub fn fd_classify(params: &FdParams, q_hat: f64, obs: &Observation) -> Result<u8> {
    Ok(classify_score(fd_score(params, obs)?, q_hat))
}

/// Nonconformity score: disagreement between the label and the classifier
/// score.
pub fn nonconformity(y_hat: f64, y: u8) -> f64 {
    let y = y as f64;
    y * (1.0 - y_hat) + (1.0 - y) * y_hat
}

/// Conformal calibration output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub q_hat: f64,
    pub alpha: f64,
    /// Number of (positive) calibration scores used.
    pub n: usize,
    /// 1-based order statistic selected; n + 1 marks the degenerate case.
    pub k: usize,
}

impl CalibrationResult {
    pub fn is_degenerate(&self) -> bool {
        self.k > self.n
    }
}

/// The ceil((n+1)(1-alpha))-th smallest calibration score. When that index
/// exceeds n the calibration set is too small for the requested level and
/// the threshold degenerates to 1 (classify everything unsafe).
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<CalibrationResult> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty calibration score set".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite calibration score".into()));
    }
    let n = scores.len();
    // Nudge below the float product so that mathematically integral values
    // (e.g. (9+1)*(1-0.1) = 9) do not round up an extra rank.
    let k = ((n + 1) as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
    if k > n {
        return Ok(CalibrationResult { q_hat: 1.0, alpha, n, k });
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    Ok(CalibrationResult { q_hat: *kth, alpha, n, k })
}

/// Per-group evaluation metrics. Undefined ratios (no positives, no
/// negatives, or no positive predictions in a group) stay `None` rather
/// than being imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub group: String,
    pub recall: Option<f64>,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub fpr: Option<f64>,
    pub n: usize,
}

fn metrics_from_counts(group: &str, tp: usize, fp: usize, tn: usize, fn_: usize) -> GroupMetrics {
    let n = tp + fp + tn + fn_;
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    GroupMetrics {
        group: group.to_string(),
        recall: ratio(tp, tp + fn_),
        accuracy: (tp + tn) as f64 / n as f64,
        precision: ratio(tp, tp + fp),
        fpr: ratio(fp, fp + tn),
        n,
    }
}

/// Metrics for (score, label, group-key) triples: one row per group plus a
/// pooled row.
pub fn evaluate_scores(
    scored: &[(f64, u8, String)],
    q_hat: f64,
) -> Result<Vec<GroupMetrics>> {
    if scored.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut groups: std::collections::BTreeMap<&str, [usize; 4]> = Default::default();
    let mut pooled = [0usize; 4];
    for (y_hat, y, group) in scored {
        let pred = classify_score(*y_hat, q_hat);
        let slot = match (pred, *y) {
            (1, 1) => 0,
            (1, 0) => 1,
            (0, 0) => 2,
            _ => 3,
        };
        groups.entry(group.as_str()).or_default()[slot] += 1;
        pooled[slot] += 1;
    }
    let mut rows: Vec<GroupMetrics> = groups
        .iter()
        .map(|(g, c)| metrics_from_counts(g, c[0], c[1], c[2], c[3]))
        .collect();
    rows.push(metrics_from_counts("pooled", pooled[0], pooled[1], pooled[2], pooled[3]));
    Ok(rows)
}

/// Score a labeled record set; group keys are `r{runway}-{d1}-{d2}`.
pub fn score_records(
    params: &FdParams,
    records: &[ObsRecord],
) -> Result<Vec<(f64, u8, String)>> {
    records
        .iter()
        .map(|rec| {
            let label = rec
                .label
                .ok_or_else(|| Error::InvalidArgument("unlabeled record in evaluation".into()))?;
            let y_hat =
                score_pixels(params, &rec.pixels.iter().map(|&p| p as f64).collect::<Vec<_>>())?;
            Ok((y_hat, label, rec.env()?.label()))
        })
        .collect()
}

/// Evaluate a classifier + threshold on labeled records, grouped by
/// environment.
pub fn evaluate(params: &FdParams, q_hat: f64, records: &[ObsRecord]) -> Result<Vec<GroupMetrics>> {
    evaluate_scores(&score_records(params, records)?, q_hat)
}

/// Receiver operating characteristic over a uniform threshold sweep:
/// (q_hat, true positive rate, false positive rate) rows.
pub fn roc_table(scored: &[(f64, u8, String)], steps: usize) -> Vec<(f64, f64, f64)> {
    let n_pos = scored.iter().filter(|(_, y, _)| *y == 1).count().max(1);
    let n_neg = scored.iter().filter(|(_, y, _)| *y == 0).count().max(1);
    (0..=steps)
        .map(|i| {
            let q = i as f64 / steps as f64;
            let mut tp = 0;
            let mut fp = 0;
            for (y_hat, y, _) in scored {
                if classify_score(*y_hat, q) == 1 {
                    if *y == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            (q, tp as f64 / n_pos as f64, fp as f64 / n_neg as f64)
        })
        .collect()
}

/// Render metric rows as the `group,recall,accuracy,precision,fpr,n` CSV.
/// Undefined ratios serialize as empty fields.
pub fn metrics_csv(rows: &[GroupMetrics]) -> String {
    let mut out = String::from("group,recall,accuracy,precision,fpr,n\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{}\n",
            r.group,
            fmt(r.recall),
            r.accuracy,
            fmt(r.precision),
            fmt(r.fpr),
            r.n
        ));
    }
    out
}

/// Render an ROC sweep as the `q_hat,tpr,fpr` CSV.
pub fn roc_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("q_hat,tpr,fpr\n");
    for (q, tpr, fpr) in rows {
        out.push_str(&format!("{q:.6},{tpr:.6},{fpr:.6}\n"));
    }
    out
}

/// Train the classifier with binary cross-entropy.
pub fn train_fd(
    data: &[ObsRecord],
    init: FdParams,
    hyper: &TrainHyper,
) -> Result<(FdParams, Vec<f64>)> {
    hyper.validate()?;
    let n_pos = data.iter().filter(|r| r.label == Some(1)).count();
    let n_neg = data.iter().filter(|r| r.label == Some(0)).count();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "classifier training needs both classes (got {n_pos} failure / {n_neg} safe)"
        )));
    }
    if n_pos + n_neg != data.len() {
        return Err(Error::InvalidArgument("unlabeled record in training set".into()));
    }
    let mut params = init;
    let mut opt = Adam::new(hyper.lr, params.mlp.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut grad = vec![0.0; params.mlp.params.len()];
    let mut pixels = Vec::new();
    for epoch in 0..hyper.epochs {
        if hyper.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let rec = &data[idx];
                let y = rec.label.unwrap() as f64;
                pixels.clear();
                pixels.extend(rec.pixels.iter().map(|&p| 2.0 * p as f64 - 1.0));
                let logit = params.mlp.forward(&pixels)?[0];
                let y_hat = sigmoid(logit).clamp(SCORE_EPS, 1.0 - SCORE_EPS);
                batch_loss += -(y * y_hat.ln() + (1.0 - y) * (1.0 - y_hat).ln());
                // d BCE / d logit = y_hat - y.
                params.mlp.backprop_into(&pixels, &[weight * (y_hat - y)], &mut grad)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    context: "classifier training".into(),
                    detail: format!("non-finite loss at epoch {epoch}"),
                });
            }
            epoch_loss += batch_loss;
            opt.step(&mut params.mlp.params, &grad);
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok((params, curve))
}
