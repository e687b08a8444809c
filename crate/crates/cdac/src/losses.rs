//! The four training losses and their supporting statistics.
//!
//! * [`cross_entropy`] — supervised loss on labeled batches.
//! * [`pairwise_similarity`] — top-k rank-statistic labels `s[i][j]` over the
//!   features of the original (unaugmented) unlabeled samples.
//! * [`aac_loss`] — adversarial adaptive clustering: binary cross-entropy on
//!   prediction inner products `p_i · p'_j` against the pairwise labels, over
//!   all ordered pairs of the batch.
//! * [`pseudo_label_loss`] — confidence-filtered hard-label loss on the
//!   second augmented view.
//! * [`consistency_loss`] — ramp-up-weighted squared distance between the
//!   predictions of the two augmented views.
//!
//! Pairwise labels, pseudo labels and confidence masks are computed from
//! forward values and enter the graph as constants: no gradient flows
//! through rank statistics or argmax decisions.

use thiserror::Error;

use crate::autodiff::{DiffError, Graph, TensorId};

/// Clamp bound for inner products before their logarithm.
pub const INNER_EPS: f64 = 1e-8;
/// Clamp bound for probabilities before their logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("feature dimension {dim} is smaller than k={k}")]
    FeatureDimBelowK { dim: usize, k: usize },
    #[error("row {row} of {name} is not a probability vector (sum {sum})")]
    NotProbabilities {
        name: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("confidence threshold tau must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Sum-over-batch follows the loss definitions; mean is offered for
/// learning-rate robustness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl Reduction {
    /// Applies the reduction to a summed loss given the number of summands.
    fn finish(self, g: &mut Graph, summed: TensorId, count: usize) -> TensorId {
        match self {
            Reduction::Sum => summed,
            Reduction::Mean => g.scale(summed, 1.0 / count.max(1) as f64),
        }
    }
}

// ── Pairwise similarity labels ───────────────────────────────────────

/// Binary similarity matrix over a batch: `s[i][j] = 1` iff rows `i` and `j`
/// share the same set of top-k feature indices. Symmetric with a unit
/// diagonal by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseLabels {
    m: usize,
    s: Vec<bool>,
}

impl PairwiseLabels {
    /// Wraps an explicit row-major matrix. Panics unless it is symmetric
    /// with a unit diagonal, the invariants of the rank statistic.
    pub fn from_matrix(m: usize, s: Vec<bool>) -> Self {
        assert_eq!(s.len(), m * m, "matrix must be m x m");
        for i in 0..m {
            assert!(s[i * m + i], "diagonal must be all ones");
            for j in 0..m {
                assert_eq!(s[i * m + j], s[j * m + i], "matrix must be symmetric");
            }
        }
        PairwiseLabels { m, s }
    }

    pub fn batch_size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.s[i * self.m + j]
    }

    /// Positive mask and its complement as `f64` buffers, row-major `m x m`.
    pub fn masks(&self) -> (Vec<f64>, Vec<f64>) {
        let pos: Vec<f64> = self.s.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let neg: Vec<f64> = self.s.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        (pos, neg)
    }
}

/// Indices of the k largest values of a row, ties broken toward the lower
/// index, returned in ascending index order for set comparison.
fn top_k_index_set(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut set: Vec<usize> = order[..k].to_vec();
    set.sort_unstable();
    set
}

/// Computes the top-k rank-statistic labels for a `rows x cols` feature
/// matrix given as a flat row-major slice.
pub fn pairwise_similarity(
    features: &[f64],
    rows: usize,
    cols: usize,
    k: usize,
) -> Result<PairwiseLabels, LossError> {
    if cols < k {
        return Err(LossError::FeatureDimBelowK { dim: cols, k });
    }
    assert_eq!(
        features.len(),
        rows * cols,
        "feature buffer does not match rows x cols"
    );
    let sets: Vec<Vec<usize>> = (0..rows)
        .map(|r| top_k_index_set(&features[r * cols..(r + 1) * cols], k))
        .collect();
    let mut s = vec![false; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            s[i * rows + j] = sets[i] == sets[j];
        }
    }
    Ok(PairwiseLabels { m: rows, s })
}

// ── Pseudo labels ────────────────────────────────────────────────────

/// Hard labels and confidence filter extracted from a prediction batch.
/// Treated as constants by every loss that consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelBatch {
    pub hard_labels: Vec<usize>,
    pub keep_mask: Vec<bool>,
    pub confidences: Vec<f64>,
}

impl PseudoLabelBatch {
    pub fn retained(&self) -> usize {
        self.keep_mask.iter().filter(|&&b| b).count()
    }
}

/// Argmax labels and `max p >= tau` masks from row probabilities.
pub fn make_pseudo_labels(
    probs: &[f64],
    rows: usize,
    cols: usize,
    tau: f64,
) -> Result<PseudoLabelBatch, LossError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(LossError::BadThreshold(tau));
    }
    assert_eq!(probs.len(), rows * cols);
    let mut hard_labels = Vec::with_capacity(rows);
    let mut keep_mask = Vec::with_capacity(rows);
    let mut confidences = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &probs[r * cols..(r + 1) * cols];
        let mut best = 0;
        for c in 1..cols {
            if row[c] > row[best] {
                best = c;
            }
        }
        hard_labels.push(best);
        confidences.push(row[best]);
        keep_mask.push(row[best] >= tau);
    }
    Ok(PseudoLabelBatch {
        hard_labels,
        keep_mask,
        confidences,
    })
}

// ── Losses ───────────────────────────────────────────────────────────

fn check_probability_rows(
    g: &Graph,
    name: &'static str,
    t: TensorId,
) -> Result<(usize, usize), LossError> {
    let shape = g.shape(t);
    let (rows, cols) = (shape[0], shape[1]);
    let v = g.value(t);
    for r in 0..rows {
        let row = &v[r * cols..(r + 1) * cols];
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(LossError::NotProbabilities { name, row: r, sum });
        }
    }
    Ok((rows, cols))
}

/// `-Σ log p[label]` over the batch. Probabilities are clamped to
/// `[PROB_EPS, 1]` before the logarithm.
pub fn cross_entropy(
    g: &mut Graph,
    probs: TensorId,
    labels: &[usize],
    reduction: Reduction,
) -> Result<TensorId, LossError> {
    let shape = g.shape(probs).to_vec();
    let (rows, cols) = (shape[0], shape[1]);
    assert_eq!(labels.len(), rows, "one label per prediction row");
    let mut onehot = vec![0.0; rows * cols];
    for (r, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(LossError::LabelOutOfRange {
                row: r,
                label,
                classes: cols,
            });
        }
        onehot[r * cols + label] = 1.0;
    }
    let onehot = g.constant(onehot, &[rows, cols]);
    let clamped = g.clamp(probs, PROB_EPS, 1.0);
    let logp = g.log(clamped);
    let picked = g.rows_dot(logp, onehot)?;
    let total = g.sum(picked);
    let loss = g.scale(total, -1.0);
    Ok(reduction.finish(g, loss, rows))
}

/// Adversarial adaptive clustering loss over all `M x M` ordered pairs,
/// including the diagonal:
/// `-Σ_ij s_ij log(p_i·p'_j) + (1 - s_ij) log(1 - p_i·p'_j)`
/// with the inner products clamped to `[INNER_EPS, 1 - INNER_EPS]`.
///
/// `p` holds predictions of the original samples, `p_prime` predictions of
/// their augmented views. Gradients flow through both.
pub fn aac_loss(
    g: &mut Graph,
    p: TensorId,
    p_prime: TensorId,
    labels: &PairwiseLabels,
    reduction: Reduction,
) -> Result<TensorId, LossError> {
    let (m, _c) = check_probability_rows(g, "p", p)?;
    let (m2, _) = check_probability_rows(g, "p_prime", p_prime)?;
    assert_eq!(m, m2, "p and p_prime must have the same batch size");
    assert_eq!(
        labels.batch_size(),
        m,
        "pairwise labels sized for a different batch"
    );

    let scores = g.matmul_nt(p, p_prime)?;
    let clamped = g.clamp(scores, INNER_EPS, 1.0 - INNER_EPS);
    let log_match = g.log(clamped);
    let neg = g.scale(clamped, -1.0);
    let ones = g.constant(vec![1.0; m * m], &[m, m]);
    let one_minus = g.add(neg, ones)?;
    let log_mismatch = g.log(one_minus);

    let (pos, negm) = labels.masks();
    let pos = g.constant(pos, &[m, m]);
    let negm = g.constant(negm, &[m, m]);
    let t1 = g.mul(pos, log_match)?;
    let t2 = g.mul(negm, log_mismatch)?;
    let both = g.add(t1, t2)?;
    let total = g.sum(both);
    let loss = g.scale(total, -1.0);
    Ok(reduction.finish(g, loss, m * m))
}

/// Confidence-filtered pseudo-label loss
/// `-Σ_j 1{max p_j >= tau} log p''_j[argmax p_j]`.
///
/// Hard labels and the filter come from the predictions of the original
/// samples (`p`, read by value); the gradient flows only through the
/// predictions of the second augmented view (`p_dprime`).
pub fn pseudo_label_loss(
    g: &mut Graph,
    p: TensorId,
    p_dprime: TensorId,
    tau: f64,
    reduction: Reduction,
) -> Result<(TensorId, PseudoLabelBatch), LossError> {
    let (rows, cols) = check_probability_rows(g, "p", p)?;
    let batch = make_pseudo_labels(g.value(p), rows, cols, tau)?;
    let loss = pseudo_label_loss_from(g, &batch, p_dprime, reduction)?;
    Ok((loss, batch))
}

/// Pseudo-label loss against a precomputed (frozen) label batch.
pub fn pseudo_label_loss_from(
    g: &mut Graph,
    batch: &PseudoLabelBatch,
    p_dprime: TensorId,
    reduction: Reduction,
) -> Result<TensorId, LossError> {
    let (rows, cols) = check_probability_rows(g, "p_dprime", p_dprime)?;
    assert_eq!(
        batch.hard_labels.len(),
        rows,
        "pseudo labels sized for a different batch"
    );
    let mut mask = vec![0.0; rows * cols];
    for r in 0..rows {
        if batch.keep_mask[r] {
            mask[r * cols + batch.hard_labels[r]] = 1.0;
        }
    }
    let mask = g.constant(mask, &[rows, cols]);
    let clamped = g.clamp(p_dprime, PROB_EPS, 1.0);
    let logp = g.log(clamped);
    let picked = g.rows_dot(logp, mask)?;
    let total = g.sum(picked);
    let loss = g.scale(total, -1.0);
    Ok(reduction.finish(g, loss, rows))
}

// ── Consistency and ramp-up ──────────────────────────────────────────

/// Ramp-up schedule state: weight `ν · exp(-5 (1 - t/T)^2)`, held at `ν`
/// once `t` passes `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampState {
    pub step: usize,
    pub total: usize,
    pub ceiling: f64,
}

impl RampState {
    pub fn new(step: usize, total: usize, ceiling: f64) -> Self {
        assert!(total > 0, "ramp-up horizon must be positive");
        RampState {
            step,
            total,
            ceiling,
        }
    }
}

/// Evaluates the ramp-up weight. Nondecreasing in `t` on `[0, T]`, exactly
/// `ν` at `t = T` and beyond.
pub fn rampup_weight(ramp: &RampState) -> f64 {
    if ramp.step >= ramp.total {
        return ramp.ceiling;
    }
    let frac = 1.0 - ramp.step as f64 / ramp.total as f64;
    ramp.ceiling * (-5.0 * frac * frac).exp()
}

/// `w(t) · Σ_j ||p'_j - p''_j||²` between the two augmented-view prediction
/// batches.
pub fn consistency_loss(
    g: &mut Graph,
    p_prime: TensorId,
    p_dprime: TensorId,
    ramp: &RampState,
    reduction: Reduction,
) -> Result<TensorId, LossError> {
    let rows = g.shape(p_prime)[0];
    let neg = g.scale(p_dprime, -1.0);
    let diff = g.add(p_prime, neg)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    let loss = g.scale(total, rampup_weight(ramp));
    Ok(reduction.finish(g, loss, rows))
}

/// Prediction entropy `-Σ_j Σ_c p log p`, the adversarial term of the
/// entropy baseline.
pub fn prediction_entropy(
    g: &mut Graph,
    p: TensorId,
    reduction: Reduction,
) -> Result<TensorId, LossError> {
    let (rows, _) = check_probability_rows(g, "p", p)?;
    let clamped = g.clamp(p, PROB_EPS, 1.0);
    let logp = g.log(clamped);
    let plogp = g.mul(p, logp)?;
    let total = g.sum(plogp);
    let loss = g.scale(total, -1.0);
    Ok(reduction.finish(g, loss, rows))
}
