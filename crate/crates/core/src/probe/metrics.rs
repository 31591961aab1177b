// SPDX-License-Identifier: MIT OR Apache-2.0

//! AUC-ROC (Mann-Whitney, ties count half) and F1.

use crate::error::ProbeError;

/// Area under the ROC curve.
///
/// Counts, in doubled integer units, the (positive, negative) pairs where the
/// positive scores higher (2) or ties (1), after one sort. The result is that
/// count over `2 * n_pos * n_neg`, so it agrees bit-for-bit with a brute-force
/// pairwise count.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, ProbeError> {
    if scores.len() != labels.len() {
        return Err(ProbeError::Shape {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(ProbeError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ProbeError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut doubled: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let score = scores[order[start]];
        let mut end = start;
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        // -0.0 and 0.0 are the same score
        while end < order.len() && scores[order[end]] == score {
            if labels[order[end]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            end += 1;
        }
        doubled += 2 * pos_here * neg_below + pos_here * neg_here;
        neg_below += neg_here;
        start = end;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

/// Confusion counts for binary predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self, ProbeError> {
        if predictions.len() != labels.len() {
            return Err(ProbeError::Shape {
                expected: labels.len(),
                found: predictions.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// Harmonic mean of precision and recall, `2TP / (2TP + FP + FN)`;
    /// zero when precision + recall is zero.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        (2 * self.tp) as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }
}

pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64, ProbeError> {
    Ok(Confusion::from_predictions(predictions, labels)?.f1())
}
