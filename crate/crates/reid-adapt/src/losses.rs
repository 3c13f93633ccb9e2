//! Loss functions with values and analytic input gradients: batch-hard
//! triplet mining, identity cross-entropy, their supervised combination,
//! and the group contrastive loss against the cluster memory.

use crate::error::{Error, Result};
use crate::memory::GroupMemory;
use crate::numerics::{dot, pairwise_distances, softmax, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.5 }
    }
}

/// Batch-hard triplet loss: per anchor, hinge(margin + hardest-positive
/// distance - hardest-negative distance), averaged over the batch. The
/// anchor's own row is excluded from its positive set; distance ties keep
/// the first index in ascending scan order. Returns the loss and its exact
/// subgradient with respect to the feature rows.
pub fn batch_hard_triplet(
    features: &Matrix,
    labels: &[usize],
    cfg: &TripletConfig,
) -> Result<(f64, Matrix)> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: labels.len(), right: n });
    }
    let dist = pairwise_distances(features, features)?;
    let d = features.cols();
    let mut grad = Matrix::zeros(n, d);
    let mut total = 0.0;

    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            let dj = dist.get(a, j);
            if labels[j] == labels[a] {
                if j != a && hardest_pos.is_none_or(|(_, best)| dj > best) {
                    hardest_pos = Some((j, dj));
                }
            } else if hardest_neg.is_none_or(|(_, best)| dj < best) {
                hardest_neg = Some((j, dj));
            }
        }
        let (p, d_ap) = hardest_pos.ok_or_else(|| {
            Error::DegenerateBatch(format!("anchor {a} (label {}) has no positive", labels[a]))
        })?;
        let (ng, d_an) = hardest_neg.ok_or_else(|| {
            Error::DegenerateBatch(format!("anchor {a} (label {}) has no negative", labels[a]))
        })?;

        let term = cfg.margin + d_ap - d_an;
        if term <= 0.0 {
            continue;
        }
        total += term;

        // d(a,p) grows the loss, d(a,n) shrinks it; at zero distance the
        // subgradient contribution is zero.
        if d_ap > 0.0 {
            for i in 0..d {
                let g = (features.get(a, i) - features.get(p, i)) / d_ap;
                *grad.row_mut(a).get_mut(i).unwrap() += g;
                *grad.row_mut(p).get_mut(i).unwrap() -= g;
            }
        }
        if d_an > 0.0 {
            for i in 0..d {
                let g = (features.get(a, i) - features.get(ng, i)) / d_an;
                *grad.row_mut(a).get_mut(i).unwrap() -= g;
                *grad.row_mut(ng).get_mut(i).unwrap() += g;
            }
        }
    }

    let scale = 1.0 / n as f64;
    for v in grad.data_mut() {
        *v *= scale;
    }
    Ok((total / n as f64, grad))
}

/// Mean `-log softmax(logits)[label]`; gradient is `(softmax - onehot) / n`.
pub fn identity_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: labels.len(), right: n });
    }
    let classes = logits.cols();
    let mut grad = Matrix::zeros(n, classes);
    let mut total = 0.0;
    for s in 0..n {
        let label = labels[s];
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, num_classes: classes });
        }
        let probs = softmax(logits.row(s));
        total += -probs[label].ln();
        let row = grad.row_mut(s);
        for (j, p) in probs.iter().enumerate() {
            row[j] = (p - f64::from(u8::from(j == label))) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Loss values of the supervised combination.
#[derive(Debug, Clone, Copy)]
pub struct SupervisedBreakdown {
    pub total: f64,
    pub triplet: f64,
    pub identity: f64,
}

/// Gradients of the supervised combination: one matrix per global feature
/// and one per classifier head.
#[derive(Debug, Clone)]
pub struct SupervisedGrads {
    pub global: Vec<Matrix>,
    pub logits: Vec<Matrix>,
}

/// Supervised objective: mean batch-hard triplet over the global feature
/// set plus mean cross-entropy over the part classifier heads.
pub fn supervised_loss(
    global_features: &[Matrix],
    part_logits: &[Matrix],
    labels: &[usize],
    cfg: &TripletConfig,
) -> Result<(SupervisedBreakdown, SupervisedGrads)> {
    if global_features.is_empty() {
        return Err(Error::EmptyInput);
    }
    let g_scale = 1.0 / global_features.len() as f64;
    let mut triplet = 0.0;
    let mut global_grads = Vec::with_capacity(global_features.len());
    for feats in global_features {
        let (loss, mut grad) = batch_hard_triplet(feats, labels, cfg)?;
        triplet += loss * g_scale;
        for v in grad.data_mut() {
            *v *= g_scale;
        }
        global_grads.push(grad);
    }

    let mut identity = 0.0;
    let mut logit_grads = Vec::with_capacity(part_logits.len());
    if !part_logits.is_empty() {
        let h_scale = 1.0 / part_logits.len() as f64;
        for logits in part_logits {
            let (loss, mut grad) = identity_cross_entropy(logits, labels)?;
            identity += loss * h_scale;
            for v in grad.data_mut() {
                *v *= h_scale;
            }
            logit_grads.push(grad);
        }
    }

    Ok((
        SupervisedBreakdown { total: triplet + identity, triplet, identity },
        SupervisedGrads { global: global_grads, logits: logit_grads },
    ))
}

/// Group contrastive loss for one query against every memory entry:
/// `-log softmax((q . c_i) / tau)[positive]`. Returns the loss and its
/// gradient with respect to the query.
pub fn group_contrastive(
    query: &[f64],
    memory: &GroupMemory,
    positive: usize,
) -> Result<(f64, Vec<f64>)> {
    let tau = memory.temperature();
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if positive >= memory.num_groups() {
        return Err(Error::BadIndex { index: positive, len: memory.num_groups() });
    }
    if query.len() != memory.dim() {
        return Err(Error::DimensionMismatch { left: query.len(), right: memory.dim() });
    }
    let entries = memory.entries();
    let logits: Vec<f64> = (0..entries.rows()).map(|k| dot(query, entries.row(k)) / tau).collect();
    let probs = softmax(&logits);
    let loss = -probs[positive].ln();
    let mut grad = vec![0.0; query.len()];
    for (k, &p) in probs.iter().enumerate() {
        let coef = (p - f64::from(u8::from(k == positive))) / tau;
        for (g, &c) in grad.iter_mut().zip(entries.row(k)) {
            *g += coef * c;
        }
    }
    Ok((loss, grad))
}
