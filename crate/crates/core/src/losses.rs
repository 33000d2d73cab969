//! Training objectives: the cross-view contrastive loss, the graph
//! smoothness-plus-sparsity loss, cross-entropy, and the polynomial totals
//! that weight them.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::learner::ConnectivityMatrix;

const ZERO_NORM: f64 = 1e-300;

/// Coefficients echoed with every loss report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// One evaluation of the training objective.
///
/// During pretraining `total = contrastive + alpha (graph_fc + graph_ec)
/// + beta encoder_reg`; during fine-tuning `total = classification
/// + beta encoder_reg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub contrastive: f64,
    pub graph_fc: f64,
    pub graph_ec: f64,
    pub encoder_reg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<f64>,
    pub total: f64,
    pub coefficients: LossCoefficients,
}

/// Compose the pretraining polynomial.
pub fn total_pretrain(
    contrastive: f64,
    graph_fc: f64,
    graph_ec: f64,
    encoder_reg: f64,
    coefficients: LossCoefficients,
) -> LossReport {
    LossReport {
        contrastive,
        graph_fc,
        graph_ec,
        encoder_reg,
        classification: None,
        total: contrastive
            + coefficients.alpha * (graph_fc + graph_ec)
            + coefficients.beta * encoder_reg,
        coefficients,
    }
}

/// Compose the fine-tuning polynomial.
pub fn total_finetune(
    classification: f64,
    encoder_reg: f64,
    coefficients: LossCoefficients,
) -> LossReport {
    LossReport {
        contrastive: 0.0,
        graph_fc: 0.0,
        graph_ec: 0.0,
        encoder_reg,
        classification: Some(classification),
        total: classification + coefficients.beta * encoder_reg,
        coefficients,
    }
}

#[derive(Debug, Clone)]
pub struct NtXentCache {
    /// Normalized embeddings, first-view rows then second-view rows (2B x d).
    pool: Array2<f64>,
    fc_norms: Vec<f64>,
    ec_norms: Vec<f64>,
    tau: f64,
    normalize: bool,
    /// Per anchor, softmax over its 2B-1 pool; the anchor column is zero.
    forward_softmax: Array2<f64>,
    mirrored_softmax: Option<Array2<f64>>,
}

/// Normalized temperature-scaled cross-entropy over a batch.
///
/// Positives pair the two views of one subject; the negative pool for
/// anchor `i` is every other embedding of the batch, both views. Anchoring
/// is on the first view; `symmetric` averages in the mirrored term.
/// Embeddings are L2-normalized first unless `normalize` is false.
/// Zero-norm embeddings stay zero vectors and are logged.
pub fn nt_xent(
    fc_emb: &[Array1<f64>],
    ec_emb: &[Array1<f64>],
    tau: f64,
    normalize: bool,
    symmetric: bool,
) -> (f64, NtXentCache) {
    assert!(!fc_emb.is_empty(), "empty batch");
    assert_eq!(fc_emb.len(), ec_emb.len(), "view batch sizes differ");
    assert!(tau > 0.0, "temperature must be positive");
    let b = fc_emb.len();
    let d = fc_emb[0].len();

    let mut pool = Array2::<f64>::zeros((2 * b, d));
    let mut fc_norms = vec![0.0; b];
    let mut ec_norms = vec![0.0; b];
    for i in 0..b {
        let (row, norm) = unitize(&fc_emb[i], normalize);
        fc_norms[i] = norm;
        pool.row_mut(i).assign(&row);
        let (row, norm) = unitize(&ec_emb[i], normalize);
        ec_norms[i] = norm;
        pool.row_mut(b + i).assign(&row);
    }
    if normalize && fc_norms.iter().chain(&ec_norms).any(|&n| n <= ZERO_NORM) {
        log::warn!("zero-norm embedding in contrastive batch");
    }

    let (loss_fwd, fwd) = anchored_loss(&pool, b, tau, false);
    if !symmetric {
        return (
            loss_fwd,
            NtXentCache {
                pool,
                fc_norms,
                ec_norms,
                tau,
                normalize,
                forward_softmax: fwd,
                mirrored_softmax: None,
            },
        );
    }
    let (loss_mir, mir) = anchored_loss(&pool, b, tau, true);
    (
        0.5 * (loss_fwd + loss_mir),
        NtXentCache {
            pool,
            fc_norms,
            ec_norms,
            tau,
            normalize,
            forward_softmax: fwd,
            mirrored_softmax: Some(mir),
        },
    )
}

fn unitize(v: &Array1<f64>, normalize: bool) -> (Array1<f64>, f64) {
    if !normalize {
        return (v.clone(), 1.0);
    }
    let norm = v.dot(v).sqrt();
    if norm <= ZERO_NORM {
        (Array1::zeros(v.len()), 0.0)
    } else {
        (v.mapv(|x| x / norm), norm)
    }
}

/// `-1/B sum_i log softmax(pos_i)` with anchors on one view. `mirrored`
/// swaps which view anchors.
fn anchored_loss(pool: &Array2<f64>, b: usize, tau: f64, mirrored: bool) -> (f64, Array2<f64>) {
    let two_b = 2 * b;
    let mut softmax = Array2::<f64>::zeros((b, two_b));
    let mut total = 0.0;
    for i in 0..b {
        let (anchor_idx, positive_idx) = if mirrored { (b + i, i) } else { (i, b + i) };
        let anchor = pool.row(anchor_idx);
        let mut logits = vec![f64::NEG_INFINITY; two_b];
        let mut max = f64::NEG_INFINITY;
        for k in 0..two_b {
            if k == anchor_idx {
                continue;
            }
            let l = anchor.dot(&pool.row(k)) / tau;
            logits[k] = l;
            max = max.max(l);
        }
        let mut denom = 0.0;
        for (k, &l) in logits.iter().enumerate() {
            if k != anchor_idx {
                denom += (l - max).exp();
            }
        }
        let log_denom = max + denom.ln();
        total += log_denom - logits[positive_idx];
        for k in 0..two_b {
            if k != anchor_idx {
                softmax[[i, k]] = (logits[k] - log_denom).exp();
            }
        }
    }
    (total / b as f64, softmax)
}

/// Gradients of [`nt_xent`] scaled by `upstream`, per input embedding.
pub fn nt_xent_backward(
    cache: &NtXentCache,
    upstream: f64,
) -> (Vec<Array1<f64>>, Vec<Array1<f64>>) {
    let b = cache.fc_norms.len();
    let d = cache.pool.ncols();
    let mut d_pool = Array2::<f64>::zeros((2 * b, d));

    let weight = if cache.mirrored_softmax.is_some() { 0.5 } else { 1.0 };
    accumulate_anchor_grads(
        &cache.pool,
        &cache.forward_softmax,
        cache.tau,
        upstream * weight,
        false,
        &mut d_pool,
    );
    if let Some(mirror) = &cache.mirrored_softmax {
        accumulate_anchor_grads(
            &cache.pool,
            mirror,
            cache.tau,
            upstream * weight,
            true,
            &mut d_pool,
        );
    }

    let mut d_fc = Vec::with_capacity(b);
    let mut d_ec = Vec::with_capacity(b);
    for i in 0..b {
        d_fc.push(denormalize(
            &d_pool.row(i).to_owned(),
            &cache.pool.row(i).to_owned(),
            cache.fc_norms[i],
            cache.normalize,
        ));
        d_ec.push(denormalize(
            &d_pool.row(b + i).to_owned(),
            &cache.pool.row(b + i).to_owned(),
            cache.ec_norms[i],
            cache.normalize,
        ));
    }
    (d_fc, d_ec)
}

fn accumulate_anchor_grads(
    pool: &Array2<f64>,
    softmax: &Array2<f64>,
    tau: f64,
    upstream: f64,
    mirrored: bool,
    d_pool: &mut Array2<f64>,
) {
    let b = softmax.nrows();
    let two_b = 2 * b;
    let scale = upstream / (b as f64 * tau);
    for i in 0..b {
        let (anchor_idx, positive_idx) = if mirrored { (b + i, i) } else { (i, b + i) };
        for k in 0..two_b {
            if k == anchor_idx {
                continue;
            }
            let mut coeff = softmax[[i, k]];
            if k == positive_idx {
                coeff -= 1.0;
            }
            if coeff == 0.0 {
                continue;
            }
            let g = coeff * scale;
            // s = anchor . pool_k contributes to both ends.
            let anchor_row = pool.row(anchor_idx).to_owned();
            let pool_row = pool.row(k).to_owned();
            d_pool.row_mut(anchor_idx).scaled_add(g, &pool_row);
            d_pool.row_mut(k).scaled_add(g, &anchor_row);
        }
    }
}

fn denormalize(
    d_unit: &Array1<f64>,
    unit: &Array1<f64>,
    norm: f64,
    normalize: bool,
) -> Array1<f64> {
    if !normalize {
        return d_unit.clone();
    }
    if norm <= ZERO_NORM {
        return Array1::zeros(d_unit.len());
    }
    let radial = d_unit.dot(unit);
    (d_unit - &unit.mapv(|v| v * radial)).mapv(|v| v / norm)
}

/// Feature smoothness plus Frobenius sparsity on a learned graph:
/// `sum_ij ||h_i - h_j||^2 A_ij + gamma ||A||_F^2`.
pub fn graph_loss(h: &Array2<f64>, a: &ConnectivityMatrix, gamma: f64) -> f64 {
    let n = h.nrows();
    assert_eq!(a.values.nrows(), n, "graph/feature size mismatch");
    let mut smooth = 0.0;
    let mut frob = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a_ij = a.values[[i, j]];
            frob += a_ij * a_ij;
            if a_ij != 0.0 {
                let mut dist = 0.0;
                for d in 0..h.ncols() {
                    let diff = h[[i, d]] - h[[j, d]];
                    dist += diff * diff;
                }
                smooth += dist * a_ij;
            }
        }
    }
    smooth + gamma * frob
}

/// Gradients of [`graph_loss`] scaled by `upstream`: returns
/// (d features, d graph).
pub fn graph_loss_backward(
    h: &Array2<f64>,
    a: &ConnectivityMatrix,
    gamma: f64,
    upstream: f64,
) -> (Array2<f64>, Array2<f64>) {
    let n = h.nrows();
    let mut d_h = Array2::<f64>::zeros(h.raw_dim());
    let mut d_a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let a_ij = a.values[[i, j]];
            let mut dist = 0.0;
            for d in 0..h.ncols() {
                let diff = h[[i, d]] - h[[j, d]];
                dist += diff * diff;
            }
            d_a[[i, j]] = upstream * (dist + 2.0 * gamma * a_ij);
            if a_ij != 0.0 {
                for d in 0..h.ncols() {
                    let diff = h[[i, d]] - h[[j, d]];
                    d_h[[i, d]] += upstream * 2.0 * diff * a_ij;
                    d_h[[j, d]] -= upstream * 2.0 * diff * a_ij;
                }
            }
        }
    }
    (d_h, d_a)
}

/// Stabilized `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: [f64; 2], label: u8) -> f64 {
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    lse - logits[label as usize]
}

/// Gradient of [`cross_entropy`] scaled by `upstream`.
pub fn cross_entropy_backward(logits: [f64; 2], label: u8, upstream: f64) -> [f64; 2] {
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    let z = e0 + e1;
    let mut grad = [upstream * e0 / z, upstream * e1 / z];
    grad[label as usize] -= upstream;
    grad
}
