//! The connectivity network learner: multi-head weighted-cosine similarity
//! fused with a fixed statistical prior and row-normalized. One instance per
//! view (functional / effective). Forward passes return caches that the
//! hand-derived backward passes consume.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::priors::PriorMatrix;

/// Norms at or below this count as weighted-zero rows.
const ZERO_NORM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Fc,
    Ec,
}

impl View {
    pub fn tag(self) -> &'static str {
        match self {
            View::Fc => "fc",
            View::Ec => "ec",
        }
    }
}

/// Per-view learner weights: one vector per (round, head). Round 0 weights
/// have the time-series dimension, later rounds the hidden width.
#[derive(Debug, Clone)]
pub struct LearnerParams {
    pub view: View,
    /// Indexed `[round][head]`.
    pub layers: Vec<Vec<Array1<f64>>>,
}

impl LearnerParams {
    /// All-ones weights with a small Gaussian perturbation per head, so the
    /// metric starts near the plain cosine and heads break ties.
    pub fn init(
        view: View,
        iterations: usize,
        heads: usize,
        t_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..=iterations)
            .map(|l| {
                let dim = if l == 0 { t_dim } else { hidden };
                (0..heads)
                    .map(|_| {
                        Array1::from_iter((0..dim).map(|_| {
                            let z: f64 = rng.sample(StandardNormal);
                            1.0 + 0.01 * z
                        }))
                    })
                    .collect()
            })
            .collect();
        LearnerParams { view, layers }
    }

    pub fn heads(&self) -> usize {
        self.layers.first().map_or(0, |l| l.len())
    }
}

/// A learned N x N connectivity graph: nonnegative, zero diagonal, rows
/// summing to 1 except for isolated (all-zero) rows.
#[derive(Debug, Clone)]
pub struct ConnectivityMatrix {
    pub values: Array2<f64>,
    pub view: View,
    pub iteration: usize,
}

impl ConnectivityMatrix {
    /// Invariant check used by debug builds on every training step.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.values.nrows();
        for i in 0..n {
            if self.values[[i, i]] != 0.0 {
                return Err(format!("diagonal entry ({i},{i}) is nonzero"));
            }
            let mut sum = 0.0;
            for j in 0..n {
                let v = self.values[[i, j]];
                if !(v >= 0.0) {
                    return Err(format!("entry ({i},{j}) = {v} is negative or NaN"));
                }
                sum += v;
            }
            if sum != 0.0 && (sum - 1.0).abs() > 1e-9 {
                return Err(format!("row {i} sums to {sum}"));
            }
        }
        Ok(())
    }

    pub fn zero_rows(&self) -> usize {
        self.values
            .rows()
            .into_iter()
            .filter(|r| r.iter().all(|&v| v == 0.0))
            .count()
    }
}

/// Per-head cache: unit feature rows and their pre-normalization norms.
#[derive(Debug, Clone)]
pub struct HeadCache {
    unit: Array2<f64>,
    norms: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct SimilarityCache {
    heads: Vec<HeadCache>,
}

/// Head-averaged weighted-cosine similarity:
/// `s_ij = (1/M) sum_m cos(w_m . f_i, w_m . f_j)` elementwise products.
/// Weighted-zero rows score 0 against everything; the diagonal is 1 for
/// nonzero rows.
pub fn multihead_similarity(
    features: &Array2<f64>,
    heads: &[Array1<f64>],
) -> (Array2<f64>, SimilarityCache) {
    let n = features.nrows();
    assert!(!heads.is_empty(), "need at least one head");
    let mut sim = Array2::<f64>::zeros((n, n));
    let mut caches = Vec::with_capacity(heads.len());
    let scale = 1.0 / heads.len() as f64;
    for w in heads {
        assert_eq!(w.len(), features.ncols(), "head dimension mismatch");
        let mut unit = features * &w.view().insert_axis(ndarray::Axis(0));
        let mut norms = Array1::<f64>::zeros(n);
        for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            norms[i] = norm;
            if norm > ZERO_NORM {
                row.mapv_inplace(|v| v / norm);
            } else {
                row.fill(0.0);
            }
        }
        let cos = unit.dot(&unit.t());
        sim.scaled_add(scale, &cos);
        caches.push(HeadCache { unit, norms });
    }
    // Exact diagonal for nonzero rows.
    for i in 0..n {
        let nonzero = caches.iter().filter(|c| c.norms[i] > ZERO_NORM).count();
        sim[[i, i]] = nonzero as f64 * scale;
    }
    (sim, SimilarityCache { heads: caches })
}

/// Backward pass of [`multihead_similarity`]. Diagonal upstream entries are
/// ignored: the diagonal is locally constant in the inputs.
pub fn multihead_similarity_backward(
    features: &Array2<f64>,
    heads: &[Array1<f64>],
    cache: &SimilarityCache,
    d_sim: &Array2<f64>,
) -> (Vec<Array1<f64>>, Array2<f64>) {
    let n = features.nrows();
    let mut g = d_sim.clone();
    for i in 0..n {
        g[[i, i]] = 0.0;
    }
    // d cos-matrix = (G + G^T) V per head, then un-normalize.
    let g_sym = &g + &g.t();
    let scale = 1.0 / heads.len() as f64;
    let mut d_heads = Vec::with_capacity(heads.len());
    let mut d_features = Array2::<f64>::zeros(features.raw_dim());
    for (w, head_cache) in heads.iter().zip(&cache.heads) {
        let d_unit_raw = g_sym.dot(&head_cache.unit);
        let mut d_w = Array1::<f64>::zeros(w.len());
        for i in 0..n {
            let norm = head_cache.norms[i];
            if norm <= ZERO_NORM {
                continue;
            }
            let v = head_cache.unit.row(i);
            let dv = d_unit_raw.row(i);
            let radial = dv.dot(&v);
            // dU_i = (dV_i - (dV_i . V_i) V_i) / n_i, scaled by 1/M.
            for d in 0..w.len() {
                let du = scale * (dv[d] - radial * v[d]) / norm;
                d_w[d] += du * features[[i, d]];
                d_features[[i, d]] += du * w[d];
            }
        }
        d_heads.push(d_w);
    }
    (d_heads, d_features)
}

/// The clamped elementwise product of prior and similarity with a zero
/// diagonal -- the graph mass before row normalization. The functional
/// view's symmetry contract holds on this matrix.
pub fn fuse_raw(sim: &Array2<f64>, prior: &PriorMatrix) -> Array2<f64> {
    let n = sim.nrows();
    let mut raw = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                raw[[i, j]] = (prior.values()[[i, j]] * sim[[i, j]]).max(0.0);
            }
        }
    }
    raw
}

#[derive(Debug, Clone)]
pub struct FuseCache {
    /// 1 / row mass, or 0 for zero-mass rows.
    inv_denom: Array1<f64>,
    /// 1 where the clamp passed the product through, else 0.
    active: Array2<f64>,
}

/// Fuse similarity with the fixed prior and row-normalize:
/// `A_ij = max(W_ij s_ij, 0) / sum_j max(W_ij s_ij, 0)`, with a zero
/// diagonal. Rows whose mass clamps to nothing stay all-zero, so the
/// division never sees a zero denominator.
pub fn fuse_normalize(
    sim: &Array2<f64>,
    prior: &PriorMatrix,
    view: View,
    iteration: usize,
) -> (ConnectivityMatrix, FuseCache) {
    let n = sim.nrows();
    let mut raw = fuse_raw(sim, prior);
    let mut active = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && prior.values()[[i, j]] * sim[[i, j]] > 0.0 {
                active[[i, j]] = 1.0;
            }
        }
    }
    let mut inv_denom = Array1::<f64>::zeros(n);
    for (i, mut row) in raw.rows_mut().into_iter().enumerate() {
        let mass = row.sum();
        if mass > 0.0 {
            let inv = 1.0 / mass;
            inv_denom[i] = inv;
            row.mapv_inplace(|v| v * inv);
        }
    }
    let conn = ConnectivityMatrix {
        values: raw,
        view,
        iteration,
    };
    debug_assert!(conn.validate().is_ok(), "{:?}", conn.validate());
    (conn, FuseCache { inv_denom, active })
}

/// Backward pass of [`fuse_normalize`]: upstream gradient on the normalized
/// graph becomes a gradient on the similarity matrix. The prior is fixed and
/// receives nothing; the clamp uses subgradient 0 at its boundary.
pub fn fuse_normalize_backward(
    conn: &ConnectivityMatrix,
    cache: &FuseCache,
    prior: &PriorMatrix,
    d_conn: &Array2<f64>,
) -> Array2<f64> {
    let n = conn.values.nrows();
    let mut d_sim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let inv = cache.inv_denom[i];
        let mut dot = 0.0;
        for j in 0..n {
            dot += d_conn[[i, j]] * conn.values[[i, j]];
        }
        for j in 0..n {
            if i == j || cache.active[[i, j]] == 0.0 {
                continue;
            }
            let d_raw = inv * (d_conn[[i, j]] - dot);
            d_sim[[i, j]] = d_raw * prior.values()[[i, j]];
        }
    }
    d_sim
}

#[derive(Debug, Clone)]
pub struct BuildCache {
    pub sim: Array2<f64>,
    pub sim_cache: SimilarityCache,
    pub fuse_cache: FuseCache,
}

/// Full learner step for one round: similarity from features, fusion with
/// the prior, row normalization.
pub fn build_connectivity(
    features: &Array2<f64>,
    params: &LearnerParams,
    prior: &PriorMatrix,
    layer: usize,
) -> (ConnectivityMatrix, BuildCache) {
    let heads = &params.layers[layer];
    let (sim, sim_cache) = multihead_similarity(features, heads);
    let (conn, fuse_cache) = fuse_normalize(&sim, prior, params.view, layer);
    (
        conn,
        BuildCache {
            sim,
            sim_cache,
            fuse_cache,
        },
    )
}

/// Backward pass of [`build_connectivity`]; returns gradients for the
/// round's head weights and for the input features.
pub fn build_connectivity_backward(
    features: &Array2<f64>,
    params: &LearnerParams,
    prior: &PriorMatrix,
    layer: usize,
    conn: &ConnectivityMatrix,
    cache: &BuildCache,
    d_conn: &Array2<f64>,
) -> (Vec<Array1<f64>>, Array2<f64>) {
    let d_sim = fuse_normalize_backward(conn, &cache.fuse_cache, prior, d_conn);
    multihead_similarity_backward(features, &params.layers[layer], &cache.sim_cache, &d_sim)
}

/// Connectivity for the fixed-learner ablation: the prior itself, clamped
/// and row-normalized (a uniform similarity of 1 everywhere).
pub fn fixed_connectivity(prior: &PriorMatrix, view: View, iteration: usize) -> ConnectivityMatrix {
    let n = prior.values().nrows();
    let ones = Array2::<f64>::ones((n, n));
    fuse_normalize(&ones, prior, view, iteration).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::PriorKind;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones_head(dim: usize) -> Vec<Array1<f64>> {
        vec![Array1::ones(dim)]
    }

    #[test]
    fn identical_rows_have_unit_similarity() {
        let f = array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]];
        let (s, _) = multihead_similarity(&f, &ones_head(3));
        assert!((s[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((s[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rows_have_zero_similarity() {
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        let (s, _) = multihead_similarity(&f, &ones_head(2));
        assert!(s[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn heads_average_arithmetically() {
        // Head 1 sees identical weighted rows (cos 1); head 2 zeroes the
        // shared dimension, leaving orthogonal rows (cos 0).
        let f = array![[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let heads = vec![
            array![1.0, 0.0, 0.0],
            array![0.0, 1.0, 1.0],
        ];
        let (s, _) = multihead_similarity(&f, &heads);
        assert!((s[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_head_contributes_zero_not_nan() {
        let f = array![[1.0, 2.0], [3.0, 4.0]];
        let heads = vec![array![0.0, 0.0], array![1.0, 1.0]];
        let (s, _) = multihead_similarity(&f, &heads);
        assert!(s.iter().all(|v| v.is_finite()));
        let (s_one, _) = multihead_similarity(&f, &[array![1.0, 1.0]]);
        assert!((s[[0, 1]] - 0.5 * s_one[[0, 1]]).abs() < 1e-12);
    }

    #[test]
    fn head_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Array2::from_shape_fn((4, 6), |_| rng.random::<f64>() - 0.5);
        let heads: Vec<Array1<f64>> = (0..3)
            .map(|_| Array1::from_shape_fn(6, |_| rng.random::<f64>() + 0.5))
            .collect();
        let mut reversed = heads.clone();
        reversed.reverse();
        let (a, _) = multihead_similarity(&f, &heads);
        let (b, _) = multihead_similarity(&f, &reversed);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_reduces_to_prior_normalization() {
        let sim = Array2::<f64>::ones((4, 4));
        let mut w = Array2::<f64>::zeros((4, 4));
        w[[0, 1]] = 1.0;
        w[[0, 2]] = 1.0;
        w[[0, 3]] = 2.0;
        let prior = PriorMatrix::from_raw(w, PriorKind::Pearson);
        let (conn, _) = fuse_normalize(&sim, &prior, View::Fc, 0);
        let row: Vec<f64> = conn.values.row(0).to_vec();
        assert!((row[0]).abs() < 1e-12);
        assert!((row[1] - 0.25).abs() < 1e-9);
        assert!((row[2] - 0.25).abs() < 1e-9);
        assert!((row[3] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn negative_mass_row_goes_all_zero() {
        let sim = Array2::<f64>::ones((3, 3));
        let mut w = Array2::<f64>::zeros((3, 3));
        w.fill(-1.0);
        let prior = PriorMatrix::from_raw(w, PriorKind::Pearson);
        let (conn, _) = fuse_normalize(&sim, &prior, View::Fc, 0);
        assert!(conn.values.iter().all(|&v| v == 0.0));
        assert_eq!(conn.zero_rows(), 3);
    }

    #[test]
    fn asymmetric_prior_single_support() {
        let sim = Array2::<f64>::ones((2, 2));
        let mut w = Array2::<f64>::zeros((2, 2));
        w[[0, 1]] = 0.8;
        w[[1, 0]] = 0.4;
        let prior = PriorMatrix::from_raw(w, PriorKind::TransferEntropy);
        let (conn, _) = fuse_normalize(&sim, &prior, View::Ec, 0);
        assert!((conn.values[[0, 1]] - 1.0).abs() < 1e-9);
        assert!((conn.values[[1, 0]] - 1.0).abs() < 1e-9);
        assert_eq!(conn.values[[0, 0]], 0.0);
    }

    #[test]
    fn fc_raw_symmetric_ec_raw_asymmetric() {
        let d = crate::signals::synth_generate(1, 6, 64, 1, 0.6, 1.0, 40).unwrap();
        let bold = &d.subjects[0].bold;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = LearnerParams::init(View::Fc, 1, 2, 64, 5, &mut rng);
        let (sim, _) = multihead_similarity(bold.values(), &params.layers[0]);

        let pearson = crate::priors::pearson_matrix(bold);
        let raw_fc = fuse_raw(&sim, &pearson);
        for i in 0..6 {
            for j in 0..6 {
                assert!((raw_fc[[i, j]] - raw_fc[[j, i]]).abs() < 1e-12);
            }
        }

        let te = crate::priors::transfer_entropy_matrix(bold, 4, 1).unwrap();
        let raw_ec = fuse_raw(&sim, &te);
        let asym = (0..6).any(|i| {
            (0..6).any(|j| (raw_ec[[i, j]] - raw_ec[[j, i]]).abs() > 0.0)
        });
        assert!(asym, "effective raw matrix unexpectedly symmetric");
    }

    /// Central finite differences of the full build against the analytic
    /// backward, for every head weight and every feature entry.
    #[test]
    fn build_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 6;
        let t = 20;
        let features = Array2::from_shape_fn((n, t), |_| rng.random::<f64>() - 0.5);
        let mut params = LearnerParams::init(View::Fc, 0, 2, t, 5, &mut rng);
        let prior_values =
            Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { rng.random::<f64>() - 0.3 });
        let prior = PriorMatrix::from_raw(prior_values, PriorKind::Pearson);
        // Scalar objective: weighted sum of graph entries.
        let weights = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);

        let objective = |params: &LearnerParams, features: &Array2<f64>| -> f64 {
            let (conn, _) = build_connectivity(features, params, &prior, 0);
            (&conn.values * &weights).sum()
        };

        let (conn, cache) = build_connectivity(&features, &params, &prior, 0);
        let (d_heads, d_features) =
            build_connectivity_backward(&features, &params, &prior, 0, &conn, &cache, &weights);

        let step = 1e-6;
        for h in 0..2 {
            for d in 0..t {
                let orig = params.layers[0][h][d];
                params.layers[0][h][d] = orig + step;
                let up = objective(&params, &features);
                params.layers[0][h][d] = orig - step;
                let down = objective(&params, &features);
                params.layers[0][h][d] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = d_heads[h][d];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "head {h} dim {d}: {analytic} vs {numeric}"
                );
            }
        }
        let mut features = features;
        for i in 0..n {
            for d in 0..t {
                let orig = features[[i, d]];
                features[[i, d]] = orig + step;
                let up = objective(&params, &features);
                features[[i, d]] = orig - step;
                let down = objective(&params, &features);
                features[[i, d]] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = d_features[[i, d]];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "feature ({i},{d}): {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn fixed_connectivity_is_normalized_prior() {
        let mut w = Array2::<f64>::zeros((3, 3));
        w[[0, 1]] = 0.3;
        w[[0, 2]] = 0.1;
        w[[1, 0]] = -0.5;
        w[[2, 1]] = 2.0;
        let prior = PriorMatrix::from_raw(w, PriorKind::TransferEntropy);
        let conn = fixed_connectivity(&prior, View::Ec, 0);
        assert!((conn.values[[0, 1]] - 0.75).abs() < 1e-9);
        assert!((conn.values[[0, 2]] - 0.25).abs() < 1e-9);
        assert_eq!(conn.values[[1, 0]], 0.0);
        assert!((conn.values[[2, 1]] - 1.0).abs() < 1e-9);
    }
}
