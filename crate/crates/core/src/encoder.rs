//! Multi-state graph encoder: `c` parallel two-layer graph-convolution
//! branches blended by softmax attention over their pooled states, plus the
//! pairwise state-diversity loss and the classification head used at
//! fine-tuning.
//!
//! The propagation operator is row-normalized with self-loops,
//! `A_hat = D^-1 (A + I)`, which is well defined for directed graphs, so the
//! functional and effective views share one code path.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::learner::{ConnectivityMatrix, View};

const ZERO_NORM: f64 = 1e-300;

/// One state branch: two graph-convolution layers. The first layer owns two
/// input-specific weight matrices because round 0 consumes raw series
/// (width T) while later rounds consume hidden representations.
#[derive(Debug, Clone)]
pub struct StateBranch {
    pub u1_bold: Array2<f64>,
    pub u1_hidden: Array2<f64>,
    pub b1: Array1<f64>,
    pub u2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Per-view encoder parameters, shared across rounds.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub view: View,
    pub states: Vec<StateBranch>,
    pub attention: Array1<f64>,
}

/// Which first-layer weight matrix a forward pass selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputStage {
    Bold,
    Hidden,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

impl EncoderParams {
    pub fn init(
        view: View,
        states: usize,
        t_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Small positive biases keep relu units off the kink at start.
        let states = (0..states)
            .map(|_| StateBranch {
                u1_bold: glorot(t_dim, hidden, rng),
                u1_hidden: glorot(hidden, hidden, rng),
                b1: Array1::from_elem(hidden, 0.01),
                u2: glorot(hidden, hidden, rng),
                b2: Array1::from_elem(hidden, 0.01),
            })
            .collect();
        let attention = Array1::from_shape_fn(hidden, |_| {
            let z: f64 = rng.sample(StandardNormal);
            0.1 * z
        });
        EncoderParams {
            view,
            states,
            attention,
        }
    }

    pub fn hidden(&self) -> usize {
        self.attention.len()
    }
}

/// Zero-filled gradient mirror of [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub states: Vec<StateBranch>,
    pub attention: Array1<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        EncoderGrads {
            states: params
                .states
                .iter()
                .map(|s| StateBranch {
                    u1_bold: Array2::zeros(s.u1_bold.raw_dim()),
                    u1_hidden: Array2::zeros(s.u1_hidden.raw_dim()),
                    b1: Array1::zeros(s.b1.len()),
                    u2: Array2::zeros(s.u2.raw_dim()),
                    b2: Array1::zeros(s.b2.len()),
                })
                .collect(),
            attention: Array1::zeros(params.attention.len()),
        }
    }
}

/// Node representations of one round: the attention blend of the state
/// branches, its column mean, and the per-state pooled vectors the
/// diversity loss consumes.
#[derive(Debug, Clone)]
pub struct HiddenRep {
    pub node_matrix: Array2<f64>,
    pub pooled: Array1<f64>,
    pub state_pooled: Vec<Array1<f64>>,
    pub attention_weights: Vec<f64>,
    pub view: View,
    pub iteration: usize,
}

/// Row-normalized propagation operator with self-loops:
/// `A_hat = D^-1 (A + I)`. Rows sum to 1 by construction.
pub fn normalize_adjacency(a: &ConnectivityMatrix) -> Array2<f64> {
    let n = a.values.nrows();
    let mut out = a.values.clone();
    for i in 0..n {
        out[[i, i]] += 1.0;
    }
    for mut row in out.rows_mut() {
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[derive(Debug, Clone)]
struct StateCache {
    p1: Array2<f64>,
    y1: Array2<f64>,
    r1: Array2<f64>,
    p2: Array2<f64>,
    y2: Array2<f64>,
    z: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    a_hat: Array2<f64>,
    /// Row sums of A + I, for the normalization backward.
    row_mass: Array1<f64>,
    states: Vec<StateCache>,
    alpha: Vec<f64>,
    stage: InputStage,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Forward pass: every state branch runs two propagation + affine + relu
/// layers; branches blend by softmax attention over `a . z_s`.
pub fn multi_state_forward(
    a: &ConnectivityMatrix,
    features: &Array2<f64>,
    params: &EncoderParams,
    stage: InputStage,
    iteration: usize,
) -> (HiddenRep, EncoderCache) {
    let n = features.nrows();
    let a_hat_and_mass = {
        let mut with_loops = a.values.clone();
        for i in 0..n {
            with_loops[[i, i]] += 1.0;
        }
        let mass = with_loops.sum_axis(Axis(1));
        for (mut row, &m) in with_loops.rows_mut().into_iter().zip(mass.iter()) {
            row.mapv_inplace(|v| v / m);
        }
        (with_loops, mass)
    };
    let (a_hat, row_mass) = a_hat_and_mass;

    let mut state_caches = Vec::with_capacity(params.states.len());
    let mut state_pooled = Vec::with_capacity(params.states.len());
    let mut scores = Vec::with_capacity(params.states.len());
    for branch in &params.states {
        let u1 = match stage {
            InputStage::Bold => &branch.u1_bold,
            InputStage::Hidden => &branch.u1_hidden,
        };
        assert_eq!(features.ncols(), u1.nrows(), "encoder input width mismatch");
        let p1 = a_hat.dot(features);
        let y1 = p1.dot(u1) + &branch.b1;
        let r1 = relu(&y1);
        let p2 = a_hat.dot(&r1);
        let y2 = p2.dot(&branch.u2) + &branch.b2;
        let z = relu(&y2);
        let pooled = z.mean_axis(Axis(0)).expect("nonempty");
        scores.push(params.attention.dot(&pooled));
        state_pooled.push(pooled);
        state_caches.push(StateCache {
            p1,
            y1,
            r1,
            p2,
            y2,
            z,
        });
    }

    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|&e| e / total).collect();

    let mut node_matrix = Array2::<f64>::zeros((n, params.hidden()));
    for (w, cache) in alpha.iter().zip(&state_caches) {
        node_matrix.scaled_add(*w, &cache.z);
    }
    let pooled = node_matrix.mean_axis(Axis(0)).expect("nonempty");

    (
        HiddenRep {
            node_matrix,
            pooled,
            state_pooled,
            attention_weights: alpha.clone(),
            view: params.view,
            iteration,
        },
        EncoderCache {
            a_hat,
            row_mass,
            states: state_caches,
            alpha,
            stage,
        },
    )
}

/// Backward pass of [`multi_state_forward`].
///
/// Upstream gradients may arrive on the blended node matrix, on its pooled
/// mean, and on the per-state pooled vectors; parameter gradients accumulate
/// into `grads`, and the returned pair is (d connectivity, d input features).
pub fn multi_state_backward(
    a: &ConnectivityMatrix,
    features: &Array2<f64>,
    params: &EncoderParams,
    rep: &HiddenRep,
    cache: &EncoderCache,
    d_node: &Array2<f64>,
    d_pooled: &Array1<f64>,
    d_state_pooled: &[Array1<f64>],
    grads: &mut EncoderGrads,
) -> (Array2<f64>, Array2<f64>) {
    let n = features.nrows();
    let n_f = n as f64;
    let c = params.states.len();

    // pooled = column mean of the blended node matrix.
    let mut g_node = d_node.clone();
    for mut row in g_node.rows_mut() {
        row.scaled_add(1.0 / n_f, d_pooled);
    }

    // Blend: node = sum_s alpha_s Z_s.
    let d_alpha: Vec<f64> = cache
        .states
        .iter()
        .map(|s| (&g_node * &s.z).sum())
        .collect();
    // Softmax jacobian.
    let weighted: f64 = cache
        .alpha
        .iter()
        .zip(&d_alpha)
        .map(|(&a, &d)| a * d)
        .sum();
    let d_scores: Vec<f64> = cache
        .alpha
        .iter()
        .zip(&d_alpha)
        .map(|(&a, &d)| a * (d - weighted))
        .collect();

    let mut d_a_hat = Array2::<f64>::zeros((n, n));
    let mut d_features = Array2::<f64>::zeros(features.raw_dim());

    for s in 0..c {
        let branch = &params.states[s];
        let state = &cache.states[s];
        // z_s feeds the attention score and any direct pooled-state term.
        let mut d_zs = d_state_pooled
            .get(s)
            .cloned()
            .unwrap_or_else(|| Array1::zeros(params.hidden()));
        d_zs.scaled_add(d_scores[s], &params.attention);
        grads.attention.scaled_add(d_scores[s], &rep.state_pooled[s]);

        // dZ_s = alpha_s * g_node + broadcast(d_zs) / N.
        let mut d_z = Array2::<f64>::zeros(state.z.raw_dim());
        d_z.scaled_add(cache.alpha[s], &g_node);
        for mut row in d_z.rows_mut() {
            row.scaled_add(1.0 / n_f, &d_zs);
        }

        // Z = relu(Y2)
        let mut d_y2 = d_z;
        d_y2.zip_mut_with(&state.y2, |g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        // Y2 = P2 U2 + b2
        grads.states[s].u2 += &state.p2.t().dot(&d_y2);
        grads.states[s].b2 += &d_y2.sum_axis(Axis(0));
        let d_p2 = d_y2.dot(&branch.u2.t());
        // P2 = A_hat R1
        d_a_hat += &d_p2.dot(&state.r1.t());
        let d_r1 = cache.a_hat.t().dot(&d_p2);
        // R1 = relu(Y1)
        let mut d_y1 = d_r1;
        d_y1.zip_mut_with(&state.y1, |g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        // Y1 = P1 U1 + b1
        let u1 = match cache.stage {
            InputStage::Bold => &branch.u1_bold,
            InputStage::Hidden => &branch.u1_hidden,
        };
        let g_u1 = state.p1.t().dot(&d_y1);
        match cache.stage {
            InputStage::Bold => grads.states[s].u1_bold += &g_u1,
            InputStage::Hidden => grads.states[s].u1_hidden += &g_u1,
        }
        grads.states[s].b1 += &d_y1.sum_axis(Axis(0));
        let d_p1 = d_y1.dot(&u1.t());
        // P1 = A_hat X
        d_a_hat += &d_p1.dot(&features.t());
        d_features += &cache.a_hat.t().dot(&d_p1);
    }

    // A_hat = D^-1 (A + I): per row, dA_ik = (g_ik - sum_j g_ij A_hat_ij) / mass_i.
    let mut d_a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mass = cache.row_mass[i];
        let mut dot = 0.0;
        for j in 0..n {
            dot += d_a_hat[[i, j]] * cache.a_hat[[i, j]];
        }
        for k in 0..n {
            if i == k {
                continue; // the diagonal of A is pinned at zero upstream
            }
            d_a[[i, k]] = (d_a_hat[[i, k]] - dot) / mass;
        }
    }
    let _ = a;
    (d_a, d_features)
}

/// Pairwise squared-cosine diversity of the per-state pooled vectors:
/// `(2 / c(c-1)) sum_{s<s'} cos^2(z_s, z_s')`, zero when `c == 1` and for
/// pairs touching a zero-norm state.
pub fn encoder_loss(state_pooled: &[Array1<f64>]) -> f64 {
    let c = state_pooled.len();
    if c < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for s in 0..c {
        for t in (s + 1)..c {
            total += pair_cos(&state_pooled[s], &state_pooled[t]).powi(2);
        }
    }
    total * 2.0 / (c * (c - 1)) as f64
}

/// Gradient of [`encoder_loss`] scaled by `upstream`.
pub fn encoder_loss_backward(state_pooled: &[Array1<f64>], upstream: f64) -> Vec<Array1<f64>> {
    let c = state_pooled.len();
    let mut grads: Vec<Array1<f64>> = state_pooled
        .iter()
        .map(|z| Array1::zeros(z.len()))
        .collect();
    if c < 2 {
        return grads;
    }
    let scale = upstream * 2.0 / (c * (c - 1)) as f64;
    for s in 0..c {
        for t in (s + 1)..c {
            let (a, b) = (&state_pooled[s], &state_pooled[t]);
            let na = a.dot(a).sqrt();
            let nb = b.dot(b).sqrt();
            if na <= ZERO_NORM || nb <= ZERO_NORM {
                continue;
            }
            let cos = a.dot(b) / (na * nb);
            // d cos^2 / da = 2 cos (b/(na nb) - cos a / na^2)
            for d in 0..a.len() {
                grads[s][d] += scale * 2.0 * cos * (b[d] / (na * nb) - cos * a[d] / (na * na));
                grads[t][d] += scale * 2.0 * cos * (a[d] / (na * nb) - cos * b[d] / (nb * nb));
            }
        }
    }
    grads
}

fn pair_cos(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Two affine layers with a relu between, mapping the concatenated view
/// embeddings to class logits.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ClassifierParams {
    pub fn init(hidden: usize, inner: usize, rng: &mut impl Rng) -> Self {
        ClassifierParams {
            w1: glorot(2 * hidden, inner, rng),
            b1: Array1::from_elem(inner, 0.01),
            w2: glorot(inner, 2, rng),
            b2: Array1::zeros(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    input: Array1<f64>,
    y1: Array1<f64>,
    r1: Array1<f64>,
}

pub fn classify_head(
    fc_pooled: &Array1<f64>,
    ec_pooled: &Array1<f64>,
    params: &ClassifierParams,
) -> ([f64; 2], ClassifierCache) {
    let mut input = Array1::<f64>::zeros(fc_pooled.len() + ec_pooled.len());
    input.slice_mut(ndarray::s![..fc_pooled.len()]).assign(fc_pooled);
    input.slice_mut(ndarray::s![fc_pooled.len()..]).assign(ec_pooled);
    let y1 = input.dot(&params.w1) + &params.b1;
    let r1 = y1.mapv(|v| v.max(0.0));
    let out = r1.dot(&params.w2) + &params.b2;
    (
        [out[0], out[1]],
        ClassifierCache { input, y1, r1 },
    )
}

#[derive(Debug, Clone)]
pub struct ClassifierGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ClassifierGrads {
    pub fn zeros_like(params: &ClassifierParams) -> Self {
        ClassifierGrads {
            w1: Array2::zeros(params.w1.raw_dim()),
            b1: Array1::zeros(params.b1.len()),
            w2: Array2::zeros(params.w2.raw_dim()),
            b2: Array1::zeros(params.b2.len()),
        }
    }
}

/// Backward pass of [`classify_head`]; returns gradients for the two pooled
/// inputs, accumulating parameter gradients.
pub fn classify_head_backward(
    params: &ClassifierParams,
    cache: &ClassifierCache,
    d_logits: [f64; 2],
    grads: &mut ClassifierGrads,
) -> (Array1<f64>, Array1<f64>) {
    let d_out = Array1::from(vec![d_logits[0], d_logits[1]]);
    for i in 0..params.w2.nrows() {
        for j in 0..2 {
            grads.w2[[i, j]] += cache.r1[i] * d_out[j];
        }
    }
    grads.b2 += &d_out;
    let mut d_r1 = params.w2.dot(&d_out);
    for (g, &y) in d_r1.iter_mut().zip(cache.y1.iter()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    for i in 0..params.w1.nrows() {
        for j in 0..params.w1.ncols() {
            grads.w1[[i, j]] += cache.input[i] * d_r1[j];
        }
    }
    grads.b1 += &d_r1;
    let d_input = params.w1.dot(&d_r1);
    let h = cache.input.len() / 2;
    (
        d_input.slice(ndarray::s![..h]).to_owned(),
        d_input.slice(ndarray::s![h..]).to_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conn(values: Array2<f64>) -> ConnectivityMatrix {
        ConnectivityMatrix {
            values,
            view: View::Fc,
            iteration: 0,
        }
    }

    #[test]
    fn normalize_empty_graph_is_identity() {
        let a = conn(Array2::zeros((3, 3)));
        let a_hat = normalize_adjacency(&a);
        assert_eq!(a_hat, Array2::<f64>::eye(3));
    }

    #[test]
    fn normalize_hand_value() {
        let a = conn(array![[0.0, 1.0], [1.0, 0.0]]);
        let a_hat = normalize_adjacency(&a);
        for v in a_hat.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rows_sum_to_one() {
        let d = crate::signals::synth_generate(1, 5, 32, 1, 0.5, 1.0, 8).unwrap();
        let prior = crate::priors::pearson_matrix(&d.subjects[0].bold);
        let a = crate::learner::fixed_connectivity(&prior, View::Fc, 0);
        let a_hat = normalize_adjacency(&a);
        for row in a_hat.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    fn tiny_params(states: usize, t_dim: usize, hidden: usize, seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::init(View::Fc, states, t_dim, hidden, &mut rng)
    }

    #[test]
    fn single_state_attention_is_one() {
        let params = tiny_params(1, 8, 4, 1);
        let features = Array2::from_shape_fn((3, 8), |(i, j)| (i + j) as f64 * 0.1);
        let a = conn(Array2::zeros((3, 3)));
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);
        assert_eq!(rep.attention_weights, vec![1.0]);
    }

    #[test]
    fn identical_states_split_attention_evenly() {
        let mut params = tiny_params(2, 8, 4, 2);
        params.states[1] = params.states[0].clone();
        let features = Array2::from_shape_fn((3, 8), |(i, j)| ((i * 7 + j) % 5) as f64 * 0.3);
        let a = conn(Array2::zeros((3, 3)));
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);
        assert!((rep.attention_weights[0] - 0.5).abs() < 1e-12);
        assert!((rep.attention_weights[1] - 0.5).abs() < 1e-12);
        // The blend equals either branch.
        let single = {
            let mut p = params.clone();
            p.states.truncate(1);
            multi_state_forward(&a, &features, &p, InputStage::Bold, 0).0
        };
        for (x, y) in rep.node_matrix.iter().zip(single.node_matrix.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_propagation_is_relu() {
        // Empty graph (A_hat = I), identity weights, zero bias.
        let mut params = tiny_params(1, 4, 4, 3);
        params.states[0].u1_bold = Array2::eye(4);
        params.states[0].u2 = Array2::eye(4);
        params.states[0].b1.fill(0.0);
        params.states[0].b2.fill(0.0);
        let features = array![
            [0.5, -0.3, 0.2, -0.1],
            [-1.0, 2.0, -3.0, 4.0],
            [0.0, 0.1, -0.2, 0.3]
        ];
        let a = conn(Array2::zeros((3, 3)));
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);
        for (out, inp) in rep.node_matrix.iter().zip(features.iter()) {
            assert!((out - inp.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_form_distribution() {
        let params = tiny_params(3, 8, 4, 4);
        let features = Array2::from_shape_fn((4, 8), |(i, j)| ((i + 2 * j) % 7) as f64 * 0.2 - 0.4);
        let a = conn(Array2::zeros((4, 4)));
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);
        let sum: f64 = rep.attention_weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for &w in &rep.attention_weights {
            assert!(w > 0.0 && w < 1.0);
        }
    }

    #[test]
    fn pooled_is_column_mean() {
        let params = tiny_params(2, 8, 4, 5);
        let features = Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - j as f64) * 0.17);
        let a = conn(Array2::zeros((5, 5)));
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);
        let mean = rep.node_matrix.mean_axis(Axis(0)).unwrap();
        for (p, m) in rep.pooled.iter().zip(mean.iter()) {
            assert!((p - m).abs() < 1e-12);
        }
    }

    /// A plain two-layer graph convolution, coded independently of the
    /// multi-state path, as the c = 1 collapse oracle.
    fn plain_gcn(
        a_hat: &Array2<f64>,
        x: &Array2<f64>,
        u1: &Array2<f64>,
        b1: &Array1<f64>,
        u2: &Array2<f64>,
        b2: &Array1<f64>,
    ) -> Array2<f64> {
        let h1 = (a_hat.dot(x).dot(u1) + b1).mapv(|v| v.max(0.0));
        (a_hat.dot(&h1).dot(u2) + b2).mapv(|v| v.max(0.0))
    }

    #[test]
    fn single_state_collapses_to_plain_gcn() {
        let params = tiny_params(1, 6, 4, 6);
        let features = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 3 + j) % 4) as f64 * 0.25 - 0.3);
        let mut values = Array2::zeros((4, 4));
        values[[0, 1]] = 0.7;
        values[[0, 2]] = 0.3;
        values[[2, 3]] = 1.0;
        let a = conn(values);
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);
        let expected = plain_gcn(
            &normalize_adjacency(&a),
            &features,
            &params.states[0].u1_bold,
            &params.states[0].b1,
            &params.states[0].u2,
            &params.states[0].b2,
        );
        for (x, y) in rep.node_matrix.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn node_permutation_equivariance() {
        let params = tiny_params(2, 6, 5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let features = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>() - 0.5);
        let mut values = Array2::from_shape_fn((5, 5), |(i, j)| {
            if i == j { 0.0 } else { rng.random::<f64>() * 0.2 }
        });
        for mut row in values.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let a = conn(values.clone());
        let (rep, _) = multi_state_forward(&a, &features, &params, InputStage::Bold, 0);

        let perm = [4usize, 2, 0, 3, 1];
        let mut p_features = Array2::zeros((5, 6));
        let mut p_values = Array2::zeros((5, 5));
        for (ni, &oi) in perm.iter().enumerate() {
            p_features.row_mut(ni).assign(&features.row(oi));
            for (nj, &oj) in perm.iter().enumerate() {
                p_values[[ni, nj]] = values[[oi, oj]];
            }
        }
        let (p_rep, _) =
            multi_state_forward(&conn(p_values), &p_features, &params, InputStage::Bold, 0);
        for (ni, &oi) in perm.iter().enumerate() {
            for d in 0..5 {
                assert!((p_rep.node_matrix[[ni, d]] - rep.node_matrix[[oi, d]]).abs() < 1e-9);
            }
        }
        for (x, y) in p_rep.pooled.iter().zip(rep.pooled.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_loss_closed_forms() {
        assert_eq!(encoder_loss(&[array![1.0, 2.0]]), 0.0);
        let same = vec![array![1.0, 1.0], array![2.0, 2.0]];
        assert!((encoder_loss(&same) - 1.0).abs() < 1e-12);
        let ortho = vec![array![1.0, 0.0], array![0.0, 3.0]];
        assert!(encoder_loss(&ortho).abs() < 1e-12);
        let zero = vec![array![0.0, 0.0], array![1.0, 1.0]];
        assert_eq!(encoder_loss(&zero), 0.0);
    }

    #[test]
    fn encoder_loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let states: Vec<Array1<f64>> = (0..3)
            .map(|_| Array1::from_shape_fn(4, |_| rng.random::<f64>() - 0.3))
            .collect();
        let grads = encoder_loss_backward(&states, 1.0);
        let step = 1e-6;
        for s in 0..3 {
            for d in 0..4 {
                let mut up = states.clone();
                up[s][d] += step;
                let mut down = states.clone();
                down[s][d] -= step;
                let numeric = (encoder_loss(&up) - encoder_loss(&down)) / (2.0 * step);
                assert!(
                    (grads[s][d] - numeric).abs() < 1e-6,
                    "state {s} dim {d}: {} vs {numeric}",
                    grads[s][d]
                );
            }
        }
    }

    #[test]
    fn classifier_zero_params_zero_logits() {
        let params = ClassifierParams {
            w1: Array2::zeros((8, 3)),
            b1: Array1::zeros(3),
            w2: Array2::zeros((3, 2)),
            b2: Array1::zeros(2),
        };
        let (logits, _) = classify_head(&Array1::ones(4), &Array1::ones(4), &params);
        assert_eq!(logits, [0.0, 0.0]);
    }

    #[test]
    fn classifier_matches_naive_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let params = ClassifierParams::init(4, 3, &mut rng);
        let fc = Array1::from_shape_fn(4, |_| rng.random::<f64>() - 0.5);
        let ec = Array1::from_shape_fn(4, |_| rng.random::<f64>() - 0.5);
        let (logits, _) = classify_head(&fc, &ec, &params);

        // Straightforward loops, independent of the ndarray path.
        let mut input: Vec<f64> = Vec::new();
        input.extend(fc.iter().copied());
        input.extend(ec.iter().copied());
        let mut hidden = vec![0.0f64; 3];
        for j in 0..3 {
            let mut acc = params.b1[j];
            for (i, &v) in input.iter().enumerate() {
                acc += v * params.w1[[i, j]];
            }
            hidden[j] = acc.max(0.0);
        }
        let mut expected = [params.b2[0], params.b2[1]];
        for j in 0..2 {
            for (i, &h) in hidden.iter().enumerate() {
                expected[j] += h * params.w2[[i, j]];
            }
        }
        assert!((logits[0] - expected[0]).abs() < 1e-12);
        assert!((logits[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_equal_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut params = ClassifierParams::init(4, 3, &mut rng);
        // Make the two output columns identical.
        for i in 0..3 {
            params.w2[[i, 1]] = params.w2[[i, 0]];
        }
        params.b2[1] = params.b2[0];
        let fc = Array1::from_shape_fn(4, |_| rng.random::<f64>());
        let ec = Array1::from_shape_fn(4, |_| rng.random::<f64>());
        let (logits, _) = classify_head(&fc, &ec, &params);
        assert!((logits[0] - logits[1]).abs() < 1e-12);
    }
}
