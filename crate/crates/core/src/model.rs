//! The composed pipeline: per-view unrolled rounds of graph construction and
//! encoding, batch objectives for both training stages, and the reverse pass
//! that carries gradients through every round back to the learner and
//! encoder parameters. Priors receive no gradient.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::config::TrainConfig;
use crate::encoder::{
    classify_head, classify_head_backward, encoder_loss, encoder_loss_backward,
    multi_state_forward, multi_state_backward, ClassifierGrads, ClassifierParams, EncoderCache,
    EncoderGrads, EncoderParams, HiddenRep, InputStage,
};
use crate::error::{Error, Result};
use crate::learner::{
    build_connectivity, build_connectivity_backward, fixed_connectivity, BuildCache,
    ConnectivityMatrix, LearnerParams, View,
};
use crate::losses::{
    cross_entropy, cross_entropy_backward, graph_loss, graph_loss_backward, nt_xent,
    nt_xent_backward, total_finetune, total_pretrain, LossCoefficients, LossReport,
};
use crate::priors::{pearson_matrix, transfer_entropy_matrix, PriorMatrix};
use crate::signals::SubjectRecord;

/// Which parameter groups a training stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Learner and encoder train; the classifier is untouched.
    Pretrain,
    /// Encoder and classifier train; the learner is frozen.
    Finetune,
}

impl TrainMode {
    pub fn trains(self, name: &str) -> bool {
        match self {
            TrainMode::Pretrain => {
                name.starts_with("learner.") || name.starts_with("encoder.")
            }
            TrainMode::Finetune => {
                name.starts_with("encoder.") || name.starts_with("classifier.")
            }
        }
    }
}

/// A named view into one parameter (or gradient) tensor.
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct NamedTensorMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

/// Every trainable tensor of the framework.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub learner_fc: LearnerParams,
    pub learner_ec: LearnerParams,
    pub encoder_fc: EncoderParams,
    pub encoder_ec: EncoderParams,
    pub classifier: ClassifierParams,
    /// Time-series width the round-0 weights were built for.
    pub t_dim: usize,
}

impl ModelParams {
    /// Seeded initialization. Draw order is fixed: functional learner,
    /// effective learner, functional encoder, effective encoder, classifier.
    pub fn init(config: &TrainConfig, t_dim: usize, rng: &mut impl Rng) -> Self {
        ModelParams {
            learner_fc: LearnerParams::init(
                View::Fc,
                config.iterations,
                config.heads,
                t_dim,
                config.hidden,
                rng,
            ),
            learner_ec: LearnerParams::init(
                View::Ec,
                config.iterations,
                config.heads,
                t_dim,
                config.hidden,
                rng,
            ),
            encoder_fc: EncoderParams::init(View::Fc, config.states, t_dim, config.hidden, rng),
            encoder_ec: EncoderParams::init(View::Ec, config.states, t_dim, config.hidden, rng),
            classifier: ClassifierParams::init(config.hidden, config.classifier_hidden, rng),
            t_dim,
        }
    }

    /// All tensors in canonical order (the checkpoint order).
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for (tag, learner) in [("fc", &self.learner_fc), ("ec", &self.learner_ec)] {
            for (l, heads) in learner.layers.iter().enumerate() {
                for (h, w) in heads.iter().enumerate() {
                    out.push(NamedTensor {
                        name: format!("learner.{tag}.l{l}.h{h}"),
                        shape: vec![w.len()],
                        data: w.as_slice().expect("contiguous"),
                    });
                }
            }
        }
        for (tag, enc) in [("fc", &self.encoder_fc), ("ec", &self.encoder_ec)] {
            for (s, branch) in enc.states.iter().enumerate() {
                for (part, a2) in [
                    ("u1_bold", &branch.u1_bold),
                    ("u1_hidden", &branch.u1_hidden),
                    ("u2", &branch.u2),
                ] {
                    out.push(NamedTensor {
                        name: format!("encoder.{tag}.s{s}.{part}"),
                        shape: vec![a2.nrows(), a2.ncols()],
                        data: a2.as_slice().expect("contiguous"),
                    });
                }
                for (part, a1) in [("b1", &branch.b1), ("b2", &branch.b2)] {
                    out.push(NamedTensor {
                        name: format!("encoder.{tag}.s{s}.{part}"),
                        shape: vec![a1.len()],
                        data: a1.as_slice().expect("contiguous"),
                    });
                }
            }
            out.push(NamedTensor {
                name: format!("encoder.{tag}.attention"),
                shape: vec![enc.attention.len()],
                data: enc.attention.as_slice().expect("contiguous"),
            });
        }
        out.push(NamedTensor {
            name: "classifier.w1".into(),
            shape: vec![self.classifier.w1.nrows(), self.classifier.w1.ncols()],
            data: self.classifier.w1.as_slice().expect("contiguous"),
        });
        out.push(NamedTensor {
            name: "classifier.b1".into(),
            shape: vec![self.classifier.b1.len()],
            data: self.classifier.b1.as_slice().expect("contiguous"),
        });
        out.push(NamedTensor {
            name: "classifier.w2".into(),
            shape: vec![self.classifier.w2.nrows(), self.classifier.w2.ncols()],
            data: self.classifier.w2.as_slice().expect("contiguous"),
        });
        out.push(NamedTensor {
            name: "classifier.b2".into(),
            shape: vec![self.classifier.b2.len()],
            data: self.classifier.b2.as_slice().expect("contiguous"),
        });
        out
    }

    /// Mutable views in the same canonical order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        let mut out = Vec::new();
        for (tag, learner) in [("fc", &mut self.learner_fc), ("ec", &mut self.learner_ec)] {
            for (l, heads) in learner.layers.iter_mut().enumerate() {
                for (h, w) in heads.iter_mut().enumerate() {
                    out.push(NamedTensorMut {
                        name: format!("learner.{tag}.l{l}.h{h}"),
                        data: w.as_slice_mut().expect("contiguous"),
                    });
                }
            }
        }
        for (tag, enc) in [("fc", &mut self.encoder_fc), ("ec", &mut self.encoder_ec)] {
            for (s, branch) in enc.states.iter_mut().enumerate() {
                out.push(NamedTensorMut {
                    name: format!("encoder.{tag}.s{s}.u1_bold"),
                    data: branch.u1_bold.as_slice_mut().expect("contiguous"),
                });
                out.push(NamedTensorMut {
                    name: format!("encoder.{tag}.s{s}.u1_hidden"),
                    data: branch.u1_hidden.as_slice_mut().expect("contiguous"),
                });
                out.push(NamedTensorMut {
                    name: format!("encoder.{tag}.s{s}.u2"),
                    data: branch.u2.as_slice_mut().expect("contiguous"),
                });
                out.push(NamedTensorMut {
                    name: format!("encoder.{tag}.s{s}.b1"),
                    data: branch.b1.as_slice_mut().expect("contiguous"),
                });
                out.push(NamedTensorMut {
                    name: format!("encoder.{tag}.s{s}.b2"),
                    data: branch.b2.as_slice_mut().expect("contiguous"),
                });
            }
            out.push(NamedTensorMut {
                name: format!("encoder.{tag}.attention"),
                data: enc.attention.as_slice_mut().expect("contiguous"),
            });
        }
        out.push(NamedTensorMut {
            name: "classifier.w1".into(),
            data: self.classifier.w1.as_slice_mut().expect("contiguous"),
        });
        out.push(NamedTensorMut {
            name: "classifier.b1".into(),
            data: self.classifier.b1.as_slice_mut().expect("contiguous"),
        });
        out.push(NamedTensorMut {
            name: "classifier.w2".into(),
            data: self.classifier.w2.as_slice_mut().expect("contiguous"),
        });
        out.push(NamedTensorMut {
            name: "classifier.b2".into(),
            data: self.classifier.b2.as_slice_mut().expect("contiguous"),
        });
        out
    }

    pub fn rounds(&self) -> usize {
        self.learner_fc.layers.len()
    }
}

/// Zero-initialized gradient mirror of [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub learner_fc: Vec<Vec<Array1<f64>>>,
    pub learner_ec: Vec<Vec<Array1<f64>>>,
    pub encoder_fc: EncoderGrads,
    pub encoder_ec: EncoderGrads,
    pub classifier: ClassifierGrads,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zero_learner = |l: &LearnerParams| {
            l.layers
                .iter()
                .map(|heads| heads.iter().map(|w| Array1::zeros(w.len())).collect())
                .collect()
        };
        ModelGrads {
            learner_fc: zero_learner(&params.learner_fc),
            learner_ec: zero_learner(&params.learner_ec),
            encoder_fc: EncoderGrads::zeros_like(&params.encoder_fc),
            encoder_ec: EncoderGrads::zeros_like(&params.encoder_ec),
            classifier: ClassifierGrads::zeros_like(&params.classifier),
        }
    }

    /// Gradient tensors in the same canonical order as the parameters.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (tag, learner) in [("fc", &self.learner_fc), ("ec", &self.learner_ec)] {
            for (l, heads) in learner.iter().enumerate() {
                for (h, w) in heads.iter().enumerate() {
                    out.push((
                        format!("learner.{tag}.l{l}.h{h}"),
                        w.as_slice().expect("contiguous"),
                    ));
                }
            }
        }
        for (tag, enc) in [("fc", &self.encoder_fc), ("ec", &self.encoder_ec)] {
            for (s, branch) in enc.states.iter().enumerate() {
                out.push((
                    format!("encoder.{tag}.s{s}.u1_bold"),
                    branch.u1_bold.as_slice().expect("contiguous"),
                ));
                out.push((
                    format!("encoder.{tag}.s{s}.u1_hidden"),
                    branch.u1_hidden.as_slice().expect("contiguous"),
                ));
                out.push((
                    format!("encoder.{tag}.s{s}.u2"),
                    branch.u2.as_slice().expect("contiguous"),
                ));
                out.push((
                    format!("encoder.{tag}.s{s}.b1"),
                    branch.b1.as_slice().expect("contiguous"),
                ));
                out.push((
                    format!("encoder.{tag}.s{s}.b2"),
                    branch.b2.as_slice().expect("contiguous"),
                ));
            }
            out.push((
                format!("encoder.{tag}.attention"),
                enc.attention.as_slice().expect("contiguous"),
            ));
        }
        out.push(("classifier.w1".into(), self.classifier.w1.as_slice().expect("contiguous")));
        out.push(("classifier.b1".into(), self.classifier.b1.as_slice().expect("contiguous")));
        out.push(("classifier.w2".into(), self.classifier.w2.as_slice().expect("contiguous")));
        out.push(("classifier.b2".into(), self.classifier.b2.as_slice().expect("contiguous")));
        out
    }

    /// Name of the first non-finite gradient entry, if any.
    pub fn find_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, data)| data.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

/// Model-ready subject: input features plus both fixed priors.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject_id: String,
    pub features: Array2<f64>,
    pub pearson: PriorMatrix,
    pub te: PriorMatrix,
    pub label: Option<u8>,
}

/// Standardize (when configured) and compute both priors. The priors come
/// from the raw series; both are invariant to per-row standardization.
pub fn prepare_subject(record: &SubjectRecord, config: &TrainConfig) -> Result<SubjectData> {
    let features = if config.zscore {
        record.bold.zscore_rows().0.values().clone()
    } else {
        record.bold.values().clone()
    };
    Ok(SubjectData {
        subject_id: record.subject_id.clone(),
        features,
        pearson: pearson_matrix(&record.bold),
        te: transfer_entropy_matrix(&record.bold, config.te_bins, config.te_lag)?,
        label: record.label,
    })
}

/// One round's artifacts for one view.
pub struct LayerForward {
    pub conn: ConnectivityMatrix,
    pub build: Option<BuildCache>,
    pub rep: HiddenRep,
    pub enc_cache: EncoderCache,
}

pub struct ViewForward {
    pub layers: Vec<LayerForward>,
}

impl ViewForward {
    pub fn final_layer(&self) -> &LayerForward {
        self.layers.last().expect("at least one round")
    }
}

pub struct SubjectForward {
    pub fc: ViewForward,
    pub ec: ViewForward,
}

fn view_prior<'a>(subject: &'a SubjectData, view: View) -> &'a PriorMatrix {
    match view {
        View::Fc => &subject.pearson,
        View::Ec => &subject.te,
    }
}

fn forward_view(
    features: &Array2<f64>,
    prior: &PriorMatrix,
    learner: &LearnerParams,
    encoder: &EncoderParams,
    fixed_learner: bool,
) -> ViewForward {
    let rounds = learner.layers.len();
    let fixed = fixed_learner.then(|| fixed_connectivity(prior, learner.view, 0));
    let mut layers: Vec<LayerForward> = Vec::with_capacity(rounds);
    let mut input = features.clone();
    let mut stage = InputStage::Bold;
    for l in 0..rounds {
        let (conn, build) = match &fixed {
            Some(base) => {
                let mut conn = base.clone();
                conn.iteration = l;
                (conn, None)
            }
            None => {
                let (conn, build) = build_connectivity(&input, learner, prior, l);
                (conn, Some(build))
            }
        };
        let (rep, enc_cache) = multi_state_forward(&conn, &input, encoder, stage, l);
        input = rep.node_matrix.clone();
        stage = InputStage::Hidden;
        layers.push(LayerForward {
            conn,
            build,
            rep,
            enc_cache,
        });
    }
    ViewForward { layers }
}

/// Run both views through all rounds.
pub fn forward_subject(
    params: &ModelParams,
    subject: &SubjectData,
    config: &TrainConfig,
) -> SubjectForward {
    SubjectForward {
        fc: forward_view(
            &subject.features,
            &subject.pearson,
            &params.learner_fc,
            &params.encoder_fc,
            config.fixed_learner,
        ),
        ec: forward_view(
            &subject.features,
            &subject.te,
            &params.learner_ec,
            &params.encoder_ec,
            config.fixed_learner,
        ),
    }
}

/// Upstream gradients entering one view at its final round.
pub struct ViewUpstream {
    pub d_pooled: Array1<f64>,
    pub d_node: Array2<f64>,
    pub d_conn: Array2<f64>,
    pub d_state_pooled: Vec<Array1<f64>>,
}

impl ViewUpstream {
    pub fn zeros(n: usize, hidden: usize) -> Self {
        ViewUpstream {
            d_pooled: Array1::zeros(hidden),
            d_node: Array2::zeros((n, hidden)),
            d_conn: Array2::zeros((n, n)),
            d_state_pooled: Vec::new(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_view(
    features: &Array2<f64>,
    prior: &PriorMatrix,
    learner: &LearnerParams,
    encoder: &EncoderParams,
    fwd: &ViewForward,
    upstream: ViewUpstream,
    mut learner_grads: Option<&mut Vec<Vec<Array1<f64>>>>,
    encoder_grads: &mut EncoderGrads,
) {
    let rounds = fwd.layers.len();
    let n = features.nrows();
    let mut d_node = upstream.d_node;
    let mut d_pooled = upstream.d_pooled;
    let mut d_state_pooled = upstream.d_state_pooled;
    let mut d_conn_direct = upstream.d_conn;

    for l in (0..rounds).rev() {
        let layer = &fwd.layers[l];
        let input: &Array2<f64> = if l == 0 {
            features
        } else {
            &fwd.layers[l - 1].rep.node_matrix
        };
        let (d_a_enc, d_input_enc) = multi_state_backward(
            &layer.conn,
            input,
            encoder,
            &layer.rep,
            &layer.enc_cache,
            &d_node,
            &d_pooled,
            &d_state_pooled,
            encoder_grads,
        );
        let d_a_total = &d_a_enc + &d_conn_direct;
        let d_input_sim = match &layer.build {
            Some(build) => {
                let (d_heads, d_feat) = build_connectivity_backward(
                    input,
                    learner,
                    prior,
                    l,
                    &layer.conn,
                    build,
                    &d_a_total,
                );
                if let Some(grads) = learner_grads.as_deref_mut() {
                    for (g, d) in grads[l].iter_mut().zip(d_heads) {
                        *g += &d;
                    }
                }
                d_feat
            }
            // Fixed-learner ablation: the graph is constant, nothing flows.
            None => Array2::zeros(input.raw_dim()),
        };
        d_node = &d_input_enc + &d_input_sim;
        d_pooled = Array1::zeros(d_pooled.len());
        d_state_pooled = Vec::new();
        d_conn_direct = Array2::zeros((n, n));
    }
}

/// Batch artifacts of one pretraining forward.
pub struct PretrainForward {
    pub forwards: Vec<SubjectForward>,
    pub report: LossReport,
    nt_cache: crate::losses::NtXentCache,
}

pub fn coefficients(config: &TrainConfig) -> LossCoefficients {
    LossCoefficients {
        alpha: config.alpha,
        beta: config.beta,
        gamma: config.gamma,
        tau: config.tau,
    }
}

/// Forward the batch through both views and evaluate the pretraining
/// objective: contrastive + alpha * graph terms + beta * diversity terms,
/// graph and diversity terms averaged over the batch and evaluated at the
/// final round.
pub fn pretrain_forward(
    params: &ModelParams,
    batch: &[&SubjectData],
    config: &TrainConfig,
) -> PretrainForward {
    assert!(!batch.is_empty(), "empty batch");
    let forwards: Vec<SubjectForward> = batch
        .iter()
        .map(|s| forward_subject(params, s, config))
        .collect();
    let fc_emb: Vec<Array1<f64>> = forwards
        .iter()
        .map(|f| f.fc.final_layer().rep.pooled.clone())
        .collect();
    let ec_emb: Vec<Array1<f64>> = forwards
        .iter()
        .map(|f| f.ec.final_layer().rep.pooled.clone())
        .collect();
    let (contrastive, nt_cache) = nt_xent(
        &fc_emb,
        &ec_emb,
        config.tau,
        config.contrastive_normalize,
        config.contrastive_symmetric,
    );
    let b = batch.len() as f64;
    let mut graph_fc = 0.0;
    let mut graph_ec = 0.0;
    let mut encoder_reg = 0.0;
    for f in &forwards {
        let fc = f.fc.final_layer();
        let ec = f.ec.final_layer();
        graph_fc += graph_loss(&fc.rep.node_matrix, &fc.conn, config.gamma) / b;
        graph_ec += graph_loss(&ec.rep.node_matrix, &ec.conn, config.gamma) / b;
        encoder_reg += (encoder_loss(&fc.rep.state_pooled) + encoder_loss(&ec.rep.state_pooled)) / b;
    }
    let report = total_pretrain(contrastive, graph_fc, graph_ec, encoder_reg, coefficients(config));
    PretrainForward {
        forwards,
        report,
        nt_cache,
    }
}

/// Reverse pass of [`pretrain_forward`], accumulating into `grads`.
pub fn pretrain_backward(
    params: &ModelParams,
    batch: &[&SubjectData],
    fwd: &PretrainForward,
    config: &TrainConfig,
    grads: &mut ModelGrads,
) {
    let b = batch.len() as f64;
    let (d_fc_emb, d_ec_emb) = nt_xent_backward(&fwd.nt_cache, 1.0);
    for (i, subject) in batch.iter().enumerate() {
        let sf = &fwd.forwards[i];
        for view in [View::Fc, View::Ec] {
            let (view_fwd, learner, encoder, d_emb) = match view {
                View::Fc => (&sf.fc, &params.learner_fc, &params.encoder_fc, &d_fc_emb[i]),
                View::Ec => (&sf.ec, &params.learner_ec, &params.encoder_ec, &d_ec_emb[i]),
            };
            let last = view_fwd.final_layer();
            let (d_node, d_conn) = graph_loss_backward(
                &last.rep.node_matrix,
                &last.conn,
                config.gamma,
                config.alpha / b,
            );
            let d_state_pooled = encoder_loss_backward(&last.rep.state_pooled, config.beta / b);
            let upstream = ViewUpstream {
                d_pooled: d_emb.clone(),
                d_node,
                d_conn,
                d_state_pooled,
            };
            let (learner_grads, encoder_grads) = match view {
                View::Fc => (&mut grads.learner_fc, &mut grads.encoder_fc),
                View::Ec => (&mut grads.learner_ec, &mut grads.encoder_ec),
            };
            backward_view(
                &subject.features,
                view_prior(subject, view),
                learner,
                encoder,
                view_fwd,
                upstream,
                if config.fixed_learner { None } else { Some(learner_grads) },
                encoder_grads,
            );
        }
    }
}

/// Batch artifacts of one fine-tuning forward.
pub struct FinetuneForward {
    pub forwards: Vec<SubjectForward>,
    pub logits: Vec<[f64; 2]>,
    pub report: LossReport,
    classifier_caches: Vec<crate::encoder::ClassifierCache>,
}

/// Forward the labeled batch and evaluate the fine-tuning objective:
/// mean cross-entropy + beta * mean diversity. Graph terms do not apply.
pub fn finetune_forward(
    params: &ModelParams,
    batch: &[&SubjectData],
    config: &TrainConfig,
) -> FinetuneForward {
    assert!(!batch.is_empty(), "empty batch");
    let forwards: Vec<SubjectForward> = batch
        .iter()
        .map(|s| forward_subject(params, s, config))
        .collect();
    let b = batch.len() as f64;
    let mut classification = 0.0;
    let mut encoder_reg = 0.0;
    let mut logits_all = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for (subject, f) in batch.iter().zip(&forwards) {
        let fc = f.fc.final_layer();
        let ec = f.ec.final_layer();
        let (logits, cache) = classify_head(&fc.rep.pooled, &ec.rep.pooled, &params.classifier);
        let label = subject.label.expect("labeled subject");
        classification += cross_entropy(logits, label) / b;
        encoder_reg += (encoder_loss(&fc.rep.state_pooled) + encoder_loss(&ec.rep.state_pooled)) / b;
        logits_all.push(logits);
        caches.push(cache);
    }
    let report = total_finetune(classification, encoder_reg, coefficients(config));
    FinetuneForward {
        forwards,
        logits: logits_all,
        report,
        classifier_caches: caches,
    }
}

/// Reverse pass of [`finetune_forward`]. The learner is frozen: its
/// gradients are never computed, so they stay exactly absent.
pub fn finetune_backward(
    params: &ModelParams,
    batch: &[&SubjectData],
    fwd: &FinetuneForward,
    config: &TrainConfig,
    grads: &mut ModelGrads,
) {
    let b = batch.len() as f64;
    for (i, subject) in batch.iter().enumerate() {
        let label = subject.label.expect("labeled subject");
        let d_logits = cross_entropy_backward(fwd.logits[i], label, 1.0 / b);
        let (d_fc_pooled, d_ec_pooled) = classify_head_backward(
            &params.classifier,
            &fwd.classifier_caches[i],
            d_logits,
            &mut grads.classifier,
        );
        let sf = &fwd.forwards[i];
        let n = subject.features.nrows();
        for view in [View::Fc, View::Ec] {
            let (view_fwd, learner, encoder, d_pooled) = match view {
                View::Fc => (&sf.fc, &params.learner_fc, &params.encoder_fc, &d_fc_pooled),
                View::Ec => (&sf.ec, &params.learner_ec, &params.encoder_ec, &d_ec_pooled),
            };
            let last = view_fwd.final_layer();
            let d_state_pooled = encoder_loss_backward(&last.rep.state_pooled, config.beta / b);
            let upstream = ViewUpstream {
                d_pooled: d_pooled.clone(),
                d_node: Array2::zeros((n, config.hidden)),
                d_conn: Array2::zeros((n, n)),
                d_state_pooled,
            };
            let encoder_grads = match view {
                View::Fc => (&mut grads.encoder_fc) as &mut EncoderGrads,
                View::Ec => &mut grads.encoder_ec,
            };
            backward_view(
                &subject.features,
                view_prior(subject, view),
                learner,
                encoder,
                view_fwd,
                upstream,
                None,
                encoder_grads,
            );
        }
    }
}

/// Classify one subject: logits and the positive-class probability.
pub fn predict(
    params: &ModelParams,
    subject: &SubjectData,
    config: &TrainConfig,
) -> ([f64; 2], f64) {
    let f = forward_subject(params, subject, config);
    let (logits, _) = classify_head(
        &f.fc.final_layer().rep.pooled,
        &f.ec.final_layer().rep.pooled,
        &params.classifier,
    );
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    (logits, e1 / (e0 + e1))
}

/// Argmax with ties resolved to the lower class index.
pub fn predicted_class(logits: [f64; 2]) -> u8 {
    if logits[1] > logits[0] {
        1
    } else {
        0
    }
}

/// Check for inconsistent datasets before training.
pub fn check_dataset_shape(dataset: &crate::signals::DatasetManifest) -> Result<(usize, usize)> {
    let t = dataset.uniform_timepoints().ok_or_else(|| {
        Error::Config("training requires all subjects to share one time-series length".into())
    })?;
    Ok((dataset.n_regions, t))
}
