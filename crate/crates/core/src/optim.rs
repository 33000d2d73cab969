//! Gradient-descent machinery: bias-corrected Adam with decoupled weight
//! decay, the pretraining and fine-tuning loops, and a finite-difference
//! harness that checks every analytic gradient of the composed pipeline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, auc, confusion_metrics, stratified_kfold, AggregateReport, MetricsReport};
use crate::losses::LossReport;
use crate::model::{
    check_dataset_shape, finetune_backward, finetune_forward, predict, predicted_class,
    prepare_subject, pretrain_backward, pretrain_forward, ModelGrads, ModelParams, SubjectData,
    TrainMode,
};
use crate::signals::DatasetManifest;

/// Adam moments for the trainable tensors of one stage, in canonical order.
#[derive(Debug, Clone)]
pub struct AdamState {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, mode: TrainMode) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for t in params.tensors() {
            if mode.trains(&t.name) {
                names.push(t.name);
                m.push(vec![0.0; t.data.len()]);
                v.push(vec![0.0; t.data.len()]);
            }
        }
        AdamState {
            names,
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over the stage's trainable tensors, with
/// decoupled weight decay applied before the Adam delta.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    mode: TrainMode,
) {
    state.step += 1;
    let correction1 = 1.0 - state.beta1.powi(state.step as i32);
    let correction2 = 1.0 - state.beta2.powi(state.step as i32);

    let grad_tensors: Vec<(String, &[f64])> = grads
        .tensors()
        .into_iter()
        .filter(|(name, _)| mode.trains(name))
        .collect();
    let mut slot = 0;
    for tensor in params.tensors_mut() {
        if !mode.trains(&tensor.name) {
            continue;
        }
        debug_assert_eq!(tensor.name, state.names[slot]);
        debug_assert_eq!(tensor.name, grad_tensors[slot].0);
        let g = grad_tensors[slot].1;
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        for i in 0..g.len() {
            tensor.data[i] *= 1.0 - lr * weight_decay;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        slot += 1;
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub report: LossReport,
}

/// The training log as JSON lines, one object per epoch.
pub fn write_training_log(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for record in epochs {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Checkpoint(format!("log serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    crate::checkpoint::atomic_write(path, out.as_bytes())
}

fn mean_report(reports: &[(LossReport, usize)]) -> LossReport {
    let total_subjects: usize = reports.iter().map(|(_, b)| b).sum();
    let wsum = |f: &dyn Fn(&LossReport) -> f64| -> f64 {
        reports
            .iter()
            .map(|(r, b)| f(r) * *b as f64)
            .sum::<f64>()
            / total_subjects as f64
    };
    let classification = reports[0].0.classification.map(|_| wsum(&|r| r.classification.unwrap_or(0.0)));
    LossReport {
        contrastive: wsum(&|r| r.contrastive),
        graph_fc: wsum(&|r| r.graph_fc),
        graph_ec: wsum(&|r| r.graph_ec),
        encoder_reg: wsum(&|r| r.encoder_reg),
        classification,
        total: wsum(&|r| r.total),
        coefficients: reports[0].0.coefficients,
    }
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(fold as u64 + 1)),
    )
}

/// A pretrained model plus its per-epoch loss trace.
pub struct PretrainOutput {
    pub params: ModelParams,
    pub epochs: Vec<EpochRecord>,
    pub n_regions: usize,
    pub t_dim: usize,
}

/// Self-supervised pretraining: seeded shuffling into batches, both views
/// forwarded through every round, contrastive + graph + diversity objective,
/// Adam on learner and encoder parameters. Labels, if present, are ignored.
pub fn pretrain(dataset: &DatasetManifest, config: &TrainConfig) -> Result<PretrainOutput> {
    config.validate()?;
    if dataset.subjects.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    let (n_regions, t_dim) = check_dataset_shape(dataset)?;
    let subjects: Vec<SubjectData> = dataset
        .subjects
        .iter()
        .map(|s| prepare_subject(s, config))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config, t_dim, &mut rng);
    let mut adam = AdamState::new(&params, TrainMode::Pretrain);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..subjects.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut batch_reports: Vec<(LossReport, usize)> = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SubjectData> = chunk.iter().map(|&i| &subjects[i]).collect();
            let fwd = pretrain_forward(&params, &batch, config);
            let mut grads = ModelGrads::zeros_like(&params);
            pretrain_backward(&params, &batch, &fwd, config, &mut grads);
            if let Some(name) = grads.find_non_finite() {
                return Err(Error::NonFiniteGradient(name));
            }
            adam_step(
                &mut params,
                &grads,
                &mut adam,
                config.lr,
                config.weight_decay,
                TrainMode::Pretrain,
            );
            batch_reports.push((fwd.report, batch.len()));
        }
        epochs.push(EpochRecord {
            epoch,
            report: mean_report(&batch_reports),
        });
    }

    Ok(PretrainOutput {
        params,
        epochs,
        n_regions,
        t_dim,
    })
}

/// One fold's fitted head and its held-out metrics.
pub struct FoldOutput {
    pub fold: usize,
    pub metrics: MetricsReport,
    pub params: ModelParams,
    pub epochs: Vec<EpochRecord>,
}

pub struct FinetuneOutput {
    pub folds: Vec<FoldOutput>,
    pub aggregate: AggregateReport,
}

/// Structural compatibility between a checkpoint's config and a run config.
pub fn check_structural_match(base: &TrainConfig, run: &TrainConfig) -> Result<()> {
    let mismatches: Vec<&str> = [
        ("iterations", base.iterations == run.iterations),
        ("heads", base.heads == run.heads),
        ("states", base.states == run.states),
        ("hidden", base.hidden == run.hidden),
        ("classifier_hidden", base.classifier_hidden == run.classifier_hidden),
    ]
    .iter()
    .filter(|(_, ok)| !ok)
    .map(|(name, _)| *name)
    .collect();
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "config fields {mismatches:?} differ from the checkpoint's structural hyperparameters"
        )))
    }
}

/// Supervised fine-tuning with stratified k-fold cross-validation. The
/// learner stays frozen byte-for-byte: only encoder and classifier tensors
/// receive gradients and updates. Each fold restarts from the checkpoint.
pub fn finetune(
    dataset: &DatasetManifest,
    base_params: &ModelParams,
    config: &TrainConfig,
    folds: usize,
) -> Result<FinetuneOutput> {
    config.validate()?;
    if !dataset.labeled {
        return Err(Error::Schema("fine-tuning requires a labeled dataset".into()));
    }
    let (_, t_dim) = check_dataset_shape(dataset)?;
    if t_dim != base_params.t_dim {
        return Err(Error::Config(format!(
            "dataset has {t_dim} time points but the checkpoint was built for {}",
            base_params.t_dim
        )));
    }
    let labels: Vec<u8> = dataset
        .subjects
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Schema(format!("subject `{}` has no label", s.subject_id))))
        .collect::<Result<_>>()?;
    let splits = stratified_kfold(&labels, folds, config.seed)?;
    let subjects: Vec<SubjectData> = dataset
        .subjects
        .iter()
        .map(|s| prepare_subject(s, config))
        .collect::<Result<_>>()?;

    let frozen_learner: Vec<Vec<u8>> = learner_bytes(base_params);

    let mut fold_outputs = Vec::with_capacity(splits.len());
    for (fold_idx, split) in splits.iter().enumerate() {
        let mut params = base_params.clone();
        let mut adam = AdamState::new(&params, TrainMode::Finetune);
        let mut rng = fold_rng(config.seed, fold_idx);
        let mut train_order = split.train.clone();
        let mut epochs = Vec::with_capacity(config.epochs);
        for epoch in 1..=config.epochs {
            train_order.shuffle(&mut rng);
            let mut batch_reports: Vec<(LossReport, usize)> = Vec::new();
            for chunk in train_order.chunks(config.batch_size) {
                let batch: Vec<&SubjectData> = chunk.iter().map(|&i| &subjects[i]).collect();
                let fwd = finetune_forward(&params, &batch, config);
                let mut grads = ModelGrads::zeros_like(&params);
                finetune_backward(&params, &batch, &fwd, config, &mut grads);
                if let Some(name) = grads.find_non_finite() {
                    return Err(Error::NonFiniteGradient(name));
                }
                adam_step(
                    &mut params,
                    &grads,
                    &mut adam,
                    config.lr,
                    config.weight_decay,
                    TrainMode::Finetune,
                );
                batch_reports.push((fwd.report, batch.len()));
            }
            epochs.push(EpochRecord {
                epoch,
                report: mean_report(&batch_reports),
            });
        }
        debug_assert_eq!(learner_bytes(&params), frozen_learner, "learner drifted");

        let mut predictions = Vec::with_capacity(split.test.len());
        let mut scores = Vec::with_capacity(split.test.len());
        let mut test_labels = Vec::with_capacity(split.test.len());
        for &i in &split.test {
            let (logits, score) = predict(&params, &subjects[i], config);
            predictions.push(predicted_class(logits));
            scores.push(score);
            test_labels.push(labels[i]);
        }
        let mut metrics = confusion_metrics(&predictions, &test_labels)?;
        metrics.auc = Some(auc(&scores, &test_labels)?);
        fold_outputs.push(FoldOutput {
            fold: fold_idx,
            metrics,
            params,
            epochs,
        });
    }

    let aggregate = aggregate(
        &fold_outputs
            .iter()
            .map(|f| f.metrics.clone())
            .collect::<Vec<_>>(),
    );
    Ok(FinetuneOutput {
        folds: fold_outputs,
        aggregate,
    })
}

fn learner_bytes(params: &ModelParams) -> Vec<Vec<u8>> {
    params
        .tensors()
        .into_iter()
        .filter(|t| t.name.starts_with("learner."))
        .map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect()
}

/// Problem size of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradcheckScale {
    pub n_regions: usize,
    pub n_timepoints: usize,
    pub iterations: usize,
    pub heads: usize,
    pub states: usize,
    pub hidden: usize,
    pub batch: usize,
}

impl Default for GradcheckScale {
    fn default() -> Self {
        GradcheckScale {
            n_regions: 6,
            n_timepoints: 20,
            iterations: 2,
            heads: 2,
            states: 2,
            hidden: 5,
            batch: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub pretrain: Vec<TensorCheck>,
    pub finetune: Vec<TensorCheck>,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&TensorCheck> {
        self.pretrain
            .iter()
            .chain(&self.finetune)
            .filter(|c| !(c.max_rel_err < self.tolerance))
            .collect()
    }
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;

/// Check every trainable parameter of both stage objectives against central
/// finite differences on a seeded synthetic batch.
///
/// `corrupt` perturbs the named tensor's analytic gradient before the
/// comparison; the harness must then fail, which the tests use to prove the
/// check has teeth.
pub fn gradcheck(
    scale: GradcheckScale,
    seed: u64,
    corrupt: Option<&str>,
) -> Result<GradcheckReport> {
    let config = TrainConfig {
        iterations: scale.iterations,
        heads: scale.heads,
        states: scale.states,
        hidden: scale.hidden,
        classifier_hidden: 4,
        te_bins: 3,
        batch_size: scale.batch,
        seed,
        ..TrainConfig::default()
    };
    let dataset = crate::signals::synth_generate(
        scale.batch,
        scale.n_regions,
        scale.n_timepoints,
        2,
        0.5,
        1.0,
        seed,
    )?;
    let subjects: Vec<SubjectData> = dataset
        .subjects
        .iter()
        .map(|s| prepare_subject(s, &config))
        .collect::<Result<_>>()?;
    let batch: Vec<&SubjectData> = subjects.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1234);
    let mut params = ModelParams::init(&config, scale.n_timepoints, &mut rng);

    let pretrain_checks = {
        let fwd = pretrain_forward(&params, &batch, &config);
        let mut grads = ModelGrads::zeros_like(&params);
        pretrain_backward(&params, &batch, &fwd, &config, &mut grads);
        compare_with_fd(
            &mut params,
            &grads,
            TrainMode::Pretrain,
            corrupt,
            |p| pretrain_forward(p, &batch, &config).report.total,
        )
    };
    let finetune_checks = {
        let fwd = finetune_forward(&params, &batch, &config);
        let mut grads = ModelGrads::zeros_like(&params);
        finetune_backward(&params, &batch, &fwd, &config, &mut grads);
        compare_with_fd(
            &mut params,
            &grads,
            TrainMode::Finetune,
            corrupt,
            |p| finetune_forward(p, &batch, &config).report.total,
        )
    };

    let pass = pretrain_checks
        .iter()
        .chain(&finetune_checks)
        .all(|c| c.max_rel_err < GRADCHECK_TOLERANCE);
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        step: GRADCHECK_STEP,
        pretrain: pretrain_checks,
        finetune: finetune_checks,
        pass,
    })
}

fn compare_with_fd(
    params: &mut ModelParams,
    grads: &ModelGrads,
    mode: TrainMode,
    corrupt: Option<&str>,
    loss: impl Fn(&ModelParams) -> f64,
) -> Vec<TensorCheck> {
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(name, data)| {
            let mut g = data.to_vec();
            if corrupt == Some(name.as_str()) {
                for v in &mut g {
                    *v += 0.01;
                }
            }
            g
        })
        .collect();

    let mut checks = Vec::new();
    for (t_idx, name) in names.iter().enumerate() {
        if !mode.trains(name) {
            continue;
        }
        let len = analytic[t_idx].len();
        let mut max_rel = 0.0f64;
        for e_idx in 0..len {
            let original = params.tensors_mut()[t_idx].data[e_idx];
            params.tensors_mut()[t_idx].data[e_idx] = original + GRADCHECK_STEP;
            let up = loss(params);
            params.tensors_mut()[t_idx].data[e_idx] = original - GRADCHECK_STEP;
            let down = loss(params);
            params.tensors_mut()[t_idx].data[e_idx] = original;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let a = analytic[t_idx][e_idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        checks.push(TensorCheck {
            name: name.clone(),
            max_rel_err: max_rel,
        });
    }
    checks
}
