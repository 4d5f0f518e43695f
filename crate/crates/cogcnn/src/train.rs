//! Two-stage training.
//!
//! Stage 1 trains encoders, decoders, the reconstruction gate and the
//! reconstruction head on `recon_mse + lambda * sum(aux_mse_i)`: the head
//! rebuilds the original RGB image from the gated latent while each decoder
//! rebuilds its own modality from its ungated latent segment.
//!
//! Stage 2 freezes everything from stage 1 and trains only the prediction
//! gate and the prediction head on cross-entropy, optionally adding
//! `mu * sum_i (TRMC_i - RRMC_i)^2` where RRMC comes from the frozen
//! reconstruction gate (a constant) and TRMC is the batch-mean coefficient
//! vector of the prediction gate, differentiated through.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Gradients, Tape, Var};
use crate::model::{
    attend, encode_modality, gate_raw, is_stage1_param, is_stage2_param, pred_head_with_stats,
    recon_head, Binding, CognitiveModel, LatentBundle, ModelConfig, ModelError, ParamStore,
    GATE_PRED, GATE_REC,
};
use crate::relevance;
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("no validation improvement in {epochs} epochs")]
    NoProgress { epochs: usize },
    #[error("stage order violated: {0}")]
    StageOrder(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Stage1Config {
    /// Weight of the summed per-modality autoencoder losses.
    pub lambda_aux: f32,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Stop once validation reconstruction MSE drops below this.
    pub target_mse: Option<f64>,
    pub rng_seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            lambda_aux: 0.5,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            target_mse: None,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Stage2Config {
    /// Weight of the relevance-mismatch regularizer; ignored when
    /// `regularized` is false.
    pub reg_weight: f32,
    pub regularized: bool,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub rng_seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            reg_weight: 1.0,
            regularized: false,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 60,
            patience: 10,
            rng_seed: 0,
        }
    }
}

/// Inputs and reconstruction targets for stage 1.
#[derive(Debug, Clone)]
pub struct Stage1Data {
    /// Per-modality input tensors, each `[N, c_i, R, R]`.
    pub modalities: Vec<Array4<f32>>,
    /// RGB reconstruction targets `[N, 3, R, R]`.
    pub images: Array4<f32>,
}

impl Stage1Data {
    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> Self {
        Self {
            modalities: self
                .modalities
                .iter()
                .map(|m| m.select(Axis(0), idx))
                .collect(),
            images: self.images.select(Axis(0), idx),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation reconstruction MSE (stage 1) or accuracy (stage 2).
    pub val_metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg_term: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub records: Vec<EpochRecord>,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub reached_target: bool,
}

/// Adam with bias correction, keyed by parameter name.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: HashMap<String, ArrayD<f32>>,
    v: HashMap<String, ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &HashMap<String, ArrayD<f32>>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("grad for known param");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            azip_update(m, v, p, g, self.beta1, self.beta2, self.lr, self.eps, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    m: &mut ArrayD<f32>,
    v: &mut ArrayD<f32>,
    p: &mut ArrayD<f32>,
    g: &ArrayD<f32>,
    beta1: f32,
    beta2: f32,
    lr: f32,
    eps: f32,
    bc1: f32,
    bc2: f32,
) {
    ndarray::Zip::from(m)
        .and(v)
        .and(p)
        .and(g)
        .for_each(|m, v, p, &g| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        });
}

/// Mean squared error between two same-shape tensors, as a scalar node.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    tape.mean_all(sq)
}

/// `recon + lambda * sum(aux)` on the tape.
pub fn stage1_total(tape: &mut Tape, recon: Var, aux: &[Var], lambda: f32) -> Var {
    let mut total = recon;
    if !aux.is_empty() {
        let mut s = aux[0];
        for &a in &aux[1..] {
            s = tape.add(s, a);
        }
        let weighted = tape.scale(s, lambda);
        total = tape.add(total, weighted);
    }
    total
}

pub struct Stage1Terms {
    pub total: Var,
    pub recon_mse: Var,
    pub aux_mse: Vec<Var>,
}

/// Full stage-1 loss graph for a batch of modality inputs and RGB targets.
pub fn stage1_forward(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &ModelConfig,
    inputs: &[Var],
    target_rgb: Var,
    lambda: f32,
) -> Result<Stage1Terms, ModelError> {
    let mut latents = Vec::with_capacity(inputs.len());
    let mut aux_mse = Vec::with_capacity(inputs.len());
    for (i, &x) in inputs.iter().enumerate() {
        let z_i = encode_modality(tape, binding, cfg, i, x)?;
        let dec = crate::model::decode_modality(tape, binding, cfg, i, z_i);
        aux_mse.push(mse(tape, dec, x));
        latents.push(z_i);
    }
    let z = tape.concat(&latents, 1);
    let raw = gate_raw(tape, binding, GATE_REC, z);
    let zhat = attend(tape, z, raw);
    let rec = recon_head(tape, binding, cfg, zhat);
    let recon_mse = mse(tape, rec, target_rgb);
    let total = stage1_total(tape, recon_mse, &aux_mse, lambda);
    Ok(Stage1Terms { total, recon_mse, aux_mse })
}

/// Batch-mean normalized per-modality coefficients of a sigmoid gate
/// output `[N, n*C, h, w]`, differentiable: returns a `[n]` node.
pub fn coefficients_on_tape(tape: &mut Tape, gate_sigmoid: Var, num_modalities: usize) -> Var {
    let shape = tape.shape(gate_sigmoid).to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let seg = c / num_modalities * h * w;
    let by_mod = tape.reshape(gate_sigmoid, &[n, num_modalities, seg]);
    let means = tape.mean_axis(by_mod, 2, false); // [N, n_mod]
    let sums = tape.sum_axis(means, 1, true); // [N, 1]
    let coeffs = tape.div_broadcast(means, sums); // rows sum to 1
    tape.mean_axis(coeffs, 0, false) // [n_mod]
}

pub struct Stage2Terms {
    pub total: Var,
    pub cross_entropy: Var,
    pub reg: Option<Var>,
}

/// Stage-2 loss graph over precomputed latent maps.
///
/// `rrmc` is the batch-mean RRMC coefficient vector, precomputed from the
/// frozen reconstruction gate and entered as a constant.
pub fn stage2_forward(
    tape: &mut Tape,
    binding: &Binding,
    cfg: &ModelConfig,
    z: Var,
    labels: &[usize],
    rrmc: Option<&[f32]>,
    reg_weight: f32,
    running: Option<&(Array1<f32>, Array1<f32>)>,
) -> (Stage2Terms, Option<(Array1<f32>, Array1<f32>)>) {
    let raw = gate_raw(tape, binding, GATE_PRED, z);
    let zhat = attend(tape, z, raw);
    let (logits, stats) = pred_head_with_stats(tape, binding, cfg, zhat, running);
    let ce = tape.softmax_cross_entropy(logits, labels);
    let (total, reg) = match rrmc {
        Some(r) => {
            let sig = tape.sigmoid(raw);
            let trmc = coefficients_on_tape(tape, sig, cfg.num_modalities);
            let rv = tape.constant(Array1::from_vec(r.to_vec()).into_dyn());
            let d = tape.sub(trmc, rv);
            let sq = tape.square(d);
            let gap = tape.sum_axis(sq, 0, false);
            let weighted = tape.scale(gap, reg_weight);
            (tape.add(ce, weighted), Some(gap))
        }
        None => (ce, None),
    };
    (Stage2Terms { total, cross_entropy: ce, reg }, stats)
}

fn collect_grads(
    grads: &Gradients,
    binding: &Binding,
    filter: impl Fn(&str) -> bool,
) -> HashMap<String, ArrayD<f32>> {
    let mut out = HashMap::new();
    for name in binding.names() {
        if filter(name) {
            if let Some(g) = grads.get(binding.var(name)) {
                out.insert(name.to_string(), g.clone());
            }
        }
    }
    out
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).iter().next().copied().unwrap_or(f32::NAN) as f64
}

/// Validation reconstruction MSE, inference mode, in chunks.
pub fn eval_recon_mse(model: &CognitiveModel, data: &Stage1Data, chunk: usize) -> f64 {
    let n = data.len();
    let mut sum = 0.0f64;
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let batch = data.gather(&idx);
        let z = model.encode_batch(&batch.modalities).expect("validated shapes");
        let rec = model.reconstruct_batch(&z);
        let d = &rec - &batch.images;
        sum += d.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / d.len() as f64
            * idx.len() as f64;
    }
    sum / n as f64
}

/// Top-1 accuracy of the prediction path over precomputed latents.
pub fn eval_accuracy(model: &CognitiveModel, z: &LatentBundle, labels: &[usize], chunk: usize) -> f64 {
    let n = labels.len();
    let mut correct = 0usize;
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let sub = LatentBundle {
            maps: z.maps.select(Axis(0), &idx),
            num_modalities: z.num_modalities,
            boundaries: z.boundaries.clone(),
        };
        let p = model.predict_batch(&sub);
        for (row, &i) in p.rows().into_iter().zip(&idx) {
            let am = argmax(row.as_slice().unwrap_or(&row.to_vec()));
            if am == labels[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / n as f64
}

pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty row")
}

/// Per-example RRMC coefficient matrix `[N, n]` from the frozen
/// reconstruction gate.
pub fn rrmc_per_example(model: &CognitiveModel, z: &LatentBundle, chunk: usize) -> Array2<f64> {
    let n = z.maps.dim().0;
    let n_mod = z.num_modalities;
    let mut out = Array2::zeros((n, n_mod));
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let sub = LatentBundle {
            maps: z.maps.select(Axis(0), &idx),
            num_modalities: n_mod,
            boundaries: z.boundaries.clone(),
        };
        let sig = model.gate_sigmoid(&sub, GATE_REC);
        let (bn, c, h, w) = sig.dim();
        let flat = sig
            .into_shape_with_order((bn, c * h * w))
            .expect("standard layout");
        let boundaries = relevance::even_boundaries(n_mod, c / n_mod * h * w);
        for (k, row) in flat.rows().into_iter().enumerate() {
            let g: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let coeffs =
                relevance::modality_coefficients(&g, &boundaries).expect("sigmoid output > 0");
            for (j, &cv) in coeffs.iter().enumerate() {
                out[[idx[k], j]] = cv;
            }
        }
    }
    out
}

/// Train stage 1 in place. Returns per-epoch records; errs on divergence,
/// an empty dataset or a validation metric that never improves.
pub fn train_stage1(
    model: &mut CognitiveModel,
    train: &Stage1Data,
    val: &Stage1Data,
    cfg: &Stage1Config,
) -> Result<TrainState, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = Adam::new(cfg.learning_rate);
    let mut records = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut improvements = 0usize;
    let mut reached_target = false;
    let n = train.len();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(cfg.rng_seed, "stage1-epoch", epoch as u64));
        let mut epoch_loss = 0.0f64;
        let mut epoch_recon = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.gather(chunk);
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape, is_stage1_param);
            let inputs: Vec<Var> = batch
                .modalities
                .iter()
                .map(|m| tape.constant(m.clone().into_dyn()))
                .collect();
            let target = tape.constant(batch.images.clone().into_dyn());
            let terms = stage1_forward(&mut tape, &binding, &model.cfg, &inputs, target, cfg.lambda_aux)?;
            let loss = scalar(&tape, terms.total);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            epoch_loss += loss;
            epoch_recon += scalar(&tape, terms.recon_mse);
            batches += 1;
            let grads = tape.backward(terms.total);
            let named = collect_grads(&grads, &binding, is_stage1_param);
            drop(tape);
            adam.step(&mut model.params, &named);
        }
        let val_mse = eval_recon_mse(model, val, cfg.batch_size);
        if !val_mse.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        records.push(EpochRecord {
            stage: "recon".into(),
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_metric: val_mse,
            recon_mse: Some(epoch_recon / batches as f64),
            cross_entropy: None,
            reg_term: None,
        });
        if val_mse < best - 1e-7 {
            best = val_mse;
            best_epoch = epoch;
            improvements += 1;
        }
        if cfg.target_mse.is_some_and(|t| val_mse < t) {
            reached_target = true;
            break;
        }
        if epoch - best_epoch >= cfg.patience {
            if improvements <= 1 {
                return Err(TrainError::NoProgress { epochs: epoch });
            }
            break;
        }
    }
    Ok(TrainState { records, best_metric: best, best_epoch, reached_target })
}

/// Train stage 2 (prediction gate and head) in place over precomputed
/// latents. Stage-1 parameters are bound as constants; a digest asserts
/// they are bitwise unchanged afterwards.
pub fn train_stage2(
    model: &mut CognitiveModel,
    train_z: &LatentBundle,
    train_labels: &[usize],
    val_z: &LatentBundle,
    val_labels: &[usize],
    cfg: &Stage2Config,
) -> Result<TrainState, TrainError> {
    let n = train_labels.len();
    if n == 0 || val_labels.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    assert_eq!(train_z.maps.dim().0, n, "latents/labels disagree");
    let frozen_before = model.params.digest(is_stage1_param);

    // RRMC from the frozen reconstruction gate, once.
    let rrmc_all = cfg
        .regularized
        .then(|| rrmc_per_example(model, train_z, cfg.batch_size));

    let mut adam = Adam::new(cfg.learning_rate);
    let mut records = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut improvements = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(cfg.rng_seed, "stage2-epoch", epoch as u64));
        let (mut epoch_loss, mut epoch_ce, mut epoch_reg) = (0.0f64, 0.0f64, 0.0f64);
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                // Batch norm needs a batch; drop a trailing singleton.
                continue;
            }
            let zb = train_z.maps.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let rrmc_batch: Option<Vec<f32>> = rrmc_all.as_ref().map(|r| {
                let mut acc = vec![0.0f64; model.cfg.num_modalities];
                for &i in chunk {
                    for (a, &v) in acc.iter_mut().zip(r.row(i)) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| (a / chunk.len() as f64) as f32).collect()
            });
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape, is_stage2_param);
            let zv = tape.constant(zb.into_dyn());
            let (terms, stats) = stage2_forward(
                &mut tape,
                &binding,
                &model.cfg,
                zv,
                &labels,
                rrmc_batch.as_deref(),
                cfg.reg_weight,
                None,
            );
            let loss = scalar(&tape, terms.total);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            epoch_loss += loss;
            epoch_ce += scalar(&tape, terms.cross_entropy);
            if let Some(r) = terms.reg {
                epoch_reg += scalar(&tape, r);
            }
            batches += 1;
            let grads = tape.backward(terms.total);
            let named = collect_grads(&grads, &binding, is_stage2_param);
            drop(tape);
            adam.step(&mut model.params, &named);
            if let Some((mean, var)) = stats {
                model.update_bn_running(&mean, &var, 0.1);
            }
        }
        if batches == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let val_acc = eval_accuracy(model, val_z, val_labels, cfg.batch_size);
        records.push(EpochRecord {
            stage: "pred".into(),
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_metric: val_acc,
            recon_mse: None,
            cross_entropy: Some(epoch_ce / batches as f64),
            reg_term: cfg.regularized.then_some(epoch_reg / batches as f64),
        });
        if val_acc > best + 1e-9 {
            best = val_acc;
            best_epoch = epoch;
            improvements += 1;
        }
        if epoch - best_epoch >= cfg.patience {
            if improvements == 0 {
                return Err(TrainError::NoProgress { epochs: epoch });
            }
            break;
        }
    }
    let frozen_after = model.params.digest(is_stage1_param);
    assert_eq!(
        frozen_before, frozen_after,
        "stage-1 parameters changed during stage 2"
    );
    Ok(TrainState { records, best_metric: best, best_epoch, reached_target: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            num_modalities: 4,
            input_resolution: 2,
            encoder_channels: vec![2],
            modality_channels: vec![1, 1, 1, 1],
            num_classes: 2,
            attention_filters: 4,
            attention_kernel: 2,
        }
    }

    #[test]
    fn stage1_total_hand_case() {
        // recon 0.09, aux (0.04, 0), lambda 0.5 -> 0.11
        let mut tape = Tape::new();
        let r = tape.constant(ArrayD::from_elem(IxDyn(&[]), 0.09f32));
        let a1 = tape.constant(ArrayD::from_elem(IxDyn(&[]), 0.04f32));
        let a2 = tape.constant(ArrayD::from_elem(IxDyn(&[]), 0.0f32));
        let total = stage1_total(&mut tape, r, &[a1, a2], 0.5);
        assert!((scalar(&tape, total) - 0.11).abs() < 1e-7);
        // lambda = 0 ignores aux entirely
        let t0 = stage1_total(&mut tape, r, &[a1, a2], 0.0);
        assert!((scalar(&tape, t0) - 0.09).abs() < 1e-7);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut tape = Tape::new();
        let logits = tape.constant(ArrayD::zeros(IxDyn(&[4, 3])));
        let ce = tape.softmax_cross_entropy(logits, &[0, 1, 2, 0]);
        assert!((scalar(&tape, ce) - (3.0f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn coefficients_on_tape_hand_case() {
        // Sigmoid values with per-modality means (0.55, 0.15, 0.15, 0.15):
        // already sum to 1, so coefficients equal the means and the gap to
        // uniform is 0.12.
        let mut tape = Tape::new();
        let mut vals = Vec::new();
        for &m in &[0.55f32, 0.15, 0.15, 0.15] {
            // two channels per modality, 1x1 spatial, means exactly m
            vals.extend_from_slice(&[m + 0.05, m - 0.05]);
        }
        let sig = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[1, 8, 1, 1]), vals).unwrap(),
        );
        let c = coefficients_on_tape(&mut tape, sig, 4);
        let cv = tape.value(c).to_owned();
        let expect = [0.55f32, 0.15, 0.15, 0.15];
        for (a, b) in cv.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "{cv:?}");
        }
        let rrmc = tape.constant(ArrayD::from_elem(IxDyn(&[4]), 0.25f32));
        let d = tape.sub(c, rrmc);
        let sq = tape.square(d);
        let gap = tape.sum_axis(sq, 0, false);
        assert!((scalar(&tape, gap) - 0.12).abs() < 1e-6);
    }

    fn random_latents(cfg: &ModelConfig, n: usize, seed: u64) -> LatentBundle {
        let mut r = rng::stream(seed, "latents");
        let c = cfg.num_modalities * cfg.latent_channels();
        let hw = cfg.feature_hw();
        LatentBundle {
            maps: Array4::from_shape_fn((n, c, hw, hw), |_| r.gen_range(0.0..1.0f32)),
            num_modalities: cfg.num_modalities,
            boundaries: cfg.segment_boundaries(),
        }
    }

    #[test]
    fn stage2_gradients_match_finite_differences() {
        // 2-class toy with an 8-dim latent; checks every stage-2 parameter.
        let cfg = toy_cfg();
        let model = CognitiveModel::new(cfg.clone(), 21).unwrap();
        let z = random_latents(&cfg, 4, 3);
        let labels = [0usize, 1, 1, 0];
        let rrmc = [0.3f32, 0.3, 0.2, 0.2];

        let loss_of = |params: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let binding = Binding::bind(&mut tape, params, |_| false);
            let zv = tape.constant(z.maps.clone().into_dyn());
            let (terms, _) = stage2_forward(
                &mut tape, &binding, &cfg, zv, &labels, Some(&rrmc), 1.0, None,
            );
            scalar(&tape, terms.total)
        };

        // Analytic gradients.
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape, is_stage2_param);
        let zv = tape.constant(z.maps.clone().into_dyn());
        let (terms, _) = stage2_forward(
            &mut tape, &binding, &cfg, zv, &labels, Some(&rrmc), 1.0, None,
        );
        let grads = tape.backward(terms.total);
        let named = collect_grads(&grads, &binding, is_stage2_param);
        assert!(!named.is_empty());

        let fd_at = |name: &str, k: usize, eps: f32| -> f64 {
            let mut plus = model.params.clone();
            let mut minus = model.params.clone();
            plus.get_mut(name).unwrap().as_slice_mut().unwrap()[k] += eps;
            minus.get_mut(name).unwrap().as_slice_mut().unwrap()[k] -= eps;
            (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps as f64)
        };
        let mut checked = 0;
        for (name, g) in &named {
            let len = g.len();
            // Sample a few coordinates per tensor to keep this quick.
            for k in (0..len).step_by((len / 5).max(1)) {
                let fd1 = fd_at(name, k, 2e-3);
                let fd2 = fd_at(name, k, 1e-3);
                // A relu kink inside the perturbation interval makes the
                // central difference itself unreliable; skip such points.
                if (fd1 - fd2).abs() > 3e-4f64.max(0.02 * fd2.abs()) {
                    continue;
                }
                // Richardson extrapolation cancels the O(eps^2) term.
                let fd = (4.0 * fd2 - fd1) / 3.0;
                let ad = g.as_slice().unwrap()[k] as f64;
                let err = (ad - fd).abs() / ad.abs().max(1.0);
                assert!(err < 1e-3, "{name}[{k}]: ad={ad} fd={fd} err={err}");
                checked += 1;
            }
        }
        assert!(checked >= 20, "only {checked} coordinates checked");
    }

    fn toy_stage1_data(cfg: &ModelConfig, n: usize, seed: u64) -> Stage1Data {
        let mut r = rng::stream(seed, "s1data");
        let res = cfg.input_resolution;
        let modalities = cfg
            .modality_channels
            .iter()
            .map(|&c| Array4::from_shape_fn((n, c, res, res), |_| r.gen_range(0.0..1.0f32)))
            .collect();
        let images = Array4::from_shape_fn((n, 3, res, res), |_| r.gen_range(0.0..1.0f32));
        Stage1Data { modalities, images }
    }

    #[test]
    fn stage1_training_reduces_loss() {
        let cfg = ModelConfig {
            input_resolution: 8,
            encoder_channels: vec![4, 8],
            attention_filters: 4,
            ..toy_cfg()
        };
        let mut model = CognitiveModel::new(cfg.clone(), 5).unwrap();
        let train = toy_stage1_data(&cfg, 8, 1);
        let val = toy_stage1_data(&cfg, 4, 2);
        let tcfg = Stage1Config {
            max_epochs: 15,
            batch_size: 4,
            patience: 20,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let state = train_stage1(&mut model, &train, &val, &tcfg).unwrap();
        let first = state.records.first().unwrap().train_loss;
        let last = state.records.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert!(state.records.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn stage1_empty_dataset_errors() {
        let cfg = toy_cfg();
        let mut model = CognitiveModel::new(cfg.clone(), 5).unwrap();
        let empty = toy_stage1_data(&cfg, 0, 1);
        let val = toy_stage1_data(&cfg, 2, 2);
        assert!(matches!(
            train_stage1(&mut model, &empty, &val, &Stage1Config::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn stage1_nan_input_diverges() {
        let cfg = toy_cfg();
        let mut model = CognitiveModel::new(cfg.clone(), 5).unwrap();
        let mut train = toy_stage1_data(&cfg, 4, 1);
        train.images[[0, 0, 0, 0]] = f32::NAN;
        let val = toy_stage1_data(&cfg, 2, 2);
        assert!(matches!(
            train_stage1(&mut model, &train, &val, &Stage1Config::default()),
            Err(TrainError::Divergence { epoch: 1 })
        ));
    }

    #[test]
    fn stage1_zero_lr_reports_no_progress() {
        let cfg = toy_cfg();
        let mut model = CognitiveModel::new(cfg.clone(), 5).unwrap();
        let train = toy_stage1_data(&cfg, 4, 1);
        let val = toy_stage1_data(&cfg, 2, 2);
        let tcfg = Stage1Config {
            learning_rate: 0.0,
            max_epochs: 10,
            patience: 3,
            ..Default::default()
        };
        assert!(matches!(
            train_stage1(&mut model, &train, &val, &tcfg),
            Err(TrainError::NoProgress { .. })
        ));
    }

    /// Latents whose first-modality mean determines the label: separable.
    fn separable_latents(cfg: &ModelConfig, n: usize, seed: u64) -> (LatentBundle, Vec<usize>) {
        let mut r = rng::stream(seed, "sep");
        let c = cfg.num_modalities * cfg.latent_channels();
        let hw = cfg.feature_hw();
        let mut maps = Array4::zeros((n, c, hw, hw));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            labels.push(label);
            let base = if label == 0 { 0.2 } else { 0.8 };
            for ch in 0..c {
                for y in 0..hw {
                    for x in 0..hw {
                        maps[[i, ch, y, x]] = base + r.gen_range(-0.1..0.1f32);
                    }
                }
            }
        }
        (
            LatentBundle {
                maps,
                num_modalities: cfg.num_modalities,
                boundaries: cfg.segment_boundaries(),
            },
            labels,
        )
    }

    #[test]
    fn stage2_learns_separable_labels_and_freezes_stage1() {
        let cfg = toy_cfg();
        let mut model = CognitiveModel::new(cfg.clone(), 13).unwrap();
        let (ztr, ltr) = separable_latents(&cfg, 32, 1);
        let (zva, lva) = separable_latents(&cfg, 16, 2);
        let before = model.params.digest(is_stage1_param);
        let pred_before = model.params.digest(is_stage2_param);
        let tcfg = Stage2Config {
            max_epochs: 40,
            batch_size: 8,
            patience: 40,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let state = train_stage2(&mut model, &ztr, &ltr, &zva, &lva, &tcfg).unwrap();
        assert!(state.best_metric > 0.9, "val accuracy {}", state.best_metric);
        assert_eq!(before, model.params.digest(is_stage1_param));
        assert_ne!(pred_before, model.params.digest(is_stage2_param));
    }

    #[test]
    fn stage2_regularizer_shrinks_gap() {
        let cfg = toy_cfg();
        let (ztr, ltr) = separable_latents(&cfg, 32, 3);
        let (zva, lva) = separable_latents(&cfg, 16, 4);
        let gap_after = |regularized: bool| -> f64 {
            let mut model = CognitiveModel::new(cfg.clone(), 13).unwrap();
            let tcfg = Stage2Config {
                regularized,
                reg_weight: 5.0,
                max_epochs: 30,
                batch_size: 8,
                patience: 30,
                learning_rate: 1e-2,
                ..Default::default()
            };
            train_stage2(&mut model, &ztr, &ltr, &zva, &lva, &tcfg).unwrap();
            // Dataset-mean coefficients after training.
            let rrmc = rrmc_per_example(&model, &ztr, 8);
            let rrmc_mean: Vec<f64> =
                rrmc.mean_axis(Axis(0)).unwrap().to_vec();
            let sig = model.gate_sigmoid(&ztr, GATE_PRED);
            let (n, c, h, w) = sig.dim();
            let flat = sig.into_shape_with_order((n, c * h * w)).unwrap();
            let boundaries = relevance::even_boundaries(4, c / 4 * h * w);
            let rows: Vec<Vec<f64>> = flat
                .rows()
                .into_iter()
                .map(|r| {
                    let g: Vec<f64> = r.iter().map(|&v| v as f64).collect();
                    relevance::modality_coefficients(&g, &boundaries).unwrap()
                })
                .collect();
            let trmc_mean = relevance::mean_coefficients(&rows).unwrap();
            relevance::bias_gap(&rrmc_mean, &trmc_mean).unwrap()
        };
        let with_reg = gap_after(true);
        let without = gap_after(false);
        assert!(
            with_reg < without,
            "regularizer did not shrink the gap: {with_reg} vs {without}"
        );
    }
}
