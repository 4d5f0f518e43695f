//! Baseline classifiers: a conventional CNN over the RGB image and a
//! cue-augmented CNN over the image stacked with all modality channels.
//! Both use the same encoder trunk as the cognitive model followed by
//! batch-norm and a dense softmax head, trained in a single stage on
//! cross-entropy. (The two-stream cognitive baseline is just a
//! `CognitiveModel` with two modalities and needs no code here.)

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Padding, Tape, Var};
use crate::model::{Binding, ModelError, ParamStore};
use crate::rng;
use crate::train::{argmax, Adam, EpochRecord, TrainError, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// RGB input only.
    Conventional,
    /// RGB plus every modality as extra input channels.
    CueAugmented,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub input_channels: usize,
    pub input_resolution: usize,
    pub encoder_channels: Vec<usize>,
    pub num_classes: usize,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, input_resolution: usize, num_classes: usize) -> Self {
        let input_channels = match kind {
            BaselineKind::Conventional => 3,
            // RGB + shape(1) + texture(3) + greyscale(1) + edges(1)
            BaselineKind::CueAugmented => 9,
        };
        Self {
            kind,
            input_channels,
            input_resolution,
            encoder_channels: vec![16, 32, 64, 64, 64],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let div = 1usize << self.encoder_channels.len();
        if self.input_resolution % div != 0 || self.input_resolution / div == 0 {
            return Err(ModelError::BadConfig(format!(
                "resolution {} not divisible into {} pooling stages",
                self.input_resolution,
                self.encoder_channels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::BadConfig("need at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn flat_dim(&self) -> usize {
        let hw = self.input_resolution >> self.encoder_channels.len();
        self.encoder_channels.last().unwrap() * hw * hw
    }
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub cfg: BaselineConfig,
    pub params: ParamStore,
}

impl BaselineModel {
    pub fn new(cfg: BaselineConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut c_in = cfg.input_channels;
        for (k, &c_out) in cfg.encoder_channels.iter().enumerate() {
            let name = format!("trunk.block{k}");
            let fan_in = c_in * 9;
            let mut r = rng::stream(seed, &format!("init/{name}"));
            let limit = (6.0 / fan_in as f32).sqrt();
            let w = ArrayD::from_shape_fn(IxDyn(&[c_out, c_in, 3, 3]), |_| {
                use rand::Rng;
                r.gen_range(-limit..limit)
            });
            params.insert(&format!("{name}.w"), w);
            params.insert(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[c_out])));
            c_in = c_out;
        }
        let d = cfg.flat_dim();
        params.insert("head.bn.gamma", ArrayD::from_elem(IxDyn(&[d]), 1.0));
        params.insert("head.bn.beta", ArrayD::zeros(IxDyn(&[d])));
        params.insert("head.bn.running_mean", ArrayD::zeros(IxDyn(&[d])));
        params.insert("head.bn.running_var", ArrayD::from_elem(IxDyn(&[d]), 1.0));
        let mut r = rng::stream(seed, "init/head.fc");
        let limit = (6.0 / d as f32).sqrt();
        let w = ArrayD::from_shape_fn(IxDyn(&[d, cfg.num_classes]), |_| {
            use rand::Rng;
            r.gen_range(-limit..limit)
        });
        params.insert("head.fc.w", w);
        params.insert("head.fc.b", ArrayD::zeros(IxDyn(&[cfg.num_classes])));
        Ok(Self { cfg, params })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: Var,
        running: Option<&(Array1<f32>, Array1<f32>)>,
    ) -> (Var, Option<(Array1<f32>, Array1<f32>)>) {
        let mut h = x;
        for k in 0..self.cfg.encoder_channels.len() {
            let w = binding.var(&format!("trunk.block{k}.w"));
            let b = binding.var(&format!("trunk.block{k}.b"));
            h = tape.conv2d(h, w, b, Padding::sym(1));
            h = tape.relu(h);
            h = tape.max_pool2(h);
        }
        let n = tape.shape(h)[0];
        let flat = tape.reshape(h, &[n, self.cfg.flat_dim()]);
        let gamma = binding.var("head.bn.gamma");
        let beta = binding.var("head.bn.beta");
        let (normed, stats) =
            tape.batch_norm(flat, gamma, beta, running.map(|(m, v)| (m, v)), 1e-5);
        let w = binding.var("head.fc.w");
        let b = binding.var("head.fc.b");
        (tape.linear(normed, w, b), stats)
    }

    fn bn_running(&self) -> (Array1<f32>, Array1<f32>) {
        let get = |name: &str| {
            self.params
                .get(name)
                .expect("bn buffer")
                .to_owned()
                .into_dimensionality()
                .expect("rank 1")
        };
        (get("head.bn.running_mean"), get("head.bn.running_var"))
    }

    fn update_bn_running(&mut self, mean: &Array1<f32>, var: &Array1<f32>, momentum: f32) {
        for (name, new) in [("head.bn.running_mean", mean), ("head.bn.running_var", var)] {
            let buf = self.params.get_mut(name).expect("bn buffer");
            *buf = (buf.to_owned() * (1.0 - momentum) + &new.clone().into_dyn() * momentum)
                .into_dyn();
        }
    }

    /// Inference-mode class probabilities.
    pub fn predict_batch(&self, x: &Array4<f32>) -> Array2<f32> {
        let mut tape = Tape::new();
        let binding = Binding::bind(&mut tape, &self.params, |_| false);
        let xv = tape.constant(x.clone().into_dyn());
        let (logits, _) = self.forward(&mut tape, &binding, xv, Some(&self.bn_running()));
        let lv = tape
            .value(logits)
            .to_owned()
            .into_dimensionality()
            .expect("rank 2 logits");
        softmax_rows(&lv)
    }
}

fn is_trainable(name: &str) -> bool {
    !name.contains("running_")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BaselineTrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub rng_seed: u64,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 40,
            patience: 8,
            rng_seed: 0,
        }
    }
}

/// Single-stage cross-entropy training; early stops on validation accuracy.
pub fn train_baseline(
    model: &mut BaselineModel,
    x_train: &Array4<f32>,
    y_train: &[usize],
    x_val: &Array4<f32>,
    y_val: &[usize],
    cfg: &BaselineTrainConfig,
) -> Result<TrainState, TrainError> {
    use rand::seq::SliceRandom;
    let n = y_train.len();
    if n == 0 || y_val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = Adam::new(cfg.learning_rate);
    let mut records = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Option<ParamStore> = None;
    let mut improvements = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(cfg.rng_seed, "baseline-epoch", epoch as u64));
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = x_train.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let mut tape = Tape::new();
            let binding = Binding::bind(&mut tape, &model.params, is_trainable);
            let xv = tape.constant(xb.into_dyn());
            let (logits, stats) = model.forward(&mut tape, &binding, xv, None);
            let loss = tape.softmax_cross_entropy(logits, &labels);
            let lv = tape.value(loss).iter().next().copied().unwrap_or(f32::NAN) as f64;
            if !lv.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            epoch_loss += lv;
            batches += 1;
            let grads = tape.backward(loss);
            let mut named = std::collections::HashMap::new();
            for name in binding.names() {
                if is_trainable(name) {
                    if let Some(g) = grads.get(binding.var(name)) {
                        named.insert(name.to_string(), g.clone());
                    }
                }
            }
            drop(tape);
            adam.step(&mut model.params, &named);
            if let Some((mean, var)) = stats {
                model.update_bn_running(&mean, &var, 0.1);
            }
        }
        if batches == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let val_acc = accuracy(model, x_val, y_val, cfg.batch_size);
        records.push(EpochRecord {
            stage: "baseline".into(),
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_metric: val_acc,
            recon_mse: None,
            cross_entropy: Some(epoch_loss / batches as f64),
            reg_term: None,
        });
        if val_acc > best + 1e-9 {
            best = val_acc;
            best_epoch = epoch;
            best_params = Some(model.params.clone());
            improvements += 1;
        }
        if epoch - best_epoch >= cfg.patience {
            if improvements == 0 {
                return Err(TrainError::NoProgress { epochs: epoch });
            }
            break;
        }
    }
    // Keep the weights from the best validation epoch, not the last one.
    if let Some(p) = best_params {
        model.params = p;
    }
    Ok(TrainState { records, best_metric: best, best_epoch, reached_target: false })
}

/// Chunked top-1 accuracy.
pub fn accuracy(model: &BaselineModel, x: &Array4<f32>, y: &[usize], chunk: usize) -> f64 {
    fraction_predicted(model, x, y, chunk)
}

/// Fraction of rows whose argmax equals the given label vector.
pub fn fraction_predicted(
    model: &BaselineModel,
    x: &Array4<f32>,
    labels: &[usize],
    chunk: usize,
) -> f64 {
    let n = labels.len();
    let mut hits = 0usize;
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let p = model.predict_batch(&x.select(Axis(0), &idx));
        for (row, &i) in p.rows().into_iter().zip(&idx) {
            if argmax(row.as_slice().unwrap_or(&row.to_vec())) == labels[i] {
                hits += 1;
            }
        }
    }
    hits as f64 / n as f64
}

/// Clean and cue-conflict performance of one classifier, as reported in
/// the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clean_accuracy: f64,
    /// Fraction of miscue images classified by their silhouette's label.
    pub miscue_shape_accuracy: f64,
    /// Fraction classified by the injected texture's label instead.
    pub miscue_texture_rate: f64,
}

pub fn evaluate_baseline(
    model: &BaselineModel,
    clean_x: &Array4<f32>,
    clean_y: &[usize],
    miscue_x: &Array4<f32>,
    shape_y: &[usize],
    texture_y: &[usize],
    chunk: usize,
) -> EvalSummary {
    EvalSummary {
        clean_accuracy: fraction_predicted(model, clean_x, clean_y, chunk),
        miscue_shape_accuracy: fraction_predicted(model, miscue_x, shape_y, chunk),
        miscue_texture_rate: fraction_predicted(model, miscue_x, texture_y, chunk),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn color_blob_data(n: usize, res: usize, seed: u64) -> (Array4<f32>, Vec<usize>) {
        // Class 0: reddish images; class 1: bluish. Trivially separable.
        let mut r = rng::stream(seed, "blobs");
        let mut x = Array4::zeros((n, 3, res, res));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            y.push(label);
            for c in 0..3 {
                for yy in 0..res {
                    for xx in 0..res {
                        let base = if (label == 0 && c == 0) || (label == 1 && c == 2) {
                            0.8
                        } else {
                            0.2
                        };
                        x[[i, c, yy, xx]] = base + r.gen_range(-0.1..0.1f32);
                    }
                }
            }
        }
        (x, y)
    }

    fn tiny_cfg(kind: BaselineKind) -> BaselineConfig {
        BaselineConfig {
            encoder_channels: vec![4, 8],
            ..BaselineConfig::new(kind, 8, 2)
        }
    }

    #[test]
    fn config_channel_counts() {
        assert_eq!(BaselineConfig::new(BaselineKind::Conventional, 64, 8).input_channels, 3);
        assert_eq!(BaselineConfig::new(BaselineKind::CueAugmented, 64, 8).input_channels, 9);
        assert_eq!(BaselineConfig::new(BaselineKind::Conventional, 64, 8).flat_dim(), 256);
    }

    #[test]
    fn predictions_normalized() {
        let model = BaselineModel::new(tiny_cfg(BaselineKind::Conventional), 3).unwrap();
        let (x, _) = color_blob_data(4, 8, 0);
        let p = model.predict_batch(&x);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn learns_color_separable_classes() {
        let mut model = BaselineModel::new(tiny_cfg(BaselineKind::Conventional), 3).unwrap();
        let (xt, yt) = color_blob_data(32, 8, 1);
        let (xv, yv) = color_blob_data(16, 8, 2);
        let cfg = BaselineTrainConfig {
            max_epochs: 25,
            batch_size: 8,
            patience: 25,
            learning_rate: 3e-3,
            rng_seed: 0,
        };
        let state = train_baseline(&mut model, &xt, &yt, &xv, &yv, &cfg).unwrap();
        assert!(state.best_metric > 0.9, "val accuracy {}", state.best_metric);
    }

    #[test]
    fn eval_summary_fractions_are_consistent() {
        let mut model = BaselineModel::new(tiny_cfg(BaselineKind::Conventional), 7).unwrap();
        let (xt, yt) = color_blob_data(32, 8, 3);
        let (xv, yv) = color_blob_data(16, 8, 4);
        let cfg = BaselineTrainConfig {
            max_epochs: 20,
            batch_size: 8,
            patience: 20,
            learning_rate: 3e-3,
            rng_seed: 0,
        };
        train_baseline(&mut model, &xt, &yt, &xv, &yv, &cfg).unwrap();
        // Use the val set as a stand-in miscue set with swapped labels:
        // shape says the true label, texture says the other one.
        let flipped: Vec<usize> = yv.iter().map(|&l| 1 - l).collect();
        let s = evaluate_baseline(&model, &xv, &yv, &xv, &yv, &flipped, 8);
        assert!((0.0..=1.0).contains(&s.clean_accuracy));
        // With two classes every prediction matches either the shape or
        // the texture label.
        assert!((s.miscue_shape_accuracy + s.miscue_texture_rate - 1.0).abs() < 1e-9);
        // This classifier follows the clean labels.
        assert!(s.miscue_shape_accuracy > s.miscue_texture_rate);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = BaselineModel::new(tiny_cfg(BaselineKind::Conventional), 3).unwrap();
        let x = Array4::zeros((0, 3, 8, 8));
        let (xv, yv) = color_blob_data(4, 8, 5);
        assert!(matches!(
            train_baseline(&mut model, &x, &[], &xv, &yv, &BaselineTrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
    }
}
