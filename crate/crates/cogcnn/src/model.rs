//! The CognitiveCNN model: per-modality encoders and decoders, attention
//! gates over the concatenated latent, a reconstruction head and a
//! prediction head, all stored in a flat named parameter store.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Padding, Tape, Var};
use crate::rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

/// Architecture of the model tuple (encoders, decoders, gates, heads).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub num_modalities: usize,
    pub input_resolution: usize,
    /// Output channels of each encoder block; every block halves the
    /// spatial resolution.
    pub encoder_channels: Vec<usize>,
    /// Input channels of each modality, in bundle order.
    pub modality_channels: Vec<usize>,
    pub num_classes: usize,
    pub attention_filters: usize,
    pub attention_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_modalities: 4,
            input_resolution: 64,
            encoder_channels: vec![16, 32, 64, 64, 64],
            modality_channels: vec![1, 3, 1, 1],
            num_classes: 8,
            attention_filters: 128,
            attention_kernel: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_modalities < 2 {
            return Err(ModelError::BadConfig("need at least 2 modalities".into()));
        }
        if self.modality_channels.len() != self.num_modalities {
            return Err(ModelError::BadConfig(format!(
                "modality_channels has {} entries for {} modalities",
                self.modality_channels.len(),
                self.num_modalities
            )));
        }
        if self.encoder_channels.is_empty() {
            return Err(ModelError::BadConfig("no encoder blocks".into()));
        }
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

    /// Spatial side of the block-5 feature map.
    pub fn feature_hw(&self) -> usize {
        self.input_resolution >> self.encoder_channels.len()
    }

    pub fn latent_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated non-empty")
    }

    /// Flattened length of one modality's latent.
    pub fn latent_dim_per_modality(&self) -> usize {
        self.latent_channels() * self.feature_hw() * self.feature_hw()
    }

    pub fn latent_dim_total(&self) -> usize {
        self.num_modalities * self.latent_dim_per_modality()
    }

    /// Segment end offsets of the flattened concatenated latent
    /// (modality-major layout).
    pub fn segment_boundaries(&self) -> Vec<usize> {
        crate::relevance::even_boundaries(self.num_modalities, self.latent_dim_per_modality())
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, ArrayD<f32>)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f32>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f32>, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f32>, ModelError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(ModelError::UnknownParam(name.to_string())),
        }
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f32>) -> Result<(), ModelError> {
        let slot = self.get_mut(name)?;
        assert_eq!(slot.shape(), value.shape(), "shape change for {name}");
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f32>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 over the raw bytes of every parameter whose name matches the
    /// filter, in insertion order. Used to assert freezing contracts.
    pub fn digest(&self, filter: impl Fn(&str) -> bool) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, value) in &self.entries {
            if filter(name) {
                hasher.update(name.as_bytes());
                for v in value.iter() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hasher.finalize().into()
    }
}

/// Which tape leaves receive gradients.
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    /// Load every parameter onto the tape; `trainable` decides per name
    /// whether gradients flow into it.
    pub fn bind(tape: &mut Tape, store: &ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        let mut vars = HashMap::new();
        for (name, value) in store.iter() {
            let var = if trainable(name) {
                tape.param(value.clone())
            } else {
                tape.constant(value.clone())
            };
            vars.insert(name.to_string(), var);
        }
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }
}

/// Latent feature maps of a batch, one channel block per modality
/// (modality-major stacking), plus the flattened segment boundaries.
#[derive(Debug, Clone)]
pub struct LatentBundle {
    /// `[N, num_modalities * latent_channels, h, w]`
    pub maps: Array4<f32>,
    pub num_modalities: usize,
    pub boundaries: Vec<usize>,
}

impl LatentBundle {
    pub fn segment_channels(&self) -> usize {
        self.maps.dim().1 / self.num_modalities
    }

    /// Per-example flattened latent (modality-major order).
    pub fn flattened(&self) -> Array2<f32> {
        let (n, c, h, w) = self.maps.dim();
        self.maps
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n, c * h * w))
            .expect("contiguous after relayout")
    }

    /// Split into per-modality segments and re-concatenate; identity by
    /// construction, exposed for tests and per-modality decoding.
    pub fn segments(&self) -> Vec<Array4<f32>> {
        let sc = self.segment_channels();
        (0..self.num_modalities)
            .map(|i| {
                self.maps
                    .slice_axis(
                        Axis(1),
                        ndarray::Slice::from(i * sc..(i + 1) * sc),
                    )
                    .to_owned()
            })
            .collect()
    }

    pub fn from_segments(segments: &[Array4<f32>], boundaries: Vec<usize>) -> Self {
        let views: Vec<_> = segments.iter().map(|s| s.view()).collect();
        let maps = ndarray::concatenate(Axis(1), &views).expect("segment shapes agree");
        Self { maps, num_modalities: segments.len(), boundaries }
    }
}

/// Full model state: config plus every named parameter (including the
/// prediction head's batch-norm running statistics, stored as buffers).
#[derive(Debug, Clone)]
pub struct CognitiveModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

pub const GATE_REC: &str = "gate_rec";
pub const GATE_PRED: &str = "gate_pred";

/// Names of the parameters trained in stage 2. Everything else is frozen
/// after stage 1.
pub fn is_stage2_param(name: &str) -> bool {
    (name.starts_with(GATE_PRED) || name.starts_with("head_pred")) && !is_buffer(name)
}

pub fn is_stage1_param(name: &str) -> bool {
    !is_stage2_param(name) && !is_buffer(name)
}

/// Buffers are saved/loaded but never receive gradients.
pub fn is_buffer(name: &str) -> bool {
    name.contains("running_")
}

impl CognitiveModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let blocks = &cfg.encoder_channels;
        for i in 0..cfg.num_modalities {
            let mut c_in = cfg.modality_channels[i];
            for (k, &c_out) in blocks.iter().enumerate() {
                init_conv(&mut params, &format!("encoder_{i}.block{k}"), c_in, c_out, 3, seed);
                c_in = c_out;
            }
            // Decoder mirrors the encoder.
            let mut c_in = cfg.latent_channels();
            for k in 0..blocks.len() {
                let c_out = if k + 1 == blocks.len() {
                    cfg.modality_channels[i]
                } else {
                    blocks[blocks.len() - 2 - k]
                };
                init_conv(&mut params, &format!("decoder_{i}.block{k}"), c_in, c_out, 3, seed);
                c_in = c_out;
            }
        }
        let zc = cfg.num_modalities * cfg.latent_channels();
        for gate in [GATE_REC, GATE_PRED] {
            let k = cfg.attention_kernel;
            init_conv(&mut params, &format!("{gate}.conv0"), zc, cfg.attention_filters, k, seed);
            init_conv(&mut params, &format!("{gate}.conv1"), cfg.attention_filters, zc, k, seed);
        }
        // Reconstruction head: decoder-shaped, from the full gated latent.
        let mut c_in = zc;
        for k in 0..blocks.len() {
            let c_out = if k + 1 == blocks.len() {
                3
            } else {
                blocks[blocks.len() - 2 - k]
            };
            init_conv(&mut params, &format!("head_rec.block{k}"), c_in, c_out, 3, seed);
            c_in = c_out;
        }
        // Prediction head: batch norm + dense softmax over the flat latent.
        let d = cfg.latent_dim_total();
        params.insert("head_pred.bn.gamma", ArrayD::from_elem(IxDyn(&[d]), 1.0));
        params.insert("head_pred.bn.beta", ArrayD::zeros(IxDyn(&[d])));
        params.insert("head_pred.bn.running_mean", ArrayD::zeros(IxDyn(&[d])));
        params.insert("head_pred.bn.running_var", ArrayD::from_elem(IxDyn(&[d]), 1.0));
        init_dense(&mut params, "head_pred.fc", d, cfg.num_classes, seed);
        Ok(Self { cfg, params })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Binding {
        Binding::bind(tape, &self.params, trainable)
    }

    /// Inference-mode encode of a batch of modality tensors.
    pub fn encode_batch(&self, modalities: &[Array4<f32>]) -> Result<LatentBundle, ModelError> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, |_| false);
        let inputs: Vec<Var> = modalities
            .iter()
            .map(|m| tape.constant(m.clone().into_dyn()))
            .collect();
        let z = encode_all(&mut tape, &binding, &self.cfg, &inputs)?;
        let maps = tape
            .value(z)
            .to_owned()
            .into_dimensionality()
            .expect("rank 4 latent");
        Ok(LatentBundle {
            maps,
            num_modalities: self.cfg.num_modalities,
            boundaries: self.cfg.segment_boundaries(),
        })
    }

    /// Sigmoid output of a gate over latent maps (inference mode).
    pub fn gate_sigmoid(&self, z: &LatentBundle, gate: &str) -> Array4<f32> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, |_| false);
        let zv = tape.constant(z.maps.clone().into_dyn());
        let raw = gate_raw(&mut tape, &binding, gate, zv);
        let sig = tape.sigmoid(raw);
        tape.value(sig)
            .to_owned()
            .into_dimensionality()
            .expect("rank 4 gate output")
    }

    /// Inference-mode class probabilities from latent maps, using the
    /// prediction gate and running batch-norm statistics.
    pub fn predict_batch(&self, z: &LatentBundle) -> Array2<f32> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, |_| false);
        let zv = tape.constant(z.maps.clone().into_dyn());
        let raw = gate_raw(&mut tape, &binding, GATE_PRED, zv);
        let zhat = attend(&mut tape, zv, raw);
        let logits = pred_head(
            &mut tape,
            &binding,
            &self.cfg,
            zhat,
            Some(&self.bn_running()),
        );
        let lv = tape
            .value(logits)
            .to_owned()
            .into_dimensionality()
            .expect("rank 2 logits");
        crate::autodiff::softmax_rows(&lv)
    }

    /// Inference-mode reconstruction from latent maps via the
    /// reconstruction gate.
    pub fn reconstruct_batch(&self, z: &LatentBundle) -> Array4<f32> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, |_| false);
        let zv = tape.constant(z.maps.clone().into_dyn());
        let raw = gate_raw(&mut tape, &binding, GATE_REC, zv);
        let zhat = attend(&mut tape, zv, raw);
        let out = recon_head(&mut tape, &binding, &self.cfg, zhat);
        tape.value(out)
            .to_owned()
            .into_dimensionality()
            .expect("rank 4 reconstruction")
    }

    /// Inference-mode decode of one modality's latent segment.
    pub fn decode_modality(&self, z: &LatentBundle, modality: usize) -> Array4<f32> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, |_| false);
        let seg = z.segments()[modality].clone();
        let sv = tape.constant(seg.into_dyn());
        let out = decode_modality(&mut tape, &binding, &self.cfg, modality, sv);
        tape.value(out)
            .to_owned()
            .into_dimensionality()
            .expect("rank 4 modality decode")
    }

    pub fn bn_running(&self) -> (Array1<f32>, Array1<f32>) {
        let m = self
            .params
            .get("head_pred.bn.running_mean")
            .expect("bn buffer")
            .to_owned()
            .into_dimensionality()
            .expect("rank 1");
        let v = self
            .params
            .get("head_pred.bn.running_var")
            .expect("bn buffer")
            .to_owned()
            .into_dimensionality()
            .expect("rank 1");
        (m, v)
    }

    pub fn update_bn_running(&mut self, mean: &Array1<f32>, var: &Array1<f32>, momentum: f32) {
        let rm = self
            .params
            .get_mut("head_pred.bn.running_mean")
            .expect("bn buffer");
        *rm = (rm.to_owned() * (1.0 - momentum) + &mean.clone().into_dyn() * momentum).into_dyn();
        let rv = self
            .params
            .get_mut("head_pred.bn.running_var")
            .expect("bn buffer");
        *rv = (rv.to_owned() * (1.0 - momentum) + &var.clone().into_dyn() * momentum).into_dyn();
    }
}

fn uniform_init(shape: &[usize], fan_in: usize, name: &str, seed: u64) -> ArrayD<f32> {
    let mut rng = rng::stream(seed, &format!("init/{name}"));
    let limit = (6.0 / fan_in as f32).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-limit..limit))
}

fn init_conv(params: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, seed: u64) {
    let w = uniform_init(&[c_out, c_in, k, k], c_in * k * k, name, seed);
    params.insert(&format!("{name}.w"), w);
    params.insert(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[c_out])));
}

fn init_dense(params: &mut ParamStore, name: &str, d_in: usize, d_out: usize, seed: u64) {
    let w = uniform_init(&[d_in, d_out], d_in, name, seed);
    params.insert(&format!("{name}.w"), w);
    params.insert(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[d_out])));
}

fn conv(tape: &mut Tape, b: &Binding, name: &str, x: Var, pad: Padding) -> Var {
    let w = b.var(&format!("{name}.w"));
    let bias = b.var(&format!("{name}.b"));
    tape.conv2d(x, w, bias, pad)
}

/// One encoder: conv3x3-relu-maxpool per block, emitting the block-5
/// feature map.
pub fn encode_modality(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    modality: usize,
    x: Var,
) -> Result<Var, ModelError> {
    let shape = tape.shape(x).to_vec();
    let expect = [
        cfg.modality_channels[modality],
        cfg.input_resolution,
        cfg.input_resolution,
    ];
    if shape.len() != 4 || shape[1..] != expect {
        return Err(ModelError::ShapeMismatch {
            expected: format!("[N, {}, {}, {}]", expect[0], expect[1], expect[2]),
            got: format!("{shape:?}"),
        });
    }
    let mut h = x;
    for k in 0..cfg.encoder_channels.len() {
        h = conv(tape, b, &format!("encoder_{modality}.block{k}"), h, Padding::sym(1));
        h = tape.relu(h);
        h = tape.max_pool2(h);
    }
    Ok(h)
}

/// Encode every modality and stack the feature maps modality-major along
/// the channel axis.
pub fn encode_all(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    inputs: &[Var],
) -> Result<Var, ModelError> {
    assert_eq!(inputs.len(), cfg.num_modalities);
    let mut latents = Vec::with_capacity(inputs.len());
    for (i, &x) in inputs.iter().enumerate() {
        latents.push(encode_modality(tape, b, cfg, i, x)?);
    }
    Ok(tape.concat(&latents, 1))
}

/// Raw (pre-sigmoid) gate output; same shape as the latent maps.
pub fn gate_raw(tape: &mut Tape, b: &Binding, gate: &str, z: Var) -> Var {
    let k = {
        // kernel size from the weight shape
        let w = tape.value(b.var(&format!("{gate}.conv0.w")));
        w.shape()[2]
    };
    let pad = if k % 2 == 1 {
        Padding::sym(k / 2)
    } else {
        Padding::same_even(k)
    };
    let h = conv(tape, b, &format!("{gate}.conv0"), z, pad);
    let h = tape.relu(h);
    conv(tape, b, &format!("{gate}.conv1"), h, pad)
}

/// `zhat = sigmoid(gate_raw) * z`, elementwise.
pub fn attend(tape: &mut Tape, z: Var, raw_gate: Var) -> Var {
    let s = tape.sigmoid(raw_gate);
    tape.mul(s, z)
}

/// Decoder for one modality: upsample-conv blocks mirroring the encoder,
/// sigmoid output in [0,1].
pub fn decode_modality(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    modality: usize,
    z_i: Var,
) -> Var {
    decode_stack(tape, b, cfg, &format!("decoder_{modality}"), z_i)
}

/// Reconstruction head from the gated full latent to an RGB image.
pub fn recon_head(tape: &mut Tape, b: &Binding, cfg: &ModelConfig, zhat: Var) -> Var {
    decode_stack(tape, b, cfg, "head_rec", zhat)
}

fn decode_stack(tape: &mut Tape, b: &Binding, cfg: &ModelConfig, prefix: &str, z: Var) -> Var {
    let blocks = cfg.encoder_channels.len();
    let mut h = z;
    for k in 0..blocks {
        h = tape.upsample2(h);
        h = conv(tape, b, &format!("{prefix}.block{k}"), h, Padding::sym(1));
        h = if k + 1 == blocks { tape.sigmoid(h) } else { tape.relu(h) };
    }
    h
}

/// Prediction head: flatten, batch norm, dense. Returns logits; in training
/// mode (`running = None`) the caller receives the batch statistics through
/// `bn_stats_out`.
pub fn pred_head(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    zhat: Var,
    running: Option<&(Array1<f32>, Array1<f32>)>,
) -> Var {
    let (logits, _) = pred_head_with_stats(tape, b, cfg, zhat, running);
    logits
}

pub fn pred_head_with_stats(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    zhat: Var,
    running: Option<&(Array1<f32>, Array1<f32>)>,
) -> (Var, Option<(Array1<f32>, Array1<f32>)>) {
    let shape = tape.shape(zhat).to_vec();
    let n = shape[0];
    let flat = tape.reshape(zhat, &[n, cfg.latent_dim_total()]);
    let gamma = b.var("head_pred.bn.gamma");
    let beta = b.var("head_pred.bn.beta");
    let (normed, stats) = tape.batch_norm(
        flat,
        gamma,
        beta,
        running.map(|(m, v)| (m, v)),
        1e-5,
    );
    let w = b.var("head_pred.fc.w");
    let bias = b.var("head_pred.fc.b");
    (tape.linear(normed, w, bias), stats)
}
