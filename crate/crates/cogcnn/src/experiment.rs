//! Experiment orchestration: one TOML config drives synthetic data
//! generation, two-stage cognitive training, baseline training, clean and
//! cue-conflict evaluation, relevance reports and table rendering, across
//! a list of seeds with checkpoint-based resume.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{
    evaluate_baseline, train_baseline, BaselineConfig, BaselineKind, BaselineModel,
    BaselineTrainConfig, EvalSummary,
};
use crate::checkpoint::{self, CheckpointError, CheckpointMeta};
use crate::cue::{generate_synthetic_dataset, miscue_set, CueError, SynthConfig};
use crate::dataset::{tensorize_miscue, tensorize_synthetic, DatasetError, TensorDataset};
use crate::model::{CognitiveModel, LatentBundle, ModelConfig, ModelError, GATE_PRED, GATE_REC};
use crate::modality::{TextureSynthConfig, MODALITY_NAMES};
use crate::relevance::{self, RelevanceReport, ReportScope};
use crate::train::{
    eval_accuracy, train_stage1, train_stage2, EpochRecord, Stage1Config, Stage2Config, TrainError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cue(#[from] CueError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Identifiers of the comparable models, in report order.
pub const MODEL_NAMES: [&str; 5] = ["baseline", "cog2rc", "cog4uc", "cog4rc", "cueaug"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// One full run per seed; results are averaged. Must be non-empty.
    pub seeds: Vec<u64>,
    /// Model input resolution (modalities are resized to this).
    pub resolution: usize,
    /// Subset of `MODEL_NAMES` to run.
    pub models: Vec<String>,
    pub encoder_channels: Vec<usize>,
    pub attention_filters: usize,
    pub data: SynthConfig,
    pub texture: TextureSynthConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub baseline: BaselineTrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "cogcnn".into(),
            seeds: vec![1, 2, 3],
            resolution: 64,
            models: MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
            encoder_channels: vec![16, 32, 64, 64, 64],
            attention_filters: 128,
            data: SynthConfig::default(),
            texture: TextureSynthConfig { patch_size: 16, overlap: 6, ..Default::default() },
            stage1: Stage1Config { target_mse: Some(0.01), ..Default::default() },
            stage2: Stage2Config::default(),
            baseline: BaselineTrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::BadConfig("seeds list is empty".into()));
        }
        if self.models.is_empty() {
            return Err(ExperimentError::BadConfig("models list is empty".into()));
        }
        for m in &self.models {
            if !MODEL_NAMES.contains(&m.as_str()) {
                return Err(ExperimentError::BadConfig(format!(
                    "unknown model {m}; expected one of {MODEL_NAMES:?}"
                )));
            }
        }
        let div = 1usize << self.encoder_channels.len();
        if self.resolution % div != 0 || self.resolution / div == 0 {
            return Err(ExperimentError::BadConfig(format!(
                "resolution {} incompatible with {} encoder blocks",
                self.resolution,
                self.encoder_channels.len()
            )));
        }
        self.data.validate()?;
        self.texture.validate().map_err(CueError::from)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn hash(&self) -> String {
        checkpoint::config_hash(self)
    }

    fn model_config(&self, num_modalities: usize) -> ModelConfig {
        let modality_channels = match num_modalities {
            2 => vec![1, 3],
            _ => vec![1, 3, 1, 1],
        };
        ModelConfig {
            num_modalities,
            input_resolution: self.resolution,
            encoder_channels: self.encoder_channels.clone(),
            modality_channels,
            num_classes: self.data.num_classes,
            attention_filters: self.attention_filters,
            attention_kernel: 2,
        }
    }

    fn wants(&self, model: &str) -> bool {
        self.models.iter().any(|m| m == model)
    }
}

/// Results of one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Per-model clean/miscue summaries, keyed by model name.
    pub evals: BTreeMap<String, EvalSummary>,
    /// Relevance reports for the cognitive models.
    pub relevance: BTreeMap<String, RelevanceReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub seeds: Vec<SeedOutcome>,
}

impl ExperimentOutcome {
    /// Seed-mean evaluation per model (only models present in every seed).
    pub fn mean_evals(&self) -> BTreeMap<String, EvalSummary> {
        let mut out = BTreeMap::new();
        for name in MODEL_NAMES {
            let rows: Vec<&EvalSummary> = self
                .seeds
                .iter()
                .filter_map(|s| s.evals.get(name))
                .collect();
            if rows.is_empty() || rows.len() != self.seeds.len() {
                continue;
            }
            let n = rows.len() as f64;
            out.insert(
                name.to_string(),
                EvalSummary {
                    clean_accuracy: rows.iter().map(|r| r.clean_accuracy).sum::<f64>() / n,
                    miscue_shape_accuracy: rows.iter().map(|r| r.miscue_shape_accuracy).sum::<f64>()
                        / n,
                    miscue_texture_rate: rows.iter().map(|r| r.miscue_texture_rate).sum::<f64>()
                        / n,
                },
            );
        }
        out
    }

    /// Seed-mean relevance report per model.
    pub fn mean_relevance(&self) -> BTreeMap<String, RelevanceReport> {
        let mut out = BTreeMap::new();
        for name in MODEL_NAMES {
            let rows: Vec<&RelevanceReport> = self
                .seeds
                .iter()
                .filter_map(|s| s.relevance.get(name))
                .collect();
            if rows.is_empty() || rows.len() != self.seeds.len() {
                continue;
            }
            let k = rows[0].rrmc.len();
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&RelevanceReport) -> &Vec<f64>| -> Vec<f64> {
                (0..k)
                    .map(|i| rows.iter().map(|r| f(r)[i]).sum::<f64>() / n)
                    .collect()
            };
            let rrmc = mean(&|r| &r.rrmc);
            let trmc = mean(&|r| &r.trmc);
            let report = RelevanceReport::new(
                rows[0].modality_names.clone(),
                rrmc,
                trmc,
                ReportScope::DatasetMean,
            )
            .expect("same lengths");
            out.insert(name.to_string(), report);
        }
        out
    }
}

/// Dataset-mean relevance report of a cognitive model over latents.
pub fn relevance_report(
    model: &CognitiveModel,
    z: &LatentBundle,
    chunk: usize,
) -> RelevanceReport {
    let coeffs = |gate: &str| -> Vec<f64> {
        let n = z.maps.dim().0;
        let mut rows = Vec::with_capacity(n);
        for start in (0..n).step_by(chunk.max(1)) {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let sub = LatentBundle {
                maps: z.maps.select(Axis(0), &idx),
                num_modalities: z.num_modalities,
                boundaries: z.boundaries.clone(),
            };
            let sig = model.gate_sigmoid(&sub, gate);
            let (bn, c, h, w) = sig.dim();
            let flat = sig.into_shape_with_order((bn, c * h * w)).expect("standard layout");
            let boundaries =
                relevance::even_boundaries(z.num_modalities, c / z.num_modalities * h * w);
            for row in flat.rows() {
                let g: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                rows.push(
                    relevance::modality_coefficients(&g, &boundaries).expect("sigmoid output"),
                );
            }
        }
        relevance::mean_coefficients(&rows).expect("non-empty dataset")
    };
    let names: Vec<String> = MODALITY_NAMES
        .iter()
        .take(z.num_modalities)
        .map(|s| s.to_string())
        .collect();
    RelevanceReport::new(names, coeffs(GATE_REC), coeffs(GATE_PRED), ReportScope::DatasetMean)
        .expect("matched lengths")
}

struct SeedContext {
    clean: TensorDataset,
    val: TensorDataset,
    train: TensorDataset,
    miscue: crate::dataset::MiscueTensors,
}

fn prepare_seed_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext, ExperimentError> {
    // One fixed dataset per experiment (keyed by the data config's own seed);
    // the run seed only varies training and the miscue pairing.
    let data = generate_synthetic_dataset(&cfg.data)?;
    let train = tensorize_synthetic(&data.train, &cfg.texture, cfg.resolution)?;
    let val = tensorize_synthetic(&data.val, &cfg.texture, cfg.resolution)?;
    let clean = tensorize_synthetic(&data.test, &cfg.texture, cfg.resolution)?;
    let mis = miscue_set(&data.test, cfg.data.num_classes, &cfg.texture, seed)?;
    let miscue = tensorize_miscue(&mis, &cfg.texture, cfg.resolution)?;
    Ok(SeedContext { clean, val, train, miscue })
}

fn append_records(path: &Path, records: &[EpochRecord]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

/// Train (or resume) the shared stage-1 model for `n` modalities.
#[allow(clippy::too_many_arguments)]
fn stage1_model(
    cfg: &ExperimentConfig,
    seed: u64,
    n_modalities: usize,
    ctx: &SeedContext,
    ckpt: &Path,
    log: &Path,
) -> Result<CognitiveModel, ExperimentError> {
    let mcfg = cfg.model_config(n_modalities);
    if ckpt.is_file() {
        let (_meta, params) = checkpoint::load_matching(ckpt, &mcfg)?;
        return Ok(CognitiveModel { cfg: mcfg, params });
    }
    let mut model = CognitiveModel::new(mcfg.clone(), seed)?;
    let s1 = Stage1Config { rng_seed: seed, ..cfg.stage1.clone() };
    let take = |t: &TensorDataset| crate::train::Stage1Data {
        modalities: t.data.modalities[..n_modalities].to_vec(),
        images: t.data.images.clone(),
    };
    let state = train_stage1(&mut model, &take(&ctx.train), &take(&ctx.val), &s1)?;
    append_records(log, &state.records)?;
    let meta = CheckpointMeta {
        stage: "recon".into(),
        epoch: state.records.len(),
        config_hash: checkpoint::config_hash(&mcfg),
        seed,
        best_metric: Some(state.best_metric),
    };
    checkpoint::save(ckpt, &meta, &mcfg, &model.params)?;
    Ok(model)
}

/// Latents for the first `n` modalities of a tensor dataset.
fn encode(model: &CognitiveModel, t: &TensorDataset) -> Result<LatentBundle, ExperimentError> {
    let n = model.cfg.num_modalities;
    Ok(model.encode_batch(&t.data.modalities[..n])?)
}

fn encode_stage1(
    model: &CognitiveModel,
    data: &crate::train::Stage1Data,
) -> Result<LatentBundle, ExperimentError> {
    let n = model.cfg.num_modalities;
    Ok(model.encode_batch(&data.modalities[..n])?)
}

#[allow(clippy::too_many_arguments)]
fn run_cognitive_variant(
    cfg: &ExperimentConfig,
    seed: u64,
    name: &str,
    stage1: &CognitiveModel,
    ctx: &SeedContext,
    regularized: bool,
    ckpt: &Path,
    log: &Path,
) -> Result<(EvalSummary, RelevanceReport), ExperimentError> {
    let mut model = if ckpt.is_file() {
        let (_meta, params) = checkpoint::load_matching(ckpt, &stage1.cfg)?;
        CognitiveModel { cfg: stage1.cfg.clone(), params }
    } else {
        let mut model = stage1.clone();
        let z_train = encode(&model, &ctx.train)?;
        let z_val = encode(&model, &ctx.val)?;
        let s2 = Stage2Config { rng_seed: seed, regularized, ..cfg.stage2.clone() };
        let state = train_stage2(
            &mut model,
            &z_train,
            &ctx.train.labels,
            &z_val,
            &ctx.val.labels,
            &s2,
        )?;
        append_records(log, &state.records)?;
        let meta = CheckpointMeta {
            stage: format!("pred:{name}"),
            epoch: state.records.len(),
            config_hash: checkpoint::config_hash(&stage1.cfg),
            seed,
            best_metric: Some(state.best_metric),
        };
        checkpoint::save(ckpt, &meta, &stage1.cfg, &model.params)?;
        model
    };
    // Evaluation never mutates; shadow as immutable.
    let model = &mut model;
    let z_clean = encode(model, &ctx.clean)?;
    let z_miscue = encode_stage1(model, &ctx.miscue.data)?;
    let chunk = cfg.stage2.batch_size;
    let eval = EvalSummary {
        clean_accuracy: eval_accuracy(model, &z_clean, &ctx.clean.labels, chunk),
        miscue_shape_accuracy: eval_accuracy(model, &z_miscue, &ctx.miscue.shape_labels, chunk),
        miscue_texture_rate: eval_accuracy(model, &z_miscue, &ctx.miscue.texture_labels, chunk),
    };
    let report = relevance_report(model, &z_clean, chunk);
    Ok((eval, report))
}

#[allow(clippy::too_many_arguments)]
fn run_baseline_variant(
    cfg: &ExperimentConfig,
    seed: u64,
    kind: BaselineKind,
    ctx: &SeedContext,
    ckpt: &Path,
    log: &Path,
) -> Result<EvalSummary, ExperimentError> {
    let bcfg = BaselineConfig {
        encoder_channels: cfg.encoder_channels.clone(),
        ..BaselineConfig::new(kind, cfg.resolution, cfg.data.num_classes)
    };
    let input = |t: &TensorDataset| match kind {
        BaselineKind::Conventional => t.data.images.clone(),
        BaselineKind::CueAugmented => t.stacked_channels(),
    };
    let miscue_input = match kind {
        BaselineKind::Conventional => ctx.miscue.data.images.clone(),
        BaselineKind::CueAugmented => {
            let t = TensorDataset {
                data: ctx.miscue.data.clone(),
                labels: ctx.miscue.shape_labels.clone(),
            };
            t.stacked_channels()
        }
    };
    let model = if ckpt.is_file() {
        let (_meta, params) = checkpoint::load_matching(ckpt, &bcfg)?;
        BaselineModel { cfg: bcfg, params }
    } else {
        let mut model = BaselineModel::new(bcfg.clone(), seed)?;
        let tcfg = BaselineTrainConfig { rng_seed: seed, ..cfg.baseline.clone() };
        let state = train_baseline(
            &mut model,
            &input(&ctx.train),
            &ctx.train.labels,
            &input(&ctx.val),
            &ctx.val.labels,
            &tcfg,
        )?;
        append_records(log, &state.records)?;
        let meta = CheckpointMeta {
            stage: "baseline".into(),
            epoch: state.records.len(),
            config_hash: checkpoint::config_hash(&bcfg),
            seed,
            best_metric: Some(state.best_metric),
        };
        checkpoint::save(ckpt, &meta, &bcfg, &model.params)?;
        model
    };
    Ok(evaluate_baseline(
        &model,
        &input(&ctx.clean),
        &ctx.clean.labels,
        &miscue_input,
        &ctx.miscue.shape_labels,
        &ctx.miscue.texture_labels,
        cfg.baseline.batch_size,
    ))
}

fn seed_paths(out_dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    (
        out_dir.join(format!("checkpoints/seed{seed}")),
        out_dir.join(format!("metrics/seed{seed}.jsonl")),
    )
}

fn stage1_ckpt_name(model: &str) -> &'static str {
    if model == "cog2rc" {
        "stage1_n2.bin"
    } else {
        "stage1_n4.bin"
    }
}

/// Train (or resume) only the reconstruction stage for every seed: the
/// 4-modality stage-1 model, plus the 2-modality one when `cog2rc` is
/// configured.
pub fn run_stage1(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), ExperimentError> {
    cfg.validate()?;
    for &seed in &cfg.seeds {
        let ctx = prepare_seed_data(cfg, seed)?;
        let (ckpt_dir, log) = seed_paths(out_dir, seed);
        if cfg.wants("cog4uc") || cfg.wants("cog4rc") {
            stage1_model(cfg, seed, 4, &ctx, &ckpt_dir.join("stage1_n4.bin"), &log)?;
        }
        if cfg.wants("cog2rc") {
            stage1_model(cfg, seed, 2, &ctx, &ckpt_dir.join("stage1_n2.bin"), &log)?;
        }
    }
    Ok(())
}

/// Train (or resume) the prediction stage of one model for every seed.
/// Cognitive variants require their stage-1 checkpoint to exist already;
/// baselines train in a single stage. Returns per-seed summaries.
pub fn run_stage2(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    model: &str,
) -> Result<Vec<(u64, EvalSummary)>, ExperimentError> {
    cfg.validate()?;
    if !MODEL_NAMES.contains(&model) {
        return Err(ExperimentError::BadConfig(format!("unknown model {model}")));
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = prepare_seed_data(cfg, seed)?;
        let (ckpt_dir, log) = seed_paths(out_dir, seed);
        let eval = match model {
            "baseline" | "cueaug" => {
                let kind = if model == "baseline" {
                    BaselineKind::Conventional
                } else {
                    BaselineKind::CueAugmented
                };
                run_baseline_variant(cfg, seed, kind, &ctx, &ckpt_dir.join(format!("{model}.bin")), &log)?
            }
            _ => {
                let s1_path = ckpt_dir.join(stage1_ckpt_name(model));
                if !s1_path.is_file() {
                    return Err(TrainError::StageOrder(format!(
                        "stage-1 checkpoint {} missing; run train-recon first",
                        s1_path.display()
                    ))
                    .into());
                }
                let n = if model == "cog2rc" { 2 } else { 4 };
                let s1 = stage1_model(cfg, seed, n, &ctx, &s1_path, &log)?;
                let (eval, _report) = run_cognitive_variant(
                    cfg,
                    seed,
                    model,
                    &s1,
                    &ctx,
                    model.ends_with("rc"),
                    &ckpt_dir.join(format!("{model}.bin")),
                    &log,
                )?;
                eval
            }
        };
        out.push((seed, eval));
    }
    Ok(out)
}

/// Evaluate one already-trained model for every seed; errs when its
/// checkpoint is missing.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    model: &str,
) -> Result<Vec<(u64, EvalSummary)>, ExperimentError> {
    cfg.validate()?;
    for &seed in &cfg.seeds {
        let (ckpt_dir, _) = seed_paths(out_dir, seed);
        let path = ckpt_dir.join(format!("{model}.bin"));
        if !path.is_file() {
            return Err(TrainError::StageOrder(format!(
                "checkpoint {} missing; train the model first",
                path.display()
            ))
            .into());
        }
    }
    // With checkpoints present, run_stage2 only loads and evaluates.
    run_stage2(cfg, out_dir, model)
}

/// Run every configured model for every seed, resuming from checkpoints
/// under `out_dir` when they match the current config.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = prepare_seed_data(cfg, seed)?;
        let ckpt_dir = out_dir.join(format!("checkpoints/seed{seed}"));
        let log = out_dir.join(format!("metrics/seed{seed}.jsonl"));
        let mut evals = BTreeMap::new();
        let mut reports = BTreeMap::new();

        let needs_4 = cfg.wants("cog4uc") || cfg.wants("cog4rc");
        if needs_4 {
            let s1 = stage1_model(cfg, seed, 4, &ctx, &ckpt_dir.join("stage1_n4.bin"), &log)?;
            for (name, reg) in [("cog4uc", false), ("cog4rc", true)] {
                if cfg.wants(name) {
                    let (eval, report) = run_cognitive_variant(
                        cfg,
                        seed,
                        name,
                        &s1,
                        &ctx,
                        reg,
                        &ckpt_dir.join(format!("{name}.bin")),
                        &log,
                    )?;
                    evals.insert(name.to_string(), eval);
                    reports.insert(name.to_string(), report);
                }
            }
        }
        if cfg.wants("cog2rc") {
            let s1 = stage1_model(cfg, seed, 2, &ctx, &ckpt_dir.join("stage1_n2.bin"), &log)?;
            let (eval, report) = run_cognitive_variant(
                cfg,
                seed,
                "cog2rc",
                &s1,
                &ctx,
                true,
                &ckpt_dir.join("cog2rc.bin"),
                &log,
            )?;
            evals.insert("cog2rc".to_string(), eval);
            reports.insert("cog2rc".to_string(), report);
        }
        for (name, kind) in [
            ("baseline", BaselineKind::Conventional),
            ("cueaug", BaselineKind::CueAugmented),
        ] {
            if cfg.wants(name) {
                let eval = run_baseline_variant(
                    cfg,
                    seed,
                    kind,
                    &ctx,
                    &ckpt_dir.join(format!("{name}.bin")),
                    &log,
                )?;
                evals.insert(name.to_string(), eval);
            }
        }
        seeds.push(SeedOutcome { seed, evals, relevance: reports });
    }
    let outcome = ExperimentOutcome { config_hash: cfg.hash(), seeds };
    let path = out_dir.join("outcome.json");
    let json = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(outcome)
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Modality relevance table: one row per modality, a shared RRMC column
/// (from the regularized model when present, else the first available)
/// and one TRMC column per cognitive model.
pub fn render_table1(reports: &BTreeMap<String, RelevanceReport>) -> String {
    let order: Vec<&str> = MODEL_NAMES
        .iter()
        .copied()
        .filter(|m| reports.contains_key(*m))
        .collect();
    let mut out = String::new();
    out.push_str("Modality relevance coefficients (percent, dataset mean)\n\n");
    if order.is_empty() {
        out.push_str("(no cognitive models were run)\n");
        return out;
    }
    let rrmc_src = *order.iter().find(|m| **m == "cog4rc").unwrap_or(&order[0]);
    let names = &reports[rrmc_src].modality_names;
    let mut header = format!("{:<12}{:>10}", "modality", "RRMC");
    for m in &order {
        header.push_str(&format!("{:>14}", format!("TRMC({m})")));
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        let mut line = format!("{:<12}{:>10}", name, pct(reports[rrmc_src].rrmc[i]));
        for m in &order {
            let v = reports[*m].trmc.get(i).copied();
            line.push_str(&format!(
                "{:>14}",
                v.map(pct).unwrap_or_else(|| "-".to_string())
            ));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out.push('\n');
    for m in &order {
        out.push_str(&format!("gap({m}) = {:.4}\n", reports[*m].gap));
    }
    out
}

/// Clean vs cue-conflict comparison table, one row per model.
pub fn render_table2(evals: &BTreeMap<String, EvalSummary>) -> String {
    let mut out = String::new();
    out.push_str("Clean and cue-conflict accuracy (percent)\n\n");
    let header = format!(
        "{:<12}{:>10}{:>16}{:>18}",
        "model", "clean", "miscue(shape)", "miscue(texture)"
    );
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for name in MODEL_NAMES {
        if let Some(e) = evals.get(name) {
            out.push_str(&format!(
                "{:<12}{:>10}{:>16}{:>18}\n",
                name,
                pct(e.clean_accuracy),
                pct(e.miscue_shape_accuracy),
                pct(e.miscue_texture_rate)
            ));
        }
    }
    out
}

/// Write `table1.{txt,json}` and `table2.{txt,json}` under
/// `<out_dir>/reports`. Rendering is deterministic: identical outcomes
/// produce byte-identical files.
pub fn emit_reports(outcome: &ExperimentOutcome, out_dir: &Path) -> Result<(), ExperimentError> {
    let dir = out_dir.join("reports");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let relevance = outcome.mean_relevance();
    let evals = outcome.mean_evals();
    let writes: [(&str, String); 4] = [
        ("table1.txt", render_table1(&relevance)),
        (
            "table1.json",
            serde_json::to_string_pretty(&relevance).expect("serializes") + "\n",
        ),
        ("table2.txt", render_table2(&evals)),
        (
            "table2.json",
            serde_json::to_string_pretty(&evals).expect("serializes") + "\n",
        ),
    ];
    for (name, content) in writes {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io_err(&path))?;
    }
    Ok(())
}
