//! Command-line harness for the cogcnn experiments.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors,
//! 2 on runtime failures (training, i/o, data).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cogcnn::cue::{
    generate_synthetic_dataset, miscue_test_grid, LabelMode, SynthConfig, SyntheticExample,
};
use cogcnn::dataset::{extract_to_dir, load_image_folder};
use cogcnn::experiment::{
    emit_reports, evaluate_model, run_experiment, run_stage1, run_stage2, ExperimentConfig,
    ExperimentError, ExperimentOutcome,
};
use cogcnn::TextureSynthConfig;

#[derive(Parser)]
#[command(name = "cogcnn", version, about = "Cognitive CNN experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelModeArg {
    Composite,
    ShapeDetermined,
    TextureDetermined,
}

impl From<LabelModeArg> for LabelMode {
    fn from(v: LabelModeArg) -> Self {
        match v {
            LabelModeArg::Composite => LabelMode::Composite,
            LabelModeArg::ShapeDetermined => LabelMode::ShapeDetermined,
            LabelModeArg::TextureDetermined => LabelMode::TextureDetermined,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract the four modalities of every image in a class-folder
    /// dataset and write them with a manifest.
    Extract {
        /// Root folder containing one subdirectory per class.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for modality PNGs and manifest.jsonl.
        #[arg(long)]
        output: PathBuf,
        /// Side length the extracted modalities are resized to.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Quilting patch size.
        #[arg(long, default_value_t = 16)]
        patch_size: usize,
        /// Quilting overlap.
        #[arg(long, default_value_t = 6)]
        overlap: usize,
        /// Quilting RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the synthetic shape/texture dataset as PNG folders.
    SynthData {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Canvas side in pixels.
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, value_enum, default_value_t = LabelModeArg::Composite)]
        label_mode: LabelModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train (or resume) the reconstruction stage for every configured
    /// seed.
    TrainRecon {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or resume) the prediction stage (or a baseline) of one
    /// model. Cognitive models require train-recon to have run first.
    TrainPred {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// One of: baseline, cog2rc, cog4uc, cog4rc, cueaug.
        #[arg(long)]
        model: String,
    },
    /// Evaluate one trained model on clean and miscue test sets.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: String,
    },
    /// Render a grid of cue-conflict images, one per (shape, texture)
    /// class pair.
    Miscue {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-render the result tables from a finished run's outcome.json.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured model across all seeds and emit the reports.
    RunAll {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Any failure to produce a valid config is a usage error (exit 1).
fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, (u8, String)> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| (1, e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg)
}

fn save_split(
    split: &[SyntheticExample],
    class_names: &[String],
    dir: &Path,
) -> std::io::Result<()> {
    for ex in split {
        let class = &class_names[ex.label];
        let stem = ex.id.replace('/', "_");
        let path = dir.join(class).join(format!("{stem}.png"));
        fs::create_dir_all(path.parent().expect("has parent"))?;
        ex.image
            .save(&path)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    Ok(())
}

/// Errors that indicate misuse rather than a runtime failure.
fn is_usage_error(e: &ExperimentError) -> bool {
    matches!(
        e,
        ExperimentError::BadConfig(_) | ExperimentError::Toml(_) | ExperimentError::Cue(_)
    )
}

fn run(cmd: Cmd) -> Result<(), (u8, String)> {
    let runtime = |e: ExperimentError| {
        let code = if is_usage_error(&e) { 1 } else { 2 };
        (code, e.to_string())
    };
    match cmd {
        Cmd::Extract { input, output, resolution, patch_size, overlap, seed } => {
            let tex_cfg = TextureSynthConfig {
                patch_size,
                overlap,
                rng_seed: seed,
                ..Default::default()
            };
            tex_cfg.validate().map_err(|e| (1, e.to_string()))?;
            let (images, class_names) =
                load_image_folder(&input).map_err(|e| (2, e.to_string()))?;
            let entries = extract_to_dir(&images, &class_names, &output, &tex_cfg, resolution)
                .map_err(|e| (2, e.to_string()))?;
            println!("extracted {} images to {}", entries.len(), output.display());
            Ok(())
        }
        Cmd::SynthData { output, classes, per_class, resolution, label_mode, seed } => {
            let cfg = SynthConfig {
                num_classes: classes,
                per_class,
                resolution,
                label_mode: label_mode.into(),
                rng_seed: seed,
                ..Default::default()
            };
            let data = generate_synthetic_dataset(&cfg).map_err(|e| (1, e.to_string()))?;
            for (name, split) in [
                ("train", &data.train),
                ("val", &data.val),
                ("test", &data.test),
            ] {
                save_split(split, &data.class_names, &output.join(name))
                    .map_err(|e| (2, e.to_string()))?;
            }
            println!(
                "wrote {} train / {} val / {} test images to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                output.display()
            );
            Ok(())
        }
        Cmd::TrainRecon { config, out } => {
            let cfg = load_config(&config)?;
            run_stage1(&cfg, &out).map_err(runtime)?;
            println!("reconstruction stage complete for seeds {:?}", cfg.seeds);
            Ok(())
        }
        Cmd::TrainPred { config, out, model } => {
            let cfg = load_config(&config)?;
            let evals = run_stage2(&cfg, &out, &model).map_err(runtime)?;
            for (seed, e) in evals {
                println!(
                    "seed {seed}: clean {:.3} miscue(shape) {:.3}",
                    e.clean_accuracy, e.miscue_shape_accuracy
                );
            }
            Ok(())
        }
        Cmd::Eval { config, out, model } => {
            let cfg = load_config(&config)?;
            let evals = evaluate_model(&cfg, &out, &model).map_err(runtime)?;
            let json = serde_json::to_string_pretty(
                &evals
                    .iter()
                    .map(|(s, e)| (s.to_string(), e))
                    .collect::<std::collections::BTreeMap<_, _>>(),
            )
            .expect("summary serializes");
            println!("{json}");
            Ok(())
        }
        Cmd::Miscue { output, classes, resolution, seed } => {
            if !(2..=8).contains(&classes) {
                return Err((1, format!("classes must be in 2..=8, got {classes}")));
            }
            let tex_cfg =
                TextureSynthConfig { patch_size: 16, overlap: 6, ..Default::default() };
            let grid = miscue_test_grid(classes, resolution, &tex_cfg, seed)
                .map_err(|e| (2, e.to_string()))?;
            fs::create_dir_all(&output).map_err(|e| (2, e.to_string()))?;
            for m in &grid {
                let path = output.join(format!("{}.png", m.id));
                m.image.save(&path).map_err(|e| (2, e.to_string()))?;
            }
            println!("wrote {} miscue images to {}", grid.len(), output.display());
            Ok(())
        }
        Cmd::Report { out } => {
            let path = out.join("outcome.json");
            let text = fs::read_to_string(&path)
                .map_err(|e| (2, format!("{}: {e}", path.display())))?;
            let outcome: ExperimentOutcome =
                serde_json::from_str(&text).map_err(|e| (2, e.to_string()))?;
            emit_reports(&outcome, &out).map_err(runtime)?;
            println!("reports written to {}", out.join("reports").display());
            Ok(())
        }
        Cmd::RunAll { config, out } => {
            let cfg = load_config(&config)?;
            let outcome = run_experiment(&cfg, &out).map_err(runtime)?;
            emit_reports(&outcome, &out).map_err(runtime)?;
            println!(
                "ran {} models across {} seeds; reports in {}",
                cfg.models.len(),
                outcome.seeds.len(),
                out.join("reports").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().expect("write to stdio");
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
