//! Synthetic shape/texture data and cue-conflict ("miscue") images.
//!
//! Each class pairs one shape family with one procedural texture, drawn on a
//! white background with jittered rotation, scale and position. Label modes
//! decouple the cues: `Composite` keeps shape and texture consistent,
//! `ShapeDetermined` randomizes the texture so only shape carries the label,
//! and `TextureDetermined` does the reverse. A miscue image keeps one
//! image's silhouette but refills it with a texture quilted from another
//! class, so shape and texture cues disagree.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_data::RgbImage;
use crate::modality::{
    extract_silhouette, select_texture_source, synthesize_texture, ModalityError,
    TextureSynthConfig, DEFAULT_WHITE_THRESH,
};
use crate::rng;

pub const MAX_CLASSES: usize = 8;

pub const SHAPE_NAMES: [&str; MAX_CLASSES] = [
    "circle", "square", "triangle", "star", "cross", "diamond", "ellipse", "ell",
];

pub const TEXTURE_NAMES: [&str; MAX_CLASSES] = [
    "stripes", "checker", "dots", "zigzag", "rings", "grid", "waves", "diagonals",
];

#[derive(Debug, Error)]
pub enum CueError {
    #[error("invalid synthetic data config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Modality(#[from] ModalityError),
    #[error("miscue composition changed the silhouette")]
    SilhouetteMismatch,
}

/// Which cue carries the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Composite,
    ShapeDetermined,
    TextureDetermined,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Examples generated per class, split across train/val/test.
    pub per_class: usize,
    /// Canvas side in pixels. Large enough that every shape keeps a
    /// 32-pixel interior window for texture-source selection.
    pub resolution: usize,
    pub label_mode: LabelMode,
    pub rng_seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: MAX_CLASSES,
            per_class: 100,
            resolution: 128,
            label_mode: LabelMode::Composite,
            rng_seed: 0,
            train_fraction: 0.7,
            val_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CueError> {
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return Err(CueError::BadConfig(format!(
                "num_classes must be in 2..={MAX_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.per_class == 0 {
            return Err(CueError::BadConfig("per_class is zero".into()));
        }
        if self.resolution < 64 {
            return Err(CueError::BadConfig(format!(
                "resolution {} too small for texture swatches",
                self.resolution
            )));
        }
        let rest = 1.0 - self.train_fraction - self.val_fraction;
        if self.train_fraction <= 0.0 || self.val_fraction <= 0.0 || rest <= 0.0 {
            return Err(CueError::BadConfig("split fractions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticExample {
    pub image: RgbImage,
    pub label: usize,
    pub shape_class: usize,
    pub texture_class: usize,
    /// Stable identifier, e.g. `class3/ex017`.
    pub id: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<SyntheticExample>,
    pub val: Vec<SyntheticExample>,
    pub test: Vec<SyntheticExample>,
    pub class_names: Vec<String>,
    pub label_mode: LabelMode,
}

/// Geometric jitter of one example.
#[derive(Debug, Clone, Copy)]
struct Jitter {
    rotation: f32,
    scale: f32,
    tx: f32,
    ty: f32,
    phase: (f32, f32),
}

impl Jitter {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let scale = rng.gen_range(0.78..0.95f32);
        // Keep the unit shape inside the canvas after scaling; the remaining
        // slack becomes translation so shape position is not a constant cue.
        let slack = (0.98 - scale).max(0.0);
        Self {
            rotation: rng.gen_range(-12.0f32..12.0).to_radians(),
            scale,
            tx: rng.gen_range(-slack..slack.max(1e-6)),
            ty: rng.gen_range(-slack..slack.max(1e-6)),
            phase: (rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)),
        }
    }
}

/// Inside test on normalized coordinates; every family encloses a disc of
/// radius >= 0.5 around its own center so a texture swatch always fits.
fn shape_inside(shape: usize, u: f32, v: f32) -> bool {
    match shape {
        0 => u * u + v * v <= 1.0,                         // circle
        1 => u.abs() <= 0.82 && v.abs() <= 0.82,           // square
        2 => {
            // Equilateral-ish triangle, apex up.
            let a = (0.0f32, -1.0);
            let b = (0.95f32, 0.9);
            let c = (-0.95f32, 0.9);
            let sign = |p: (f32, f32), q: (f32, f32)| {
                (u - q.0) * (p.1 - q.1) - (p.0 - q.0) * (v - q.1)
            };
            let d1 = sign(a, b);
            let d2 = sign(b, c);
            let d3 = sign(c, a);
            let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(neg && pos)
        }
        3 => {
            // Five-point star: radius limit interpolates between the outer
            // and inner vertex radii with the angular position.
            let r = (u * u + v * v).sqrt();
            if r <= 0.65 {
                return true;
            }
            let theta = v.atan2(u);
            let sector = (theta + std::f32::consts::PI) / (2.0 * std::f32::consts::PI) * 5.0;
            let frac = (sector.fract() - 0.5).abs() * 2.0; // 1 at points, 0 between
            r <= 0.65 + 0.35 * frac.powi(3)
        }
        4 => {
            // Plus sign.
            (u.abs() <= 0.42 && v.abs() <= 0.98) || (v.abs() <= 0.42 && u.abs() <= 0.98)
        }
        5 => u.abs() + v.abs() <= 1.0,                     // diamond
        6 => u * u + (v / 0.55) * (v / 0.55) <= 1.0,       // ellipse
        7 => {
            // L-shape: thick vertical leg plus thick horizontal foot.
            u.abs() <= 0.95 && v.abs() <= 0.95 && (u <= -0.25 || v >= 0.25)
        }
        _ => unreachable!("shape id out of range"),
    }
}

/// Procedural texture color at canvas coordinates. Palettes are pale on
/// purpose: every channel stays well above mid-grey so the shape boundary
/// against the white background is low-contrast in raw RGB, yet at least one
/// channel stays below the white threshold so silhouette extraction and
/// texture-source selection still see every texel as foreground.
fn texture_color(texture: usize, x: f32, y: f32) -> [f32; 3] {
    const P: f32 = 10.0; // base period in pixels
    let pick = |cond: bool, a: [f32; 3], b: [f32; 3]| if cond { a } else { b };
    match texture {
        0 => pick(
            ((x + y) / P).floor() as i64 % 2 == 0,
            [0.93, 0.74, 0.74],
            [0.93, 0.85, 0.70],
        ),
        1 => pick(
            ((x / P).floor() as i64 + (y / P).floor() as i64) % 2 == 0,
            [0.72, 0.78, 0.93],
            [0.76, 0.90, 0.93],
        ),
        2 => {
            let fx = (x / P).fract() - 0.5;
            let fy = (y / P).fract() - 0.5;
            pick(
                fx * fx + fy * fy <= 0.09,
                [0.87, 0.90, 0.79],
                [0.76, 0.90, 0.72],
            )
        }
        3 => {
            let zig = (x / P).fract();
            let tri = if zig < 0.5 { zig } else { 1.0 - zig };
            pick(
                ((y / P) + 2.0 * tri).fract() < 0.5,
                [0.83, 0.73, 0.90],
                [0.93, 0.80, 0.88],
            )
        }
        4 => {
            let r = (x * x + y * y).sqrt();
            pick(
                (r / P).floor() as i64 % 2 == 0,
                [0.70, 0.89, 0.89],
                [0.64, 0.79, 0.81],
            )
        }
        5 => pick(
            (x / P).fract() < 0.3 || (y / P).fract() < 0.3,
            [0.80, 0.70, 0.58],
            [0.88, 0.78, 0.66],
        ),
        6 => {
            let wave = (x / P * std::f32::consts::TAU).sin();
            pick(
                ((y + 3.0 * wave) / P).floor() as i64 % 2 == 0,
                [0.83, 0.87, 0.66],
                [0.73, 0.77, 0.58],
            )
        }
        7 => pick(
            ((x - y) / P).floor() as i64 % 2 == 0,
            [0.90, 0.68, 0.84],
            [0.74, 0.72, 0.76],
        ),
        _ => unreachable!("texture id out of range"),
    }
}

fn render(shape: usize, texture: usize, resolution: usize, jitter: &Jitter) -> RgbImage {
    let mut img = RgbImage::filled(resolution, resolution, [1.0, 1.0, 1.0]);
    let half = resolution as f32 / 2.0;
    let (sin, cos) = jitter.rotation.sin_cos();
    for y in 0..resolution {
        for x in 0..resolution {
            let u = (x as f32 + 0.5) / half - 1.0;
            let v = (y as f32 + 0.5) / half - 1.0;
            let (du, dv) = (u - jitter.tx, v - jitter.ty);
            // Inverse rotation, then inverse scale.
            let ru = (du * cos + dv * sin) / jitter.scale;
            let rv = (-du * sin + dv * cos) / jitter.scale;
            if shape_inside(shape, ru, rv) {
                img.set(
                    x,
                    y,
                    texture_color(texture, x as f32 + jitter.phase.0, y as f32 + jitter.phase.1),
                );
            }
        }
    }
    img
}

/// Render one example with seeded jitter.
pub fn render_example(
    shape: usize,
    texture: usize,
    resolution: usize,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    render(shape, texture, resolution, &Jitter::sample(rng))
}

/// Generate a labeled dataset with per-class train/val/test splits.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset, CueError> {
    cfg.validate()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let n_train = ((cfg.per_class as f64) * cfg.train_fraction).round() as usize;
    let n_val = ((cfg.per_class as f64) * cfg.val_fraction).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= cfg.per_class {
        return Err(CueError::BadConfig(format!(
            "per_class {} too small for the requested split",
            cfg.per_class
        )));
    }
    for class in 0..cfg.num_classes {
        for i in 0..cfg.per_class {
            let mut r = rng::indexed_stream(
                cfg.rng_seed,
                &format!("synth/class{class}"),
                i as u64,
            );
            let (shape, texture) = match cfg.label_mode {
                LabelMode::Composite => (class, class),
                LabelMode::ShapeDetermined => (class, r.gen_range(0..cfg.num_classes)),
                LabelMode::TextureDetermined => (r.gen_range(0..cfg.num_classes), class),
            };
            let image = render_example(shape, texture, cfg.resolution, &mut r);
            let ex = SyntheticExample {
                image,
                label: class,
                shape_class: shape,
                texture_class: texture,
                id: format!("class{class}/ex{i:03}"),
            };
            if i < n_train {
                train.push(ex);
            } else if i < n_train + n_val {
                val.push(ex);
            } else {
                test.push(ex);
            }
        }
    }
    let class_names = (0..cfg.num_classes)
        .map(|c| match cfg.label_mode {
            LabelMode::TextureDetermined => TEXTURE_NAMES[c].to_string(),
            _ => SHAPE_NAMES[c].to_string(),
        })
        .collect();
    Ok(SyntheticDataset { train, val, test, class_names, label_mode: cfg.label_mode })
}

/// A cue-conflict image: the silhouette of one class filled with the
/// texture of another.
#[derive(Debug, Clone)]
pub struct MiscueExample {
    pub image: RgbImage,
    /// Label suggested by the silhouette.
    pub shape_label: usize,
    /// Label suggested by the texture fill.
    pub texture_label: usize,
    pub id: String,
}

/// Compose `shape_src`'s silhouette with a texture quilted from
/// `texture_src`'s interior. The output silhouette is pixel-identical to
/// the input one: texture pixels that would read as background are darkened
/// below the white threshold.
pub fn generate_miscue(
    shape_src: &RgbImage,
    texture_src: &RgbImage,
    tex_cfg: &TextureSynthConfig,
    white_thresh: f32,
) -> Result<RgbImage, CueError> {
    let sil = extract_silhouette(shape_src, white_thresh)?;
    let donor_sil = extract_silhouette(texture_src, white_thresh)?;
    // The synthetic shapes guarantee an interior window of a quarter of the
    // canvas side (32 px at the default 128 canvas).
    let quarter = (texture_src.width().min(texture_src.height()) / 4).min(32);
    let swatch = quarter.max(tex_cfg.patch_size);
    let src = select_texture_source(texture_src, &donor_sil, swatch)?;
    let fill_cfg = TextureSynthConfig {
        output_size: shape_src.width().max(shape_src.height()),
        ..tex_cfg.clone()
    };
    let fill = synthesize_texture(&src, &fill_cfg)?;
    let ceiling = white_thresh - 0.01;
    let mut out = RgbImage::filled(shape_src.width(), shape_src.height(), [1.0, 1.0, 1.0]);
    for y in 0..out.height() {
        for x in 0..out.width() {
            if sil.get(x, y) {
                let p = fill.get(x, y);
                let lowest = p[0].min(p[1]).min(p[2]);
                // Guarantee the pixel stays foreground under the threshold.
                let px = if lowest >= white_thresh {
                    let k = ceiling / lowest;
                    [p[0] * k, p[1] * k, p[2] * k]
                } else {
                    p
                };
                out.set(x, y, px);
            }
        }
    }
    let out_sil = extract_silhouette(&out, white_thresh)?;
    if out_sil != sil {
        return Err(CueError::SilhouetteMismatch);
    }
    Ok(out)
}

/// Miscue images for a test split: each example's silhouette is refilled
/// with the texture of a donor from a different class, chosen round-robin.
pub fn miscue_set(
    test: &[SyntheticExample],
    num_classes: usize,
    tex_cfg: &TextureSynthConfig,
    seed: u64,
) -> Result<Vec<MiscueExample>, CueError> {
    if test.is_empty() {
        return Err(CueError::BadConfig("empty test split".into()));
    }
    let mut out = Vec::with_capacity(test.len());
    for (i, ex) in test.iter().enumerate() {
        let donor_class = (ex.label + 1 + i % (num_classes - 1)) % num_classes;
        let donor = test
            .iter()
            .cycle()
            .skip(i)
            .take(test.len())
            .find(|d| d.label == donor_class)
            .ok_or_else(|| {
                CueError::BadConfig(format!("no test example of class {donor_class}"))
            })?;
        let tex_cfg = TextureSynthConfig {
            rng_seed: seed.wrapping_add(i as u64),
            ..tex_cfg.clone()
        };
        let image = generate_miscue(&ex.image, &donor.image, &tex_cfg, DEFAULT_WHITE_THRESH)?;
        out.push(MiscueExample {
            image,
            shape_label: ex.label,
            texture_label: donor.label,
            id: format!("{}~tex{}", ex.id, donor.label),
        });
    }
    Ok(out)
}

/// One miscue image per ordered (shape, texture) class pair, for
/// inspection grids.
pub fn miscue_test_grid(
    num_classes: usize,
    resolution: usize,
    tex_cfg: &TextureSynthConfig,
    seed: u64,
) -> Result<Vec<MiscueExample>, CueError> {
    let mut out = Vec::new();
    for s in 0..num_classes {
        for t in 0..num_classes {
            if s == t {
                continue;
            }
            let mut r = rng::indexed_stream(seed, "miscue-grid", (s * num_classes + t) as u64);
            let shape_img = render_example(s, s, resolution, &mut r);
            let tex_img = render_example(t, t, resolution, &mut r);
            let image = generate_miscue(&shape_img, &tex_img, tex_cfg, DEFAULT_WHITE_THRESH)?;
            out.push(MiscueExample {
                image,
                shape_label: s,
                texture_label: t,
                id: format!("shape{s}-tex{t}"),
            });
        }
    }
    Ok(out)
}
