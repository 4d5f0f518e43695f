//! Classical-vision transforms that turn a white-background RGB image into
//! four modalities: shape silhouette, synthesized texture, greyscale and
//! edges. All transforms are pure; identical inputs (including seeds) give
//! bit-identical outputs.

mod canny;
mod greyscale;
mod quilt;
mod silhouette;

pub use canny::{extract_edges, CannyConfig};
pub use greyscale::to_greyscale;
pub use quilt::{horizontal_cut, synthesize_texture, vertical_cut};
pub use silhouette::extract_silhouette;

use serde::{Deserialize, Serialize};

use crate::image_data::{BinaryMask, GreyImage, RgbImage};

/// Default threshold above which a pixel's minimum channel counts as
/// white background.
pub const DEFAULT_WHITE_THRESH: f32 = 0.95;

/// Default side of the square window cropped from inside the silhouette as
/// the texture synthesis source.
pub const DEFAULT_SWATCH: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ModalityError {
    #[error("image has no foreground: silhouette is empty")]
    NoForeground,
    #[error("image has no near-white border pixel: background not found")]
    NoBackground,
    #[error("no {swatch}x{swatch} window fits inside the silhouette")]
    SwatchTooLarge { swatch: usize },
    #[error("texture source {width}x{height} smaller than patch size {patch}")]
    SourceTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("invalid texture synthesis config: {0}")]
    BadConfig(String),
}

/// Parameters of the image-quilting texture synthesizer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TextureSynthConfig {
    pub patch_size: usize,
    pub overlap: usize,
    pub output_size: usize,
    pub rng_seed: u64,
    /// A patch is a placement candidate when its overlap SSD is within
    /// `(1 + candidate_tolerance) * min_ssd`.
    pub candidate_tolerance: f32,
}

impl Default for TextureSynthConfig {
    fn default() -> Self {
        Self {
            patch_size: 24,
            overlap: 8,
            output_size: 64,
            rng_seed: 0,
            candidate_tolerance: 0.1,
        }
    }
}

impl TextureSynthConfig {
    pub fn validate(&self) -> Result<(), ModalityError> {
        if self.overlap == 0 || self.overlap >= self.patch_size {
            return Err(ModalityError::BadConfig(format!(
                "need 0 < overlap < patch_size, got overlap={} patch_size={}",
                self.overlap, self.patch_size
            )));
        }
        if self.patch_size > self.output_size {
            return Err(ModalityError::BadConfig(format!(
                "patch_size {} exceeds output_size {}",
                self.patch_size, self.output_size
            )));
        }
        if !(0.0..=1.0).contains(&self.candidate_tolerance) {
            return Err(ModalityError::BadConfig(format!(
                "candidate_tolerance {} outside [0,1]",
                self.candidate_tolerance
            )));
        }
        Ok(())
    }
}

/// The four transformed views of one image, in fixed order
/// (shape, texture, greyscale, edges).
#[derive(Debug, Clone)]
pub struct ModalityBundle {
    pub shape: BinaryMask,
    pub texture: RgbImage,
    pub greyscale: GreyImage,
    pub edges: BinaryMask,
    pub source_id: String,
}

pub const MODALITY_NAMES: [&str; 4] = ["shape", "texture", "greyscale", "edges"];

impl ModalityBundle {
    pub fn resolution(&self) -> (usize, usize) {
        (self.shape.width(), self.shape.height())
    }
}

/// Returns the `swatch`x`swatch` crop fully inside the silhouette whose
/// center lies closest to the silhouette centroid (ties broken row-major).
pub fn select_texture_source(
    img: &RgbImage,
    sil: &BinaryMask,
    swatch: usize,
) -> Result<RgbImage, ModalityError> {
    let (w, h) = (sil.width(), sil.height());
    if sil.count_set() == 0 {
        return Err(ModalityError::NoForeground);
    }
    if swatch == 0 || swatch > w || swatch > h {
        return Err(ModalityError::SwatchTooLarge { swatch });
    }

    // Centroid of the silhouette.
    let (mut cx, mut cy, mut n) = (0.0f64, 0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            if sil.get(x, y) {
                cx += x as f64;
                cy += y as f64;
                n += 1;
            }
        }
    }
    let (cx, cy) = (cx / n as f64, cy / n as f64);

    // Integral image over the mask; window is interior iff its sum is
    // swatch^2.
    let mut integral = vec![0i64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x]
                + sil.get(x, y) as i64;
        }
    }
    let window_sum = |x0: usize, y0: usize| -> i64 {
        integral[(y0 + swatch) * (w + 1) + (x0 + swatch)]
            - integral[y0 * (w + 1) + (x0 + swatch)]
            - integral[(y0 + swatch) * (w + 1) + x0]
            + integral[y0 * (w + 1) + x0]
    };

    let full = (swatch * swatch) as i64;
    let mut best: Option<(f64, usize, usize)> = None;
    for y0 in 0..=h - swatch {
        for x0 in 0..=w - swatch {
            if window_sum(x0, y0) == full {
                let wx = x0 as f64 + swatch as f64 / 2.0;
                let wy = y0 as f64 + swatch as f64 / 2.0;
                let d2 = (wx - cx).powi(2) + (wy - cy).powi(2);
                if best.map_or(true, |(bd, _, _)| d2 < bd) {
                    best = Some((d2, x0, y0));
                }
            }
        }
    }
    match best {
        Some((_, x0, y0)) => Ok(img.crop(x0, y0, swatch, swatch)),
        None => Err(ModalityError::SwatchTooLarge { swatch }),
    }
}

/// Gain applied to per-channel deviations when normalizing the texture
/// stream in [`normalize_texture`].
const TEXTURE_NORM_GAIN: f32 = 2.0;

/// Re-center the texture stream so it encodes pattern rather than palette.
///
/// Each channel's mean is mapped to 0.5 and deviations are amplified by a
/// fixed gain, then clamped to [0, 1]. This removes the overall color of the
/// swatch (which duplicates what the raw image already carries) and keeps
/// the spatial pattern at a contrast independent of how saturated the
/// source colors are. A solid-color swatch maps to the neutral constant 0.5.
fn normalize_texture(img: &RgbImage) -> RgbImage {
    let n = (img.width() * img.height()) as f32;
    let mut mean = [0.0f32; 3];
    for p in img.pixels() {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let data = img
        .pixels()
        .iter()
        .map(|p| {
            let mut q = [0.0f32; 3];
            for c in 0..3 {
                q[c] = (0.5 + TEXTURE_NORM_GAIN * (p[c] - mean[c])).clamp(0.0, 1.0);
            }
            q
        })
        .collect();
    RgbImage::new(img.width(), img.height(), data).expect("same dims as input")
}

/// Apply all four transforms and resize everything to `resolution`. The
/// texture stream is mean-normalized after synthesis.
pub fn extract_modalities(
    img: &RgbImage,
    tex_cfg: &TextureSynthConfig,
    resolution: usize,
    source_id: &str,
) -> Result<ModalityBundle, ModalityError> {
    let sil = extract_silhouette(img, DEFAULT_WHITE_THRESH)?;
    let swatch = DEFAULT_SWATCH
        .min(img.width())
        .min(img.height())
        .max(tex_cfg.patch_size);
    let src = select_texture_source(img, &sil, swatch)?;
    let texture = normalize_texture(&synthesize_texture(&src, tex_cfg)?);
    let grey = to_greyscale(img);
    let edges = extract_edges(img, &CannyConfig::default());
    Ok(ModalityBundle {
        shape: sil.resize(resolution, resolution),
        texture: texture.resize(resolution, resolution),
        greyscale: grey.resize(resolution, resolution),
        edges: edges.resize(resolution, resolution),
        source_id: source_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_on_white(side: usize, canvas: usize, color: [f32; 3]) -> RgbImage {
        let mut img = RgbImage::filled(canvas, canvas, [1.0, 1.0, 1.0]);
        let off = (canvas - side) / 2;
        for y in off..off + side {
            for x in off..off + side {
                img.set(x, y, color);
            }
        }
        img
    }

    #[test]
    fn texture_source_centered_for_symmetric_square() {
        let img = square_on_white(40, 64, [0.8, 0.2, 0.2]);
        let sil = extract_silhouette(&img, DEFAULT_WHITE_THRESH).unwrap();
        let src = select_texture_source(&img, &sil, 16).unwrap();
        assert_eq!((src.width(), src.height()), (16, 16));
        // Every pixel of the crop comes from inside the red square.
        for p in src.pixels() {
            assert_eq!(*p, [0.8, 0.2, 0.2]);
        }
    }

    #[test]
    fn texture_source_rejects_thin_objects() {
        // 4-pixel-wide bar cannot hold a 16x16 window.
        let mut img = RgbImage::filled(64, 64, [1.0, 1.0, 1.0]);
        for y in 10..50 {
            for x in 30..34 {
                img.set(x, y, [0.1, 0.1, 0.1]);
            }
        }
        let sil = extract_silhouette(&img, DEFAULT_WHITE_THRESH).unwrap();
        assert!(matches!(
            select_texture_source(&img, &sil, 16),
            Err(ModalityError::SwatchTooLarge { .. })
        ));
    }

    #[test]
    fn crescent_window_avoids_exterior_centroid() {
        // Thick C-shape: centroid falls in the concavity, outside the mask.
        let mut img = RgbImage::filled(64, 64, [1.0, 1.0, 1.0]);
        for y in 8..56 {
            for x in 8..56 {
                let inside_outer = true;
                let inside_inner = (20..64).contains(&x) && (20..44).contains(&y);
                if inside_outer && !inside_inner {
                    img.set(x, y, [0.2, 0.3, 0.8]);
                }
            }
        }
        let sil = extract_silhouette(&img, DEFAULT_WHITE_THRESH).unwrap();
        // Exhaustive oracle: scan all windows, keep interior ones.
        let swatch = 10;
        let (mut cx, mut cy, mut n) = (0.0f64, 0.0f64, 0usize);
        for y in 0..64 {
            for x in 0..64 {
                if sil.get(x, y) {
                    cx += x as f64;
                    cy += y as f64;
                    n += 1;
                }
            }
        }
        let (cx, cy) = (cx / n as f64, cy / n as f64);
        assert!(!sil.get(cx.round() as usize, cy.round() as usize), "test premise");
        let mut best: Option<(f64, usize, usize)> = None;
        for y0 in 0..=64 - swatch {
            for x0 in 0..=64 - swatch {
                let interior = (y0..y0 + swatch).all(|y| (x0..x0 + swatch).all(|x| sil.get(x, y)));
                if interior {
                    let d2 = (x0 as f64 + swatch as f64 / 2.0 - cx).powi(2)
                        + (y0 as f64 + swatch as f64 / 2.0 - cy).powi(2);
                    if best.map_or(true, |(bd, _, _)| d2 < bd) {
                        best = Some((d2, x0, y0));
                    }
                }
            }
        }
        let (_, bx, by) = best.unwrap();
        let got = select_texture_source(&img, &sil, swatch).unwrap();
        let expect = img.crop(bx, by, swatch, swatch);
        assert_eq!(got, expect);
    }

    #[test]
    fn extract_modalities_square_bundle() {
        let img = square_on_white(40, 64, [0.9, 0.1, 0.1]);
        let cfg = TextureSynthConfig {
            patch_size: 12,
            overlap: 4,
            output_size: 32,
            ..Default::default()
        };
        let b = extract_modalities(&img, &cfg, 64, "sq").unwrap();
        assert_eq!(b.resolution(), (64, 64));
        assert_eq!((b.texture.width(), b.texture.height()), (64, 64));
        assert_eq!((b.greyscale.width(), b.greyscale.height()), (64, 64));
        assert_eq!((b.edges.width(), b.edges.height()), (64, 64));
        // Texture synthesized from a solid-color interior normalizes to the
        // neutral constant: no pattern, no palette.
        for p in b.texture.pixels() {
            assert!(
                (p[0] - 0.5).abs() < 1e-3 && (p[1] - 0.5).abs() < 1e-3,
                "got {:?}",
                p
            );
        }
        // Shape mask is the filled square.
        assert!(b.shape.get(32, 32));
        assert!(!b.shape.get(2, 2));
    }

    #[test]
    fn extract_modalities_all_white_fails() {
        let img = RgbImage::filled(32, 32, [1.0, 1.0, 1.0]);
        assert!(matches!(
            extract_modalities(&img, &TextureSynthConfig::default(), 32, "w"),
            Err(ModalityError::NoForeground)
        ));
    }
}
