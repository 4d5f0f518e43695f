use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image_data::RgbImage;

use super::{ModalityError, TextureSynthConfig};

/// Image quilting texture synthesis.
///
/// Patches are placed in raster order with `overlap` pixels shared with the
/// already-synthesized region. Each placement considers every source patch,
/// keeps the candidates whose overlap SSD is within
/// `(1 + candidate_tolerance) * min_ssd`, draws one uniformly with the
/// seeded RNG, and resolves the seam with a minimum-error boundary cut
/// (dynamic programming over the overlap region).
pub fn synthesize_texture(
    src: &RgbImage,
    cfg: &TextureSynthConfig,
) -> Result<RgbImage, ModalityError> {
    cfg.validate()?;
    let p = cfg.patch_size;
    if src.width() < p || src.height() < p {
        return Err(ModalityError::SourceTooSmall {
            width: src.width(),
            height: src.height(),
            patch: p,
        });
    }

    let step = p - cfg.overlap;
    let out_size = cfg.output_size;
    // Number of patches per axis so that the last patch covers the border.
    let tiles = if out_size <= p { 1 } else { (out_size - p).div_ceil(step) + 1 };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = RgbImage::filled(out_size, out_size, [0.0, 0.0, 0.0]);
    let mut written = vec![false; out_size * out_size];

    let src_positions: Vec<(usize, usize)> = (0..=src.height() - p)
        .flat_map(|y| (0..=src.width() - p).map(move |x| (x, y)))
        .collect();

    for ty in 0..tiles {
        for tx in 0..tiles {
            let ox = (tx * step).min(out_size - p);
            let oy = (ty * step).min(out_size - p);

            // SSD of every candidate patch against the already-written
            // pixels in the target window.
            let mut ssds = Vec::with_capacity(src_positions.len());
            let mut min_ssd = f64::INFINITY;
            for &(sx, sy) in &src_positions {
                let mut ssd = 0.0f64;
                for dy in 0..p {
                    for dx in 0..p {
                        if written[(oy + dy) * out_size + (ox + dx)] {
                            let a = out.get(ox + dx, oy + dy);
                            let b = src.get(sx + dx, sy + dy);
                            for c in 0..3 {
                                let d = (a[c] - b[c]) as f64;
                                ssd += d * d;
                            }
                        }
                    }
                }
                ssds.push(ssd);
                min_ssd = min_ssd.min(ssd);
            }
            let limit = (1.0 + cfg.candidate_tolerance as f64) * min_ssd + 1e-12;
            let candidates: Vec<usize> = (0..ssds.len()).filter(|&i| ssds[i] <= limit).collect();
            let (sx, sy) = src_positions[candidates[rng.gen_range(0..candidates.len())]];

            // Per-pixel squared error over the window, for the boundary cut.
            let mut err = vec![0.0f64; p * p];
            for dy in 0..p {
                for dx in 0..p {
                    if written[(oy + dy) * out_size + (ox + dx)] {
                        let a = out.get(ox + dx, oy + dy);
                        let b = src.get(sx + dx, sy + dy);
                        err[dy * p + dx] = (0..3)
                            .map(|c| {
                                let d = (a[c] - b[c]) as f64;
                                d * d
                            })
                            .sum();
                    }
                }
            }

            // use_new[d] = take the new patch pixel (vs keep existing).
            let mut use_new = vec![true; p * p];
            if tx > 0 {
                let cut = vertical_cut(&err, p, cfg.overlap);
                for dy in 0..p {
                    for dx in 0..cut[dy] {
                        use_new[dy * p + dx] = false;
                    }
                }
            }
            if ty > 0 {
                let cut = horizontal_cut(&err, p, cfg.overlap);
                for dx in 0..p {
                    for dy in 0..cut[dx] {
                        use_new[dy * p + dx] = false;
                    }
                }
            }

            for dy in 0..p {
                for dx in 0..p {
                    let oi = (oy + dy) * out_size + (ox + dx);
                    if use_new[dy * p + dx] || !written[oi] {
                        out.set(ox + dx, oy + dy, src.get(sx + dx, sy + dy));
                        written[oi] = true;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Minimum-error vertical cut through the left overlap band. Returns, per
/// row, the column before which the existing pixels are kept.
pub fn vertical_cut(err: &[f64], p: usize, overlap: usize) -> Vec<usize> {
    // cost[y][x]: cheapest path from the top reaching (x, y).
    let mut cost = vec![f64::INFINITY; p * overlap];
    let mut back = vec![0usize; p * overlap];
    cost[..overlap].copy_from_slice(&err[..overlap]);
    for y in 1..p {
        for x in 0..overlap {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(overlap - 1);
            let (mut bx, mut bc) = (lo, f64::INFINITY);
            for px in lo..=hi {
                if cost[(y - 1) * overlap + px] < bc {
                    bc = cost[(y - 1) * overlap + px];
                    bx = px;
                }
            }
            cost[y * overlap + x] = err[y * p + x] + bc;
            back[y * overlap + x] = bx;
        }
    }
    let mut x = (0..overlap)
        .min_by(|&a, &b| {
            cost[(p - 1) * overlap + a]
                .partial_cmp(&cost[(p - 1) * overlap + b])
                .unwrap()
        })
        .unwrap();
    let mut cut = vec![0usize; p];
    for y in (0..p).rev() {
        cut[y] = x;
        if y > 0 {
            x = back[y * overlap + x];
        }
    }
    cut
}

/// Minimum-error horizontal cut through the top overlap band. Returns, per
/// column, the row before which the existing pixels are kept.
pub fn horizontal_cut(err: &[f64], p: usize, overlap: usize) -> Vec<usize> {
    let mut cost = vec![f64::INFINITY; p * overlap];
    let mut back = vec![0usize; p * overlap];
    for y in 0..overlap {
        cost[y] = err[y * p];
    }
    for x in 1..p {
        for y in 0..overlap {
            let lo = y.saturating_sub(1);
            let hi = (y + 1).min(overlap - 1);
            let (mut by, mut bc) = (lo, f64::INFINITY);
            for py in lo..=hi {
                if cost[(x - 1) * overlap + py] < bc {
                    bc = cost[(x - 1) * overlap + py];
                    by = py;
                }
            }
            cost[x * overlap + y] = err[y * p + x] + bc;
            back[x * overlap + y] = by;
        }
    }
    let mut y = (0..overlap)
        .min_by(|&a, &b| {
            cost[(p - 1) * overlap + a]
                .partial_cmp(&cost[(p - 1) * overlap + b])
                .unwrap()
        })
        .unwrap();
    let mut cut = vec![0usize; p];
    for x in (0..p).rev() {
        cut[x] = y;
        if x > 0 {
            y = back[x * overlap + y];
        }
    }
    cut
}
