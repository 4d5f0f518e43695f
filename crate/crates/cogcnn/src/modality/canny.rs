use crate::image_data::{BinaryMask, GreyImage, RgbImage};

use super::to_greyscale;

/// Canny edge detector parameters. Thresholds are derived from the data:
/// the high threshold is the Otsu split of the non-zero gradient magnitudes
/// and the low threshold is `low_ratio` times the high one.
#[derive(Debug, Clone, PartialEq)]
pub struct CannyConfig {
    pub sigma: f32,
    pub low_ratio: f32,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self { sigma: 1.4, low_ratio: 0.4 }
    }
}

/// Canny pipeline: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression, double-threshold hysteresis.
pub fn extract_edges(img: &RgbImage, cfg: &CannyConfig) -> BinaryMask {
    let grey = to_greyscale(img);
    canny_grey(&grey, cfg)
}

pub fn canny_grey(grey: &GreyImage, cfg: &CannyConfig) -> BinaryMask {
    let (w, h) = (grey.width(), grey.height());
    let blurred = gaussian_blur(grey, cfg.sigma);
    let (gx, gy) = sobel(&blurred);
    // Floor out float noise from the blur so constant regions stay silent.
    const MAG_EPS: f32 = 1e-4;
    let mag: Vec<f32> = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| {
            let m = (x * x + y * y).sqrt();
            if m < MAG_EPS {
                0.0
            } else {
                m
            }
        })
        .collect();
    let thin = non_maximum_suppression(&mag, &gx, &gy, w, h);
    let high = otsu_threshold(&thin);
    let low = cfg.low_ratio * high;
    hysteresis(&thin, low, high, w, h)
}

/// Separable Gaussian blur with kernel radius `ceil(3*sigma)`, edge-clamped.
pub(crate) fn gaussian_blur(grey: &GreyImage, sigma: f32) -> GreyImage {
    let (w, h) = (grey.width(), grey.height());
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();

    let clamp = |v: isize, max: usize| v.clamp(0, max as isize - 1) as usize;
    let mut horiz = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - radius, w);
                acc += kv * grey.get(sx, y);
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - radius, h);
                acc += kv * horiz[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    GreyImage::new(w, h, out).expect("same dims")
}

/// 3x3 Sobel gradients, edge-clamped.
pub(crate) fn sobel(grey: &GreyImage) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (grey.width(), grey.height());
    let at = |x: isize, y: isize| {
        grey.get(
            x.clamp(0, w as isize - 1) as usize,
            y.clamp(0, h as isize - 1) as usize,
        )
    };
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = (y as usize) * w + x as usize;
            gx[i] = -at(x - 1, y - 1) - 2.0 * at(x - 1, y) - at(x - 1, y + 1)
                + at(x + 1, y - 1)
                + 2.0 * at(x + 1, y)
                + at(x + 1, y + 1);
            gy[i] = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
        }
    }
    (gx, gy)
}

/// Keep a pixel only if its magnitude is a local maximum along the gradient
/// direction, quantized to one of four axes.
pub(crate) fn non_maximum_suppression(
    mag: &[f32],
    gx: &[f32],
    gy: &[f32],
    w: usize,
    h: usize,
) -> Vec<f32> {
    let get = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if mag[i] == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees();
            let angle = if angle < 0.0 { angle + 180.0 } else { angle };
            let (d1, d2) = if !(22.5..157.5).contains(&angle) {
                ((1, 0), (-1, 0))
            } else if angle < 67.5 {
                ((1, 1), (-1, -1))
            } else if angle < 112.5 {
                ((0, 1), (0, -1))
            } else {
                ((1, -1), (-1, 1))
            };
            let m = mag[i];
            if m >= get(x + d1.0, y + d1.1) && m >= get(x + d2.0, y + d2.1) {
                out[i] = m;
            }
        }
    }
    out
}

/// Otsu's threshold over a 256-bin histogram of the positive values.
/// Returns 0 when the input is all zero (constant image, no edges).
pub(crate) fn otsu_threshold(values: &[f32]) -> f32 {
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return 0.0;
    }
    const BINS: usize = 256;
    let mut hist = [0usize; BINS];
    let mut total = 0usize;
    for &v in values {
        if v > 0.0 {
            let b = ((v / max) * (BINS as f32 - 1.0)).round() as usize;
            hist[b.min(BINS - 1)] += 1;
            total += 1;
        }
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0f64, 0f64);
    let mut best_var = -1.0f64;
    // When every value lands in one bin Otsu has no split; threshold at the
    // populated bin so those pixels count as strong edges.
    let mut best_bin = hist.iter().rposition(|&c| c > 0).unwrap_or(0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total as f64 - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += i as f64 * c as f64;
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best_var {
            best_var = between;
            best_bin = i;
        }
    }
    best_bin as f32 / (BINS as f32 - 1.0) * max
}

/// Double-threshold hysteresis: strong pixels (>= high) seed a flood over
/// 8-connected weak pixels (>= low).
pub(crate) fn hysteresis(mag: &[f32], low: f32, high: f32, w: usize, h: usize) -> BinaryMask {
    let mut edge = vec![false; w * h];
    if high <= 0.0 {
        return BinaryMask::new(w, h, edge).expect("positive dims");
    }
    let mut stack = Vec::new();
    for (i, &m) in mag.iter().enumerate() {
        if m >= high {
            edge[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && mag[j] >= low {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    BinaryMask::new(w, h, edge).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let img = RgbImage::filled(16, 16, [0.5, 0.5, 0.5]);
        let m = extract_edges(&img, &CannyConfig::default());
        assert_eq!(m.count_set(), 0);
    }

    #[test]
    fn vertical_step_gives_thin_vertical_edge() {
        let mut img = RgbImage::filled(16, 16, [1.0, 1.0, 1.0]);
        for y in 0..16 {
            for x in 0..8 {
                img.set(x, y, [0.0, 0.0, 0.0]);
            }
        }
        let m = extract_edges(&img, &CannyConfig::default());
        // Every row has an edge response, confined to a thin vertical band
        // around the step at x=7/8.
        for y in 0..16 {
            let cols: Vec<usize> = (0..16).filter(|&x| m.get(x, y)).collect();
            assert!(!cols.is_empty(), "row {y} lost the step edge");
            for &x in &cols {
                assert!((6..=9).contains(&x), "edge at x={x} far from step");
            }
            assert!(cols.len() <= 2, "edge not thin in row {y}: {cols:?}");
        }
    }

    #[test]
    fn square_outline_is_closed_contour() {
        let mut img = RgbImage::filled(32, 32, [1.0, 1.0, 1.0]);
        for y in 8..24 {
            for x in 8..24 {
                img.set(x, y, [0.0, 0.0, 0.0]);
            }
        }
        let m = extract_edges(&img, &CannyConfig::default());
        assert!(m.count_set() > 0);
        // All edge pixels hug the square boundary.
        for y in 0..32 {
            for x in 0..32 {
                if m.get(x, y) {
                    let near_vert = (6..=10).contains(&x) || (21..=25).contains(&x);
                    let near_horz = (6..=10).contains(&y) || (21..=25).contains(&y);
                    assert!(near_vert || near_horz, "stray edge at ({x},{y})");
                }
            }
        }
        // Edge pixels form a single 8-connected component enclosing the
        // square: check connectivity.
        let mut seen = vec![false; 32 * 32];
        let start = (0..32 * 32).find(|&i| m.get(i % 32, i / 32)).unwrap();
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % 32) as isize, (i / 32) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if (0..32).contains(&nx) && (0..32).contains(&ny) {
                        let j = ny as usize * 32 + nx as usize;
                        if m.get(nx as usize, ny as usize) && !seen[j] {
                            seen[j] = true;
                            count += 1;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        assert_eq!(count, m.count_set(), "outline not a single component");
    }
}
