use crate::image_data::{BinaryMask, RgbImage};

use super::ModalityError;

/// Extract the object silhouette from a white-background image.
///
/// Pixels whose minimum channel is at least `white_thresh` are background
/// candidates; the actual background is the candidate region connected to
/// the image border (4-connectivity). The silhouette is its complement, so
/// white holes enclosed by the object are filled: the mask is the region
/// bounded by the outermost contour.
pub fn extract_silhouette(
    img: &RgbImage,
    white_thresh: f32,
) -> Result<BinaryMask, ModalityError> {
    let (w, h) = (img.width(), img.height());
    let near_white = |x: usize, y: usize| {
        let p = img.get(x, y);
        p[0].min(p[1]).min(p[2]) >= white_thresh
    };

    let mut background = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for x in 0..w {
        for y in [0, h - 1] {
            if near_white(x, y) && !background[y * w + x] {
                background[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            if near_white(x, y) && !background[y * w + x] {
                background[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    if stack.is_empty() {
        return Err(ModalityError::NoBackground);
    }

    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize| {
            if near_white(nx, ny) && !background[ny * w + nx] {
                background[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }

    let data: Vec<bool> = background.iter().map(|&b| !b).collect();
    if data.iter().all(|&v| !v) {
        return Err(ModalityError::NoForeground);
    }
    Ok(BinaryMask::new(w, h, data).expect("same dims as input"))
}
