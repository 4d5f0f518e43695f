use crate::image_data::{GreyImage, RgbImage};

/// Luma weights of ITU-R BT.709 as used by scikit-image's `rgb2gray`.
pub const LUMA_WEIGHTS: [f32; 3] = [0.2125, 0.7154, 0.0721];

/// Weighted-luma greyscale conversion, clamped to `[0, 1]`.
pub fn to_greyscale(img: &RgbImage) -> GreyImage {
    let data = img
        .pixels()
        .iter()
        .map(|p| {
            (p[0] * LUMA_WEIGHTS[0] + p[1] * LUMA_WEIGHTS[1] + p[2] * LUMA_WEIGHTS[2])
                .clamp(0.0, 1.0)
        })
        .collect();
    GreyImage::new(img.width(), img.height(), data).expect("same dims as input")
}
