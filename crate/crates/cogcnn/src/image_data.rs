//! Pixel grids with intensities in `[0, 1]`: RGB images, grey images and
//! binary masks, plus PNG/JPEG I/O and resizing.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
}

/// RGB image, row-major, channel-interleaved, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

/// Single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreyImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Two-valued mask; `true` marks foreground (or edge) pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

fn check_dims(width: usize, height: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    Ok(())
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(ImageError::DataLength {
                width,
                height,
                channels: 3,
                got: data.len() * 3,
            });
        }
        let data = data
            .into_iter()
            .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)])
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self::new(width, height, vec![color; width * height]).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [f32; 3]) {
        self.data[y * self.width + x] = [
            px[0].clamp(0.0, 1.0),
            px[1].clamp(0.0, 1.0),
            px[2].clamp(0.0, 1.0),
        ];
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    /// Crop the `w`x`h` window with top-left corner `(x0, y0)`.
    /// Panics if the window exceeds the image bounds.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                data.push(self.get(x, y));
            }
        }
        RgbImage::new(w, h, data).expect("window dims positive")
    }

    /// Bilinear resize.
    pub fn resize(&self, new_w: usize, new_h: usize) -> RgbImage {
        let mut data = Vec::with_capacity(new_w * new_h);
        for y in 0..new_h {
            for x in 0..new_w {
                let (sx, sy) = src_coords(x, y, new_w, new_h, self.width, self.height);
                data.push(bilinear(self, sx, sy));
            }
        }
        RgbImage::new(new_w, new_h, data).expect("positive dims")
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)
            .map_err(|source| ImageError::Read { path: path.display().to_string(), source })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img
            .pixels()
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        RgbImage::new(w, h, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in self.data.iter().enumerate() {
            let x = (i % self.width) as u32;
            let y = (i / self.width) as u32;
            out.put_pixel(x, y, image::Rgb(px.map(|v| (v * 255.0).round() as u8)));
        }
        out.save(path)
            .map_err(|source| ImageError::Write { path: path.display().to_string(), source })
    }
}

impl GreyImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(ImageError::DataLength {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn resize(&self, new_w: usize, new_h: usize) -> GreyImage {
        let rgb = self.to_rgb();
        let resized = rgb.resize(new_w, new_h);
        GreyImage::new(new_w, new_h, resized.pixels().iter().map(|p| p[0]).collect())
            .expect("positive dims")
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| [v, v, v]).collect(),
        )
        .expect("dims already validated")
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        self.to_rgb().save(path)
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(ImageError::DataLength {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Nearest-neighbour resize; output stays two-valued.
    pub fn resize(&self, new_w: usize, new_h: usize) -> BinaryMask {
        let mut data = Vec::with_capacity(new_w * new_h);
        for y in 0..new_h {
            for x in 0..new_w {
                let sx = ((x as f32 + 0.5) * self.width as f32 / new_w as f32) as usize;
                let sy = ((y as f32 + 0.5) * self.height as f32 / new_h as f32) as usize;
                data.push(self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        BinaryMask::new(new_w, new_h, data).expect("positive dims")
    }

    pub fn to_grey(&self) -> GreyImage {
        GreyImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        )
        .expect("dims already validated")
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        self.to_grey().save(path)
    }
}

fn src_coords(
    x: usize,
    y: usize,
    new_w: usize,
    new_h: usize,
    old_w: usize,
    old_h: usize,
) -> (f32, f32) {
    let sx = (x as f32 + 0.5) * old_w as f32 / new_w as f32 - 0.5;
    let sy = (y as f32 + 0.5) * old_h as f32 / new_h as f32 - 0.5;
    (sx, sy)
}

fn bilinear(img: &RgbImage, sx: f32, sy: f32) -> [f32; 3] {
    let x0 = sx.floor().clamp(0.0, (img.width - 1) as f32) as usize;
    let y0 = sy.floor().clamp(0.0, (img.height - 1) as f32) as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = (sx - x0 as f32).clamp(0.0, 1.0);
    let fy = (sy - y0 as f32).clamp(0.0, 1.0);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = img.get(x0, y0)[c] * (1.0 - fx) + img.get(x1, y0)[c] * fx;
        let bot = img.get(x0, y1)[c] * (1.0 - fx) + img.get(x1, y1)[c] * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    out
}
