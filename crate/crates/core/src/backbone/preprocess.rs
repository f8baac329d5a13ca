use std::path::Path;

use image::{Rgb32FImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ImageNet per-channel means on the [0, 1] pixel scale (R, G, B).
pub const IMAGENET_MEANS: [f32; 3] = [0.485, 0.456, 0.406];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub input_size: u32,
    pub means: [f32; 3],
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            input_size: 224,
            means: IMAGENET_MEANS,
        }
    }
}

/// Channel-first, mean-subtracted network input of shape `(3, size, size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    size: usize,
    data: Vec<f32>,
    means: [f32; 3],
}

impl PreprocessedImage {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn means(&self) -> [f32; 3] {
        self.means
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.size, self.size)
    }

    /// Wraps an already-preprocessed tensor.
    pub fn from_raw(size: usize, data: Vec<f32>, means: [f32; 3]) -> Result<Self> {
        if data.len() != 3 * size * size {
            return Err(Error::Shape(format!(
                "expected {} values for a 3x{size}x{size} tensor, got {}",
                3 * size * size,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("preprocessed image"));
        }
        Ok(PreprocessedImage { size, data, means })
    }
}

/// Decodes a PNG/JPEG icon to 3-channel float RGB in [0, 1]. Alpha is
/// dropped and grayscale is expanded.
pub fn decode_icon(path: impl AsRef<Path>) -> Result<Rgb32FImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb32f())
}

pub fn to_float(img: &RgbImage) -> Rgb32FImage {
    Rgb32FImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y).0;
        image::Rgb([p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
    })
}

/// Bilinear resize to `input_size²` (half-pixel centres, edge clamped),
/// channel-first layout, per-channel mean subtraction.
pub fn preprocess(img: &Rgb32FImage, cfg: &Preprocessing) -> Result<PreprocessedImage> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Shape("image has no pixels".into()));
    }
    if cfg.input_size == 0 {
        return Err(Error::InvalidArgument("input_size must be positive".into()));
    }
    let size = cfg.input_size as usize;
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    let px = |x: usize, y: usize, c: usize| raw[(y * w + x) * 3 + c];

    let scale_x = w as f32 / size as f32;
    let scale_y = h as f32 / size as f32;
    let sample_axis = |dst: usize, scale: f32, len: usize| -> (usize, usize, f32) {
        let src = ((dst as f32 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f32)
    };

    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for oy in 0..size {
        let (y0, y1, fy) = sample_axis(oy, scale_y, h);
        for ox in 0..size {
            let (x0, x1, fx) = sample_axis(ox, scale_x, w);
            for c in 0..3 {
                let top = lerp(px(x0, y0, c), px(x1, y0, c), fx);
                let bottom = lerp(px(x0, y1, c), px(x1, y1, c), fx);
                let v = lerp(top, bottom, fy);
                data[c * plane + oy * size + ox] = v - cfg.means[c];
            }
        }
    }
    PreprocessedImage::from_raw(size, data, cfg.means)
}

// exact at t = 0 and when a == b
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}
