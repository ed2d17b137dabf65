//! Fundus preprocessing: field-of-view detection, crop/pad/resize to the
//! network input size, and training-time augmentation.

mod augment;
mod hough;
mod io;

pub use augment::{apply_transform, augment, AugmentFlags, Transform};
pub use hough::detect_fov;
pub use io::{load_image, save_pgm, save_png};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An RGB image with intensities in `[0, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    /// Builds an image from a per-pixel function returning `(r, g, b)`.
    /// Values are clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                data.extend(px.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping into `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, px: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = px[c].clamp(0.0, 1.0);
        }
    }

    /// One colour channel as a contiguous plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Luminance `0.299 r + 0.587 g + 0.114 b`.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Element-wise `1 - v`.
    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Rounds every intensity to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantize_u8(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (v * 255.0).round() / 255.0)
                .collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Bilinear sample at continuous pixel coordinates; neighbours outside
    /// the image contribute zero.
    pub(crate) fn sample_zero_fill(&self, x: f64, y: f64) -> [f32; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut out = [0.0f64; 3];
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (yy, xx) = (y0 + dy, x0 + dx);
                if yy < 0 || xx < 0 || yy >= self.height as i64 || xx >= self.width as i64 {
                    continue;
                }
                let p = self.pixel(yy as usize, xx as usize);
                for c in 0..3 {
                    out[c] += w * p[c] as f64;
                }
            }
        }
        [out[0] as f32, out[1] as f32, out[2] as f32]
    }
}

/// The circular field of view, in pixel-centre coordinates of the source image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovCircle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl FovCircle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.r * self.r
    }

    /// The circle inscribed in a `height x width` frame.
    pub fn inscribed(height: usize, width: usize) -> Self {
        Self {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            r: height.min(width) as f64 / 2.0,
        }
    }
}

/// Circular Hough search parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    /// Percentile of the Sobel magnitude used as the edge threshold.
    pub edge_percentile: f64,
    /// Radius search range as fractions of `min(H, W)`.
    pub min_radius_frac: f64,
    pub max_radius_frac: f64,
    /// Fraction of each axis, centred, in which circle centres may lie.
    pub center_region_frac: f64,
    /// Longest side of the working image the accumulator is built on.
    pub max_working_size: usize,
    /// Minimum peak support as a fraction of the circumference.
    pub min_vote_fraction: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            edge_percentile: 95.0,
            min_radius_frac: 0.35,
            max_radius_frac: 0.60,
            center_region_frac: 0.60,
            max_working_size: 256,
            min_vote_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_size: usize,
    pub fov_enabled: bool,
    pub hough: HoughParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: 224,
            fov_enabled: true,
            hough: HoughParams::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size < 32 || !self.target_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "target_size must be even and >= 32, got {}",
                self.target_size
            )));
        }
        let h = &self.hough;
        if !(h.min_radius_frac > 0.0 && h.min_radius_frac <= h.max_radius_frac && h.max_radius_frac <= 0.75)
        {
            return Err(Error::InvalidConfig(format!(
                "radius range [{}, {}] must lie within (0, 0.75]",
                h.min_radius_frac, h.max_radius_frac
            )));
        }
        if !(0.0..=100.0).contains(&h.edge_percentile) {
            return Err(Error::InvalidConfig("edge_percentile must be in [0, 100]".into()));
        }
        if !(h.center_region_frac > 0.0 && h.center_region_frac <= 1.0) {
            return Err(Error::InvalidConfig("center_region_frac must be in (0, 1]".into()));
        }
        if h.max_working_size < 16 {
            return Err(Error::InvalidConfig("max_working_size must be >= 16".into()));
        }
        Ok(())
    }
}

/// Pixel bounds `[x0, x1) x [y0, y1)` of the circle's bounding square,
/// clipped to the image.
pub fn crop_box(circle: &FovCircle, height: usize, width: usize) -> (usize, usize, usize, usize) {
    let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
    let x0 = clip((circle.cx - circle.r).floor(), width);
    let x1 = clip((circle.cx + circle.r).ceil() + 1.0, width);
    let y0 = clip((circle.cy - circle.r).floor(), height);
    let y1 = clip((circle.cy + circle.r).ceil() + 1.0, height);
    (x0, x1, y0, y1)
}

/// Crops the circle's bounding square, zero-pads the short side to a square
/// (split evenly, any odd pixel going to the bottom/right), and resamples
/// bilinearly to `target_size x target_size`.
pub fn crop_pad_resize(image: &RawImage, circle: &FovCircle, cfg: &PreprocessConfig) -> Result<RawImage> {
    cfg.validate()?;
    let (x0, x1, y0, y1) = crop_box(circle, image.height, image.width);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::EmptyCrop);
    }
    let (ch, cw) = (y1 - y0, x1 - x0);
    let side = ch.max(cw);
    let top = (side - ch) / 2;
    let left = (side - cw) / 2;
    let mut square = RawImage::zeros(side, side);
    for y in 0..ch {
        for x in 0..cw {
            square.set_pixel(y + top, x + left, image.pixel(y + y0, x + x0));
        }
    }
    Ok(resize_bilinear(&square, cfg.target_size, cfg.target_size))
}

/// Half-pixel-centre bilinear resampling with edge clamping.
pub fn resize_bilinear(image: &RawImage, out_h: usize, out_w: usize) -> RawImage {
    if out_h == image.height && out_w == image.width {
        return image.clone();
    }
    let sy = image.height as f64 / out_h as f64;
    let sx = image.width as f64 / out_w as f64;
    let max_y = (image.height - 1) as f64;
    let max_x = (image.width - 1) as f64;
    RawImage::from_fn(out_h, out_w, |y, x| {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
        image.sample_zero_fill(src_x, src_y)
    })
}

/// Full preprocessing of one image: FoV detection (or the inscribed circle
/// when disabled) followed by [`crop_pad_resize`].
pub fn preprocess(image: &RawImage, cfg: &PreprocessConfig) -> Result<RawImage> {
    let circle = if cfg.fov_enabled {
        detect_fov(image, cfg)?
    } else {
        let side = image.height.max(image.width) as f64;
        FovCircle {
            cx: (image.width as f64 - 1.0) / 2.0,
            cy: (image.height as f64 - 1.0) / 2.0,
            r: side / 2.0,
        }
    };
    crop_pad_resize(image, &circle, cfg)
}
