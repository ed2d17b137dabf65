use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RawImage;

/// Which random transforms [`augment`] may apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentFlags {
    pub hflip: bool,
    pub vflip: bool,
    pub rotate: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rotate: true,
        }
    }
}

impl AugmentFlags {
    pub fn none() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotate: false,
        }
    }
}

/// A concrete augmentation: flips first, then a counter-clockwise rotation
/// about the image centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            angle_deg: 0.0,
        }
    }

    /// Draws a transform. All three random values are always consumed so the
    /// stream position does not depend on the flags.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, flags: AugmentFlags) -> Self {
        let h = rng.gen_bool(0.5);
        let v = rng.gen_bool(0.5);
        let angle = rng.gen_range(0.0..360.0);
        Self {
            hflip: flags.hflip && h,
            vflip: flags.vflip && v,
            angle_deg: if flags.rotate { angle } else { 0.0 },
        }
    }
}

pub fn augment<R: Rng + ?Sized>(image: &RawImage, rng: &mut R, flags: AugmentFlags) -> RawImage {
    apply_transform(image, &Transform::sample(rng, flags))
}

pub fn apply_transform(image: &RawImage, t: &Transform) -> RawImage {
    let (h, w) = (image.height(), image.width());
    let mut out = if t.hflip || t.vflip {
        RawImage::from_fn(h, w, |y, x| {
            let sy = if t.vflip { h - 1 - y } else { y };
            let sx = if t.hflip { w - 1 - x } else { x };
            image.pixel(sy, sx)
        })
    } else {
        image.clone()
    };
    if t.angle_deg != 0.0 {
        out = rotate(&out, t.angle_deg);
    }
    out
}

/// Rotation with bilinear resampling and zero fill. Output pixel `(x, y)`
/// reads the source at `c + R(theta) (p - c)`, so content turns
/// counter-clockwise on screen.
fn rotate(image: &RawImage, angle_deg: f64) -> RawImage {
    let (h, w) = (image.height(), image.width());
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    RawImage::from_fn(h, w, |y, x| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + dx * cos - dy * sin;
        let sy = cy + dx * sin + dy * cos;
        image.sample_zero_fill(sx, sy)
    })
}
