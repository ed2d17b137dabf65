use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, QualityLabel};
use crate::imgproc::{FovCircle, RawImage};
use crate::priors::dark_channel;
use crate::{par, Error, Result};

/// Closed interval `[lo, hi]`, sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerLabel<T> {
    pub good: T,
    pub usable: T,
    pub reject: T,
}

impl<T: Copy> PerLabel<T> {
    pub fn get(&self, label: QualityLabel) -> T {
        match label {
            QualityLabel::Good => self.good,
            QualityLabel::Usable => self.usable,
            QualityLabel::Reject => self.reject,
        }
    }
}

/// Lengths are fractions of the FoV radius unless named otherwise; blur and
/// vessel widths are in pixels at 128 px and scale with `image_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub image_size: usize,
    /// FoV radius as a fraction of `image_size`.
    pub fov_radius_frac: Range,
    /// Maximum FoV centre offset as a fraction of `image_size`.
    pub fov_center_jitter: f64,
    pub vessel_count: (usize, usize),
    pub vessel_width: Range,
    pub disc_radius: Range,
    pub disc_brightness: Range,
    /// Global fundus brightness multiplier, shared by all labels.
    pub base_gain: Range,
    /// Peak-to-peak amplitude of the additive illumination field.
    pub illumination: PerLabel<Range>,
    pub blur_sigma: PerLabel<Range>,
    pub noise_sigma: PerLabel<f64>,
    pub occlusion_probability: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            image_size: 128,
            fov_radius_frac: Range::new(0.42, 0.47),
            fov_center_jitter: 0.02,
            vessel_count: (6, 10),
            vessel_width: Range::new(1.0, 2.5),
            disc_radius: Range::new(0.10, 0.14),
            disc_brightness: Range::new(0.25, 0.45),
            base_gain: Range::new(0.75, 1.15),
            illumination: PerLabel {
                good: Range::new(0.0, 0.05),
                usable: Range::new(0.15, 0.35),
                reject: Range::new(0.45, 0.8),
            },
            blur_sigma: PerLabel {
                good: Range::new(0.0, 0.8),
                usable: Range::new(0.0, 1.0),
                reject: Range::new(0.0, 1.2),
            },
            noise_sigma: PerLabel {
                good: 0.01,
                usable: 0.015,
                reject: 0.02,
            },
            occlusion_probability: 0.3,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.image_size < 16 {
            return bad("image_size must be at least 16");
        }
        let ranges = [
            self.fov_radius_frac,
            self.vessel_width,
            self.disc_radius,
            self.disc_brightness,
            self.base_gain,
        ];
        if ranges.iter().any(|r| !r.valid()) {
            return bad("every range needs finite lo <= hi");
        }
        if self.fov_radius_frac.lo <= 0.0 || self.fov_radius_frac.hi + self.fov_center_jitter > 0.5 {
            return bad("FoV must fit inside the frame");
        }
        if self.vessel_count.0 > self.vessel_count.1 {
            return bad("vessel_count min exceeds max");
        }
        for l in QualityLabel::ALL {
            let (a, b) = (self.illumination.get(l), self.blur_sigma.get(l));
            if !a.valid() || !b.valid() || a.lo < 0.0 || a.hi > 1.0 || b.lo < 0.0 {
                return bad("per-label ranges must be valid, amplitude within [0, 1]");
            }
            if !(self.noise_sigma.get(l) >= 0.0) {
                return bad("noise sigma must be non-negative");
            }
        }
        let il = &self.illumination;
        if il.good.hi >= il.usable.lo || il.usable.hi >= il.reject.lo {
            return bad("illumination bands must be ordered and non-overlapping");
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability) {
            return bad("occlusion_probability must lie in [0, 1]");
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.image_size as f64 / 128.0
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub image: RawImage,
    pub label: QualityLabel,
    pub circle: FovCircle,
}

/// Draws a FoV circle and renders one fundus image.
pub fn synth_sample<R: Rng + ?Sized>(label: QualityLabel, rng: &mut R, params: &SyntheticParams) -> SyntheticSample {
    let n = params.image_size as f64;
    let j = params.fov_center_jitter * n;
    let circle = FovCircle {
        cx: (n - 1.0) / 2.0 + rng.gen_range(-j..=j),
        cy: (n - 1.0) / 2.0 + rng.gen_range(-j..=j),
        r: params.fov_radius_frac.sample(rng) * n,
    };
    let image = render_fundus(label, rng, params, circle);
    SyntheticSample { image, label, circle }
}

pub fn synth_fundus<R: Rng + ?Sized>(label: QualityLabel, rng: &mut R, params: &SyntheticParams) -> RawImage {
    synth_sample(label, rng, params).image
}

/// Renders a fundus with a given FoV. Pixels are scaled by the FoV coverage
/// `clamp(r - d, 0, 1)`, so everything outside the circle is exactly 0.
pub fn render_fundus<R: Rng + ?Sized>(
    label: QualityLabel,
    rng: &mut R,
    params: &SyntheticParams,
    fov: FovCircle,
) -> RawImage {
    let n = params.image_size;
    let s = params.scale();
    let r = fov.r;
    let mut img = vec![[0.0f64; 3]; n * n];

    let gain = params.base_gain.sample(rng);
    let base = [
        rng.gen_range(0.62..0.78) * gain,
        rng.gen_range(0.26..0.36) * gain,
        rng.gen_range(0.10..0.18) * gain,
    ];
    let disc_angle = rng.gen_range(0.0..2.0 * PI);
    let disc_dist = rng.gen_range(0.25..0.45) * r;
    let disc = (
        fov.cx + disc_dist * disc_angle.cos(),
        fov.cy + disc_dist * disc_angle.sin(),
    );
    let disc_r = params.disc_radius.sample(rng) * r;
    let disc_b = params.disc_brightness.sample(rng);

    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 - fov.cx, y as f64 - fov.cy);
            let rho2 = (dx * dx + dy * dy) / (r * r);
            let vignette = 1.0 - 0.08 * rho2.min(1.0);
            let (ddx, ddy) = (x as f64 - disc.0, y as f64 - disc.1);
            let t = 1.0 - (ddx * ddx + ddy * ddy) / (disc_r * disc_r);
            let blob = if t > 0.0 { disc_b * t.sqrt() } else { 0.0 };
            let p = &mut img[y * n + x];
            p[0] = base[0] * vignette + blob * 0.9;
            p[1] = base[1] * vignette + blob * 1.0;
            p[2] = base[2] * vignette + blob * 0.7;
        }
    }

    let vessels = vessel_mask(rng, params, fov, disc, n, s);
    let depth = [0.35, 0.55, 0.45];
    for (p, &v) in img.iter_mut().zip(&vessels) {
        for c in 0..3 {
            p[c] *= 1.0 - depth[c] * v;
        }
    }

    let amplitude = params.illumination.get(label).sample(rng);
    let field = illumination_field(rng, fov, n);
    for (p, &g) in img.iter_mut().zip(&field) {
        let e = 2.0 * amplitude * g;
        for v in p.iter_mut() {
            // Over-exposure veils towards white; under-exposure attenuates.
            *v = if e >= 0.0 { *v + e * (1.0 - *v) } else { *v * (1.0 + e) };
        }
    }

    let sigma = params.blur_sigma.get(label).sample(rng) * s;
    if sigma > 0.05 {
        gaussian_blur(&mut img, n, sigma);
    }

    let noise = params.noise_sigma.get(label);
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).expect("finite sigma");
        for p in img.iter_mut() {
            for v in p.iter_mut() {
                *v += dist.sample(rng);
            }
        }
    }

    if label == QualityLabel::Reject && rng.gen_bool(params.occlusion_probability) {
        let patches = rng.gen_range(1..=2);
        for _ in 0..patches {
            occlude(&mut img, rng, fov, n);
        }
    }

    RawImage::from_fn(n, n, |y, x| {
        let (dx, dy) = (x as f64 - fov.cx, y as f64 - fov.cy);
        let cover = (r - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
        img[y * n + x].map(|v| (v * cover) as f32)
    })
}

/// Gently curving vessels radiating from the optic disc, as a [0, 1]
/// darkening mask.
fn vessel_mask<R: Rng + ?Sized>(
    rng: &mut R,
    params: &SyntheticParams,
    fov: FovCircle,
    disc: (f64, f64),
    n: usize,
    s: f64,
) -> Vec<f64> {
    let mut mask = vec![0.0f64; n * n];
    let count = rng.gen_range(params.vessel_count.0..=params.vessel_count.1);
    let base = rng.gen_range(0.0..2.0 * PI);
    for v in 0..count {
        let mut heading = base + 2.0 * PI * (v as f64 + rng.gen_range(-0.3..0.3)) / count as f64;
        let curvature = rng.gen_range(-1.2..1.2) / fov.r;
        let mut width = params.vessel_width.sample(rng) * s;
        let (mut px, mut py) = disc;
        for _ in 0..(4.0 * fov.r) as usize {
            let (dx, dy) = (px - fov.cx, py - fov.cy);
            if dx * dx + dy * dy > fov.r * fov.r {
                break;
            }
            stamp(&mut mask, n, px, py, width / 2.0);
            heading += curvature + rng.gen_range(-0.04..0.04);
            px += heading.cos();
            py += heading.sin();
            width = (width * (1.0 - 0.4 / fov.r)).max(0.6 * s);
        }
    }
    mask
}

fn stamp(mask: &mut [f64], n: usize, px: f64, py: f64, half: f64) {
    let reach = half + 1.0;
    let x0 = (px - reach).floor().max(0.0) as usize;
    let y0 = (py - reach).floor().max(0.0) as usize;
    let x1 = ((px + reach).ceil() as isize).min(n as isize - 1);
    let y1 = ((py + reach).ceil() as isize).min(n as isize - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let d = ((x as f64 - px).powi(2) + (y as f64 - py).powi(2)).sqrt();
            let v = (half + 0.5 - d).clamp(0.0, 1.0);
            let m = &mut mask[y * n + x];
            *m = m.max(v);
        }
    }
}

/// A planar ramp or a radial hotspot, valued in [-0.5, 0.5], so the
/// amplitude is the peak-to-peak swing across the FoV.
fn illumination_field<R: Rng + ?Sized>(rng: &mut R, fov: FovCircle, n: usize) -> Vec<f64> {
    let mut field = vec![0.0; n * n];
    if rng.gen_bool(0.5) {
        let theta = rng.gen_range(0.0..2.0 * PI);
        let (ux, uy) = (theta.cos(), theta.sin());
        for y in 0..n {
            for x in 0..n {
                let t = ((x as f64 - fov.cx) * ux + (y as f64 - fov.cy) * uy) / (2.0 * fov.r);
                field[y * n + x] = t.clamp(-0.5, 0.5);
            }
        }
    } else {
        let theta = rng.gen_range(0.0..2.0 * PI);
        let dist = rng.gen_range(0.0..0.6) * fov.r;
        let (qx, qy) = (fov.cx + dist * theta.cos(), fov.cy + dist * theta.sin());
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for y in 0..n {
            for x in 0..n {
                let d = ((x as f64 - qx).powi(2) + (y as f64 - qy).powi(2)).sqrt() / (1.4 * fov.r);
                field[y * n + x] = sign * (0.5 - d.min(1.0));
            }
        }
    }
    field
}

fn occlude<R: Rng + ?Sized>(img: &mut [[f64; 3]], rng: &mut R, fov: FovCircle, n: usize) {
    let theta = rng.gen_range(0.0..2.0 * PI);
    let dist = rng.gen_range(0.3..0.9) * fov.r;
    let (ox, oy) = (fov.cx + dist * theta.cos(), fov.cy + dist * theta.sin());
    let a = rng.gen_range(0.15..0.35) * fov.r;
    let b = rng.gen_range(0.3..0.7) * a;
    let phi = rng.gen_range(0.0..PI);
    let (c, s) = (phi.cos(), phi.sin());
    let strength = rng.gen_range(0.5..0.85);
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 - ox, y as f64 - oy);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            let q = (u / a).powi(2) + (v / b).powi(2);
            let w = (1.5 - q).clamp(0.0, 1.0) * strength;
            if w > 0.0 {
                for ch in img[y * n + x].iter_mut() {
                    *ch *= 1.0 - w;
                }
            }
        }
    }
}

fn gaussian_blur(img: &mut [[f64; 3]], n: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    let clampi = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![[0.0f64; 3]; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = [0.0; 3];
            for (j, w) in k.iter().enumerate() {
                let p = img[y * n + clampi(x as isize + j as isize - radius)];
                for c in 0..3 {
                    acc[c] += w * p[c];
                }
            }
            tmp[y * n + x] = acc;
        }
    }
    for y in 0..n {
        for x in 0..n {
            let mut acc = [0.0; 3];
            for (j, w) in k.iter().enumerate() {
                let p = tmp[clampi(y as isize + j as isize - radius) * n + x];
                for c in 0..3 {
                    acc[c] += w * p[c];
                }
            }
            img[y * n + x] = acc;
        }
    }
}

/// `counts` images per label, label-major. Image `i` draws from its own
/// stream derived from `(seed, i)`, so generation parallelises without
/// changing the output.
pub fn generate_dataset(counts: [usize; 3], seed: u64, params: &SyntheticParams) -> Result<Vec<SyntheticSample>> {
    params.validate()?;
    let labels: Vec<QualityLabel> = QualityLabel::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&l, c)| std::iter::repeat_n(l, c))
        .collect();
    Ok(par::map_range(labels.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64]));
        synth_sample(labels[i], &mut rng, params)
    }))
}

/// Spatial standard deviation of the dark channel over FoV pixels at least
/// `patch_radius` inside the boundary.
pub fn dark_channel_unevenness(image: &RawImage, circle: FovCircle, patch_radius: usize) -> Result<f64> {
    let dark = dark_channel(image, patch_radius);
    let inner = circle.r - patch_radius as f64;
    let mut vals = Vec::new();
    for y in 0..dark.height {
        for x in 0..dark.width {
            let (dx, dy) = (x as f64 - circle.cx, y as f64 - circle.cy);
            if dx * dx + dy * dy <= inner * inner {
                vals.push(dark.values[y * dark.width + x] as f64);
            }
        }
    }
    if vals.is_empty() {
        return Ok(0.0);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok((vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_params_valid() {
        SyntheticParams::default().validate().unwrap();
        let mut p = SyntheticParams::default();
        p.illumination.usable.lo = 0.04;
        assert!(p.validate().is_err());
    }

    #[test]
    fn background_is_black() {
        let p = SyntheticParams::default();
        for (i, label) in QualityLabel::ALL.into_iter().enumerate() {
            let s = synth_sample(label, &mut rng(i as u64), &p);
            for y in 0..128 {
                for x in 0..128 {
                    let d = ((x as f64 - s.circle.cx).powi(2) + (y as f64 - s.circle.cy).powi(2)).sqrt();
                    if d >= s.circle.r {
                        assert_eq!(s.image.pixel(y, x), [0.0; 3], "({y},{x})");
                    }
                }
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn seeded_bit_identical() {
        let p = SyntheticParams::default();
        let a = synth_fundus(QualityLabel::Reject, &mut rng(9), &p);
        let b = synth_fundus(QualityLabel::Reject, &mut rng(9), &p);
        assert_eq!(a, b);
        let c = synth_fundus(QualityLabel::Reject, &mut rng(10), &p);
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let p = SyntheticParams {
            image_size: 32,
            ..Default::default()
        };
        let d = generate_dataset([3, 2, 4], 5, &p).unwrap();
        let counts = QualityLabel::ALL.map(|l| d.iter().filter(|s| s.label == l).count());
        assert_eq!(counts, [3, 2, 4]);
        let e = generate_dataset([3, 2, 4], 5, &p).unwrap();
        assert!(d.iter().zip(&e).all(|(a, b)| a.image == b.image));
    }

    #[test]
    fn unevenness_of_flat_image_is_zero() {
        let img = RawImage::from_fn(40, 40, |_, _| [0.3; 3]);
        let c = FovCircle { cx: 19.5, cy: 19.5, r: 30.0 };
        assert!(dark_channel_unevenness(&img, c, 7).unwrap() < 1e-9);
    }

    #[test]
    fn reject_dark_channel_at_least_twice_as_uneven_as_good() {
        let p = SyntheticParams::default();
        let mean = |label: QualityLabel| {
            let total: f64 = (0..100u64)
                .map(|i| {
                    let s = synth_sample(label, &mut rng(derive_seed(&[77, label.index() as u64, i])), &p);
                    dark_channel_unevenness(&s.image, s.circle, 7).unwrap()
                })
                .sum();
            total / 100.0
        };
        let (good, reject) = (mean(QualityLabel::Good), mean(QualityLabel::Reject));
        assert!(reject >= 2.0 * good, "good {good:.4} reject {reject:.4}");
    }
}
