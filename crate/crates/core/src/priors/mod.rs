//! Dark and bright channel priors.
//!
//! Two routes are provided and they intentionally differ at the borders:
//!
//! * [`dark_channel`] / [`bright_channel`] are the exact patch extrema, with
//!   edge replication so values stay in gamut.
//! * [`prior_maps`] is the network's approximation: a fixed Gaussian
//!   depthwise convolution (zero padding, stride 2) followed by channel-wise
//!   min/max pooling.

mod extremum;
mod kernel;

pub use extremum::{naive_extremum, sliding_extremum_plane, Extremum};
pub use kernel::{make_gaussian_kernel, GaussianKernel};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::imgproc::RawImage;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Half-width of the exact prior patch; 7 gives a 15x15 window.
    pub patch_radius: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    pub stride: usize,
    pub padding: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            patch_radius: 7,
            kernel_size: 7,
            sigma: 1.5,
            stride: 2,
            padding: 3,
        }
    }
}

impl PriorConfig {
    pub fn kernel(&self) -> Result<GaussianKernel> {
        make_gaussian_kernel(self.kernel_size, self.sigma)
    }
}

/// A single-channel map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl PriorMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), height * width, "map size");
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Per-pixel extremum over the three colour channels.
pub fn channel_extremum(image: &RawImage, mode: Extremum) -> PriorMap {
    let values = image
        .data()
        .chunks_exact(3)
        .map(|p| mode.pick(mode.pick(p[0], p[1]), p[2]))
        .collect();
    PriorMap::new(image.height(), image.width(), values)
}

/// Windowed extremum of a map; see [`sliding_extremum_plane`].
pub fn sliding_extremum(map: &PriorMap, radius: usize, mode: Extremum) -> PriorMap {
    PriorMap::new(
        map.height,
        map.width,
        sliding_extremum_plane(&map.values, map.height, map.width, radius, mode),
    )
}

/// Dark channel: minimum over the patch of the per-pixel channel minimum.
pub fn dark_channel(image: &RawImage, radius: usize) -> PriorMap {
    sliding_extremum(&channel_extremum(image, Extremum::Min), radius, Extremum::Min)
}

/// Bright channel: maximum over the patch of the per-pixel channel maximum.
pub fn bright_channel(image: &RawImage, radius: usize) -> PriorMap {
    sliding_extremum(&channel_extremum(image, Extremum::Max), radius, Extremum::Max)
}

/// Output side length of a strided convolution.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (n + 2 * padding - kernel) / stride + 1
}

/// Convolves one plane with the fixed kernel (zero padding), sampling every
/// `stride` pixels. Accumulation is in `f64` in a fixed order.
pub fn convolve_plane<T: Float>(
    src: &[T],
    height: usize,
    width: usize,
    kernel: &GaussianKernel,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let k = kernel.size();
    let oh = conv_out_len(height, k, stride, padding);
    let ow = conv_out_len(width, k, stride, padding);
    let weights = kernel.weights();
    let src: Vec<f64> = src.iter().map(|v| v.to_f64().unwrap()).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let y_first = (oy * stride) as isize - padding as isize;
        let ky0 = (-y_first).max(0) as usize;
        let ky1 = ((height as isize - y_first).max(0) as usize).min(k);
        for ox in 0..ow {
            let x_first = (ox * stride) as isize - padding as isize;
            let kx0 = (-x_first).max(0) as usize;
            let kx1 = ((width as isize - x_first).max(0) as usize).min(k);
            let mut acc = 0.0f64;
            for ky in ky0..ky1 {
                let y = (y_first + ky as isize) as usize;
                let row = &src[y * width..(y + 1) * width];
                let wrow = &weights[ky * k..(ky + 1) * k];
                let x = (x_first + kx0 as isize) as usize;
                for (wv, sv) in wrow[kx0..kx1].iter().zip(&row[x..]) {
                    acc += wv * sv;
                }
            }
            out.push(T::from(acc).unwrap());
        }
    }
    out
}

/// The three colour channels after depthwise Gaussian filtering.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    pub height: usize,
    pub width: usize,
    pub channels: [Vec<f32>; 3],
}

pub fn depthwise_gaussian(
    image: &RawImage,
    kernel: &GaussianKernel,
    stride: usize,
    padding: usize,
) -> ChannelStack {
    let (h, w) = (image.height(), image.width());
    let channels = [0, 1, 2].map(|c| convolve_plane(&image.plane(c), h, w, kernel, stride, padding));
    ChannelStack {
        height: conv_out_len(h, kernel.size(), stride, padding),
        width: conv_out_len(w, kernel.size(), stride, padding),
        channels,
    }
}

pub fn channel_extremum_pool(stack: &ChannelStack, mode: Extremum) -> PriorMap {
    let [a, b, c] = &stack.channels;
    let values = a
        .iter()
        .zip(b)
        .zip(c)
        .map(|((&a, &b), &c)| mode.pick(mode.pick(a, b), c))
        .collect();
    PriorMap::new(stack.height, stack.width, values)
}

/// Bright and dark prior planes from three colour planes. This is the exact
/// computation the network stem performs for its prior channels.
pub fn prior_planes<T: Float>(
    planes: [&[T]; 3],
    height: usize,
    width: usize,
    kernel: &GaussianKernel,
    stride: usize,
    padding: usize,
) -> (Vec<T>, Vec<T>) {
    let filtered = planes.map(|p| convolve_plane(p, height, width, kernel, stride, padding));
    let n = filtered[0].len();
    let mut bright = Vec::with_capacity(n);
    let mut dark = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b, c) = (filtered[0][i], filtered[1][i], filtered[2][i]);
        bright.push(a.max(b).max(c));
        dark.push(a.min(b).min(c));
    }
    (bright, dark)
}

/// The stem's `(bright, dark)` prior maps at half resolution (for the default
/// kernel geometry).
pub fn prior_maps(image: &RawImage, cfg: &PriorConfig) -> Result<(PriorMap, PriorMap)> {
    let kernel = cfg.kernel()?;
    let (h, w) = (image.height(), image.width());
    let planes = [image.plane(0), image.plane(1), image.plane(2)];
    let (bright, dark) = prior_planes(
        [&planes[0], &planes[1], &planes[2]],
        h,
        w,
        &kernel,
        cfg.stride,
        cfg.padding,
    );
    let oh = conv_out_len(h, kernel.size(), cfg.stride, cfg.padding);
    let ow = conv_out_len(w, kernel.size(), cfg.stride, cfg.padding);
    Ok((PriorMap::new(oh, ow, bright), PriorMap::new(oh, ow, dark)))
}
