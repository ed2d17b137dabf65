//! The prior-guided first layer.
//!
//! Output channels are laid out as `[bright?, dark?, learned...]` with the
//! learned channels filling the remaining budget of `total_channels`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::{Real, Tensor};
use crate::priors::{prior_planes, GaussianKernel, PriorConfig};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemVariant {
    Baseline,
    DarkOnly,
    BrightOnly,
    DarkBright,
}

impl StemVariant {
    pub const ALL: [StemVariant; 4] = [
        StemVariant::Baseline,
        StemVariant::DarkOnly,
        StemVariant::BrightOnly,
        StemVariant::DarkBright,
    ];

    pub fn uses_bright(self) -> bool {
        matches!(self, StemVariant::BrightOnly | StemVariant::DarkBright)
    }

    pub fn uses_dark(self) -> bool {
        matches!(self, StemVariant::DarkOnly | StemVariant::DarkBright)
    }

    pub fn prior_channels(self) -> usize {
        self.uses_bright() as usize + self.uses_dark() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StemVariant::Baseline => "baseline",
            StemVariant::DarkOnly => "dark_only",
            StemVariant::BrightOnly => "bright_only",
            StemVariant::DarkBright => "dark_bright",
        }
    }
}

impl fmt::Display for StemVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StemVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StemVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stem variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidedStemConfig {
    pub variant: StemVariant,
    pub total_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Fixed Gaussian used for the prior channels.
    pub prior: PriorConfig,
}

impl Default for GuidedStemConfig {
    fn default() -> Self {
        Self {
            variant: StemVariant::DarkBright,
            total_channels: 64,
            kernel_size: 7,
            stride: 2,
            padding: 3,
            prior: PriorConfig::default(),
        }
    }
}

impl GuidedStemConfig {
    pub fn learned_channels(&self) -> usize {
        self.total_channels.saturating_sub(self.variant.prior_channels())
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learned_channels() == 0 {
            return Err(Error::InvalidConfig(format!(
                "stem needs at least one learned channel ({} total, {} priors)",
                self.total_channels,
                self.variant.prior_channels()
            )));
        }
        if self.stride == 0 || self.prior.stride == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig("stem stride must be >= 1 and kernel odd".into()));
        }
        self.prior.kernel()?;
        Ok(())
    }
}

fn check_input<T: Real>(input: &Tensor<T>) -> Result<()> {
    let [_, c, h, w] = input.shape();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("stem expects 3 input channels, got {c}")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatialDim { height: h, width: w });
    }
    Ok(())
}

pub fn guided_stem_forward<T: Real>(
    input: &Tensor<T>,
    learned_weights: &[T],
    kernel: &GaussianKernel,
    cfg: &GuidedStemConfig,
) -> Result<Tensor<T>> {
    check_input(input)?;
    let [n, _, h, w] = input.shape();
    let learned = conv2d_forward(input, learned_weights, cfg.learned_channels(), &cfg.geometry())?;
    let [_, lc, oh, ow] = learned.shape();
    let variant = cfg.variant;
    let priors = par::map_range(if variant.prior_channels() > 0 { n } else { 0 }, |s| {
        let planes = [input.plane(s, 0), input.plane(s, 1), input.plane(s, 2)];
        prior_planes(planes, h, w, kernel, cfg.prior.stride, cfg.prior.padding)
    });
    if let Some((b, _)) = priors.first() {
        if b.len() != oh * ow {
            return Err(Error::ShapeMismatch(format!(
                "prior maps have {} pixels but learned maps are {oh}x{ow}",
                b.len()
            )));
        }
    }

    let pc = variant.prior_channels();
    let mut out = Tensor::zeros([n, pc + lc, oh, ow]);
    for s in 0..n {
        let mut ch = 0;
        if let Some((bright, dark)) = priors.get(s) {
            if variant.uses_bright() {
                out.plane_mut(s, ch).copy_from_slice(bright);
                ch += 1;
            }
            if variant.uses_dark() {
                out.plane_mut(s, ch).copy_from_slice(dark);
                ch += 1;
            }
        }
        let dst = &mut out.sample_mut(s)[ch * oh * ow..];
        dst.copy_from_slice(learned.sample(s));
    }
    Ok(out)
}

/// Weight gradient of the learned path. The prior path is fixed and its
/// inputs are data, so nothing else receives a gradient.
pub fn guided_stem_backward<T: Real>(
    input: &Tensor<T>,
    learned_weights: &[T],
    cfg: &GuidedStemConfig,
    grad_out: &Tensor<T>,
) -> Result<Vec<T>> {
    check_input(input)?;
    let [n, k, oh, ow] = grad_out.shape();
    let pc = cfg.variant.prior_channels();
    let lc = cfg.learned_channels();
    if k != pc + lc {
        return Err(Error::ShapeMismatch(format!("stem gradient has {k} channels")));
    }
    let mut data = Vec::with_capacity(n * lc * oh * ow);
    for s in 0..n {
        data.extend_from_slice(&grad_out.sample(s)[pc * oh * ow..]);
    }
    let g_learned = Tensor::from_vec([n, lc, oh, ow], data)?;
    let (_, gw) = conv2d_backward(input, learned_weights, lc, &cfg.geometry(), &g_learned, false)?;
    Ok(gw)
}
