//! The prior-guided classifier: stem, conv-BN-ReLU body, GAP and a linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{batchnorm_backward, batchnorm_forward, update_running_stats, BnCache, Mode};
use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::init::kaiming_uniform;
use super::layers::{global_avg_pool, global_avg_pool_backward, linear, linear_backward, relu, relu_backward};
use super::loss::argmax;
use super::stem::{guided_stem_backward, guided_stem_forward, GuidedStemConfig};
use super::{Real, Tensor};
use crate::imgproc::RawImage;
use crate::priors::GaussianKernel;
use crate::{Error, Result};

/// A 3x3, padding-1 convolution followed by batch norm and ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvBlockSpec {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: 3,
            stride: self.stride,
            padding: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stem: GuidedStemConfig,
    pub body: Vec<ConvBlockSpec>,
    pub class_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stem: GuidedStemConfig::default(),
            body: vec![
                ConvBlockSpec {
                    out_channels: 32,
                    stride: 2,
                },
                ConvBlockSpec {
                    out_channels: 32,
                    stride: 2,
                },
            ],
            class_count: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        if self.class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be positive".into()));
        }
        if self.body.iter().any(|b| b.out_channels == 0 || b.stride == 0) {
            return Err(Error::InvalidConfig("body blocks need channels and stride >= 1".into()));
        }
        Ok(())
    }

    /// Channel count entering global average pooling.
    pub fn feature_channels(&self) -> usize {
        self.body
            .last()
            .map_or(self.stem.total_channels, |b| b.out_channels)
    }

    /// Canonical description hashed into checkpoint fingerprints.
    pub fn canonical_text(&self) -> String {
        let s = &self.stem;
        let mut text = format!(
            "stem variant={} channels={} conv={}x{}/s{}/p{} gauss={}x{}/sigma={:?}/s{}/p{}",
            s.variant,
            s.total_channels,
            s.kernel_size,
            s.kernel_size,
            s.stride,
            s.padding,
            s.prior.kernel_size,
            s.prior.kernel_size,
            s.prior.sigma,
            s.prior.stride,
            s.prior.padding,
        );
        let mut c = s.total_channels;
        for b in &self.body {
            text.push_str(&format!("\nblock conv3x3 {c}->{} s{} bn relu", b.out_channels, b.stride));
            c = b.out_channels;
        }
        text.push_str(&format!("\ngap\nlinear {c}->{}\n", self.class_count));
        text
    }

    /// 32-bit FNV-1a hash of [`canonical_text`](Self::canonical_text).
    pub fn fingerprint(&self) -> u32 {
        self.canonical_text()
            .bytes()
            .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
    }
}

/// A learnable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

/// A non-learnable tensor (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub learnable: Vec<Param<T>>,
    pub buffers: Vec<Buffer<T>>,
    /// The frozen Gaussian of the stem's prior path.
    pub kernel: GaussianKernel,
}

impl<T: Real> ModelParams<T> {
    pub fn param_count(&self) -> usize {
        self.learnable.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.learnable.iter().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.learnable {
            p.grad.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.learnable.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
            && self.buffers.iter().all(|b| b.value.iter().all(|v| v.is_finite()))
    }
}

/// `w <- w - lr * g` for every learnable tensor, then clears the gradients.
pub fn sgd_step<T: Real>(params: &mut ModelParams<T>, lr: T) {
    for p in &mut params.learnable {
        for (w, g) in p.value.iter_mut().zip(p.grad.iter_mut()) {
            *w -= lr * *g;
            *g = T::zero();
        }
    }
}

/// Deliberate backward corruption used to test the gradient checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the gradient flowing back through the first body ReLU.
    FlipFirstReluGradient,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    bn: BnCache<T>,
    out: Tensor<T>,
}

/// Activations retained by [`Model::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    input: Tensor<T>,
    stem_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    pooled: Tensor<T>,
}

impl<T: Real> ForwardPass<T> {
    /// The last convolutional activation, the input of global pooling.
    pub fn features(&self) -> &Tensor<T> {
        self.blocks.last().map_or(&self.stem_out, |b| &b.out)
    }

    /// Post-ReLU output of every body block, in order.
    pub fn block_outputs(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.blocks.iter().map(|b| &b.out)
    }

    pub fn stem_output(&self) -> &Tensor<T> {
        &self.stem_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ModelParams<T>,
}

const STEM: usize = 0;

fn conv_idx(block: usize) -> usize {
    1 + 3 * block
}

impl<T: Real> Model<T> {
    /// Kaiming-uniform conv and linear weights, unit BN scale, zero shifts and biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = &config.stem;
        let kernel = stem.prior.kernel()?;
        let mut learnable = Vec::new();
        let mut buffers = Vec::new();
        let mut param = |name: String, dims: Vec<usize>, value: Vec<T>| {
            let grad = vec![T::zero(); value.len()];
            learnable.push(Param {
                name,
                dims,
                value,
                grad,
            });
        };

        let k = stem.kernel_size;
        let lc = stem.learned_channels();
        param(
            "stem.conv.weight".into(),
            vec![lc, 3, k, k],
            kaiming_uniform(lc * 3 * k * k, 3 * k * k, rng),
        );
        let mut c = stem.total_channels;
        for (i, b) in config.body.iter().enumerate() {
            let o = b.out_channels;
            param(
                format!("body.{i}.conv.weight"),
                vec![o, c, 3, 3],
                kaiming_uniform(o * c * 9, c * 9, rng),
            );
            param(format!("body.{i}.bn.gamma"), vec![o], vec![T::one(); o]);
            param(format!("body.{i}.bn.beta"), vec![o], vec![T::zero(); o]);
            buffers.push(Buffer {
                name: format!("body.{i}.bn.running_mean"),
                dims: vec![o],
                value: vec![T::zero(); o],
            });
            buffers.push(Buffer {
                name: format!("body.{i}.bn.running_var"),
                dims: vec![o],
                value: vec![T::one(); o],
            });
            c = o;
        }
        let classes = config.class_count;
        param(
            "head.linear.weight".into(),
            vec![classes, c],
            kaiming_uniform(classes * c, c, rng),
        );
        param("head.linear.bias".into(), vec![classes], vec![T::zero(); classes]);

        Ok(Self {
            config,
            params: ModelParams {
                learnable,
                buffers,
                kernel,
            },
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes
    /// against a freshly laid-out model of the same config.
    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        let template = Model::<T>::new(config.clone(), &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        let same = |a: &[(String, Vec<usize>)], b: &[(String, Vec<usize>)]| a == b;
        let layout = |m: &ModelParams<T>| -> (Vec<(String, Vec<usize>)>, Vec<(String, Vec<usize>)>) {
            (
                m.learnable.iter().map(|p| (p.name.clone(), p.dims.clone())).collect(),
                m.buffers.iter().map(|b| (b.name.clone(), b.dims.clone())).collect(),
            )
        };
        let (tl, tb) = layout(&template.params);
        let (pl, pb) = layout(&params);
        if !same(&tl, &pl) || !same(&tb, &pb) {
            return Err(Error::ShapeMismatch("parameter layout does not match model config".into()));
        }
        if params.kernel != template.params.kernel {
            return Err(Error::ShapeMismatch("frozen kernel does not match model config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
        let p = &self.params.learnable;
        let stem_out = guided_stem_forward(input, &p[STEM].value, &self.params.kernel, &self.config.stem)?;
        let mut blocks: Vec<BlockCache<T>> = Vec::with_capacity(self.config.body.len());
        for (i, b) in self.config.body.iter().enumerate() {
            let x = blocks.last().map_or(&stem_out, |c| &c.out);
            let ci = conv_idx(i);
            let z = conv2d_forward(x, &p[ci].value, b.out_channels, &b.geometry())?;
            let (y, bn) = batchnorm_forward(
                &z,
                &p[ci + 1].value,
                &p[ci + 2].value,
                &self.params.buffers[2 * i].value,
                &self.params.buffers[2 * i + 1].value,
                mode,
            )?;
            blocks.push(BlockCache { bn, out: relu(&y) });
        }
        let features = blocks.last().map_or(&stem_out, |c| &c.out);
        let pooled = global_avg_pool(features);
        let h = p.len() - 2;
        let logits = linear(&pooled, &p[h].value, &p[h + 1].value)?;
        Ok(ForwardPass {
            logits,
            input: input.clone(),
            stem_out,
            blocks,
            pooled,
        })
    }

    /// Accumulates parameter gradients for `dlogits` into the grad buffers.
    pub fn backward(&mut self, pass: &ForwardPass<T>, dlogits: &Tensor<T>) -> Result<()> {
        self.backward_with_fault(pass, dlogits, None)
    }

    pub fn backward_with_fault(
        &mut self,
        pass: &ForwardPass<T>,
        dlogits: &Tensor<T>,
        fault: Option<Fault>,
    ) -> Result<()> {
        let n_params = self.params.learnable.len();
        let h = n_params - 2;
        let (dpooled, dw, db) = linear_backward(&pass.pooled, &self.params.learnable[h].value, dlogits)?;
        accumulate(&mut self.params.learnable[h].grad, &dw);
        accumulate(&mut self.params.learnable[h + 1].grad, &db);

        let mut grad = global_avg_pool_backward(pass.features().shape(), &dpooled)?;
        for (i, b) in self.config.body.iter().enumerate().rev() {
            let cache = &pass.blocks[i];
            let mut g = relu_backward(&cache.out, &grad)?;
            if i == 0 && fault == Some(Fault::FlipFirstReluGradient) {
                g = g.map(|v| -v);
            }
            let ci = conv_idx(i);
            let (dz, dgamma, dbeta) = batchnorm_backward(&cache.bn, &self.params.learnable[ci + 1].value, &g)?;
            accumulate(&mut self.params.learnable[ci + 1].grad, &dgamma);
            accumulate(&mut self.params.learnable[ci + 2].grad, &dbeta);
            let x = if i == 0 { &pass.stem_out } else { &pass.blocks[i - 1].out };
            let (dx, dw) = conv2d_backward(x, &self.params.learnable[ci].value, b.out_channels, &b.geometry(), &dz, true)?;
            accumulate(&mut self.params.learnable[ci].grad, &dw);
            grad = dx.expect("input gradient requested");
        }
        let dw = guided_stem_backward(&pass.input, &self.params.learnable[STEM].value, &self.config.stem, &grad)?;
        accumulate(&mut self.params.learnable[STEM].grad, &dw);
        Ok(())
    }

    /// Gradient of the loss with respect to [`ForwardPass::features`].
    pub fn feature_gradient(&self, pass: &ForwardPass<T>, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.params.learnable.len() - 2;
        let (dpooled, _, _) = linear_backward(&pass.pooled, &self.params.learnable[h].value, dlogits)?;
        global_avg_pool_backward(pass.features().shape(), &dpooled)
    }

    /// Folds a train-mode forward's batch statistics into the running averages.
    pub fn commit_running_stats(&mut self, pass: &ForwardPass<T>) {
        for (i, cache) in pass.blocks.iter().enumerate() {
            let (mean, var) = self.params.buffers.split_at_mut(2 * i + 1);
            update_running_stats(&cache.bn, &mut mean[2 * i].value, &mut var[0].value);
        }
    }

    /// Eval-mode class predictions.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax(&self.forward(input, Mode::Eval)?.logits))
    }
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
}

/// Packs images into an `(N, 3, H, W)` tensor.
pub fn images_to_tensor<T: Real>(images: &[&RawImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} in a batch of {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3).map(|&v| T::lit(v as f64)));
        }
    }
    Tensor::from_vec([images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::StemVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(variant: StemVariant) -> Model<f32> {
        let mut cfg = ModelConfig::default();
        cfg.stem.variant = variant;
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let base = model(StemVariant::Baseline);
        let db = model(StemVariant::DarkBright);
        assert_eq!(base.params().get("stem.conv.weight").unwrap().value.len(), 9408);
        assert_eq!(db.params().get("stem.conv.weight").unwrap().value.len(), 9114);
        let head = base.params().get("head.linear.weight").unwrap().value.len()
            + base.params().get("head.linear.bias").unwrap().value.len();
        assert_eq!(head, 99);
        assert!(db.param_count() < base.param_count());
    }

    #[test]
    fn fingerprint_depends_on_variant() {
        let a = model(StemVariant::Baseline).config().fingerprint();
        let b = model(StemVariant::DarkOnly).config().fingerprint();
        assert_ne!(a, b);
        assert_eq!(a, ModelConfig {
            stem: GuidedStemConfig {
                variant: StemVariant::Baseline,
                ..Default::default()
            },
            ..Default::default()
        }
        .fingerprint());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = model(StemVariant::DarkBright);
        let kernel = m.params().kernel.clone();
        let p = &mut m.params_mut().learnable[0];
        p.value[0] = 1.0;
        p.grad[0] = 0.5;
        let before: Vec<f32> = m.params().learnable[1].value.clone();
        sgd_step(m.params_mut(), 0.01);
        assert_eq!(m.params().learnable[0].value[0], 0.995);
        assert_eq!(m.params().learnable[0].grad[0], 0.0);
        assert_eq!(m.params().learnable[1].value, before);
        assert_eq!(m.params().kernel, kernel);
    }

    #[test]
    fn forward_shapes() {
        let m = model(StemVariant::DarkBright);
        let x = Tensor::filled([2, 3, 32, 32], 0.5f32);
        let pass = m.forward(&x, Mode::Train).unwrap();
        assert_eq!(pass.stem_output().shape(), [2, 64, 16, 16]);
        assert_eq!(pass.features().shape(), [2, 32, 4, 4]);
        assert_eq!(pass.logits.shape(), [2, 3, 1, 1]);
    }
}
