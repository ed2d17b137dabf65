//! Central finite-difference verification of every hand-written backward pass.
//!
//! Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
//! round-off on near-zero gradients from dominating.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batchnorm::{batchnorm_backward, batchnorm_forward, Mode};
use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::layers::{global_avg_pool, global_avg_pool_backward, linear, linear_backward, relu, relu_backward};
use super::loss::softmax_cross_entropy;
use super::model::{Fault, ForwardPass, Model, ModelConfig};
use super::stem::{guided_stem_backward, guided_stem_forward, GuidedStemConfig, StemVariant};
use super::Tensor;
use crate::Result;

const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation flipped a ReLU.
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.entries
            .iter()
            .all(|e| e.checked > 0 && e.max_rel_error <= tolerance)
    }

    pub fn get(&self, name: &str) -> Option<&TensorCheck> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// One line per tensor, marked `ok` or `FAIL` against `tolerance`.
    pub fn to_text(&self, tolerance: f64) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let ok = e.checked > 0 && e.max_rel_error <= tolerance;
            s.push_str(&format!(
                "{:<28} max_rel {:>10.3e}  checked {:>4}  skipped {:>3}  {}\n",
                e.name,
                e.max_rel_error,
                e.checked,
                e.skipped,
                if ok { "ok" } else { "FAIL" }
            ));
        }
        s
    }

    pub fn merge(mut self, other: GradCheckReport) -> Self {
        self.entries.extend(other.entries);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub batch: usize,
    pub size: usize,
    pub step: f64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
    /// Feed an all-zero image instead of random data.
    pub zero_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            batch: 2,
            size: 16,
            step: 1e-5,
            coords_per_tensor: 40,
            seed: 0,
            fault: None,
            zero_input: false,
        }
    }
}

/// Per-tensor comparison of analytic and numeric gradients for one scalar
/// function of a flat parameter vector.
fn check_coords(
    name: &str,
    values: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> Option<f64>,
) -> TensorCheck {
    let mut work = values.to_vec();
    let mut max_rel: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for &i in coords {
        let orig = work[i];
        work[i] = orig + step;
        let plus = loss(&work);
        work[i] = orig - step;
        let minus = loss(&work);
        work[i] = orig;
        match (plus, minus) {
            (Some(p), Some(m)) => {
                let numeric = (p - m) / (2.0 * step);
                max_rel = max_rel.max(relative_error(analytic[i], numeric));
                checked += 1;
            }
            _ => skipped += 1,
        }
    }
    TensorCheck {
        name: name.to_string(),
        max_rel_error: max_rel,
        checked,
        skipped,
    }
}

fn all_coords(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn relu_masks(pass: &ForwardPass<f64>) -> Vec<bool> {
    pass.block_outputs()
        .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
        .collect()
}

/// Checks every learnable tensor of a full model (64-bit) against central
/// differences of the mean softmax cross-entropy. Coordinates whose
/// perturbation changes any ReLU activation pattern are skipped and counted.
pub fn gradient_check(config: &ModelConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = Model::<f64>::new(config.clone(), &mut rng)?;
    for p in &mut model.params_mut().learnable {
        if p.name.ends_with("bn.gamma") {
            p.value.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else if p.name.ends_with("bn.beta") {
            p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    let shape = [opts.batch, 3, opts.size, opts.size];
    let input = if opts.zero_input {
        Tensor::zeros(shape)
    } else {
        random_tensor(&mut rng, shape, 0.0, 1.0)
    };
    let labels: Vec<usize> = (0..opts.batch)
        .map(|_| rng.gen_range(0..config.class_count))
        .collect();

    let pass = model.forward(&input, Mode::Train)?;
    let (_, dlogits) = softmax_cross_entropy(&pass.logits, &labels)?;
    model.params_mut().zero_grad();
    model.backward_with_fault(&pass, &dlogits, opts.fault)?;
    let base_mask = relu_masks(&pass);

    let mut entries = Vec::new();
    for pi in 0..model.params().learnable.len() {
        let p = &model.params().learnable[pi];
        let (name, values, analytic) = (p.name.clone(), p.value.clone(), p.grad.clone());
        let coords = if values.len() <= opts.coords_per_tensor {
            all_coords(values.len())
        } else {
            sample(&mut rng, values.len(), opts.coords_per_tensor).into_vec()
        };
        let mut probe = model.clone();
        let entry = check_coords(&name, &values, &analytic, &coords, opts.step, |w| {
            probe.params_mut().learnable[pi].value.copy_from_slice(w);
            let pass = probe.forward(&input, Mode::Train).ok()?;
            if relu_masks(&pass) != base_mask {
                return None;
            }
            softmax_cross_entropy(&pass.logits, &labels).ok().map(|(l, _)| l)
        });
        entries.push(entry);
    }
    Ok(GradCheckReport { entries })
}

/// Layer-by-layer checks with small random inputs. Each layer's scalar loss
/// is a random projection of its output, except the cross-entropy which is
/// checked directly.
pub fn check_layers(seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    // conv
    {
        let g = ConvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let (oc, shape) = (4, [2, 3, 7, 7]);
        let x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let w: Vec<f64> = (0..oc * 27).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = conv2d_forward(&x, &w, oc, &g)?;
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (dx, dw) = conv2d_backward(&x, &w, oc, &g, &r, true)?;
        let dx = dx.expect("requested");
        entries.push(check_coords("conv.weight", &w, &dw, &all_coords(w.len()), step, |wp| {
            Some(dot(&conv2d_forward(&x, wp, oc, &g).ok()?, &r))
        }));
        entries.push(check_coords("conv.input", x.data(), dx.data(), &all_coords(x.data().len()), step, |xp| {
            let xt = Tensor::from_vec(shape, xp.to_vec()).ok()?;
            Some(dot(&conv2d_forward(&xt, &w, oc, &g).ok()?, &r))
        }));
    }

    // batch norm (train mode)
    {
        let (c, shape) = (2, [3, 2, 3, 3]);
        let x = random_tensor(&mut rng, shape, -2.0, 3.0);
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (rm, rv) = (vec![0.0; c], vec![1.0; c]);
        let (y, cache) = batchnorm_forward(&x, &gamma, &beta, &rm, &rv, Mode::Train)?;
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (dx, dg, db) = batchnorm_backward(&cache, &gamma, &r)?;
        let f = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
            batchnorm_forward(x, g, b, &rm, &rv, Mode::Train)
                .ok()
                .map(|(y, _)| dot(&y, &r))
        };
        entries.push(check_coords("batchnorm.gamma", &gamma, &dg, &all_coords(c), step, |gp| f(&x, gp, &beta)));
        entries.push(check_coords("batchnorm.beta", &beta, &db, &all_coords(c), step, |bp| f(&x, &gamma, bp)));
        entries.push(check_coords("batchnorm.input", x.data(), dx.data(), &all_coords(x.data().len()), step, |xp| {
            f(&Tensor::from_vec(shape, xp.to_vec()).ok()?, &gamma, &beta)
        }));
    }

    // relu, kept away from the kink
    {
        let shape = [2, 2, 3, 3];
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let m = rng.gen_range(0.1..2.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let x = Tensor::from_vec(shape, data)?;
        let y = relu(&x);
        let r = random_tensor(&mut rng, shape, -1.0, 1.0);
        let dx = relu_backward(&y, &r)?;
        entries.push(check_coords("relu.input", x.data(), dx.data(), &all_coords(n), step, |xp| {
            Some(dot(&relu(&Tensor::from_vec(shape, xp.to_vec()).ok()?), &r))
        }));
    }

    // global average pooling
    {
        let shape = [2, 3, 4, 5];
        let x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let r = random_tensor(&mut rng, [2, 3, 1, 1], -1.0, 1.0);
        let dx = global_avg_pool_backward(shape, &r)?;
        entries.push(check_coords("gap.input", x.data(), dx.data(), &all_coords(x.data().len()), step, |xp| {
            Some(dot(&global_avg_pool(&Tensor::from_vec(shape, xp.to_vec()).ok()?), &r))
        }));
    }

    // linear
    {
        let (inp, out, shape) = (5, 3, [2, 5, 1, 1]);
        let x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let w: Vec<f64> = (0..inp * out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = random_tensor(&mut rng, [2, out, 1, 1], -1.0, 1.0);
        let (dx, dw, db) = linear_backward(&x, &w, &r)?;
        let f = |x: &Tensor<f64>, w: &[f64], b: &[f64]| linear(x, w, b).ok().map(|y| dot(&y, &r));
        entries.push(check_coords("linear.weight", &w, &dw, &all_coords(w.len()), step, |wp| f(&x, wp, &b)));
        entries.push(check_coords("linear.bias", &b, &db, &all_coords(out), step, |bp| f(&x, &w, bp)));
        entries.push(check_coords("linear.input", x.data(), dx.data(), &all_coords(inp * 2), step, |xp| {
            f(&Tensor::from_vec(shape, xp.to_vec()).ok()?, &w, &b)
        }));
    }

    // softmax cross-entropy
    {
        let shape = [3, 3, 1, 1];
        let z = random_tensor(&mut rng, shape, -3.0, 3.0);
        let labels = [0, 2, 1];
        let (_, dz) = softmax_cross_entropy(&z, &labels)?;
        entries.push(check_coords("softmax_xent.logits", z.data(), dz.data(), &all_coords(9), step, |zp| {
            let t = Tensor::from_vec(shape, zp.to_vec()).ok()?;
            softmax_cross_entropy(&t, &labels).ok().map(|(l, _)| l)
        }));
    }

    // guided stem, learned path
    {
        let cfg = GuidedStemConfig {
            variant: StemVariant::DarkBright,
            total_channels: 6,
            ..Default::default()
        };
        let kernel = cfg.prior.kernel()?;
        let shape = [2, 3, 8, 8];
        let x = random_tensor(&mut rng, shape, 0.0, 1.0);
        let n_w = cfg.learned_channels() * 3 * 49;
        let w: Vec<f64> = (0..n_w).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let y = guided_stem_forward(&x, &w, &kernel, &cfg)?;
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let dw = guided_stem_backward(&x, &w, &cfg, &r)?;
        entries.push(check_coords("stem.learned_weight", &w, &dw, &all_coords(n_w), step, |wp| {
            Some(dot(&guided_stem_forward(&x, wp, &kernel, &cfg).ok()?, &r))
        }));
    }

    Ok(GradCheckReport { entries })
}
