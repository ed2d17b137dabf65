use crate::imgproc::RawImage;
use crate::nnet::{images_to_tensor, Mode, Model, Real, Tensor};
use crate::{Error, Result};

/// A non-negative map in `[0, 1]`, max-normalised when not all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// `ReLU(sum_k alpha_k A_k)` for activations laid out `C x h x w`.
pub fn gradcam_weighted_sum(activations: &[f64], alphas: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    let plane = h * w;
    if activations.len() != alphas.len() * plane {
        return Err(Error::ShapeMismatch(format!(
            "{} activations for {} channels of {h}x{w}",
            activations.len(),
            alphas.len()
        )));
    }
    let mut out = vec![0.0; plane];
    for (a, &alpha) in activations.chunks_exact(plane).zip(alphas) {
        for (o, &v) in out.iter_mut().zip(a) {
            *o += alpha * v;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// Channel weights are spatial means of the gradients; the ReLU map is
/// bilinearly resized to `out_h x out_w` and normalised.
pub fn gradcam_from_gradients(
    activations: &[f64],
    gradients: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Heatmap> {
    let plane = h * w;
    if gradients.len() != activations.len() || activations.len() != channels * plane {
        return Err(Error::ShapeMismatch("activation and gradient shapes differ".into()));
    }
    let alphas: Vec<f64> = gradients
        .chunks_exact(plane)
        .map(|g| g.iter().sum::<f64>() / plane as f64)
        .collect();
    let raw = gradcam_weighted_sum(activations, &alphas, h, w)?;
    let mut up = resize_plane(&raw, h, w, out_h, out_w);
    let max = up.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        up.iter_mut().for_each(|v| *v /= max);
    } else {
        up.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Heatmap {
        height: out_h,
        width: out_w,
        values: up.into_iter().map(|v| v as f32).collect(),
    })
}

/// Grad-CAM of `target_class` on the last convolutional activation.
pub fn gradcam<T: Real>(model: &Model<T>, image: &RawImage, target_class: usize) -> Result<Heatmap> {
    let classes = model.config().class_count;
    if target_class >= classes {
        return Err(Error::LabelOutOfRange(target_class));
    }
    if !model.params().all_finite() {
        return Err(Error::UntrainedModel);
    }
    let input = images_to_tensor::<T>(&[image])?;
    let pass = model.forward(&input, Mode::Eval)?;
    let mut onehot = Tensor::<T>::zeros([1, classes, 1, 1]);
    onehot.data_mut()[target_class] = T::one();
    let grad = model.feature_gradient(&pass, &onehot)?;
    let a = pass.features();
    let to64 = |t: &Tensor<T>| -> Vec<f64> { t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect() };
    gradcam_from_gradients(
        &to64(a),
        &to64(&grad),
        a.c(),
        a.h(),
        a.w(),
        image.height(),
        image.width(),
    )
}

fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}
