use super::{FovCircle, PreprocessConfig, RawImage};
use crate::{Error, Result};

/// Finds the circular field of view with a gradient-directed Hough transform.
///
/// Votes are cast on a box-downsampled luminance image whose longest side is
/// at most `hough.max_working_size`. Each edge pixel (Sobel magnitude at or
/// above the configured percentile) votes, for every candidate radius, for
/// the centre lying that far along its gradient, i.e. towards the brighter
/// side. The strongest cell is refined to sub-pixel precision and mapped back
/// to source coordinates.
pub fn detect_fov(image: &RawImage, cfg: &PreprocessConfig) -> Result<FovCircle> {
    cfg.validate()?;
    if image.height() < 8 || image.width() < 8 {
        return Err(Error::InvalidImage(format!(
            "image {}x{} too small for FoV detection",
            image.height(),
            image.width()
        )));
    }
    let hp = &cfg.hough;
    let factor = image.height().max(image.width()).div_ceil(hp.max_working_size);
    let (lum, h, w) = downsample(&image.luminance(), image.height(), image.width(), factor);

    let (gx, gy) = sobel(&lum, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let threshold = percentile(&mag, hp.edge_percentile);

    let min_side = h.min(w) as f64;
    let r_min = ((hp.min_radius_frac * min_side).floor() as usize).max(2);
    let r_max = ((hp.max_radius_frac * min_side).ceil() as usize).max(r_min);
    let n_r = r_max - r_min + 1;
    let mut acc = vec![0.0f64; n_r * h * w];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m < threshold || m <= 1e-9 {
                continue;
            }
            let (ux, uy) = (gx[i] / m, gy[i] / m);
            for ri in 0..n_r {
                let r = (r_min + ri) as f64;
                splat(&mut acc[ri * h * w..(ri + 1) * h * w], h, w, x as f64 + r * ux, y as f64 + r * uy);
            }
        }
    }

    let margin = (1.0 - hp.center_region_frac) / 2.0;
    let (x_lo, x_hi) = region(w, margin);
    let (y_lo, y_hi) = region(h, margin);
    let layer = |ri: usize| &acc[ri * h * w..(ri + 1) * h * w];
    let box3 = |ri: usize, cy: usize, cx: usize| -> f64 {
        if ri >= n_r {
            return 0.0;
        }
        let l = layer(ri);
        let mut s = 0.0;
        for yy in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
            for xx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                s += l[yy * w + xx];
            }
        }
        s
    };

    let mut best = (f64::NEG_INFINITY, 0usize, 0usize, 0usize);
    for ri in 0..n_r {
        for cy in y_lo..=y_hi {
            for cx in x_lo..=x_hi {
                let s = box3(ri, cy, cx);
                if s > best.0 {
                    best = (s, ri, cy, cx);
                }
            }
        }
    }
    let (votes, ri, cy, cx) = best;
    let r = (r_min + ri) as f64;
    let required = hp.min_vote_fraction * 2.0 * std::f64::consts::PI * r;
    if !(votes >= required) || votes <= 0.0 {
        return Err(Error::NoFovFound {
            votes: votes.max(0.0),
            required,
        });
    }

    // Sub-cell refinement: centroid over the 3x3 block, parabola across radii.
    let l = layer(ri);
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for yy in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
        for xx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
            let v = l[yy * w + xx];
            sx += v * xx as f64;
            sy += v * yy as f64;
            sw += v;
        }
    }
    let (fcx, fcy) = (sx / sw, sy / sw);
    let below = if ri > 0 { box3(ri - 1, cy, cx) } else { 0.0 };
    let above = box3(ri + 1, cy, cx);
    let curvature = below - 2.0 * votes + above;
    let dr = if curvature < 0.0 {
        (0.5 * (below - above) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };

    let f = factor as f64;
    let offset = (f - 1.0) / 2.0;
    Ok(FovCircle {
        cx: fcx * f + offset,
        cy: fcy * f + offset,
        r: (r + dr) * f,
    })
}

fn region(n: usize, margin: f64) -> (usize, usize) {
    let lo = (margin * n as f64).ceil() as usize;
    let hi = (((1.0 - margin) * n as f64).floor() as usize).min(n - 1).max(lo);
    (lo, hi)
}

fn splat(layer: &mut [f64], h: usize, w: usize, x: f64, y: f64) {
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    layer[y0 * w + x0] += (1.0 - fx) * (1.0 - fy);
    layer[y0 * w + x1] += fx * (1.0 - fy);
    layer[y1 * w + x0] += (1.0 - fx) * fy;
    layer[y1 * w + x1] += fx * fy;
}

/// Box-average downsampling by an integer factor; partial edge boxes average
/// only the pixels they cover.
fn downsample(src: &[f64], h: usize, w: usize, factor: usize) -> (Vec<f64>, usize, usize) {
    if factor <= 1 {
        return (src.to_vec(), h, w);
    }
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut s, mut n) = (0.0, 0usize);
            for y in oy * factor..((oy + 1) * factor).min(h) {
                for x in ox * factor..((ox + 1) * factor).min(w) {
                    s += src[y * w + x];
                    n += 1;
                }
            }
            out[oy * ow + ox] = s / n as f64;
        }
    }
    (out, oh, ow)
}

/// Sobel derivatives with edge replication.
fn sobel(src: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[y * w + x]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((p / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, cx: f64, cy: f64, r: f64) -> RawImage {
        RawImage::from_fn(n, n, |y, x| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let v = (r - d).clamp(0.0, 1.0) as f32;
            [0.8 * v, 0.4 * v, 0.2 * v]
        })
    }

    #[test]
    fn finds_plain_disk() {
        let img = disk(128, 64.0, 60.0, 50.0);
        let c = detect_fov(&img, &PreprocessConfig::default()).unwrap();
        assert!((c.cx - 64.0).abs() <= 2.0 && (c.cy - 60.0).abs() <= 2.0, "{c:?}");
        assert!((c.r - 50.0).abs() <= 2.0, "{c:?}");
    }

    #[test]
    fn blank_image_has_no_fov() {
        let img = RawImage::zeros(128, 128);
        assert!(matches!(
            detect_fov(&img, &PreprocessConfig::default()),
            Err(Error::NoFovFound { .. })
        ));
    }

    #[test]
    fn large_image_is_downsampled() {
        let img = disk(600, 290.0, 310.0, 250.0);
        let c = detect_fov(&img, &PreprocessConfig::default()).unwrap();
        assert!((c.cx - 290.0).abs() <= 4.0 && (c.cy - 310.0).abs() <= 4.0, "{c:?}");
        assert!((c.r - 250.0).abs() <= 5.0, "{c:?}");
    }

    #[test]
    fn percentile_endpoints() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 3.0);
    }
}
