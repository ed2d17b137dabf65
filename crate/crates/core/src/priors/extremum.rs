//! Windowed minimum/maximum filters with edge replication.

use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline(always)]
    pub fn pick(self, a: f32, b: f32) -> f32 {
        match self {
            Extremum::Min => a.min(b),
            Extremum::Max => a.max(b),
        }
    }
}

/// Square-window extremum over a `height x width` plane using the van Herk /
/// Gil-Werman running algorithm, one row pass and one column pass. Cost per
/// pixel is a constant number of comparisons regardless of `radius`, and the
/// result equals [`naive_extremum`] exactly.
pub fn sliding_extremum_plane(
    values: &[f32],
    height: usize,
    width: usize,
    radius: usize,
    mode: Extremum,
) -> Vec<f32> {
    assert_eq!(values.len(), height * width);
    if radius == 0 || values.is_empty() {
        return values.to_vec();
    }
    let rows = filter_rows(values, height, width, radius, mode);
    let t = transpose(&rows, height, width);
    let cols = filter_rows(&t, width, height, radius, mode);
    transpose(&cols, width, height)
}

fn filter_rows(src: &[f32], height: usize, width: usize, radius: usize, mode: Extremum) -> Vec<f32> {
    let mut out = vec![0.0f32; height * width];
    let window = 2 * radius + 1;
    par::for_each_chunk(&mut out, width, |y, dst| {
        let row = &src[y * width..(y + 1) * width];
        let mut scratch = Scratch::new(width + 2 * radius);
        running_extremum(row, radius, window, mode, &mut scratch, dst);
    });
    out
}

struct Scratch {
    padded: Vec<f32>,
    prefix: Vec<f32>,
    suffix: Vec<f32>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            padded: vec![0.0; n],
            prefix: vec![0.0; n],
            suffix: vec![0.0; n],
        }
    }
}

fn running_extremum(
    row: &[f32],
    radius: usize,
    window: usize,
    mode: Extremum,
    s: &mut Scratch,
    dst: &mut [f32],
) {
    let n = row.len();
    let len = n + 2 * radius;
    let (first, last) = (row[0], row[n - 1]);
    s.padded[..radius].fill(first);
    s.padded[radius..radius + n].copy_from_slice(row);
    s.padded[radius + n..len].fill(last);

    let p = &s.padded[..len];
    // Prefix extrema restart at every block boundary; suffix extrema run
    // backwards to the block start.
    for start in (0..len).step_by(window) {
        let end = (start + window).min(len);
        let mut acc = p[start];
        s.prefix[start] = acc;
        for i in start + 1..end {
            acc = mode.pick(acc, p[i]);
            s.prefix[i] = acc;
        }
        let mut acc = p[end - 1];
        s.suffix[end - 1] = acc;
        for i in (start..end - 1).rev() {
            acc = mode.pick(acc, p[i]);
            s.suffix[i] = acc;
        }
    }
    for (i, out) in dst.iter_mut().enumerate() {
        *out = mode.pick(s.suffix[i], s.prefix[i + window - 1]);
    }
}

fn transpose(src: &[f32], height: usize, width: usize) -> Vec<f32> {
    const TILE: usize = 32;
    let mut out = vec![0.0f32; src.len()];
    for ty in (0..height).step_by(TILE) {
        for tx in (0..width).step_by(TILE) {
            for y in ty..(ty + TILE).min(height) {
                for x in tx..(tx + TILE).min(width) {
                    out[x * height + y] = src[y * width + x];
                }
            }
        }
    }
    out
}

/// Reference windowed extremum: direct scan of the clamped
/// `(2 radius + 1)^2` neighbourhood of every pixel.
pub fn naive_extremum(
    values: &[f32],
    height: usize,
    width: usize,
    radius: usize,
    mode: Extremum,
) -> Vec<f32> {
    assert_eq!(values.len(), height * width);
    let r = radius as isize;
    let mut out = vec![0.0f32; values.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = values[y as usize * width + x as usize];
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, height as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, width as isize - 1) as usize;
                    acc = mode.pick(acc, values[yy * width + xx]);
                }
            }
            out[y as usize * width + x as usize] = acc;
        }
    }
    out
}
