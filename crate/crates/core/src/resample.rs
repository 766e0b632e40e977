//! Grid resampling shared by hierarchy fusion and map rendering.

use rayon::prelude::*;

/// Source coordinate and blend weight for one output index under the
/// half-pixel (align-corners = false) convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f32,
}

pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (x.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: (x - lo as f64) as f32,
            }
        })
        .collect()
}

/// Resizes a channel-last `[h, w, c]` buffer to `[out_h, out_w, c]`.
pub fn bilinear_resize(
    data: &[f32],
    (h, w): (usize, usize),
    channels: usize,
    (out_h, out_w): (usize, usize),
) -> Vec<f32> {
    assert_eq!(data.len(), h * w * channels);
    if (h, w) == (out_h, out_w) {
        return data.to_vec();
    }
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let mut out = vec![0.0f32; out_h * out_w * channels];
    out.par_chunks_mut(out_w * channels)
        .zip(rows.par_iter())
        .for_each(|(row_out, ry)| {
            for (x, cx) in cols.iter().enumerate() {
                let px = |r: usize, c: usize, k: usize| data[(r * w + c) * channels + k];
                for k in 0..channels {
                    let top = px(ry.lo, cx.lo, k) * (1.0 - cx.frac) + px(ry.lo, cx.hi, k) * cx.frac;
                    let bot = px(ry.hi, cx.lo, k) * (1.0 - cx.frac) + px(ry.hi, cx.hi, k) * cx.frac;
                    row_out[x * channels + k] = top * (1.0 - ry.frac) + bot * ry.frac;
                }
            }
        });
    out
}

/// Normalized 1-D Gaussian kernel truncated at radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let sigma = sigma as f64;
    let radius = (4.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_line(src: &[f32], stride: usize, len: usize, kernel: &[f32], out: &mut [f32]) {
    let radius = (kernel.len() / 2) as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (k, &g) in kernel.iter().enumerate() {
            let j = reflect_index(i as i64 + k as i64 - radius, len);
            acc += g as f64 * src[j * stride] as f64;
        }
        *o = acc as f32;
    }
}

/// Separable Gaussian blur of a single-channel `[h, w]` map.
pub fn gaussian_blur(data: &[f32], (h, w): (usize, usize), sigma: f32) -> Vec<f32> {
    assert_eq!(data.len(), h * w);
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);

    let mut horizontal = vec![0.0f32; h * w];
    horizontal
        .par_chunks_mut(w)
        .zip(data.par_chunks(w))
        .for_each(|(out, row)| convolve_line(row, 1, w, &kernel, out));

    // Vertical pass over columns, written back row-major.
    let columns: Vec<Vec<f32>> = (0..w)
        .into_par_iter()
        .map(|c| {
            let mut col = vec![0.0f32; h];
            convolve_line(&horizontal[c..], w, h, &kernel, &mut col);
            col
        })
        .collect();
    let mut out = vec![0.0f32; h * w];
    for (c, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            out[r * w + c] = *v;
        }
    }
    out
}
