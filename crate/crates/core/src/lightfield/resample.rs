//! Keys cubic-convolution resampling (a = -0.5).
//!
//! Coordinates are half-pixel centred: output sample `j` maps to input
//! position `(j + 0.5) / scale - 0.5`. When shrinking, the kernel is
//! stretched by `1 / scale` so it acts as an anti-aliasing prefilter. Taps
//! that fall outside the signal are mirrored without repeating the edge
//! sample, and the weights of every output sample are renormalised to one.

use ndarray::{Array2, Array3, ArrayView3};

use crate::error::{contract, Result};

/// Keys' free parameter.
pub const CUBIC_A: f64 = -0.5;

/// The Keys cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Mirror an index into `0..n` without duplicating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Output length for resizing `len` samples by `scale`.
pub fn scaled_len(len: usize, scale: f64) -> usize {
    (len as f64 * scale).round() as usize
}

/// Taps and weights contributing to one output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Per-output-sample filter taps for resizing a signal of `in_len` samples
/// to `out_len` samples.
pub fn resize_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = scale.min(1.0);
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|j| {
            let center = (j as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).ceil() as isize;
            let hi = (center + support).floor() as isize;
            let mut index = Vec::with_capacity((hi - lo + 1) as usize);
            let mut weight = Vec::with_capacity((hi - lo + 1) as usize);
            for t in lo..=hi {
                let w = cubic((t as f64 - center) * stretch);
                if w != 0.0 {
                    index.push(reflect_index(t, in_len));
                    weight.push(w);
                }
            }
            let total: f64 = weight.iter().sum();
            for w in &mut weight {
                *w /= total;
            }
            Taps { index, weight }
        })
        .collect()
}

/// Dense `out_len × in_len` matrix of [`resize_taps`]. Mirrored taps that
/// land on the same input sample are accumulated.
pub fn resize_matrix(in_len: usize, out_len: usize) -> Array2<f64> {
    let mut m = Array2::zeros((out_len, in_len));
    for (j, taps) in resize_taps(in_len, out_len).iter().enumerate() {
        for (&i, &w) in taps.index.iter().zip(&taps.weight) {
            m[[j, i]] += w;
        }
    }
    m
}

/// Resize an `H×W×C` image to `(out_h, out_w)` without clamping.
pub fn resize_to_unclamped(img: ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = img.dim();
    if (out_h, out_w) == (h, w) {
        // Every tap list collapses to the identity at unit scale.
        return img.to_owned();
    }
    let col_taps = resize_taps(w, out_w);
    let row_taps = resize_taps(h, out_h);

    let mut tmp = Array3::<f64>::zeros((h, out_w, c));
    for y in 0..h {
        for (x, taps) in col_taps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&i, &wt) in taps.index.iter().zip(&taps.weight) {
                    acc += wt * img[[y, i, ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    let mut out = Array3::<f64>::zeros((out_h, out_w, c));
    for (y, taps) in row_taps.iter().enumerate() {
        for x in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&i, &wt) in taps.index.iter().zip(&taps.weight) {
                    acc += wt * tmp[[i, x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

/// Bicubic resize by `scale`, clamped to `[0, 1]`.
pub fn bicubic_resize(img: ArrayView3<f64>, scale: f64) -> Result<Array3<f64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(contract(format!("resize scale must be positive, got {scale}")));
    }
    let (h, w, _) = img.dim();
    let (oh, ow) = (scaled_len(h, scale), scaled_len(w, scale));
    if oh == 0 || ow == 0 {
        return Err(contract(format!(
            "resizing {h}x{w} by {scale} leaves an empty image"
        )));
    }
    let mut out = resize_to_unclamped(img, oh, ow);
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Sample `img` at the fractional position `(y, x)` with a 4×4 Keys kernel
/// (no anti-aliasing). Integer positions return the stored sample exactly.
pub fn sample_bicubic(img: ArrayView3<f64>, y: f64, x: f64, out: &mut [f64]) {
    let (h, w, c) = img.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    out.iter_mut().for_each(|o| *o = 0.0);
    for dy in -1..=2isize {
        let wy = cubic(fy - dy as f64);
        if wy == 0.0 {
            continue;
        }
        let iy = reflect_index(y0 as isize + dy, h);
        for dx in -1..=2isize {
            let wx = cubic(fx - dx as f64);
            if wx == 0.0 {
                continue;
            }
            let ix = reflect_index(x0 as isize + dx, w);
            for ch in 0..c {
                out[ch] += wy * wx * img[[iy, ix, ch]];
            }
        }
    }
}
