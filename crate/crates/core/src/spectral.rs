//! Frequency-domain kernels: Wiener deconvolution and per-view blurring
//! with estimated kernels.
//!
//! Both are exposed as plain `f64` routines over `(N, C, H, W)` image
//! stacks and `(N, k, k)` kernel stacks, and as candle operations on the
//! kernel tensor whose backward pass returns the gradient with respect to
//! the kernels. Images are treated as constants.
//!
//! Kernels follow the correlation convention of
//! [`blur_view`](crate::degradation::blur_view): tap `(i, j)` of a `k×k`
//! kernel weighs the input pixel offset by `(i - c, j - c)`, `c = (k-1)/2`.

use std::sync::Arc;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::lightfield::resample::reflect_index;

/// A 2D FFT of fixed size built from row and column 1D plans.
struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// Unnormalised transform in place (row-major buffer).
    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::default(); self.rows];
        for x in 0..self.cols {
            for y in 0..self.rows {
                column[y] = buf[y * self.cols + x];
            }
            col.process(&mut column);
            for y in 0..self.rows {
                buf[y * self.cols + x] = column[y];
            }
        }
    }

    fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }
}

/// Mirror-pad an `h×w` plane by `pad` on every side.
fn reflect_pad(plane: &[f64], h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let sy = reflect_index(y as isize - pad as isize, h);
        for x in 0..pw {
            out.push(plane[sy * w + reflect_index(x as isize - pad as isize, w)]);
        }
    }
    out
}

/// Geometry shared by both operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub views: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub ksize: usize,
}

impl StackDims {
    fn plane(&self) -> usize {
        self.height * self.width
    }
    fn image_len(&self) -> usize {
        self.views * self.channels * self.plane()
    }
    fn kernel_len(&self) -> usize {
        self.views * self.ksize * self.ksize
    }
}

/// Wiener deconvolution geometry: padding of `k - 1` mirrored pixels.
fn wiener_grid(d: &StackDims) -> (usize, usize, usize) {
    let pad = d.ksize - 1;
    (pad, d.height + 2 * pad, d.width + 2 * pad)
}

/// Place a kernel on the padded grid as its convolution-form mirror,
/// centred at the origin.
fn kernel_spectrum(fft: &Fft2, kernel: &[f64], k: usize) -> Vec<Complex64> {
    let c = (k / 2) as isize;
    let (p, q) = (fft.rows as isize, fft.cols as isize);
    let mut grid = vec![0.0; fft.len()];
    for i in 0..k {
        for j in 0..k {
            let y = (c - i as isize).rem_euclid(p) as usize;
            let x = (c - j as isize).rem_euclid(q) as usize;
            grid[y * fft.cols + x] += kernel[i * k + j];
        }
    }
    fft.forward_real(&grid)
}

/// `X = F⁻¹(conj(K) · F(Y) / (|K|² + λ))` per view and channel, computed
/// on the mirror-padded image and cropped back; no clamping.
pub fn wiener_forward(images: &[f64], kernels: &[f64], d: &StackDims, lambda: f64) -> Vec<f64> {
    assert_eq!(images.len(), d.image_len());
    assert_eq!(kernels.len(), d.kernel_len());
    let (pad, ph, pw) = wiener_grid(d);
    let fft = Fft2::new(ph, pw);
    let m = fft.len() as f64;
    let kk = d.ksize * d.ksize;
    let mut out = vec![0.0; d.image_len()];
    for n in 0..d.views {
        let kf = kernel_spectrum(&fft, &kernels[n * kk..(n + 1) * kk], d.ksize);
        for c in 0..d.channels {
            let off = (n * d.channels + c) * d.plane();
            let padded = reflect_pad(&images[off..off + d.plane()], d.height, d.width, pad);
            let mut buf = fft.forward_real(&padded);
            for (z, k) in buf.iter_mut().zip(&kf) {
                *z = k.conj() * *z / (k.norm_sqr() + lambda);
            }
            fft.run(&mut buf, true);
            for y in 0..d.height {
                for x in 0..d.width {
                    out[off + y * d.width + x] = buf[(y + pad) * pw + x + pad].re / m;
                }
            }
        }
    }
    out
}

/// Gradient of a scalar loss with respect to the kernels of
/// [`wiener_forward`], given the gradient `grad` with respect to its output.
pub fn wiener_kernel_grad(images: &[f64], kernels: &[f64], grad: &[f64], d: &StackDims, lambda: f64) -> Vec<f64> {
    let (pad, ph, pw) = wiener_grid(d);
    let fft = Fft2::new(ph, pw);
    let m = fft.len() as f64;
    let k = d.ksize;
    let c0 = (k / 2) as isize;
    let mut out = vec![0.0; d.kernel_len()];
    for n in 0..d.views {
        let kf = kernel_spectrum(&fft, &kernels[n * k * k..(n + 1) * k * k], k);
        let mut acc = vec![Complex64::default(); fft.len()];
        for c in 0..d.channels {
            let off = (n * d.channels + c) * d.plane();
            let yf = fft.forward_real(&reflect_pad(&images[off..off + d.plane()], d.height, d.width, pad));
            // Adjoint of the crop: scatter the output gradient into the grid.
            let mut g = vec![0.0; fft.len()];
            for y in 0..d.height {
                for x in 0..d.width {
                    g[(y + pad) * pw + x + pad] = grad[off + y * d.width + x];
                }
            }
            let gf = fft.forward_real(&g);
            for w in 0..fft.len() {
                let den = kf[w].norm_sqr() + lambda;
                let p = gf[w].conj() * yf[w];
                let r = (p * kf[w].conj()).re;
                acc[w] += p.conj() / den - kf[w].conj() * (2.0 * r / (den * den));
            }
        }
        fft.run(&mut acc, false);
        for i in 0..k {
            for j in 0..k {
                let y = (c0 - i as isize).rem_euclid(ph as isize) as usize;
                let x = (c0 - j as isize).rem_euclid(pw as isize) as usize;
                out[n * k * k + i * k + j] = acc[y * pw + x].re / m;
            }
        }
    }
    out
}

/// Blur geometry: mirror padding of `(k - 1) / 2`, valid correlation.
fn blur_grid(d: &StackDims) -> (usize, usize, usize) {
    let pad = d.ksize / 2;
    (pad, d.height + 2 * pad, d.width + 2 * pad)
}

/// Same-size correlation of every plane with its view's kernel, mirrored
/// borders.
pub fn blur_forward(images: &[f64], kernels: &[f64], d: &StackDims) -> Vec<f64> {
    assert_eq!(images.len(), d.image_len());
    assert_eq!(kernels.len(), d.kernel_len());
    let (pad, ph, pw) = blur_grid(d);
    let fft = Fft2::new(ph, pw);
    let m = fft.len() as f64;
    let k = d.ksize;
    let mut out = vec![0.0; d.image_len()];
    for n in 0..d.views {
        let mut grid = vec![0.0; fft.len()];
        for i in 0..k {
            for j in 0..k {
                grid[i * pw + j] = kernels[n * k * k + i * k + j];
            }
        }
        let kf = fft.forward_real(&grid);
        for c in 0..d.channels {
            let off = (n * d.channels + c) * d.plane();
            let mut buf = fft.forward_real(&reflect_pad(&images[off..off + d.plane()], d.height, d.width, pad));
            for (z, kz) in buf.iter_mut().zip(&kf) {
                *z *= kz.conj();
            }
            fft.run(&mut buf, true);
            for y in 0..d.height {
                for x in 0..d.width {
                    out[off + y * d.width + x] = buf[y * pw + x].re / m;
                }
            }
        }
    }
    out
}

/// Kernel gradient of [`blur_forward`].
pub fn blur_kernel_grad(images: &[f64], grad: &[f64], d: &StackDims) -> Vec<f64> {
    let (pad, ph, pw) = blur_grid(d);
    let fft = Fft2::new(ph, pw);
    let m = fft.len() as f64;
    let k = d.ksize;
    let mut out = vec![0.0; d.kernel_len()];
    for n in 0..d.views {
        let mut acc = vec![Complex64::default(); fft.len()];
        for c in 0..d.channels {
            let off = (n * d.channels + c) * d.plane();
            let xf = fft.forward_real(&reflect_pad(&images[off..off + d.plane()], d.height, d.width, pad));
            let mut g = vec![0.0; fft.len()];
            for y in 0..d.height {
                for x in 0..d.width {
                    g[y * pw + x] = grad[off + y * d.width + x];
                }
            }
            let gf = fft.forward_real(&g);
            for w in 0..fft.len() {
                acc[w] += gf[w].conj() * xf[w];
            }
        }
        fft.run(&mut acc, true);
        for i in 0..k {
            for j in 0..k {
                out[n * k * k + i * k + j] = acc[i * pw + j].re / m;
            }
        }
    }
    out
}

fn storage_to_f64(storage: &CpuStorage, layout: &Layout) -> candle_core::Result<Vec<f64>> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("spectral op expects a contiguous kernel tensor".into()))?;
    match storage {
        CpuStorage::F32(v) => Ok(v[start..end].iter().map(|&x| x as f64).collect()),
        CpuStorage::F64(v) => Ok(v[start..end].to_vec()),
        other => Err(candle_core::Error::Msg(format!(
            "spectral op does not support {:?}",
            other.dtype()
        ))),
    }
}

fn f64_to_storage(data: Vec<f64>, dtype: DType) -> CpuStorage {
    match dtype {
        DType::F32 => CpuStorage::F32(data.into_iter().map(|x| x as f32).collect()),
        _ => CpuStorage::F64(data),
    }
}

fn tensor_to_f64(t: &Tensor) -> candle_core::Result<Vec<f64>> {
    t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()
}

fn check_kernel_shape(layout: &Layout, d: &StackDims) -> candle_core::Result<()> {
    if layout.shape().dims() != [d.views, d.ksize, d.ksize] {
        return Err(candle_core::Error::Msg(format!(
            "kernel tensor has shape {:?}, expected ({}, {}, {})",
            layout.shape().dims(),
            d.views,
            d.ksize,
            d.ksize
        )));
    }
    Ok(())
}

/// Wiener deconvolution of fixed images, differentiable in the kernels.
#[derive(Clone)]
pub struct WienerOp {
    pub images: Arc<Vec<f64>>,
    pub dims: StackDims,
    pub lambda: f64,
}

impl CustomOp1 for WienerOp {
    fn name(&self) -> &'static str {
        "wiener-deconvolution"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        check_kernel_shape(layout, &self.dims)?;
        let kernels = storage_to_f64(storage, layout)?;
        let out = wiener_forward(&self.images, &kernels, &self.dims, self.lambda);
        let d = &self.dims;
        Ok((
            f64_to_storage(out, storage.dtype()),
            Shape::from((d.views, d.channels, d.height, d.width)),
        ))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let kernels = tensor_to_f64(arg)?;
        let grad = tensor_to_f64(grad_res)?;
        let g = wiener_kernel_grad(&self.images, &kernels, &grad, &self.dims, self.lambda);
        let t = Tensor::from_vec(g, arg.shape(), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(t))
    }
}

/// Per-view blur of fixed images, differentiable in the kernels.
#[derive(Clone)]
pub struct BlurOp {
    pub images: Arc<Vec<f64>>,
    pub dims: StackDims,
}

impl CustomOp1 for BlurOp {
    fn name(&self) -> &'static str {
        "per-view-blur"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        check_kernel_shape(layout, &self.dims)?;
        let kernels = storage_to_f64(storage, layout)?;
        let out = blur_forward(&self.images, &kernels, &self.dims);
        let d = &self.dims;
        Ok((
            f64_to_storage(out, storage.dtype()),
            Shape::from((d.views, d.channels, d.height, d.width)),
        ))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let grad = tensor_to_f64(grad_res)?;
        let g = blur_kernel_grad(&self.images, &grad, &self.dims);
        let t = Tensor::from_vec(g, arg.shape(), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{blur_view, make_isotropic_gaussian_kernel, BlurMode};
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn dims(h: usize, w: usize, k: usize) -> StackDims {
        StackDims { views: 2, channels: 3, height: h, width: w, ksize: k }
    }

    fn normalized(mut v: Vec<f64>, k: usize) -> Vec<f64> {
        for chunk in v.chunks_mut(k * k) {
            let s: f64 = chunk.iter().sum();
            chunk.iter_mut().for_each(|x| *x /= s);
        }
        v
    }

    #[test]
    fn blur_matches_spatial_correlation() {
        let d = dims(9, 7, 5);
        let imgs = random(d.image_len(), 1);
        let ks = normalized(random(d.kernel_len(), 2), 5);
        let out = blur_forward(&imgs, &ks, &d);
        for n in 0..2 {
            let img = Array3::from_shape_fn((9, 7, 3), |(y, x, c)| imgs[(n * 3 + c) * 63 + y * 7 + x]);
            let k = Array2::from_shape_fn((5, 5), |(i, j)| ks[n * 25 + i * 5 + j]);
            let want = blur_view(img.view(), k.view(), BlurMode::Reflect).unwrap();
            for ((y, x, c), w) in want.indexed_iter() {
                let got = out[(n * 3 + c) * 63 + y * 7 + x];
                assert!((got - w).abs() < 1e-12, "{got} vs {w}");
            }
        }
    }

    #[test]
    fn wiener_with_delta_is_identity() {
        let d = dims(8, 10, 21);
        let imgs = random(d.image_len(), 3);
        let delta = make_isotropic_gaussian_kernel(0.0, 21).unwrap();
        let ks: Vec<f64> = delta.weights().iter().chain(delta.weights().iter()).copied().collect();
        let out = wiener_forward(&imgs, &ks, &d, 1e-8);
        for (a, b) in out.iter().zip(&imgs) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    fn fd_check(
        f: impl Fn(&[f64]) -> Vec<f64>,
        analytic: &[f64],
        ks: &[f64],
        weights: &[f64],
        probes: &[usize],
    ) {
        let loss = |k: &[f64]| f(k).iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        for &p in probes {
            let h = 1e-6;
            let mut plus = ks.to_vec();
            plus[p] += h;
            let mut minus = ks.to_vec();
            minus[p] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (fd - analytic[p]).abs() / fd.abs().max(analytic[p].abs()).max(1e-8);
            assert!(rel < 1e-6, "probe {p}: fd {fd} analytic {}", analytic[p]);
        }
    }

    #[test]
    fn wiener_kernel_gradient_matches_finite_differences() {
        let d = dims(6, 5, 3);
        let imgs = random(d.image_len(), 4);
        let ks = normalized(random(d.kernel_len(), 5), 3);
        let weights = random(d.image_len(), 6);
        let analytic = wiener_kernel_grad(&imgs, &ks, &weights, &d, 0.05);
        fd_check(|k| wiener_forward(&imgs, k, &d, 0.05), &analytic, &ks, &weights, &[0, 4, 7, 9, 13, 17]);
    }

    #[test]
    fn blur_kernel_gradient_matches_finite_differences() {
        let d = dims(6, 7, 3);
        let imgs = random(d.image_len(), 7);
        let ks = random(d.kernel_len(), 8);
        let weights = random(d.image_len(), 9);
        let analytic = blur_kernel_grad(&imgs, &weights, &d);
        fd_check(|k| blur_forward(&imgs, k, &d), &analytic, &ks, &weights, &[0, 3, 8, 10, 15]);
    }
}
