//! The synthetic forward model: isotropic Gaussian blur, bicubic ×1/α
//! downsampling and seeded per-view additive Gaussian noise.
//!
//! Blurring is a 2D *correlation* of every channel with the kernel, with
//! mirrored borders. For the symmetric kernels synthesised here that is the
//! same as convolution.
//!
//! Noise for view `(u, v)` comes from a ChaCha8 generator seeded with the
//! configuration seed and switched to stream `u * V + v`; standard normal
//! draws are taken in `(h, w, c)` row-major order and scaled by
//! `noise_level / 255`.

use ndarray::{s, Array2, Array3, Array5, ArrayView2, ArrayView3, ArrayView5};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, shape, Result};
use crate::lightfield::resample::{reflect_index, resize_to_unclamped};
use crate::lightfield::{Image, LightField, CHANNELS};

/// Kernel window used throughout (21×21).
pub const KERNEL_SIZE: usize = 21;

/// Below this width the kernel degenerates to a discrete delta.
pub const DELTA_SIGMA: f64 = 1e-4;

/// A normalised isotropic Gaussian blur kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    weights: Array2<f64>,
    /// Normalised 1D profile; `weights` is its outer product up to rounding.
    profile: Vec<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.profile.len()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn is_delta(&self) -> bool {
        self.sigma < DELTA_SIGMA
    }

    /// Blur an image with the separable form of this kernel.
    pub fn blur(&self, img: ArrayView3<f64>, mode: BlurMode) -> Result<Image> {
        separable_correlate(img, &self.profile, mode)
    }
}

/// Sample an isotropic Gaussian on a `k×k` grid centred at `(k-1)/2` and
/// normalise it; mass beyond the window is dropped before normalising.
pub fn make_isotropic_gaussian_kernel(sigma: f64, k: usize) -> Result<GaussianKernel> {
    if k % 2 == 0 {
        return Err(contract(format!("kernel size must be odd, got {k}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(contract(format!("kernel width must be a finite value >= 0, got {sigma}")));
    }
    let c = (k / 2) as f64;
    if sigma < DELTA_SIGMA {
        let mut weights = Array2::zeros((k, k));
        weights[[k / 2, k / 2]] = 1.0;
        let mut profile = vec![0.0; k];
        profile[k / 2] = 1.0;
        return Ok(GaussianKernel { sigma, weights, profile });
    }
    let two_var = 2.0 * sigma * sigma;
    let mut weights =
        Array2::from_shape_fn((k, k), |(i, j)| {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            (-(di * di + dj * dj) / two_var).exp()
        });
    let total = weights.sum();
    weights /= total;
    let mut profile: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / two_var).exp()
        })
        .collect();
    let total: f64 = profile.iter().sum();
    profile.iter_mut().for_each(|p| *p /= total);
    Ok(GaussianKernel { sigma, weights, profile })
}

/// Border handling for blurring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlurMode {
    /// Only positions whose full window lies inside the image; the output
    /// shrinks by `k - 1` in each dimension. The caller supplies an
    /// oversized input whose margin is discarded.
    ValidViaOversize,
    /// Same-size output with mirrored borders.
    Reflect,
}

fn output_extent(len: usize, k: usize, mode: BlurMode) -> Result<usize> {
    match mode {
        BlurMode::Reflect => Ok(len),
        BlurMode::ValidViaOversize if len >= k => Ok(len - k + 1),
        BlurMode::ValidViaOversize => Err(contract(format!(
            "image extent {len} is smaller than the {k}-tap kernel in valid mode"
        ))),
    }
}

/// Input index for output `o` and tap `t` of a `k`-tap window.
fn tap_index(o: usize, t: usize, k: usize, len: usize, mode: BlurMode) -> usize {
    match mode {
        BlurMode::ValidViaOversize => o + t,
        BlurMode::Reflect => reflect_index(o as isize + t as isize - (k / 2) as isize, len),
    }
}

/// 2D correlation of every channel with an arbitrary `k×k` kernel.
pub fn blur_view(img: ArrayView3<f64>, kernel: ArrayView2<f64>, mode: BlurMode) -> Result<Image> {
    let (kh, kw) = kernel.dim();
    if kh != kw || kh % 2 == 0 {
        return Err(shape(format!("kernel must be square with odd size, got {kh}x{kw}")));
    }
    let k = kh;
    let (h, w, c) = img.dim();
    let (oh, ow) = (output_extent(h, k, mode)?, output_extent(w, k, mode)?);
    let mut out = Array3::zeros((oh, ow, c));
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for i in 0..k {
                    let iy = tap_index(y, i, k, h, mode);
                    for j in 0..k {
                        acc += kernel[[i, j]] * img[[iy, tap_index(x, j, k, w, mode), ch]];
                    }
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    Ok(out)
}

fn separable_correlate(img: ArrayView3<f64>, profile: &[f64], mode: BlurMode) -> Result<Image> {
    let k = profile.len();
    let (h, w, c) = img.dim();
    let (oh, ow) = (output_extent(h, k, mode)?, output_extent(w, k, mode)?);
    let mut tmp = Array3::zeros((h, ow, c));
    for y in 0..h {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, &p) in profile.iter().enumerate() {
                    acc += p * img[[y, tap_index(x, j, k, w, mode), ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((oh, ow, c));
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, &p) in profile.iter().enumerate() {
                    acc += p * tmp[[tap_index(y, i, k, h, mode), x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    Ok(out)
}

/// Knobs of the forward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    /// Kernel width in pixels.
    pub sigma: f64,
    /// Noise standard deviation on the 0–255 scale.
    pub noise_level: f64,
    /// Integer downsampling factor.
    pub alpha: usize,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            noise_level: 0.0,
            alpha: 4,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn new(sigma: f64, noise_level: f64, alpha: usize, seed: u64) -> Result<Self> {
        let cfg = Self { sigma, noise_level, alpha, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(contract("alpha must be >= 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(contract(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(contract(format!("noise level must be >= 0, got {}", self.noise_level)));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_level / 255.0
    }
}

/// Ground-truth degradation attached to a synthesised LR field.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationRecord {
    /// One kernel per view in row-major `(u, v)` order.
    pub kernels: Vec<GaussianKernel>,
    /// Realised noise before clamping, `U×V×h×w×3`.
    pub noise: Array5<f64>,
    pub config: DegradationConfig,
    /// Set once the owning sample has been augmented, after which `noise`
    /// no longer lines up with the pair.
    pub augmented: bool,
}

/// Draw the noise realisation for one view.
pub fn view_noise(config: &DegradationConfig, view: usize, dims: (usize, usize)) -> Array3<f64> {
    let std = config.noise_std();
    if std == 0.0 {
        return Array3::zeros((dims.0, dims.1, CHANNELS));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(view as u64);
    let mut out = Array3::zeros((dims.0, dims.1, CHANNELS));
    for x in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x = std * z;
    }
    out
}

/// Blur and downsample one view (no noise, no clamp).
pub fn blur_downsample(
    view: ArrayView3<f64>,
    kernel: &GaussianKernel,
    alpha: usize,
    mode: BlurMode,
) -> Result<Image> {
    let blurred = kernel.blur(view, mode)?;
    let (h, w, _) = blurred.dim();
    if h % alpha != 0 || w % alpha != 0 {
        return Err(contract(format!(
            "spatial extent {h}x{w} is not divisible by alpha = {alpha}"
        )));
    }
    Ok(resize_to_unclamped(blurred.view(), h / alpha, w / alpha))
}

/// Run the forward model without the final clamp.
///
/// Returns the raw LR field (values may leave `[0, 1]`) and the record.
pub fn degrade_raw(hr: &LightField, config: &DegradationConfig) -> Result<(Array5<f64>, DegradationRecord)> {
    config.validate()?;
    let (nu, nv) = hr.angular_shape();
    let (h, w) = hr.spatial_shape();
    let a = config.alpha;
    if h % a != 0 || w % a != 0 {
        return Err(contract(format!(
            "spatial extent {h}x{w} is not divisible by alpha = {a}"
        )));
    }
    let (lh, lw) = (h / a, w / a);
    let kernel = make_isotropic_gaussian_kernel(config.sigma, KERNEL_SIZE)?;
    let mut lr = Array5::zeros((nu, nv, lh, lw, CHANNELS));
    let mut noise = Array5::zeros((nu, nv, lh, lw, CHANNELS));
    for u in 0..nu {
        for v in 0..nv {
            let clean = blur_downsample(hr.view((u, v).into())?, &kernel, a, BlurMode::Reflect)?;
            let n = view_noise(config, u * nv + v, (lh, lw));
            lr.slice_mut(s![u, v, .., .., ..]).assign(&(&clean + &n));
            noise.slice_mut(s![u, v, .., .., ..]).assign(&n);
        }
    }
    let record = DegradationRecord {
        kernels: vec![kernel; nu * nv],
        noise,
        config: *config,
        augmented: false,
    };
    Ok((lr, record))
}

/// Degrade `hr`: blur, bicubic ↓α, add noise, clamp to `[0, 1]`.
///
/// The same `(hr, config)` always yields bit-identical output.
pub fn degrade_lightfield(hr: &LightField, config: &DegradationConfig) -> Result<(LightField, DegradationRecord)> {
    let (lr, record) = degrade_raw(hr, config)?;
    Ok((LightField::from_clamped(lr)?, record))
}

/// Uniform draw of `(sigma, noise_level)` from the given ranges, plus a
/// fresh noise seed.
pub fn sample_degradation_in<R: Rng + ?Sized>(
    rng: &mut R,
    sigma_range: (f64, f64),
    noise_range: (f64, f64),
    alpha: usize,
) -> DegradationConfig {
    let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let sigma = draw(rng, sigma_range);
    let noise_level = draw(rng, noise_range);
    DegradationConfig {
        sigma,
        noise_level,
        alpha,
        seed: rng.random(),
    }
}

/// `sigma ~ U[0, 4]`, `noise_level ~ U[0, 75]`, `alpha = 4`.
pub fn sample_degradation<R: Rng + ?Sized>(rng: &mut R) -> DegradationConfig {
    sample_degradation_in(rng, (0.0, 4.0), (0.0, 75.0), 4)
}

/// Mean absolute value of `(hr ⊗ K̃)↓α − Ñ − lr` over every view, pixel and
/// channel. `kernels` holds one `k×k` kernel per view in row-major order.
pub fn self_constraint_loss(
    hr: &LightField,
    lr: ArrayView5<f64>,
    kernels: &[Array2<f64>],
    noise: ArrayView5<f64>,
    alpha: usize,
) -> Result<f64> {
    let (nu, nv) = hr.angular_shape();
    let (h, w) = hr.spatial_shape();
    if alpha == 0 || h % alpha != 0 || w % alpha != 0 {
        return Err(contract(format!("spatial extent {h}x{w} is not divisible by alpha = {alpha}")));
    }
    let lr_dims = (nu, nv, h / alpha, w / alpha, CHANNELS);
    if lr.dim() != lr_dims || noise.dim() != lr_dims {
        return Err(shape(format!(
            "expected LR and noise of shape {lr_dims:?}, got {:?} and {:?}",
            lr.dim(),
            noise.dim()
        )));
    }
    if kernels.len() != nu * nv {
        return Err(shape(format!("{} kernels for {} views", kernels.len(), nu * nv)));
    }
    let mut total = 0.0;
    for u in 0..nu {
        for v in 0..nv {
            let blurred = blur_view(hr.view((u, v).into())?, kernels[u * nv + v].view(), BlurMode::Reflect)?;
            let down = resize_to_unclamped(blurred.view(), h / alpha, w / alpha);
            let n = noise.slice(s![u, v, .., .., ..]);
            let y = lr.slice(s![u, v, .., .., ..]);
            total += ndarray::Zip::from(&down)
                .and(&n)
                .and(&y)
                .fold(0.0, |acc, &d, &n, &y| acc + (d - n - y).abs());
        }
    }
    Ok(total / lr.len() as f64)
}
