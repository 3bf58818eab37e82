//! The degradation-conditioned restoration network and the full model.

use std::sync::Arc;

use candle_core::{DType, Tensor};
use ndarray::{Array2, Array5, ArrayView5};
use serde::{Deserialize, Serialize};

use super::blocks::{Msf, MsfSwitches, SavBlock};
use super::estimator::{Estimator, EstimatorConfig, KernelEstimate, NoiseMapEstimate};
use super::{array_to_tensor, resize_tensor, tensor_to_lightfield, Conv, FeatureField, Init, Linear, ParamStore, Provenance};
use crate::error::{contract, shape, Result};
use crate::lightfield::resample::resize_to_unclamped;
use crate::lightfield::{center_of, LightField, CHANNELS};
use crate::spectral::{wiener_forward, StackDims, WienerOp};

/// Parameter-name prefix of everything owned by the restoration network.
pub const PREFIX: &str = "restoration";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestorationConfig {
    /// Number of fusion + spatial-angular building blocks.
    pub n1: usize,
    pub feature_channels: usize,
    pub kernel_embed_dim: usize,
    pub fft_reg_lambda: f64,
    pub alpha: usize,
    pub reduction: usize,
}

/// Wiener regulariser. Weaker values amplify the interpolation images that
/// bicubic upsampling leaves above the LR band, and the latent then loses to
/// plain bicubic at moderate blur.
pub const DEFAULT_FFT_REG_LAMBDA: f64 = 1e-2;

impl Default for RestorationConfig {
    fn default() -> Self {
        Self {
            n1: 10,
            feature_channels: 32,
            kernel_embed_dim: 64,
            fft_reg_lambda: DEFAULT_FFT_REG_LAMBDA,
            alpha: 4,
            reduction: 4,
        }
    }
}

impl RestorationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 {
            return Err(contract("at least one building block is required"));
        }
        if self.feature_channels == 0 || self.kernel_embed_dim == 0 || self.reduction == 0 {
            return Err(contract("restoration widths must be positive"));
        }
        if !(self.fft_reg_lambda > 0.0) {
            return Err(contract(format!(
                "deconvolution regulariser must be positive, got {}",
                self.fft_reg_lambda
            )));
        }
        if self.alpha == 0 {
            return Err(contract("upscaling factor must be at least 1"));
        }
        Ok(())
    }
}

/// Ablation switches; each disabled component is replaced by its identity
/// (or, for the estimator, by a delta kernel and a zero noise map).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub use_estimator: bool,
    pub use_cra: bool,
    pub use_aw: bool,
    pub use_s2c: bool,
    pub use_c2s: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            use_estimator: true,
            use_cra: true,
            use_aw: true,
            use_s2c: true,
            use_c2s: true,
        }
    }
}

impl Switches {
    /// All 32 combinations.
    pub fn all() -> Vec<Switches> {
        (0u8..32)
            .map(|b| Switches {
                use_estimator: b & 1 != 0,
                use_cra: b & 2 != 0,
                use_aw: b & 4 != 0,
                use_s2c: b & 8 != 0,
                use_c2s: b & 16 != 0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub angular: (usize, usize),
    pub estimator: EstimatorConfig,
    pub restoration: RestorationConfig,
    pub switches: Switches,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.restoration.validate()?;
        center_of(self.angular)?;
        Ok(())
    }
}

/// Split `alpha` into ×2 pixel-shuffle stages and a leftover fractional
/// factor handled by bicubic resampling.
pub fn upsample_plan(alpha: usize) -> Result<(usize, bool)> {
    if alpha == 0 {
        return Err(contract("upscaling factor must be at least 1"));
    }
    let stages = usize::BITS - 1 - alpha.leading_zeros();
    Ok((stages as usize, !alpha.is_power_of_two()))
}

/// Unclamped bicubic upsampling of every view by an integer factor.
pub fn upsample_views(lr: ArrayView5<f64>, alpha: usize) -> Array5<f64> {
    let (nu, nv, h, w, c) = lr.dim();
    let mut out = Array5::zeros((nu, nv, h * alpha, w * alpha, c));
    for u in 0..nu {
        for v in 0..nv {
            let up = resize_to_unclamped(lr.slice(ndarray::s![u, v, .., .., ..]), h * alpha, w * alpha);
            out.slice_mut(ndarray::s![u, v, .., .., ..]).assign(&up);
        }
    }
    out
}

fn nchw(data: &Array5<f64>) -> Vec<f64> {
    let (nu, nv, h, w, c) = data.dim();
    let p = data
        .to_shape((nu * nv, h, w, c))
        .expect("standard layout")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned();
    p.into_raw_vec_and_offset().0
}

fn from_nchw(raw: Vec<f64>, dims: (usize, usize, usize, usize, usize)) -> Array5<f64> {
    let (nu, nv, h, w, c) = dims;
    ndarray::Array4::from_shape_vec((nu * nv, c, h, w), raw)
        .expect("matching length")
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((nu, nv, h, w, c))
        .expect("matching length")
}

/// Latent sharp field: bicubic upsampling followed by per-view Wiener
/// deconvolution with the given kernels, clamped to `[0, 1]`.
pub fn fft_deconvolve_latent(
    lr: &LightField,
    kernels: &[Array2<f64>],
    alpha: usize,
    lambda: f64,
) -> Result<LightField> {
    if !(lambda > 0.0) {
        return Err(contract(format!("deconvolution regulariser must be positive, got {lambda}")));
    }
    if alpha == 0 {
        return Err(contract("upscaling factor must be at least 1"));
    }
    let (nu, nv) = lr.angular_shape();
    if kernels.len() != nu * nv {
        return Err(shape(format!("{} kernels for {} views", kernels.len(), nu * nv)));
    }
    let k = kernels[0].nrows();
    let up = upsample_views(lr.data(), alpha);
    let (_, _, h, w, c) = up.dim();
    let d = StackDims {
        views: nu * nv,
        channels: c,
        height: h,
        width: w,
        ksize: k,
    };
    let flat_k: Vec<f64> = kernels.iter().flat_map(|a| a.iter().copied()).collect();
    if flat_k.len() != nu * nv * k * k {
        return Err(shape("kernels must share one square size"));
    }
    let out = wiener_forward(&nchw(&up), &flat_k, &d, lambda);
    LightField::from_clamped(from_nchw(out, up.dim()))
}

/// Rearrange `(N, C·r², h, w)` into `(N, C, h·r, w·r)`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> candle_core::Result<Tensor> {
    let (n, cr, h, w) = x.dims4()?;
    let c = cr / (r * r);
    x.reshape((n, c, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .contiguous()?
        .reshape((n, c, h * r, w * r))
}

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(U·V, 3, αh, αw)`, clamped.
    pub sr: Tensor,
    pub kernels: KernelEstimate,
    pub noise: NoiseMapEstimate,
    /// `(U·V, 3, αh, αw)`, clamped.
    pub latent: Tensor,
    pub angular: (usize, usize),
}

impl ForwardOutput {
    pub fn sr_lightfield(&self) -> Result<LightField> {
        tensor_to_lightfield(&self.sr, self.angular)
    }

    pub fn latent_lightfield(&self) -> Result<LightField> {
        tensor_to_lightfield(&self.latent, self.angular)
    }
}

/// The restoration half: everything after the estimator.
#[derive(Debug, Clone)]
pub struct Restoration {
    pub config: RestorationConfig,
    hr_extract: Vec<Conv>,
    kernel_embed: Linear,
    deg_conv1: Conv,
    deg_conv2: Conv,
    initial: Conv,
    fuse_initial: Conv,
    msf: Vec<Msf>,
    sav: Vec<SavBlock>,
    body: Conv,
    upsample: Vec<Conv>,
    head: Conv,
}

impl Restoration {
    pub fn new(
        store: &mut ParamStore,
        config: RestorationConfig,
        kernel_size: usize,
        switches: Switches,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.feature_channels;
        let p = |s: &str| format!("{PREFIX}.{s}");
        let (stages, _) = upsample_plan(config.alpha)?;

        let mut hr_extract = Vec::new();
        if config.alpha.is_power_of_two() {
            for i in 0..stages.max(1) {
                let cin = if i == 0 { CHANNELS } else { c };
                let stride = if stages == 0 { 1 } else { 2 };
                hr_extract.push(Conv::new(
                    store,
                    &p(&format!("hr_extract{i}")),
                    cin,
                    c,
                    3,
                    stride,
                    true,
                    Init::KaimingUniform,
                )?);
            }
        } else {
            let mut conv = Conv::new(
                store,
                &p("hr_extract0"),
                CHANNELS,
                c,
                config.alpha,
                config.alpha,
                true,
                Init::KaimingUniform,
            )?;
            conv.padding = 0;
            hr_extract.push(conv);
        }

        let msf_switches = MsfSwitches {
            cross_attention: switches.use_cra,
            adaptive_weight: switches.use_aw,
        };
        let mut msf = Vec::new();
        let mut sav = Vec::new();
        for i in 0..config.n1 {
            msf.push(Msf::new(store, &p(&format!("block{i}.msf")), c, config.reduction, msf_switches)?);
            sav.push(SavBlock::new(store, &p(&format!("block{i}.sav")), c, config.reduction)?);
        }

        let mut upsample = Vec::new();
        for i in 0..stages {
            upsample.push(Conv::same(store, &p(&format!("reconstruct.up{i}")), c, 4 * c, 3)?);
        }

        Ok(Self {
            config,
            hr_extract,
            kernel_embed: Linear::new(store, &p("embed.kernel"), kernel_size * kernel_size, config.kernel_embed_dim, true)?,
            deg_conv1: Conv::same(store, &p("embed.conv1"), config.kernel_embed_dim + CHANNELS, c, 3)?,
            deg_conv2: Conv::same(store, &p("embed.conv2"), c, c, 3)?,
            initial: Conv::same(store, &p("initial"), 2 * CHANNELS, c, 3)?,
            fuse_initial: Conv::same(store, &p("fuse_initial"), 2 * c, c, 1)?,
            msf,
            sav,
            body: Conv::same(store, &p("reconstruct.body"), c, c, 3)?,
            upsample,
            head: Conv::new(store, &p("reconstruct.head"), c, CHANNELS, 3, 1, true, Init::Zeros)?,
        })
    }

    /// Parameter-name prefix of the reconstruction head (zero at init).
    pub fn head_name() -> String {
        format!("{PREFIX}.reconstruct.head")
    }

    /// Wiener deconvolution of the upsampled LR views, differentiable in the
    /// kernels. `up` is the unclamped bicubic upsampling in `(N, C, H, W)`
    /// order.
    pub fn latent(&self, up: Arc<Vec<f64>>, dims: (usize, usize, usize, usize), kernels: &KernelEstimate) -> Result<Tensor> {
        let (n, c, h, w) = dims;
        let d = StackDims {
            views: n,
            channels: c,
            height: h,
            width: w,
            ksize: kernels.size(),
        };
        let op = WienerOp {
            images: up,
            dims: d,
            lambda: self.config.fft_reg_lambda,
        };
        Ok(kernels.kernels.contiguous()?.apply_op1(op)?.clamp(0.0, 1.0)?)
    }

    /// Strided convolutions bringing the latent field down to LR feature
    /// resolution.
    pub fn hr_feature_extract(&self, latent: &Tensor, angular: (usize, usize), lr_spatial: (usize, usize)) -> Result<FeatureField> {
        let (_, _, hh, ww) = latent.dims4()?;
        let a = self.config.alpha;
        if hh != lr_spatial.0 * a || ww != lr_spatial.1 * a {
            return Err(contract(format!(
                "latent {hh}x{ww} is not {a}x the LR size {}x{}",
                lr_spatial.0, lr_spatial.1
            )));
        }
        let mut x = latent.clone();
        for (i, conv) in self.hr_extract.iter().enumerate() {
            if i > 0 {
                x = x.relu()?;
            }
            x = conv.forward(&x)?;
        }
        FeatureField::new(x, angular, Provenance::Image)
    }

    /// Project each kernel, replicate it over the LR grid, append the noise
    /// map and embed with two convolutions.
    pub fn embed_degradation(&self, kernels: &KernelEstimate, noise: &NoiseMapEstimate) -> Result<FeatureField> {
        let (n, _, h, w) = noise.maps.dims4()?;
        let kn = kernels.kernels.dim(0)?;
        if kn != n || kernels.angular != noise.angular {
            return Err(shape(format!("{kn} kernels for {n} noise maps")));
        }
        let stretched = self.stretch_kernels(kernels, (h, w))?;
        let x = Tensor::cat(&[&stretched, &noise.maps], 1)?;
        let x = self.deg_conv2.forward(&self.deg_conv1.forward(&x)?.relu()?)?;
        FeatureField::new(x, noise.angular, Provenance::Degradation)
    }

    /// Projected kernels replicated over `(h, w)`: `(N, E, h, w)`.
    pub fn stretch_kernels(&self, kernels: &KernelEstimate, spatial: (usize, usize)) -> Result<Tensor> {
        let (n, k, _) = kernels.kernels.dims3()?;
        let e = self.kernel_embed.forward(&kernels.kernels.reshape((n, k * k))?)?;
        let d = e.dim(1)?;
        Ok(e.reshape((n, d, 1, 1))?.broadcast_as((n, d, spatial.0, spatial.1))?.contiguous()?)
    }

    /// `clamp(lr + Ñ, 0, 1)`.
    pub fn build_noise_free(lr: &Tensor, noise: &NoiseMapEstimate) -> Result<Tensor> {
        if lr.dims() != noise.maps.dims() {
            return Err(contract(format!(
                "LR {:?} and noise map {:?} differ in shape",
                lr.dims(),
                noise.maps.dims()
            )));
        }
        Ok((lr + &noise.maps)?.clamp(0.0, 1.0)?)
    }

    pub fn initial_feature_extract(&self, lr: &Tensor, noise_free: &Tensor, angular: (usize, usize)) -> Result<FeatureField> {
        if lr.dims() != noise_free.dims() {
            return Err(contract("LR and noise-free fields differ in shape"));
        }
        let x = Tensor::cat(&[lr, noise_free], 1)?;
        FeatureField::new(self.initial.forward(&x)?, angular, Provenance::Image)
    }

    pub fn fuse_initial(&self, f_init: &FeatureField, f_lat: &FeatureField) -> Result<FeatureField> {
        f_init.check_same_shape(f_lat, "initial fusion")?;
        let x = Tensor::cat(&[&f_init.data, &f_lat.data], 1)?;
        f_init.with_data(self.fuse_initial.forward(&x)?, Provenance::Image)
    }

    pub fn blocks(&self, f1: &FeatureField, f_deg: &FeatureField) -> Result<FeatureField> {
        let mut f = f1.clone();
        for (msf, sav) in self.msf.iter().zip(&self.sav) {
            f = sav.forward(&msf.forward(&f, f_deg)?)?;
        }
        Ok(f)
    }

    pub fn msf(&self, i: usize) -> &Msf {
        &self.msf[i]
    }

    pub fn sav(&self, i: usize) -> &SavBlock {
        &self.sav[i]
    }

    /// Upsample features to `α×` and add the head's output to the bicubic
    /// upsampling `up` (same shape as the result); clamp.
    pub fn reconstruct(&self, f: &FeatureField, up: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = f.data.dims4()?;
        let a = self.config.alpha;
        let mut x = self.body.forward(&f.data)?.relu()?;
        for conv in &self.upsample {
            x = pixel_shuffle(&conv.forward(&x)?, 2)?;
        }
        if !a.is_power_of_two() {
            x = resize_tensor(&x, h * a, w * a)?;
        }
        let residual = self.head.forward(&x)?;
        if residual.dims() != up.dims() {
            return Err(shape(format!(
                "reconstruction {:?} does not match the upsampled input {:?}",
                residual.dims(),
                up.dims()
            )));
        }
        Ok((up + residual)?.clamp(0.0, 1.0)?)
    }
}

/// The full model for one angular shape, with its parameters.
pub struct LfDest {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub estimator: Estimator,
    pub restoration: Restoration,
}

impl LfDest {
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let mut estimator = Estimator::new(&mut store, config.estimator, config.angular)?;
        estimator.use_s2c = config.switches.use_s2c;
        estimator.use_c2s = config.switches.use_c2s;
        let restoration = Restoration::new(
            &mut store,
            config.restoration,
            config.estimator.kernel_size_k,
            config.switches,
        )?;
        Ok(Self {
            config,
            store,
            estimator,
            restoration,
        })
    }

    pub fn alpha(&self) -> usize {
        self.config.restoration.alpha
    }

    fn check_input(&self, lr: &LightField) -> Result<()> {
        if lr.angular_shape() != self.config.angular {
            return Err(shape(format!(
                "model built for a {:?} angular grid, got {:?}",
                self.config.angular,
                lr.angular_shape()
            )));
        }
        Ok(())
    }

    /// Estimated degradation, or the delta/zero defaults when the estimator
    /// is switched off.
    pub fn degradation(&self, lr_t: &Tensor, lr: &LightField) -> Result<(KernelEstimate, NoiseMapEstimate)> {
        if self.config.switches.use_estimator {
            self.estimator.forward(lr_t, lr.angular_shape())
        } else {
            Ok((
                KernelEstimate::delta(
                    lr.angular_shape(),
                    self.config.estimator.kernel_size_k,
                    self.store.dtype(),
                    self.store.device(),
                )?,
                NoiseMapEstimate::zeros(lr.angular_shape(), lr.spatial_shape(), self.store.dtype())?,
            ))
        }
    }

    /// Run the restoration network with externally supplied degradation.
    pub fn forward_with(
        &self,
        lr: &LightField,
        kernels: KernelEstimate,
        noise: NoiseMapEstimate,
    ) -> Result<ForwardOutput> {
        self.check_input(lr)?;
        let angular = lr.angular_shape();
        let dtype = self.store.dtype();
        let dev = self.store.device();
        let lr_t = array_to_tensor(lr.data(), dtype, dev)?;
        let a = self.alpha();

        let up = upsample_views(lr.data(), a);
        let (nu, nv, hh, ww, c) = up.dim();
        let up_flat = Arc::new(nchw(&up));
        let up_t = Tensor::from_vec(up_flat.as_ref().clone(), (nu * nv, c, hh, ww), dev)?.to_dtype(dtype)?;

        let r = &self.restoration;
        let latent = r.latent(up_flat, (nu * nv, c, hh, ww), &kernels)?;
        let f_lat = r.hr_feature_extract(&latent, angular, lr.spatial_shape())?;
        let f_deg = r.embed_degradation(&kernels, &noise)?;
        let noise_free = Restoration::build_noise_free(&lr_t, &noise)?;
        let f_init = r.initial_feature_extract(&lr_t, &noise_free, angular)?;
        let f1 = r.fuse_initial(&f_init, &f_lat)?;
        let f = r.blocks(&f1, &f_deg)?;
        let sr = r.reconstruct(&f, &up_t)?;
        Ok(ForwardOutput {
            sr,
            kernels,
            noise,
            latent,
            angular,
        })
    }

    pub fn forward(&self, lr: &LightField) -> Result<ForwardOutput> {
        self.check_input(lr)?;
        let lr_t = array_to_tensor(lr.data(), self.store.dtype(), self.store.device())?;
        let (k, n) = self.degradation(&lr_t, lr)?;
        self.forward_with(lr, k, n)
    }

    /// Super-resolved light field only.
    pub fn infer(&self, lr: &LightField) -> Result<LightField> {
        self.forward(lr)?.sr_lightfield()
    }
}
