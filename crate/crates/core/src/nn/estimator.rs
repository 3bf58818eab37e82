//! Learned estimator of per-view blur kernels and noise maps.
//!
//! Every view goes through a shared convolution; the centre view's features
//! absorb all side views (side-to-centre), are broadcast back to every view
//! (centre-to-side), and two heads read the fused features: a pooled kernel
//! head ending in a softmax and a convolutional noise head.

use candle_core::{DType, Tensor, D};
use ndarray::{Array2, Array5};
use serde::{Deserialize, Serialize};

use super::blocks::Rcab;
use super::{lightfield_to_tensor, tensor_to_array, Conv, FeatureField, Linear, ParamStore, Provenance};
use crate::degradation::KERNEL_SIZE;
use crate::error::{contract, shape, Result};
use crate::lightfield::{center_of, LightField};

/// Parameter-name prefix of everything owned by the estimator.
pub const PREFIX: &str = "estimator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub feature_channels: usize,
    pub num_rcab: usize,
    pub kernel_size_k: usize,
    /// Average the kernel logits over views before the softmax.
    pub share_kernel_across_views: bool,
    /// Bottleneck reduction of the channel-attention gates.
    pub reduction: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            feature_channels: 32,
            num_rcab: 2,
            kernel_size_k: KERNEL_SIZE,
            share_kernel_across_views: false,
            reduction: 4,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_channels == 0 || self.num_rcab == 0 || self.reduction == 0 {
            return Err(contract("estimator channel, block and reduction counts must be positive"));
        }
        if self.kernel_size_k % 2 == 0 {
            return Err(contract(format!("kernel size {} must be odd", self.kernel_size_k)));
        }
        Ok(())
    }
}

/// Per-view kernels, `(U·V, k, k)`, each on the probability simplex.
#[derive(Debug, Clone)]
pub struct KernelEstimate {
    pub kernels: Tensor,
    pub angular: (usize, usize),
}

impl KernelEstimate {
    /// The delta kernel for every view.
    pub fn delta(angular: (usize, usize), k: usize, dtype: DType, device: &candle_core::Device) -> Result<Self> {
        let n = angular.0 * angular.1;
        let mut v = vec![0.0f64; n * k * k];
        for i in 0..n {
            v[i * k * k + (k / 2) * k + k / 2] = 1.0;
        }
        let kernels = Tensor::from_vec(v, (n, k, k), device)?.to_dtype(dtype)?;
        Ok(Self { kernels, angular })
    }

    pub fn from_arrays(kernels: &[Array2<f64>], angular: (usize, usize), dtype: DType) -> Result<Self> {
        let n = angular.0 * angular.1;
        if kernels.len() != n {
            return Err(shape(format!("{} kernels for {n} views", kernels.len())));
        }
        let k = kernels[0].nrows();
        let mut v: Vec<f64> = Vec::with_capacity(n * k * k);
        for kern in kernels {
            if kern.dim() != (k, k) {
                return Err(shape("kernels must share one square size"));
            }
            v.extend(kern.iter());
        }
        let kernels = Tensor::from_vec(v, (n, k, k), &candle_core::Device::Cpu)?.to_dtype(dtype)?;
        Ok(Self { kernels, angular })
    }

    pub fn size(&self) -> usize {
        self.kernels.dims()[1]
    }

    /// Kernels in raster `(u, v)` order.
    pub fn to_arrays(&self) -> Result<Vec<Array2<f64>>> {
        let (n, k, _) = self.kernels.dims3()?;
        let flat = self.kernels.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        (0..n)
            .map(|i| {
                Array2::from_shape_vec((k, k), flat[i * k * k..(i + 1) * k * k].to_vec())
                    .map_err(|e| shape(e.to_string()))
            })
            .collect()
    }
}

/// Signed per-pixel noise maps at LR resolution, `(U·V, 3, h, w)`.
#[derive(Debug, Clone)]
pub struct NoiseMapEstimate {
    pub maps: Tensor,
    pub angular: (usize, usize),
}

impl NoiseMapEstimate {
    pub fn zeros(angular: (usize, usize), spatial: (usize, usize), dtype: DType) -> Result<Self> {
        let maps = Tensor::zeros(
            (angular.0 * angular.1, 3, spatial.0, spatial.1),
            dtype,
            &candle_core::Device::Cpu,
        )?;
        Ok(Self { maps, angular })
    }

    pub fn from_array(maps: &Array5<f64>, dtype: DType) -> Result<Self> {
        let (u, v, ..) = maps.dim();
        let t = super::array_to_tensor(maps.view(), dtype, &candle_core::Device::Cpu)?;
        Ok(Self { maps: t, angular: (u, v) })
    }

    /// `U×V×h×w×3` array.
    pub fn to_array(&self) -> Result<Array5<f64>> {
        tensor_to_array(&self.maps, self.angular)
    }
}

/// The degradation estimator for one fixed angular shape.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub config: EstimatorConfig,
    pub angular: (usize, usize),
    /// Run the side-to-centre fusion; otherwise the centre passes through.
    pub use_s2c: bool,
    /// Run the centre-to-side fusion; otherwise the side features pass through.
    pub use_c2s: bool,
    extract: Conv,
    s2c: Conv,
    c2s: Conv,
    kernel_conv: Conv,
    kernel_blocks: Vec<Rcab>,
    kernel_logits: Linear,
    noise_conv: Conv,
    noise_blocks: Vec<Rcab>,
    noise_out: Conv,
}

impl Estimator {
    pub fn new(store: &mut ParamStore, config: EstimatorConfig, angular: (usize, usize)) -> Result<Self> {
        config.validate()?;
        center_of(angular)?;
        let c = config.feature_channels;
        let k = config.kernel_size_k;
        let n = angular.0 * angular.1;
        let p = |s: &str| format!("{PREFIX}.{s}");
        let rcabs = |store: &mut ParamStore, head: &str| -> Result<Vec<Rcab>> {
            (0..config.num_rcab)
                .map(|i| Rcab::new(store, &p(&format!("{head}.rcab{i}")), c, config.reduction))
                .collect()
        };
        Ok(Self {
            config,
            angular,
            use_s2c: true,
            use_c2s: true,
            extract: Conv::same(store, &p("extract"), 3, c, 3)?,
            s2c: Conv::same(store, &p("side_to_center"), n * c, c, 3)?,
            c2s: Conv::same(store, &p("center_to_side"), 2 * c, c, 3)?,
            kernel_conv: Conv::same(store, &p("kernel.conv"), c, c, 3)?,
            kernel_blocks: rcabs(store, "kernel")?,
            kernel_logits: Linear::new(store, &p("kernel.logits"), c, k * k, true)?,
            noise_conv: Conv::same(store, &p("noise.conv"), c, c, 3)?,
            noise_blocks: rcabs(store, "noise")?,
            noise_out: Conv::same(store, &p("noise.out"), c, 3, 3)?,
        })
    }

    fn check_angular(&self, angular: (usize, usize)) -> Result<()> {
        if angular != self.angular {
            return Err(shape(format!(
                "estimator built for a {:?} angular grid, got {angular:?}",
                self.angular
            )));
        }
        Ok(())
    }

    /// Shared per-view features and the centre view's slice of them.
    pub fn extract_features(&self, lr: &Tensor, angular: (usize, usize)) -> Result<(FeatureField, FeatureField)> {
        self.check_angular(angular)?;
        let c = center_of(angular)?;
        let side = FeatureField::new(self.extract.forward(lr)?, angular, Provenance::Side)?;
        let center = side.data.narrow(0, c.u * angular.1 + c.v, 1)?;
        Ok((side.clone(), FeatureField::new(center, (1, 1), Provenance::Center)?))
    }

    /// Concatenate all side features in raster order, fuse to `Cf` channels
    /// and add to the centre feature.
    pub fn side_to_center_fuse(&self, side: &FeatureField, center: &FeatureField) -> Result<FeatureField> {
        let (n, c, h, w) = side.data.dims4()?;
        if center.angular != (1, 1) || center.data.dims() != [1, c, h, w] {
            return Err(contract(format!(
                "centre feature {:?} does not match side features {:?}",
                center.data.dims(),
                side.data.dims()
            )));
        }
        let stacked = side.data.reshape((1, n * c, h, w))?;
        let out = (&center.data + self.s2c.forward(&stacked)?)?;
        FeatureField::new(out, (1, 1), Provenance::Fused)
    }

    /// Broadcast the fused centre feature to every view, fuse it with each
    /// side feature and add the result to the side feature.
    pub fn center_to_side_fuse(&self, fused_center: &FeatureField, side: &FeatureField) -> Result<FeatureField> {
        let (n, c, h, w) = side.data.dims4()?;
        if fused_center.data.dims() != [1, c, h, w] {
            return Err(contract(format!(
                "centre feature {:?} does not match side features {:?}",
                fused_center.data.dims(),
                side.data.dims()
            )));
        }
        let center = fused_center.data.broadcast_as((n, c, h, w))?;
        let cat = Tensor::cat(&[&center, &side.data], 1)?;
        side.with_data((&side.data + self.c2s.forward(&cat)?)?, Provenance::Fused)
    }

    pub fn estimate_kernels(&self, fused: &FeatureField) -> Result<KernelEstimate> {
        self.check_angular(fused.angular)?;
        let mut x = self.kernel_conv.forward(&fused.data)?.relu()?;
        for block in &self.kernel_blocks {
            x = block.forward(&x)?;
        }
        let (n, c, _, _) = x.dims4()?;
        let pooled = x.mean(D::Minus1)?.mean(D::Minus1)?.reshape((n, c))?;
        let mut logits = self.kernel_logits.forward(&pooled)?;
        if self.config.share_kernel_across_views {
            logits = logits.mean_keepdim(0)?.broadcast_as(logits.dims())?.contiguous()?;
        }
        let k = self.config.kernel_size_k;
        let kernels = candle_nn::ops::softmax(&logits, D::Minus1)?.reshape((n, k, k))?;
        Ok(KernelEstimate { kernels, angular: fused.angular })
    }

    pub fn estimate_noise(&self, fused: &FeatureField) -> Result<NoiseMapEstimate> {
        self.check_angular(fused.angular)?;
        let mut x = self.noise_conv.forward(&fused.data)?.relu()?;
        for block in &self.noise_blocks {
            x = block.forward(&x)?;
        }
        Ok(NoiseMapEstimate {
            maps: self.noise_out.forward(&x)?,
            angular: fused.angular,
        })
    }

    /// Full estimator on an `(U·V, 3, h, w)` LR tensor.
    pub fn forward(&self, lr: &Tensor, angular: (usize, usize)) -> Result<(KernelEstimate, NoiseMapEstimate)> {
        let (side, center) = self.extract_features(lr, angular)?;
        let center = if self.use_s2c {
            self.side_to_center_fuse(&side, &center)?
        } else {
            center
        };
        let fused = if self.use_c2s {
            self.center_to_side_fuse(&center, &side)?
        } else {
            side
        };
        Ok((self.estimate_kernels(&fused)?, self.estimate_noise(&fused)?))
    }

    /// Convenience wrapper taking a light field.
    pub fn run(&self, store: &ParamStore, lr: &LightField) -> Result<(KernelEstimate, NoiseMapEstimate)> {
        let t = lightfield_to_tensor(lr, store.dtype(), store.device())?;
        self.forward(&t, lr.angular_shape())
    }
}
