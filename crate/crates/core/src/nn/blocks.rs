//! Channel attention, residual channel-attention blocks, cross-attention,
//! adaptive weighting and the spatial-angular block.

use candle_core::{Tensor, D};

use super::{global_pool, sigmoid, Conv, FeatureField, Init, ParamStore, Provenance};
use crate::error::{contract, Result};

fn reduced(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

/// Squeeze-and-excitation gate: pool, bottleneck, sigmoid, rescale.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    down: Conv,
    up: Conv,
}

impl ChannelAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let mid = reduced(channels, reduction);
        Ok(Self {
            down: Conv::same(store, &format!("{name}.down"), channels, mid, 1)?,
            up: Conv::same(store, &format!("{name}.up"), mid, channels, 1)?,
        })
    }

    /// Per-channel gates in `(0, 1)`, shape `(N, C, 1, 1)`.
    pub fn gates(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let z = self.down.forward(&global_pool(x)?)?.relu()?;
        sigmoid(&self.up.forward(&z)?)
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.broadcast_mul(&self.gates(x)?)
    }
}

/// Residual channel-attention block: conv, ReLU, conv, channel attention,
/// identity skip.
#[derive(Debug, Clone)]
pub struct Rcab {
    conv1: Conv,
    conv2: Conv,
    attention: ChannelAttention,
}

impl Rcab {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::same(store, &format!("{name}.conv1"), channels, channels, 3)?,
            conv2: Conv::same(store, &format!("{name}.conv2"), channels, channels, 3)?,
            attention: ChannelAttention::new(store, &format!("{name}.ca"), channels, reduction)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        x + self.attention.forward(&y)?
    }
}

/// Channel-transposed cross attention: queries from the first input,
/// keys and values from the second, a `C×C` attention matrix per view
/// scaled by `1/sqrt(h·w)`, an output projection and a residual add of the
/// first input. All projections are bias-free 1×1 convolutions.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    query: Conv,
    key: Conv,
    value: Conv,
    out: Conv,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let proj = |store: &mut ParamStore, p: &str| {
            Conv::new(store, &format!("{name}.{p}"), channels, channels, 1, 1, false, Init::Orthogonal)
        };
        Ok(Self {
            query: proj(store, "query")?,
            key: proj(store, "key")?,
            value: proj(store, "value")?,
            out: proj(store, "out")?,
        })
    }

    fn flatten(x: &Tensor) -> candle_core::Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        x.reshape((n, c, h * w))
    }

    /// Row-stochastic `(N, C, C)` attention of `a` over `b`.
    pub fn attention(&self, a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
        let (_, _, h, w) = a.dims4()?;
        let q = Self::flatten(&self.query.forward(a)?)?;
        let k = Self::flatten(&self.key.forward(b)?)?;
        let logits = (q.matmul(&k.transpose(1, 2)?)? / ((h * w) as f64).sqrt())?;
        candle_nn::ops::softmax(&logits, D::Minus1)
    }

    pub fn forward(&self, a: &FeatureField, b: &FeatureField) -> Result<FeatureField> {
        a.check_same_shape(b, "cross attention")?;
        let (n, c, h, w) = a.data.dims4()?;
        let attn = self.attention(&a.data, &b.data)?;
        let v = Self::flatten(&self.value.forward(&b.data)?)?;
        let mixed = attn.matmul(&v)?.reshape((n, c, h, w))?;
        let out = (&a.data + self.out.forward(&mixed)?)?;
        a.with_data(out, Provenance::Fused)
    }
}

/// Adaptive weighting: a channel gate computed from the input itself.
#[derive(Debug, Clone)]
pub struct AdaptiveWeight {
    gate: ChannelAttention,
}

impl AdaptiveWeight {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        Ok(Self {
            gate: ChannelAttention::new(store, name, channels, reduction)?,
        })
    }

    pub fn gates(&self, f: &FeatureField) -> Result<Tensor> {
        Ok(self.gate.gates(&f.data)?)
    }

    pub fn forward(&self, f: &FeatureField) -> Result<FeatureField> {
        f.with_data(self.gate.forward(&f.data)?, f.provenance)
    }
}

/// Which sub-operations of [`Msf`] are active; a disabled one is replaced
/// by the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsfSwitches {
    pub cross_attention: bool,
    pub adaptive_weight: bool,
}

/// Modulated and selective fusion of image features with degradation
/// features: `AW(CrA(f, d)) + AW'(CrA'(d, f))`.
#[derive(Debug, Clone)]
pub struct Msf {
    image_cra: CrossAttention,
    deg_cra: CrossAttention,
    image_aw: AdaptiveWeight,
    deg_aw: AdaptiveWeight,
    pub switches: MsfSwitches,
}

impl Msf {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction: usize,
        switches: MsfSwitches,
    ) -> Result<Self> {
        Ok(Self {
            image_cra: CrossAttention::new(store, &format!("{name}.cra_image"), channels)?,
            deg_cra: CrossAttention::new(store, &format!("{name}.cra_deg"), channels)?,
            image_aw: AdaptiveWeight::new(store, &format!("{name}.aw_image"), channels, reduction)?,
            deg_aw: AdaptiveWeight::new(store, &format!("{name}.aw_deg"), channels, reduction)?,
            switches,
        })
    }

    pub fn forward(&self, f1: &FeatureField, f_deg: &FeatureField) -> Result<FeatureField> {
        f1.check_same_shape(f_deg, "MSF")?;
        let (a, b) = if self.switches.cross_attention {
            (self.image_cra.forward(f1, f_deg)?, self.deg_cra.forward(f_deg, f1)?)
        } else {
            (f1.clone(), f_deg.clone())
        };
        let (a, b) = if self.switches.adaptive_weight {
            (self.image_aw.forward(&a)?, self.deg_aw.forward(&b)?)
        } else {
            (a, b)
        };
        f1.with_data((&a.data + &b.data)?, Provenance::Fused)
    }
}

/// Angular convolution size of the spatial-angular block.
pub const ANGULAR_KERNEL: usize = 3;

/// Spatial-angular block: a separable branch (spatial conv per view, then
/// angular conv per pixel) and a correlated branch (convs on the `u–h` and
/// `v–w` EPI planes), fused by a 1×1 conv, gated by channel attention and
/// added to the input.
#[derive(Debug, Clone)]
pub struct SavBlock {
    spatial: Conv,
    angular: Conv,
    epi_uh: Conv,
    epi_vw: Conv,
    fuse: Conv,
    attention: ChannelAttention,
}

impl SavBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let c = channels;
        Ok(Self {
            spatial: Conv::same(store, &format!("{name}.spatial"), c, c, 3)?,
            angular: Conv::same(store, &format!("{name}.angular"), c, c, ANGULAR_KERNEL)?,
            epi_uh: Conv::same(store, &format!("{name}.epi_uh"), c, c, 3)?,
            epi_vw: Conv::same(store, &format!("{name}.epi_vw"), c, c, 3)?,
            fuse: Conv::same(store, &format!("{name}.fuse"), 3 * c, c, 1)?,
            attention: ChannelAttention::new(store, &format!("{name}.ca"), c, reduction)?,
        })
    }

    /// Parameter-name prefix of the fusing convolution.
    pub fn fuse_name(name: &str) -> String {
        format!("{name}.fuse")
    }

    /// Apply `conv` after regrouping `(U, V, C, h, w)` by `order`, where
    /// `order` lists the five axes so that the first two become the batch
    /// and the last two the convolved plane.
    fn regrouped(conv: &Conv, x: &Tensor, dims: [usize; 5], order: [usize; 5]) -> candle_core::Result<Tensor> {
        let x5 = x.reshape((dims[0], dims[1], dims[2], dims[3], dims[4]))?;
        let p = x5.permute(order)?.contiguous()?;
        let pd = p.dims().to_vec();
        let y = conv.forward(&p.reshape((pd[0] * pd[1], pd[2], pd[3], pd[4]))?)?.relu()?;
        let y = y.reshape((pd[0], pd[1], pd[2], pd[3], pd[4]))?;
        // Invert the permutation.
        let mut inverse = [0usize; 5];
        for (i, &o) in order.iter().enumerate() {
            inverse[o] = i;
        }
        y.permute(inverse)?
            .contiguous()?
            .reshape((dims[0] * dims[1], dims[2], dims[3], dims[4]))
    }

    pub fn forward(&self, f: &FeatureField) -> Result<FeatureField> {
        let (nu, nv) = f.angular;
        if nu < ANGULAR_KERNEL {
            return Err(contract(format!(
                "angular axis `u` has {nu} views, fewer than the {ANGULAR_KERNEL}-tap angular kernel"
            )));
        }
        if nv < ANGULAR_KERNEL {
            return Err(contract(format!(
                "angular axis `v` has {nv} views, fewer than the {ANGULAR_KERNEL}-tap angular kernel"
            )));
        }
        let (_, c, h, w) = f.data.dims4()?;
        let dims = [nu, nv, c, h, w];

        // (U, V, C, h, w): axes 0..5
        let sas_spatial = self.spatial.forward(&f.data)?.relu()?;
        let sas = Self::regrouped(&self.angular, &sas_spatial, dims, [3, 4, 2, 0, 1])?;
        let uh = Self::regrouped(&self.epi_uh, &f.data, dims, [1, 4, 2, 0, 3])?;
        let vw = Self::regrouped(&self.epi_vw, &f.data, dims, [0, 3, 2, 1, 4])?;

        let fused = self.fuse.forward(&Tensor::cat(&[&sas, &uh, &vw], 1)?)?;
        let out = (&f.data + self.attention.forward(&fused)?)?;
        f.with_data(out, Provenance::Image)
    }
}
