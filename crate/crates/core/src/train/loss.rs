//! Training objectives on candle tensors.

use std::sync::Arc;

use candle_core::Tensor;

use crate::error::{shape, Result};
use crate::lightfield::LightField;
use crate::nn::estimator::{KernelEstimate, NoiseMapEstimate};
use crate::nn::restoration::ForwardOutput;
use crate::nn::{lightfield_to_tensor, resize_tensor};
use crate::spectral::{BlurOp, StackDims};

/// Scalar loss tensors.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Tensor,
    pub rec: Tensor,
    pub de: Tensor,
}

/// Plain values of [`LossTerms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub rec: f64,
    pub de: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

impl LossTerms {
    pub fn values(&self) -> Result<LossValues> {
        Ok(LossValues {
            total: scalar(&self.total)?,
            rec: scalar(&self.rec)?,
            de: scalar(&self.de)?,
        })
    }
}

/// Mean absolute error.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(shape(format!("L1 between {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Self-constraint loss: mean `|((hr ⊗ K̃)↓α) − Ñ − lr|`, differentiable in
/// the kernels and the noise maps. The blur mirrors borders like the
/// reference implementation.
pub fn degradation_loss(
    hr: &LightField,
    lr: &Tensor,
    kernels: &KernelEstimate,
    noise: &NoiseMapEstimate,
    alpha: usize,
) -> Result<Tensor> {
    let (h, w) = hr.spatial_shape();
    let (n, c, lh, lw) = lr.dims4()?;
    if h != lh * alpha || w != lw * alpha || n != hr.num_views() {
        return Err(shape(format!(
            "HR {:?} does not match LR {:?} at alpha = {alpha}",
            hr.data().dim(),
            lr.dims()
        )));
    }
    let hr_flat = lightfield_to_tensor(hr, candle_core::DType::F64, &candle_core::Device::Cpu)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    let op = BlurOp {
        images: Arc::new(hr_flat),
        dims: StackDims {
            views: n,
            channels: c,
            height: h,
            width: w,
            ksize: kernels.size(),
        },
    };
    let blurred = kernels.kernels.contiguous()?.apply_op1(op)?;
    let down = resize_tensor(&blurred, lh, lw)?;
    Ok(((down - &noise.maps)? - lr)?.abs()?.mean_all()?)
}

/// `L_rec + w_de · L_DE` for one forward pass.
pub fn total_loss(hr: &LightField, lr: &LightField, out: &ForwardOutput, alpha: usize, w_de: f64) -> Result<LossTerms> {
    let dtype = out.sr.dtype();
    let hr_t = lightfield_to_tensor(hr, dtype, out.sr.device())?;
    let lr_t = lightfield_to_tensor(lr, dtype, out.sr.device())?;
    let rec = l1(&out.sr, &hr_t)?;
    let de = degradation_loss(hr, &lr_t, &out.kernels, &out.noise, alpha)?;
    let total = (&rec + (&de * w_de)?)?;
    Ok(LossTerms { total, rec, de })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{degrade_raw, self_constraint_loss, DegradationConfig};
    use candle_core::DType;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_the_reference_self_constraint_loss() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let hr = LightField::from_shape_fn((3, 3), (16, 16), |_| rng.random()).unwrap();
        let cfg = DegradationConfig::new(1.2, 10.0, 4, 3).unwrap();
        let (lr, record) = degrade_raw(&hr, &cfg).unwrap();
        // Perturbed estimates so the loss is not trivially zero.
        let kernels: Vec<_> = record
            .kernels
            .iter()
            .map(|k| {
                let mut a = k.weights().to_owned();
                a[[10, 11]] += 0.05;
                let s = a.sum();
                a / s
            })
            .collect();
        let noise = record.noise.mapv(|x| -0.5 * x);
        let want = self_constraint_loss(&hr, lr.view(), &kernels, noise.view(), 4).unwrap();

        let k = KernelEstimate::from_arrays(&kernels, (3, 3), DType::F64).unwrap();
        let n = NoiseMapEstimate::from_array(&noise, DType::F64).unwrap();
        let lr_t = crate::nn::array_to_tensor(lr.view(), DType::F64, &candle_core::Device::Cpu).unwrap();
        let got = scalar(&degradation_loss(&hr, &lr_t, &k, &n, 4).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}
