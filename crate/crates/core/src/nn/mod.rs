//! Network building blocks on top of candle.
//!
//! Feature tensors are laid out `(U·V, C, h, w)` with views in row-major
//! `(u, v)` order; [`FeatureField`] carries the angular shape alongside.

pub mod blocks;
pub mod estimator;
pub mod restoration;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use ndarray::{Array2, Array5, ArrayView5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape, Result};
use crate::lightfield::resample::resize_matrix;
use crate::lightfield::{LightField, CHANNELS};

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform,
    /// Orthogonal rows (square 1×1 projections).
    Orthogonal,
    Zeros,
}

/// Named trainable parameters in a deterministic (sorted) order.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn init_values(&mut self, dims: &[usize], fan_in: usize, init: Init) -> Vec<f64> {
        let n: usize = dims.iter().product();
        match init {
            Init::Zeros => vec![0.0; n],
            Init::KaimingUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::Orthogonal => {
                let rows = dims[0];
                let cols = n / rows;
                orthogonal(&mut self.rng, rows, cols)
            }
        }
    }

    /// Create (or fail on a duplicate) a parameter.
    pub fn create(&mut self, name: &str, dims: &[usize], fan_in: usize, init: Init) -> Result<Tensor> {
        assert!(!self.vars.contains_key(name), "duplicate parameter {name}");
        let values = self.init_values(dims, fan_in, init);
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrite a parameter's values in place.
    pub fn set(&self, name: &str, values: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| shape(format!("unknown parameter {name}")))?;
        if var.dims() != values.dims() {
            return Err(shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                var.dims(),
                values.dims()
            )));
        }
        var.set(&values.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Zero every parameter whose name passes `filter`.
    pub fn zero_where(&self, filter: impl Fn(&str) -> bool) -> Result<()> {
        for (name, var) in &self.vars {
            if filter(name) {
                var.set(&var.zeros_like()?)?;
            }
        }
        Ok(())
    }

    /// Parameter values flattened to `f64`.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| shape(format!("unknown parameter {name}")))?;
        Ok(var.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    /// Re-draw every parameter with `KaimingUniform` from `seed`, including
    /// those initialised to zero. Used to probe a generic operating point.
    pub fn randomize(&self, seed: u64, scale: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for var in self.vars.values() {
            let dims = var.dims().to_vec();
            let fan_in = if dims.len() > 1 { dims[1..].iter().product() } else { dims[0] };
            let bound = scale * (6.0 / fan_in as f64).sqrt();
            let values: Vec<f64> = (0..var.elem_count()).map(|_| rng.random_range(-bound..bound)).collect();
            var.set(&Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Gram–Schmidt orthonormalisation of Gaussian rows (or columns when wider
/// than tall).
fn orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (a, b) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(a);
    while basis.len() < a {
        let mut v: Vec<f64> = (0..b).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { basis[r][c] } else { basis[c][r] };
        }
    }
    out
}

/// 2D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let fan_in = cin * ksize * ksize;
        let weight = store.create(&format!("{name}.weight"), &[cout, cin, ksize, ksize], fan_in, init)?;
        let bias = if bias {
            Some(store.create(&format!("{name}.bias"), &[cout], fan_in, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: ksize / 2,
        })
    }

    /// `k×k` stride-1 convolution with a bias and same-size output.
    pub fn same(store: &mut ParamStore, name: &str, cin: usize, cout: usize, ksize: usize) -> Result<Self> {
        Self::new(store, name, cin, cout, ksize, 1, true, Init::KaimingUniform)
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Fully connected layer on `(N, in)` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        let weight = store.create(&format!("{name}.weight"), &[cout, cin], cin, Init::KaimingUniform)?;
        let bias = if bias {
            Some(store.create(&format!("{name}.bias"), &[cout], cin, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.matmul(&self.weight.t()?)?;
        match &self.bias {
            Some(b) => y.broadcast_add(b),
            None => Ok(y),
        }
    }
}

/// Where a feature field came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Side,
    Center,
    Fused,
    Image,
    Degradation,
}

/// Features of every view of a light field.
#[derive(Debug, Clone)]
pub struct FeatureField {
    /// `(U·V, C, h, w)`.
    pub data: Tensor,
    pub angular: (usize, usize),
    pub provenance: Provenance,
}

impl FeatureField {
    pub fn new(data: Tensor, angular: (usize, usize), provenance: Provenance) -> Result<Self> {
        let (n, _, _, _) = data.dims4()?;
        if n != angular.0 * angular.1 {
            return Err(shape(format!(
                "{n} feature maps for a {}x{} angular grid",
                angular.0, angular.1
            )));
        }
        Ok(Self { data, angular, provenance })
    }

    pub fn channels(&self) -> usize {
        self.data.dim(1).unwrap_or(0)
    }

    pub fn spatial(&self) -> (usize, usize) {
        let d = self.data.dims();
        (d[2], d[3])
    }

    /// `(U, V, h, w, C)` dimensions.
    pub fn dims5(&self) -> (usize, usize, usize, usize, usize) {
        let (h, w) = self.spatial();
        (self.angular.0, self.angular.1, h, w, self.channels())
    }

    pub fn with_data(&self, data: Tensor, provenance: Provenance) -> Result<Self> {
        Self::new(data, self.angular, provenance)
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureField, what: &str) -> Result<()> {
        if self.angular != other.angular || self.data.dims() != other.data.dims() {
            return Err(shape(format!(
                "{what}: feature shapes differ ({:?} {:?} vs {:?} {:?})",
                self.angular,
                self.data.dims(),
                other.angular,
                other.data.dims()
            )));
        }
        Ok(())
    }
}

/// `U×V×H×W×C` array → `(U·V, C, H, W)` tensor.
pub fn array_to_tensor(data: ArrayView5<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (u, v, h, w, c) = data.dim();
    let nchw = data
        .to_shape((u * v, h, w, c))
        .map_err(|e| shape(e.to_string()))?
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned();
    let (raw, _) = nchw.into_raw_vec_and_offset();
    Ok(Tensor::from_vec(raw, (u * v, c, h, w), device)?.to_dtype(dtype)?)
}

pub fn lightfield_to_tensor(lf: &LightField, dtype: DType, device: &Device) -> Result<Tensor> {
    array_to_tensor(lf.data(), dtype, device)
}

/// `(U·V, C, H, W)` tensor → `U×V×H×W×C` array.
pub fn tensor_to_array(t: &Tensor, angular: (usize, usize)) -> Result<Array5<f64>> {
    let (n, c, h, w) = t.dims4()?;
    if n != angular.0 * angular.1 {
        return Err(shape(format!("{n} views for a {angular:?} grid")));
    }
    let raw = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let nchw = ndarray::Array4::from_shape_vec((n, c, h, w), raw).map_err(|e| shape(e.to_string()))?;
    let nhwc = nchw.permuted_axes([0, 2, 3, 1]).as_standard_layout().to_owned();
    let (raw, _) = nhwc.into_raw_vec_and_offset();
    Array5::from_shape_vec((angular.0, angular.1, h, w, c), raw).map_err(|e| shape(e.to_string()))
}

/// Convert an image tensor back to a light field, clamping into `[0, 1]`.
pub fn tensor_to_lightfield(t: &Tensor, angular: (usize, usize)) -> Result<LightField> {
    let arr = tensor_to_array(t, angular)?;
    if arr.dim().4 != CHANNELS {
        return Err(shape("image tensors must have 3 channels"));
    }
    LightField::from_clamped(arr)
}

/// Global average over the spatial axes: `(N, C, h, w)` → `(N, C, 1, 1)`.
pub fn global_pool(x: &Tensor) -> candle_core::Result<Tensor> {
    x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)
}

/// Separable resize of `(N, C, H, W)` by dense bicubic matrices.
pub fn resize_tensor(x: &Tensor, out_h: usize, out_w: usize) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let to = |m: Array2<f64>| {
        let (r, c) = m.dim();
        Tensor::from_vec(m.into_raw_vec_and_offset().0, (r, c), x.device())?.to_dtype(x.dtype())
    };
    let rw_t = to(resize_matrix(w, out_w).reversed_axes().as_standard_layout().to_owned())?;
    let rh = to(resize_matrix(h, out_h))?;
    let y = x.broadcast_matmul(&rw_t)?;
    rh.broadcast_matmul(&y)
}

pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::sigmoid(x)
}
