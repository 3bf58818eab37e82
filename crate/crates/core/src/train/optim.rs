//! Adam with global-norm clipping and inspectable state.

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};

use crate::error::Result;
use crate::nn::ParamStore;

/// Adam over a named subset of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Optimised parameter names, sorted.
    pub names: Vec<String>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// What one update saw.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Names and norms of parameters whose gradient is not finite.
    pub non_finite: Vec<(String, f64)>,
}

impl Adam {
    pub fn new(store: &ParamStore, filter: impl Fn(&str) -> bool, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let mut names = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, var) in store.iter() {
            if filter(name) {
                names.push(name.clone());
                m.push(var.zeros_like()?);
                v.push(var.zeros_like()?);
            }
        }
        Ok(Self {
            beta1,
            beta2,
            eps,
            step: 0,
            names,
            m,
            v,
        })
    }

    /// Global norm of the gradients of the optimised parameters, with any
    /// non-finite offenders listed.
    pub fn inspect(&self, store: &ParamStore, grads: &GradStore) -> Result<StepReport> {
        let mut total = 0.0;
        let mut non_finite = Vec::new();
        for name in &self.names {
            let var = store.get(name).expect("optimised parameter exists");
            if let Some(g) = grads.get(var.as_tensor()) {
                let sq = g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                if !sq.is_finite() {
                    non_finite.push((name.clone(), sq.sqrt()));
                }
                total += sq;
            }
        }
        Ok(StepReport {
            grad_norm: total.sqrt(),
            non_finite,
        })
    }

    /// One update at learning rate `lr`. Gradients are rescaled so their
    /// global norm is at most `clip` when `clip > 0`. Parameters without a
    /// gradient are left untouched.
    pub fn update(&mut self, store: &ParamStore, grads: &GradStore, lr: f64, clip: f64) -> Result<StepReport> {
        let report = self.inspect(store, grads)?;
        let scale = if clip > 0.0 && report.grad_norm > clip {
            clip / report.grad_norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, name) in self.names.iter().enumerate() {
            let var = store.get(name).expect("optimised parameter exists");
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients carry their own graph; keeping it would chain every
            // step's graph onto the moments.
            let g = g.detach().affine(scale, 0.0)?;
            self.m[i] = (self.m[i].affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?.detach();
            self.v[i] = (self.v[i].affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?.detach();
            let m_hat = self.m[i].affine(1.0 / bc1, 0.0)?;
            let denom = self.v[i].affine(1.0 / bc2, 0.0)?.sqrt()?.affine(1.0, self.eps)?;
            let delta = (m_hat / denom)?.affine(lr, 0.0)?;
            var.set(&(var.as_tensor().detach() - delta)?)?;
        }
        Ok(report)
    }
}
