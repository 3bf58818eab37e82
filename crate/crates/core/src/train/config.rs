//! Training configuration, presets and the flat `key = value` file format.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::degradation::KERNEL_SIZE;
use crate::error::{contract, Result};
use crate::nn::estimator::EstimatorConfig;
use crate::nn::restoration::{ModelConfig, RestorationConfig, Switches};

/// Every knob of a training run. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hr_patch: usize,
    pub hr_crop: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub alpha: usize,
    pub pretrain_iters: u64,
    /// Joint-stage iterations.
    pub total_iters: u64,
    pub base_lr: f64,
    pub pretrain_lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub sigma_range: [f64; 2],
    pub noise_range: [f64; 2],
    pub seed: u64,
    /// Weight of the self-constraint term in the joint stage.
    pub w_de: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub augment: bool,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Generate batches serially instead of in parallel.
    pub deterministic: bool,
    pub angular: [usize; 2],
    pub feature_channels: usize,
    pub n1: usize,
    pub num_rcab: usize,
    pub kernel_embed_dim: usize,
    pub reduction: usize,
    pub fft_reg_lambda: f64,
    pub share_kernel_across_views: bool,
    pub use_estimator: bool,
    pub use_cra: bool,
    pub use_aw: bool,
    pub use_s2c: bool,
    pub use_c2s: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Full-scale protocol: 152/128 patches, batch 8, 30k estimator
    /// iterations, 100k joint iterations.
    pub fn paper() -> Self {
        Self {
            hr_patch: 152,
            hr_crop: 128,
            stride: 32,
            batch_size: 8,
            alpha: 4,
            pretrain_iters: 30_000,
            total_iters: 100_000,
            base_lr: 2e-4,
            pretrain_lr: 2e-4,
            lr_decay: 0.5,
            lr_decay_every: 30_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            sigma_range: [0.0, 4.0],
            noise_range: [0.0, 75.0],
            seed: 0,
            w_de: 1.0,
            clip_norm: 1.0,
            augment: true,
            log_every: 100,
            checkpoint_every: 5_000,
            deterministic: false,
            angular: [5, 5],
            feature_channels: 32,
            n1: 10,
            num_rcab: 2,
            kernel_embed_dim: 64,
            reduction: 4,
            fft_reg_lambda: crate::nn::restoration::DEFAULT_FFT_REG_LAMBDA,
            share_kernel_across_views: false,
            use_estimator: true,
            use_cra: true,
            use_aw: true,
            use_s2c: true,
            use_c2s: true,
        }
    }

    /// Scaled-down run that fits a single CPU core: 3×3 views, 16 feature
    /// channels, two building blocks, 96/64 patches and batch 1.
    pub fn desk() -> Self {
        Self {
            hr_patch: 96,
            hr_crop: 64,
            stride: 16,
            batch_size: 1,
            pretrain_iters: 200,
            total_iters: 2_000,
            base_lr: 1e-3,
            pretrain_lr: 1e-3,
            log_every: 10,
            checkpoint_every: 500,
            angular: [3, 3],
            feature_channels: 16,
            n1: 2,
            num_rcab: 1,
            kernel_embed_dim: 16,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(contract(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let margin = KERNEL_SIZE / 2;
        if self.hr_crop == 0 || self.hr_crop + 2 * margin > self.hr_patch {
            return Err(contract(format!(
                "crop {} plus a {margin}-pixel blur margin on each side exceeds the patch {}",
                self.hr_crop, self.hr_patch
            )));
        }
        if (self.hr_patch - self.hr_crop) % 2 != 0 {
            return Err(contract("patch and crop sizes must differ by an even amount"));
        }
        if self.alpha == 0 || self.hr_crop % self.alpha != 0 {
            return Err(contract(format!(
                "crop {} is not divisible by alpha = {}",
                self.hr_crop, self.alpha
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(contract(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.stride == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(contract("stride, batch size and decay interval must be positive"));
        }
        if self.sigma_range[0] < 0.0 || self.sigma_range[1] < self.sigma_range[0] {
            return Err(contract(format!("bad sigma range {:?}", self.sigma_range)));
        }
        if self.noise_range[0] < 0.0 || self.noise_range[1] < self.noise_range[0] {
            return Err(contract(format!("bad noise range {:?}", self.noise_range)));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            angular: (self.angular[0], self.angular[1]),
            estimator: EstimatorConfig {
                feature_channels: self.feature_channels,
                num_rcab: self.num_rcab,
                kernel_size_k: KERNEL_SIZE,
                share_kernel_across_views: self.share_kernel_across_views,
                reduction: self.reduction,
            },
            restoration: RestorationConfig {
                n1: self.n1,
                feature_channels: self.feature_channels,
                kernel_embed_dim: self.kernel_embed_dim,
                fft_reg_lambda: self.fft_reg_lambda,
                alpha: self.alpha,
                reduction: self.reduction,
            },
            switches: Switches {
                use_estimator: self.use_estimator,
                use_cra: self.use_cra,
                use_aw: self.use_aw,
                use_s2c: self.use_s2c,
                use_c2s: self.use_c2s,
            },
        }
    }

    /// Joint-stage learning rate: `base_lr · lr_decay^⌊t / lr_decay_every⌋`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let steps = (iteration / self.lr_decay_every) as i32;
        self.base_lr * self.lr_decay.powi(steps)
    }

    /// Apply a flat `key = value` text on top of `self`. Blank lines and
    /// `#` comments are ignored; ranges and the angular shape are written
    /// as comma-separated pairs.
    pub fn with_overrides(&self, text: &str) -> Result<Self> {
        let mut map = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!("config serialises to an object"),
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| contract(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let current = map
                .get(key)
                .ok_or_else(|| contract(format!("line {}: unknown key `{key}`", lineno + 1)))?;
            let parsed = parse_like(current, value)
                .ok_or_else(|| contract(format!("line {}: cannot parse `{value}` for `{key}`", lineno + 1)))?;
            map.insert(key.to_string(), parsed);
        }
        let cfg: TrainConfig = serde_json::from_value(Value::Object(map))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Render as the flat text format, one key per line.
    pub fn to_text(&self) -> String {
        let map: Map<String, Value> = match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serialises to an object"),
        };
        let mut out = String::new();
        for (k, v) in map {
            let rendered = match v {
                Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {rendered}\n"));
        }
        out
    }
}

fn parse_like(template: &Value, text: &str) -> Option<Value> {
    match template {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => text.parse::<f64>().ok().and_then(|x| serde_json::Number::from_f64(x).map(Value::Number)),
        Value::Array(items) => {
            let parts: Vec<&str> = text.split(',').map(str::trim).collect();
            if parts.len() != items.len() {
                return None;
            }
            items
                .iter()
                .zip(parts)
                .map(|(t, p)| parse_like(t, p))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_interval() {
        let c = TrainConfig::paper();
        assert_eq!(c.learning_rate(0), 2e-4);
        assert_eq!(c.learning_rate(29_999), 2e-4);
        assert_eq!(c.learning_rate(30_000), 1e-4);
        assert_eq!(c.learning_rate(60_000), 5e-5);
    }

    #[test]
    fn overrides_parse_every_kind() {
        let text = "# desk tweaks\nbatch_size = 2\nbase_lr = 5e-4\naugment = false\nsigma_range = 1.5, 1.5\nangular = 3,3\n\n";
        let c = TrainConfig::paper().with_overrides(text).unwrap();
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.base_lr, 5e-4);
        assert!(!c.augment);
        assert_eq!(c.sigma_range, [1.5, 1.5]);
        assert_eq!(c.angular, [3, 3]);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let c = TrainConfig::paper();
        assert!(c.with_overrides("bogus = 1").unwrap_err().to_string().contains("unknown key"));
        assert!(c.with_overrides("batch_size = two").is_err());
        assert!(c.with_overrides("hr_crop = 150").is_err());
        assert!(c.with_overrides("lr_decay = 0").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig::desk();
        assert_eq!(TrainConfig::paper().with_overrides(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn presets_validate() {
        TrainConfig::paper().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        assert!(TrainConfig::preset("huge").is_err());
    }
}
