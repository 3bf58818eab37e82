//! Two-stage training: the estimator alone on the self-constraint loss,
//! then the whole model on reconstruction plus self-constraint.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod loss;
pub mod optim;

use std::fs;
use std::path::Path;
use std::time::Instant;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, Stage, FORMAT_VERSION};
pub use config::TrainConfig;
pub use data::{degrade_patch, redegrade, sample_batch, sample_patch, PatchSample};
pub use loss::{degradation_loss, total_loss, LossTerms, LossValues};
pub use optim::Adam;

use checkpoint::{Blob, CheckpointHeader, RngState};
use crate::error::{Error, Result};
use crate::lightfield::LightField;
use crate::nn::restoration::LfDest;
use crate::nn::{estimator, lightfield_to_tensor};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Global iteration count (estimator stage first).
    pub iter: u64,
    pub loss: f64,
    /// Zero during estimator pretraining, where it is not computed.
    pub loss_rec: f64,
    pub loss_de: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Training state: model, optimiser, data stream and schedule position.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: LfDest,
    scenes: Vec<LightField>,
    rng: ChaCha8Rng,
    pub stage: Stage,
    /// Iterations completed within the current stage.
    pub iteration: u64,
    optimizer: Adam,
    pub log: Vec<LogRow>,
    elapsed_before: f64,
    started: Instant,
}

fn is_estimator(name: &str) -> bool {
    name.starts_with(estimator::PREFIX)
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep the data stream apart from weight initialisation.
    rng.set_stream(1);
    rng
}

impl Trainer {
    /// Fresh run in `f32` with weights drawn from `config.seed`.
    pub fn new(config: TrainConfig, scenes: Vec<LightField>) -> Result<Self> {
        Self::with_dtype(config, scenes, DType::F32)
    }

    pub fn with_dtype(config: TrainConfig, scenes: Vec<LightField>, dtype: DType) -> Result<Self> {
        config.validate()?;
        let model = LfDest::new(config.model_config(), dtype, config.seed)?;
        let stage = if config.pretrain_iters > 0 { Stage::Pretrain } else { Stage::Joint };
        let optimizer = Self::optimizer_for(&config, &model, stage)?;
        Ok(Self {
            rng: data_rng(config.seed),
            config,
            model,
            scenes,
            stage,
            iteration: 0,
            optimizer,
            log: Vec::new(),
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    fn optimizer_for(config: &TrainConfig, model: &LfDest, stage: Stage) -> Result<Adam> {
        let filter: fn(&str) -> bool = match stage {
            Stage::Pretrain => is_estimator,
            _ => |_| true,
        };
        Adam::new(&model.store, filter, config.adam_beta1, config.adam_beta2, config.adam_eps)
    }

    /// Iterations completed over both stages.
    pub fn global_iteration(&self) -> u64 {
        match self.stage {
            Stage::Pretrain => self.iteration,
            Stage::Joint => self.config.pretrain_iters + self.iteration,
            Stage::Done => self.config.pretrain_iters + self.config.total_iters,
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    fn non_finite(&self, what: String) -> Error {
        Error::NonFinite {
            iteration: self.global_iteration(),
            diagnostics: what,
        }
    }

    /// Run one iteration of the current stage and advance the schedule.
    pub fn step(&mut self) -> Result<LogRow> {
        let batch = sample_batch(&self.scenes, &mut self.rng, &self.config)?;
        let alpha = self.config.alpha;
        let model = &self.model;
        let (loss, lr, rec, de) = match self.stage {
            Stage::Done => return Err(crate::error::contract("training already finished")),
            Stage::Pretrain => {
                let mut de_sum = None;
                for s in &batch {
                    let lr_t = lightfield_to_tensor(&s.lr, model.store.dtype(), model.store.device())?;
                    let (k, n) = model.estimator.forward(&lr_t, s.lr.angular_shape())?;
                    let de = degradation_loss(&s.hr, &lr_t, &k, &n, alpha)?;
                    de_sum = Some(match de_sum {
                        None => de,
                        Some(acc) => (acc + de)?,
                    });
                }
                let de = (de_sum.expect("non-empty batch") / batch.len() as f64)?;
                (de.clone(), self.config.pretrain_lr, None, de)
            }
            Stage::Joint => {
                let mut sum: Option<LossTerms> = None;
                for s in &batch {
                    let out = model.forward(&s.lr)?;
                    let t = total_loss(&s.hr, &s.lr, &out, alpha, self.config.w_de)?;
                    sum = Some(match sum {
                        None => t,
                        Some(acc) => LossTerms {
                            total: (acc.total + t.total)?,
                            rec: (acc.rec + t.rec)?,
                            de: (acc.de + t.de)?,
                        },
                    });
                }
                let s = sum.expect("non-empty batch");
                let b = batch.len() as f64;
                let lr = self.config.learning_rate(self.iteration);
                ((s.total / b)?, lr, Some((s.rec / b)?), (s.de / b)?)
            }
        };
        let value = |t: &candle_core::Tensor| -> Result<f64> {
            Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
        };
        let loss_v = value(&loss)?;
        let rec_v = match &rec {
            Some(t) => value(t)?,
            None => 0.0,
        };
        let de_v = value(&de)?;
        if !loss_v.is_finite() {
            return Err(self.non_finite(format!("loss {loss_v}, reconstruction {rec_v}, self-constraint {de_v}")));
        }
        let grads = loss.backward()?;
        let report = self.optimizer.inspect(&self.model.store, &grads)?;
        if !report.non_finite.is_empty() {
            let names: Vec<String> = report.non_finite.iter().take(8).map(|(n, g)| format!("{n}: {g}")).collect();
            return Err(self.non_finite(format!(
                "loss {loss_v} (reconstruction {rec_v}, self-constraint {de_v}) but non-finite gradients in {}",
                names.join(", ")
            )));
        }
        self.optimizer.update(&self.model.store, &grads, lr, self.config.clip_norm)?;

        let row = LogRow {
            iter: self.global_iteration(),
            loss: loss_v,
            loss_rec: rec_v,
            loss_de: de_v,
            lr,
            seconds: self.elapsed(),
        };
        self.advance()?;
        Ok(row)
    }

    fn advance(&mut self) -> Result<()> {
        self.iteration += 1;
        let finished = match self.stage {
            Stage::Pretrain => self.iteration >= self.config.pretrain_iters,
            Stage::Joint => self.iteration >= self.config.total_iters,
            Stage::Done => false,
        };
        if finished {
            self.stage = match self.stage {
                Stage::Pretrain if self.config.total_iters > 0 => Stage::Joint,
                _ => Stage::Done,
            };
            self.iteration = 0;
            if self.stage == Stage::Joint {
                self.optimizer = Self::optimizer_for(&self.config, &self.model, Stage::Joint)?;
            }
        }
        Ok(())
    }

    /// Step until `stage` is finished (or at most `limit` iterations),
    /// logging every `log_every` iterations through `on_log`.
    pub fn run_stage(&mut self, stage: Stage, limit: Option<u64>, mut on_log: impl FnMut(&LogRow)) -> Result<()> {
        let mut done = 0;
        while self.stage == stage && limit.is_none_or(|l| done < l) {
            let row = self.step()?;
            done += 1;
            if row.iter % self.config.log_every.max(1) == 0 || self.stage != stage {
                self.log.push(row);
                on_log(&row);
            }
        }
        Ok(())
    }

    /// Run the remaining schedule, checkpointing into `out_dir` every
    /// `checkpoint_every` iterations and at the end, and writing the log.
    pub fn run(&mut self, out_dir: &Path, mut on_log: impl FnMut(&LogRow)) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        while !self.is_done() {
            let row = self.step()?;
            if row.iter % self.config.log_every.max(1) == 0 || self.is_done() {
                self.log.push(row);
                on_log(&row);
            }
            let g = self.global_iteration();
            if self.config.checkpoint_every > 0 && g % self.config.checkpoint_every == 0 && !self.is_done() {
                self.checkpoint()?.save(out_dir.join(format!("checkpoint_{g:07}.ckpt")))?;
                self.write_log(&out_dir.join("train_log.csv"))?;
            }
        }
        self.checkpoint()?.save(out_dir.join("final.ckpt"))?;
        self.write_log(&out_dir.join("train_log.csv"))
    }

    /// CSV with columns `iter,loss,loss_rec,loss_de,lr,seconds`.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let weights = self
            .model
            .store
            .iter()
            .map(|(n, v)| Blob::from_tensor(n, v.as_tensor()))
            .collect::<Result<Vec<_>>>()?;
        let moments = |ts: &[candle_core::Tensor]| {
            self.optimizer
                .names
                .iter()
                .zip(ts)
                .map(|(n, t)| Blob::from_tensor(n, t))
                .collect::<Result<Vec<_>>>()
        };
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Checkpoint {
            header: CheckpointHeader {
                config: self.config.clone(),
                stage: self.stage,
                iteration: self.iteration,
                rng: RngState {
                    seed,
                    stream: self.rng.get_stream(),
                    word_pos: self.rng.get_word_pos().to_string(),
                },
                adam_step: self.optimizer.step,
                elapsed: self.elapsed(),
            },
            weights,
            adam_m: moments(&self.optimizer.m)?,
            adam_v: moments(&self.optimizer.v)?,
        })
    }

    /// Rebuild a trainer from a checkpoint; continuing it is bit-identical
    /// to never having stopped.
    pub fn from_checkpoint(ckpt: &Checkpoint, scenes: Vec<LightField>) -> Result<Self> {
        let h = &ckpt.header;
        let dtype = ckpt.weights.first().map(|b| b.dtype).unwrap_or(DType::F32);
        let mut t = Self::with_dtype(h.config.clone(), scenes, dtype)?;
        load_weights(&t.model, &ckpt.weights)?;
        t.stage = h.stage;
        t.iteration = h.iteration;
        t.optimizer = Self::optimizer_for(&t.config, &t.model, h.stage)?;
        t.optimizer.step = h.adam_step;
        for (slot, blobs) in [(&mut t.optimizer.m, &ckpt.adam_m), (&mut t.optimizer.v, &ckpt.adam_v)] {
            if blobs.len() != slot.len() {
                return Err(Error::Checkpoint(format!(
                    "optimiser state has {} tensors, expected {}",
                    blobs.len(),
                    slot.len()
                )));
            }
            for (i, b) in blobs.iter().enumerate() {
                if b.name != t.optimizer.names[i] {
                    return Err(Error::Checkpoint(format!("unexpected optimiser entry {}", b.name)));
                }
                slot[i] = b.to_tensor()?;
            }
        }
        t.rng = restore_rng(&h.rng)?;
        t.elapsed_before = h.elapsed;
        t.started = Instant::now();
        Ok(t)
    }
}

fn restore_rng(state: &RngState) -> Result<ChaCha8Rng> {
    let bad = || Error::Checkpoint("malformed generator state".into());
    if state.seed.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&state.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos.parse::<u128>().map_err(|_| bad())?);
    Ok(rng)
}

fn load_weights(model: &LfDest, blobs: &[Blob]) -> Result<()> {
    if blobs.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, the model {}",
            blobs.len(),
            model.store.len()
        )));
    }
    for b in blobs {
        if model.store.get(&b.name).is_none() {
            return Err(Error::Checkpoint(format!("unknown parameter {}", b.name)));
        }
        model.store.set(&b.name, &b.to_tensor()?)?;
    }
    Ok(())
}

/// The model stored in a checkpoint, ready for inference.
pub fn load_model(ckpt: &Checkpoint) -> Result<LfDest> {
    let dtype = ckpt.weights.first().map(|b| b.dtype).unwrap_or(DType::F32);
    let model = LfDest::new(ckpt.header.config.model_config(), dtype, ckpt.header.config.seed)?;
    load_weights(&model, &ckpt.weights)?;
    Ok(model)
}

/// Train the estimator alone for `cfg.pretrain_iters` iterations.
pub fn pretrain_estimator(scenes: &[LightField], cfg: &TrainConfig) -> Result<Checkpoint> {
    let mut t = Trainer::new(cfg.clone(), scenes.to_vec())?;
    t.run_stage(Stage::Pretrain, None, |_| {})?;
    t.checkpoint()
}

/// Continue from `init` through the joint stage.
pub fn train_joint(scenes: &[LightField], init: &Checkpoint) -> Result<Checkpoint> {
    let mut t = Trainer::from_checkpoint(init, scenes.to_vec())?;
    if t.stage == Stage::Pretrain {
        return Err(Error::Checkpoint("checkpoint has not finished estimator pretraining".into()));
    }
    t.run_stage(Stage::Joint, None, |_| {})?;
    t.checkpoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            hr_patch: 40,
            hr_crop: 16,
            stride: 8,
            batch_size: 1,
            pretrain_iters: 3,
            total_iters: 3,
            angular: [3, 3],
            feature_channels: 4,
            n1: 1,
            num_rcab: 1,
            kernel_embed_dim: 4,
            reduction: 2,
            log_every: 1,
            deterministic: true,
            ..TrainConfig::desk()
        }
    }

    fn scenes() -> Vec<LightField> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        vec![LightField::from_shape_fn((3, 3), (48, 48), |_| rng.random()).unwrap()]
    }

    #[test]
    fn pretraining_touches_only_the_estimator() {
        let mut t = Trainer::new(tiny_config(), scenes()).unwrap();
        let before: Vec<(String, Vec<f64>)> = t
            .model
            .store
            .names()
            .map(|n| (n.clone(), t.model.store.values(n).unwrap()))
            .collect();
        t.run_stage(Stage::Pretrain, None, |_| {}).unwrap();
        assert_eq!(t.stage, Stage::Joint);
        let mut changed = 0;
        for (n, v) in before {
            let now = t.model.store.values(&n).unwrap();
            if is_estimator(&n) {
                changed += (now != v) as usize;
            } else {
                assert_eq!(now, v, "{n} moved during pretraining");
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn checkpoint_round_trip_through_a_trainer() {
        let mut t = Trainer::new(tiny_config(), scenes()).unwrap();
        t.step().unwrap();
        let bytes = t.checkpoint().unwrap().to_bytes().unwrap();
        let back = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), scenes()).unwrap();
        let mut again = back.checkpoint().unwrap();
        // Wall-clock time keeps running; everything else must be identical.
        again.header.elapsed = Checkpoint::from_bytes(&bytes).unwrap().header.elapsed;
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let mut a = Trainer::new(tiny_config(), scenes()).unwrap();
        while !a.is_done() {
            a.step().unwrap();
        }
        let mut b = Trainer::new(tiny_config(), scenes()).unwrap();
        for _ in 0..4 {
            b.step().unwrap();
        }
        let mut c = Trainer::from_checkpoint(&b.checkpoint().unwrap(), scenes()).unwrap();
        while !c.is_done() {
            c.step().unwrap();
        }
        for n in a.model.store.names() {
            assert_eq!(a.model.store.values(n).unwrap(), c.model.store.values(n).unwrap(), "{n}");
        }
    }

    #[test]
    fn log_has_the_documented_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny_config(), scenes()).unwrap();
        t.run(dir.path(), |_| {}).unwrap();
        let text = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert!(text.starts_with("iter,loss,loss_rec,loss_de,lr,seconds\n"), "{text}");
        assert_eq!(text.lines().count(), 1 + 6);
        let ckpt = Checkpoint::load(dir.path().join("final.ckpt")).unwrap();
        assert_eq!(ckpt.header.stage, Stage::Done);
        load_model(&ckpt).unwrap();
    }
}
