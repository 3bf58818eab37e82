// Overfit the desk-sized model on one synthetic scene at a fixed
// degradation (σ = 1.5, noise 15) and compare it with bicubic upsampling.
//
// cargo run --release --example train_desk -- [JOINT_ITERS] [OUT_DIR]

use std::path::{Path, PathBuf};
use std::time::Instant;

use lfdest::degradation::{degrade_lightfield, DegradationConfig};
use lfdest::eval::{make_synthetic_scene, psnr, ssim};
use lfdest::nn::lightfield_to_tensor;
use lfdest::train::{degrade_patch, degradation_loss, LogRow, Stage, TrainConfig, Trainer};
use lfdest::LightField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DeskReport {
    pub seconds: f64,
    /// Self-constraint loss on a fixed patch: untrained, after the
    /// estimator stage, after the joint stage.
    pub de: [f64; 3],
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
    pub model_psnr: f64,
    pub model_ssim: f64,
}

fn probe_de(trainer: &Trainer, hr: &LightField, lr: &LightField) -> lfdest::Result<f64> {
    let model = &trainer.model;
    let lr_t = lightfield_to_tensor(lr, model.store.dtype(), model.store.device())?;
    let (k, n) = model.estimator.forward(&lr_t, lr.angular_shape())?;
    let de = degradation_loss(hr, &lr_t, &k, &n, trainer.config.alpha)?;
    Ok(de.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

pub fn desk_config(joint: u64) -> TrainConfig {
    TrainConfig {
        sigma_range: [1.5, 1.5],
        noise_range: [15.0, 15.0],
        total_iters: joint,
        ..TrainConfig::desk()
    }
}

pub fn run_example(joint: u64, out: Option<&Path>) -> lfdest::Result<DeskReport> {
    let scene = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(7), (3, 3), (128, 128), 0.5)?.hr;
    let cfg = desk_config(joint);
    let degradation = DegradationConfig::new(1.5, 15.0, cfg.alpha, 11)?;
    let window = scene.center_crop((cfg.hr_patch, cfg.hr_patch))?;
    let (probe_hr, probe_lr, _) = degrade_patch(&window, &degradation, cfg.hr_crop)?;

    let start = Instant::now();
    let mut trainer = Trainer::new(cfg.clone(), vec![scene.clone()])?;
    let de0 = probe_de(&trainer, &probe_hr, &probe_lr)?;
    let print = |r: &LogRow| {
        if r.iter % 50 == 0 {
            println!("iter {:5}  loss {:.4}  rec {:.4}  de {:.4}  {:.0}s", r.iter, r.loss, r.loss_rec, r.loss_de, r.seconds);
        }
    };
    trainer.run_stage(Stage::Pretrain, None, print)?;
    let de1 = probe_de(&trainer, &probe_hr, &probe_lr)?;
    trainer.run_stage(Stage::Joint, None, print)?;
    let de2 = probe_de(&trainer, &probe_hr, &probe_lr)?;
    let seconds = start.elapsed().as_secs_f64();

    let (lr, _) = degrade_lightfield(&scene, &degradation)?;
    let sr = trainer.model.infer(&lr)?;
    let bicubic = lr.resize(cfg.alpha as f64)?;
    let report = DeskReport {
        seconds,
        de: [de0, de1, de2],
        bicubic_psnr: psnr(&bicubic, &scene, 0)?,
        bicubic_ssim: ssim(&bicubic, &scene, 0)?,
        model_psnr: psnr(&sr, &scene, 0)?,
        model_ssim: ssim(&sr, &scene, 0)?,
    };
    println!("trained for {seconds:.0}s");
    println!(
        "self-constraint loss {de0:.4} -> {de1:.4} after pretraining -> {de2:.4} ({:.0}% drop)",
        100.0 * (1.0 - de2 / de0)
    );
    println!(
        "bicubic {:.2} dB / {:.4}   model {:.2} dB / {:.4}",
        report.bicubic_psnr, report.bicubic_ssim, report.model_psnr, report.model_ssim
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        trainer.checkpoint()?.save(dir.join("final.ckpt"))?;
        trainer.write_log(&dir.join("train_log.csv"))?;
        println!("wrote {}", dir.display());
    }
    Ok(report)
}

fn main() -> lfdest::Result<()> {
    let mut args = std::env::args().skip(1);
    let joint: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let out = args.next().map(PathBuf::from);
    run_example(joint, out.as_deref())?;
    Ok(())
}
