// Super-resolve a degraded scene and write the result with a comparison
// panel (bicubic | model | ground truth, EPIs underneath). Without a
// checkpoint the freshly initialised model reproduces bicubic exactly.
//
// cargo run --example infer -- [CHECKPOINT] [OUT_DIR]

use std::path::{Path, PathBuf};

use candle_core::DType;
use lfdest::artifacts::comparison_panel;
use lfdest::degradation::{degrade_lightfield, DegradationConfig};
use lfdest::eval::{make_synthetic_scene, psnr, ssim};
use lfdest::lightfield::save_scene;
use lfdest::nn::restoration::LfDest;
use lfdest::train::{load_model, Checkpoint, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example(checkpoint: Option<&Path>, out: &Path) -> lfdest::Result<(f64, f64)> {
    let model = match checkpoint {
        Some(p) => load_model(&Checkpoint::load(p)?)?,
        None => LfDest::new(TrainConfig::desk().model_config(), DType::F32, 0)?,
    };
    let hr = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(2), model.config.angular, (96, 96), 0.5)?.hr;
    let (lr, _) = degrade_lightfield(&hr, &DegradationConfig::new(1.5, 15.0, model.alpha(), 8)?)?;

    let output = model.forward(&lr)?;
    let sr = output.sr_lightfield()?;
    let bicubic = lr.resize(model.alpha() as f64)?;
    let scores = (psnr(&bicubic, &hr, 0)?, psnr(&sr, &hr, 0)?);
    println!(
        "bicubic {:.2} dB / {:.4}, model {:.2} dB / {:.4}",
        scores.0,
        ssim(&bicubic, &hr, 0)?,
        scores.1,
        ssim(&sr, &hr, 0)?
    );

    save_scene(&sr, out.join("sr"))?;
    save_scene(&output.latent_lightfield()?, out.join("latent"))?;
    comparison_panel(&[&bicubic, &sr, &hr], 8)?.save(out.join("comparison.png"))?;
    println!("wrote {}", out.display());
    Ok(scores)
}

fn main() -> lfdest::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/infer"));
    run_example(ckpt.as_deref(), &out)?;
    Ok(())
}
