// Run the degradation estimator on a low-resolution scene and write the
// per-view kernels, heat maps and noise maps. The same files can be fed
// back in place of the estimator, shown here with the true kernel.
//
// cargo run --example estimate -- [CHECKPOINT] [OUT_DIR]

use std::path::{Path, PathBuf};

use candle_core::DType;
use lfdest::artifacts::{read_estimates, write_estimates};
use lfdest::degradation::{degrade_lightfield, DegradationConfig};
use lfdest::eval::{make_synthetic_scene, psnr};
use lfdest::nn::estimator::{KernelEstimate, NoiseMapEstimate};
use lfdest::nn::restoration::LfDest;
use lfdest::train::{load_model, Checkpoint, TrainConfig};
use ndarray::Array5;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example(checkpoint: Option<&Path>, out: &Path) -> lfdest::Result<Vec<f64>> {
    let model = match checkpoint {
        Some(p) => load_model(&Checkpoint::load(p)?)?,
        None => LfDest::new(TrainConfig::desk().model_config(), DType::F32, 0)?,
    };
    let hr = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(1), model.config.angular, (64, 64), 0.5)?.hr;
    let (lr, record) = degrade_lightfield(&hr, &DegradationConfig::new(1.5, 15.0, model.alpha(), 4)?)?;

    let (kernels, noise) = model.estimator.run(&model.store, &lr)?;
    let kernels = kernels.to_arrays()?;
    let sums: Vec<f64> = kernels.iter().map(|k| k.sum()).collect();
    for (i, k) in kernels.iter().enumerate() {
        let c = k.dim().0 / 2;
        println!("view {i}: sum {:.6}, centre tap {:.4}, peak {:.4}", sums[i], k[[c, c]], k.fold(0.0f64, |a, &b| a.max(b)));
    }
    write_estimates(out, &kernels, &noise.to_array()?)?;
    println!("wrote {}", out.display());

    // Ground-truth estimates through the external-estimate path.
    let truth_dir = out.join("truth");
    let true_kernels: Vec<_> = record.kernels.iter().map(|k| k.weights().to_owned()).collect();
    let true_noise: Array5<f64> = record.noise.mapv(|x| -x);
    write_estimates(&truth_dir, &true_kernels, &true_noise)?;
    let (k, n) = read_estimates(&truth_dir, lr.angular_shape())?;
    let dtype = model.store.dtype();
    let sr = model
        .forward_with(&lr, KernelEstimate::from_arrays(&k, lr.angular_shape(), dtype)?, NoiseMapEstimate::from_array(&n, dtype)?)?
        .sr_lightfield()?;
    println!("with true degradation supplied: {:.2} dB", psnr(&sr, &hr, 0)?);
    Ok(sums)
}

fn main() -> lfdest::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/estimates"));
    run_example(ckpt.as_deref(), &out)?;
    Ok(())
}
