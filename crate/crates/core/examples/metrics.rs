// PSNR and SSIM on RGB light fields: identical inputs, a uniform offset,
// and blur of increasing strength.
//
// cargo run --example metrics

use lfdest::degradation::{degrade_lightfield, DegradationConfig};
use lfdest::eval::{make_synthetic_scene, psnr, ssim, PSNR_CAP_DB};
use lfdest::LightField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lfdest::Result<Vec<f64>> {
    let a = LightField::constant((3, 3), (32, 32), 0.4)?;
    let b = LightField::constant((3, 3), (32, 32), 0.4 + 10.0 / 255.0)?;
    println!("identical: {} dB (cap {PSNR_CAP_DB})", psnr(&a, &a, 0)?);
    println!("offset of 10/255: {:.4} dB", psnr(&a, &b, 0)?);

    let hr = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(0), (3, 3), (64, 64), 0.5)?.hr;
    let mut scores = Vec::new();
    for sigma in [0.0, 1.5, 3.0, 4.5] {
        let (lr, _) = degrade_lightfield(&hr, &DegradationConfig::new(sigma, 0.0, 4, 0)?)?;
        let up = lr.resize(4.0)?;
        let p = psnr(&up, &hr, 0)?;
        println!("sigma {sigma}: bicubic {p:.2} dB, SSIM {:.4}", ssim(&up, &hr, 0)?);
        scores.push(p);
    }
    Ok(scores)
}

fn main() -> lfdest::Result<()> {
    run_example()?;
    Ok(())
}
