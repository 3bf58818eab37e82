// The FFT deconvolution step on its own: with the true blur kernel, the
// latent image beats plain bicubic upsampling on a noiseless scene.
//
// cargo run --example latent_deconvolution

use lfdest::degradation::{degrade_lightfield, DegradationConfig, KERNEL_SIZE};
use lfdest::degradation::make_isotropic_gaussian_kernel;
use lfdest::eval::{make_synthetic_scene, psnr};
use lfdest::nn::restoration::fft_deconvolve_latent;
use lfdest::LightField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lfdest::Result<(f64, f64)> {
    let hr = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(9), (3, 3), (64, 64), 0.5)?.hr;
    let (lr, _) = degrade_lightfield(&hr, &DegradationConfig::new(2.0, 0.0, 4, 0)?)?;
    let kernel = make_isotropic_gaussian_kernel(2.0, KERNEL_SIZE)?;
    let kernels = vec![kernel.weights().to_owned(); lr.num_views()];

    let bicubic = lr.resize(4.0)?;
    println!("lambda      latent PSNR (bicubic {:.2} dB)", psnr(&bicubic, &hr, 0)?);
    let mut best = f64::NEG_INFINITY;
    for lambda in [1e-1, 1e-2, 1e-3, 1e-4] {
        let latent: LightField = fft_deconvolve_latent(&lr, &kernels, 4, lambda)?;
        let p = psnr(&latent, &hr, 0)?;
        best = best.max(p);
        println!("{lambda:<10.0e}  {p:.2} dB");
    }
    Ok((psnr(&bicubic, &hr, 0)?, best))
}

fn main() -> lfdest::Result<()> {
    run_example()?;
    Ok(())
}
