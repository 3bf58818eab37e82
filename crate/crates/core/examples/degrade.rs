// Blur, downsample and add noise to a light field, then write the
// low-resolution scene with its degradation record.
//
// cargo run --example degrade -- [OUT_DIR]

use std::path::{Path, PathBuf};

use lfdest::artifacts::write_degradation;
use lfdest::degradation::{degrade_raw, DegradationConfig};
use lfdest::eval::make_synthetic_scene;
use lfdest::lightfield::save_scene;
use lfdest::LightField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example(out: &Path) -> lfdest::Result<LightField> {
    let hr = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(5), (3, 3), (64, 64), 0.5)?.hr;
    let config = DegradationConfig::new(2.0, 15.0, 4, 42)?;
    let (raw, record) = degrade_raw(&hr, &config)?;
    let lr = LightField::from_clamped(raw)?;

    // The recorded noise is exactly what was added before clamping.
    let n = record.noise.len() as f64;
    let std = (record.noise.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    println!(
        "{:?} -> {:?}, sigma {}, noise std {:.4} (target {:.4})",
        hr.spatial_shape(),
        lr.spatial_shape(),
        config.sigma,
        std,
        config.noise_std()
    );

    save_scene(&lr, out)?;
    write_degradation(out, &record)?;
    println!("wrote {}", out.display());
    Ok(lr)
}

fn main() -> lfdest::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/degraded"));
    run_example(&out)?;
    Ok(())
}
