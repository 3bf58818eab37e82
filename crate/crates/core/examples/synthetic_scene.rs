// Render a procedural light field with a known disparity, save it as a
// scene directory and recover the disparity from a horizontal EPI.
//
// cargo run --example synthetic_scene -- [OUT_DIR]

use std::path::{Path, PathBuf};

use lfdest::eval::make_synthetic_scene;
use lfdest::lightfield::{save_scene, EpiOrientation};
use lfdest::LightField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shift (in pixels per view) that best aligns adjacent rows of the
/// horizontal EPI through the middle of the field, searched on a
/// 0.01 px grid with linear interpolation.
pub fn epi_slope(lf: &LightField, max_shift: f64) -> lfdest::Result<f64> {
    let (nu, _) = lf.angular_shape();
    let (h, w) = lf.spatial_shape();
    let epi = lf.extract_epi(EpiOrientation::Horizontal, nu / 2, h / 2)?.data;
    let (nv, _, _) = epi.dim();
    let margin = max_shift.ceil() as usize + 1;
    let sample = |row: usize, x: f64, c: usize| {
        let x0 = x.floor() as usize;
        let t = x - x0 as f64;
        epi[[row, x0, c]] * (1.0 - t) + epi[[row, x0 + 1, c]] * t
    };
    let mut best = (f64::INFINITY, 0.0);
    let steps = (2.0 * max_shift / 0.01).round() as i64;
    for i in 0..=steps {
        let d = -max_shift + i as f64 * 0.01;
        let mut err = 0.0;
        for v in 0..nv - 1 {
            for x in margin..w - margin - 1 {
                for c in 0..3 {
                    let diff = epi[[v + 1, x, c]] - sample(v, x as f64 - d, c);
                    err += diff * diff;
                }
            }
        }
        if err < best.0 {
            best = (err, d);
        }
    }
    Ok(best.1)
}

pub fn run_example(out: &Path) -> lfdest::Result<f64> {
    let disparity = 0.75;
    let scene = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(3), (5, 5), (64, 64), disparity)?;
    save_scene(&scene.hr, out)?;
    let slope = epi_slope(&scene.hr, 2.0)?;
    println!("rendered 5x5 views of 64x64 into {}", out.display());
    println!("disparity {disparity} px/view, EPI slope estimate {slope:.2}");
    Ok(slope)
}

fn main() -> lfdest::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/synthetic"));
    run_example(&out)?;
    Ok(())
}
