// Runs the fast examples end to end and checks what each one demonstrates.

#![allow(dead_code)]

mod synthetic_scene {
    include!("../examples/synthetic_scene.rs");
}
mod degrade {
    include!("../examples/degrade.rs");
}
mod latent_deconvolution {
    include!("../examples/latent_deconvolution.rs");
}
mod estimate {
    include!("../examples/estimate.rs");
}
mod infer {
    include!("../examples/infer.rs");
}
mod checkpoint_resume {
    include!("../examples/checkpoint_resume.rs");
}
mod metrics {
    include!("../examples/metrics.rs");
}
mod sweep {
    include!("../examples/sweep.rs");
}

use lfdest::artifacts::{kernel_file_name, read_degradation, read_estimates};
use lfdest::lightfield::load_scene;

#[test]
fn synthetic_scene_has_the_requested_disparity() {
    let dir = tempfile::tempdir().unwrap();
    let slope = synthetic_scene::run_example(dir.path()).unwrap();
    assert!((slope - 0.75).abs() <= 0.05, "EPI slope {slope}");
    assert!(dir.path().join("meta.json").exists());
}

#[test]
fn degrade_writes_a_loadable_scene_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let lr = degrade::run_example(dir.path()).unwrap();
    assert_eq!(lr.spatial_shape(), (16, 16));
    let loaded = load_scene(dir.path()).unwrap();
    assert_eq!(loaded.data().dim(), lr.data().dim());
    // 8-bit PNG round trip.
    let err = (&loaded.data() - &lr.data()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err <= 0.5 / 255.0 + 1e-12, "{err}");
    let dump = read_degradation(dir.path()).unwrap();
    assert_eq!(dump.config.sigma, 2.0);
}

#[test]
fn latent_beats_bicubic_with_the_true_kernel() {
    let (bicubic, latent) = latent_deconvolution::run_example().unwrap();
    assert!(latent > bicubic, "latent {latent} vs bicubic {bicubic}");
}

#[test]
fn estimate_writes_simplex_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let sums = estimate::run_example(None, dir.path()).unwrap();
    assert_eq!(sums.len(), 9);
    assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-5));
    assert!(dir.path().join(kernel_file_name(1, 1)).exists());
    let (k, n) = read_estimates(dir.path(), (3, 3)).unwrap();
    assert_eq!(k.len(), 9);
    assert_eq!(n.dim(), (3, 3, 16, 16, 3));
}

#[test]
fn untrained_inference_reproduces_bicubic() {
    let dir = tempfile::tempdir().unwrap();
    let (bicubic, model) = infer::run_example(None, dir.path()).unwrap();
    assert!((bicubic - model).abs() < 1e-3, "bicubic {bicubic} vs model {model}");
    assert!(dir.path().join("comparison.png").exists());
    assert!(dir.path().join("sr").join("meta.json").exists());
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    assert!(checkpoint_resume::run_example(dir.path()).unwrap());
}

#[test]
fn bicubic_quality_falls_with_blur() {
    let scores = metrics::run_example().unwrap();
    assert!(scores.windows(2).all(|w| w[1] <= w[0]), "{scores:?}");
}

#[test]
fn sweep_fills_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let report = sweep::run_example(None, dir.path(), 32).unwrap();
    // 2 scenes × 4 kernels × 3 noise levels × 2 methods.
    assert_eq!(report.rows.len(), 48);
    assert!(dir.path().join("report.csv").exists());
    assert!(std::fs::read_to_string(dir.path().join("report.md")).unwrap().contains('|'));
}
