// Drives the `lfdest` binary through degrade, eval, infer, estimate, sweep
// and report on a small synthetic scene.

use std::path::Path;
use std::process::Command;

use lfdest::eval::make_synthetic_scene;
use lfdest::lightfield::{load_scene, save_scene};
use lfdest::train::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lfdest(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lfdest")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "lfdest {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let hr = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(11), (3, 3), (32, 32), 0.5).unwrap().hr;
    let scene = root.join("scenes").join("toy");
    save_scene(&hr, &scene).unwrap();

    let lr_dir = root.join("lr");
    lfdest(&["degrade", "--scene", s(&scene), "--sigma", "1.5", "--noise", "15", "--seed", "3", "--out", s(&lr_dir)]);
    assert_eq!(load_scene(&lr_dir).unwrap().spatial_shape(), (8, 8));
    assert!(lr_dir.join("degradation.json").exists());
    assert!(lr_dir.join("kernel.csv").exists());

    let scores = lfdest(&["eval", "--scene", s(&scene), "--sigma", "1.5", "--noise", "15"]);
    assert!(scores.contains("bicubic"), "{scores}");

    let cfg = TrainConfig {
        hr_patch: 32,
        hr_crop: 8,
        pretrain_iters: 1,
        total_iters: 1,
        feature_channels: 4,
        n1: 1,
        kernel_embed_dim: 4,
        reduction: 2,
        ..TrainConfig::desk()
    };
    let ckpt = root.join("toy.ckpt");
    Trainer::new(cfg, vec![hr.clone()]).unwrap().checkpoint().unwrap().save(&ckpt).unwrap();

    let est = root.join("est");
    lfdest(&["estimate", "--scene", s(&lr_dir), "--checkpoint", s(&ckpt), "--out", s(&est)]);
    assert!(est.join("kernel_est_0_0.csv").exists());
    assert!(est.join("noise_est.bin").exists());

    let sr = root.join("sr");
    lfdest(&[
        "infer", "--scene", s(&lr_dir), "--checkpoint", s(&ckpt), "--out", s(&sr),
        "--dump-latent", "--gt", s(&scene), "--estimates", s(&est),
    ]);
    assert_eq!(load_scene(sr.join("sr")).unwrap().spatial_shape(), (32, 32));
    assert!(sr.join("comparison.png").exists());

    let spec = root.join("spec.json");
    std::fs::write(&spec, r#"{"kernel_widths": [0.0, 2.0], "noise_levels": [0.0], "methods": ["bicubic"]}"#).unwrap();
    let csv = root.join("sweep.csv");
    let md = root.join("sweep.md");
    lfdest(&[
        "sweep", "--scenes", s(&root.join("scenes")), "--spec", s(&spec), "--out", s(&csv),
        "--markdown", s(&md), "--serial",
    ]);
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 3, "{rows}");

    let table = lfdest(&["report", "--csv", s(&csv)]);
    assert!(table.contains('|'), "{table}");
}
