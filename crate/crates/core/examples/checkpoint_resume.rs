// Interrupt a small training run halfway, resume it from the checkpoint
// file and confirm the weights match an uninterrupted run bit for bit.
//
// cargo run --example checkpoint_resume

use std::path::{Path, PathBuf};

use lfdest::eval::make_synthetic_scene;
use lfdest::train::{Checkpoint, TrainConfig, Trainer};
use lfdest::LightField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig {
        hr_patch: 48,
        hr_crop: 24,
        pretrain_iters: 4,
        total_iters: 4,
        feature_channels: 4,
        n1: 1,
        kernel_embed_dim: 4,
        reduction: 2,
        log_every: 1,
        ..TrainConfig::desk()
    }
}

pub fn run_example(dir: &Path) -> lfdest::Result<bool> {
    let scenes: Vec<LightField> = (0..2)
        .map(|s| Ok(make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(s), (3, 3), (64, 64), 0.5)?.hr))
        .collect::<lfdest::Result<_>>()?;

    let mut straight = Trainer::new(small_config(), scenes.clone())?;
    while !straight.is_done() {
        straight.step()?;
    }

    let mut first = Trainer::new(small_config(), scenes.clone())?;
    for _ in 0..5 {
        first.step()?;
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join("halfway.ckpt");
    first.checkpoint()?.save(&path)?;
    drop(first);

    let mut resumed = Trainer::from_checkpoint(&Checkpoint::load(&path)?, scenes)?;
    println!("resumed at global iteration {} in stage {:?}", resumed.global_iteration(), resumed.stage);
    while !resumed.is_done() {
        let row = resumed.step()?;
        println!("iter {}  loss {:.5}", row.iter, row.loss);
    }

    let same = straight
        .model
        .store
        .names()
        .into_iter()
        .all(|n| straight.model.store.values(n).ok() == resumed.model.store.values(n).ok());
    println!("weights identical to the uninterrupted run: {same}");
    Ok(same)
}

fn main() -> lfdest::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/resume"));
    run_example(&dir)?;
    Ok(())
}
