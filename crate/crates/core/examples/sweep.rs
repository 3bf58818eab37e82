// Score bicubic and the model over the kernel-width × noise-level grid on
// synthetic scenes and print the markdown table.
//
// cargo run --release --example sweep -- [CHECKPOINT] [OUT_DIR]

use std::path::{Path, PathBuf};

use candle_core::DType;
use lfdest::eval::{make_synthetic_scene, run_sweep, Bicubic, MetricReport, NamedScene, SrMethod, SweepSpec};
use lfdest::nn::restoration::LfDest;
use lfdest::train::{load_model, Checkpoint, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example(checkpoint: Option<&Path>, out: &Path, size: usize) -> lfdest::Result<MetricReport> {
    let model = match checkpoint {
        Some(p) => load_model(&Checkpoint::load(p)?)?,
        None => LfDest::new(TrainConfig::desk().model_config(), DType::F32, 0)?,
    };
    let scenes = (0..2)
        .map(|i| {
            Ok(NamedScene {
                dataset: "synthetic".into(),
                name: format!("scene{i}"),
                hr: make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(100 + i), model.config.angular, (size, size), 0.5)?.hr,
            })
        })
        .collect::<lfdest::Result<Vec<_>>>()?;
    let spec = SweepSpec::default();
    let methods: [&dyn SrMethod; 2] = [&Bicubic, &model];
    let report = run_sweep(&scenes, &spec, &methods, true)?;
    std::fs::create_dir_all(out)?;
    report.write_csv(out.join("report.csv"))?;
    let md = report.to_markdown();
    std::fs::write(out.join("report.md"), &md)?;
    print!("{md}");
    Ok(report)
}

fn main() -> lfdest::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/sweep"));
    run_example(ckpt.as_deref(), &out, 64)?;
    Ok(())
}
