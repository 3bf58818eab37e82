use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lfdest::artifacts;
use lfdest::degradation::{degrade_lightfield, DegradationConfig};
use lfdest::eval::{collect_scenes, psnr, run_sweep, ssim, Bicubic, ExternalDir, MetricReport, SrMethod, SweepSpec};
use lfdest::lightfield::{load_scene, save_scene};
use lfdest::nn::estimator::{KernelEstimate, NoiseMapEstimate};
use lfdest::nn::restoration::LfDest;
use lfdest::train::{load_model, Checkpoint, TrainConfig, Trainer};
use lfdest::LightField;

#[derive(Parser)]
#[command(name = "lfdest", version, about = "Blind light-field super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur, downsample and add noise to a scene.
    Degrade {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// Noise standard deviation on the 0-255 scale.
        #[arg(long)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        alpha: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-view kernel and noise estimates for a low-resolution scene.
    Estimate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve a low-resolution scene.
    Infer {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_latent: bool,
        #[arg(long)]
        dump_estimates: bool,
        /// Ground truth to show in the comparison panel.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Use kernels and noise maps from this directory instead of the
        /// built-in estimator.
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Train from scratch or resume.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat `key = value` file overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        deterministic: bool,
        /// Weight of the self-constraint loss in joint training.
        #[arg(long)]
        wde: Option<f64>,
    },
    /// Degrade a scene and score bicubic and the model on it.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        crop: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score methods over the kernel-width by noise-level grid.
    Sweep {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSON sweep specification; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        markdown: Option<PathBuf>,
        /// Extra method as `label=DIR` with precomputed results.
        #[arg(long = "external", value_parser = parse_external)]
        external: Vec<(String, PathBuf)>,
        #[arg(long)]
        serial: bool,
    },
    /// Render a sweep CSV as a markdown table.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        crop: usize,
    },
}

fn parse_external(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (label, dir) = s.split_once('=').ok_or("expected label=DIR")?;
    Ok((label.to_string(), PathBuf::from(dir)))
}

fn model_from(path: &Path) -> Result<LfDest> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(load_model(&ckpt)?)
}

fn degrade(scene: &Path, sigma: f64, noise: f64, alpha: usize, seed: u64, out: &Path) -> Result<()> {
    let hr = load_scene(scene)?;
    let (lr, record) = degrade_lightfield(&hr, &DegradationConfig::new(sigma, noise, alpha, seed)?)?;
    save_scene(&lr, out)?;
    artifacts::write_degradation(out, &record)?;
    println!("wrote {:?} views of {:?} to {}", lr.angular_shape(), lr.spatial_shape(), out.display());
    Ok(())
}

fn estimate(scene: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let model = model_from(checkpoint)?;
    let lr = load_scene(scene)?;
    let out_f = model.forward(&lr)?;
    artifacts::write_estimates(out, &out_f.kernels.to_arrays()?, &out_f.noise.to_array()?)?;
    println!("wrote estimates to {}", out.display());
    Ok(())
}

struct InferArgs<'a> {
    scene: &'a Path,
    checkpoint: &'a Path,
    out: &'a Path,
    dump_latent: bool,
    dump_estimates: bool,
    gt: Option<&'a Path>,
    estimates: Option<&'a Path>,
}

fn infer(a: InferArgs) -> Result<()> {
    let model = model_from(a.checkpoint)?;
    let lr = load_scene(a.scene)?;
    let dtype = model.store.dtype();
    let out = match a.estimates {
        Some(dir) => {
            let (k, n) = artifacts::read_estimates(dir, lr.angular_shape())?;
            model.forward_with(
                &lr,
                KernelEstimate::from_arrays(&k, lr.angular_shape(), dtype)?,
                NoiseMapEstimate::from_array(&n, dtype)?,
            )?
        }
        None => model.forward(&lr)?,
    };
    let sr = out.sr_lightfield()?;
    save_scene(&sr, a.out.join("sr"))?;
    if a.dump_latent {
        save_scene(&out.latent_lightfield()?, a.out.join("latent"))?;
    }
    if a.dump_estimates {
        artifacts::write_estimates(a.out.join("estimates"), &out.kernels.to_arrays()?, &out.noise.to_array()?)?;
    }
    let bicubic = lr.resize(model.alpha() as f64)?;
    let gt = a.gt.map(load_scene).transpose()?;
    let mut panel: Vec<&LightField> = vec![&bicubic, &sr];
    if let Some(gt) = &gt {
        panel.push(gt);
        println!(
            "bicubic {:.2} dB / {:.4}, model {:.2} dB / {:.4}",
            psnr(&bicubic, gt, 0)?,
            ssim(&bicubic, gt, 0)?,
            psnr(&sr, gt, 0)?,
            ssim(&sr, gt, 0)?
        );
    }
    artifacts::comparison_panel(&panel, 8)?.save(a.out.join("comparison.png"))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

struct TrainArgs<'a> {
    data: &'a Path,
    config: Option<&'a Path>,
    out: &'a Path,
    preset: &'a str,
    resume: Option<&'a Path>,
    deterministic: bool,
    wde: Option<f64>,
}

fn train(a: TrainArgs) -> Result<()> {
    let scenes: Vec<LightField> = collect_scenes(a.data)?.into_iter().map(|s| s.hr).collect();
    println!("{} training scenes", scenes.len());
    let mut trainer = match a.resume {
        Some(path) => {
            if a.config.is_some() || a.wde.is_some() {
                bail!("--config and --wde cannot change a resumed run");
            }
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(path)?, scenes)?;
            t.config.deterministic |= a.deterministic;
            t
        }
        None => {
            let mut cfg = TrainConfig::preset(a.preset)?;
            if let Some(path) = a.config {
                cfg = cfg.with_overrides(&fs::read_to_string(path)?)?;
            }
            cfg.deterministic |= a.deterministic;
            if let Some(w) = a.wde {
                cfg.w_de = w;
            }
            Trainer::new(cfg, scenes)?
        }
    };
    fs::create_dir_all(a.out)?;
    fs::write(a.out.join("config.txt"), trainer.config.to_text())?;
    trainer.run(a.out, |r| {
        println!(
            "iter {:>7}  loss {:.5}  rec {:.5}  de {:.5}  lr {:.2e}  {:.0}s",
            r.iter, r.loss, r.loss_rec, r.loss_de, r.lr, r.seconds
        )
    })?;
    println!("wrote {}", a.out.join("final.ckpt").display());
    Ok(())
}

fn eval(scene: &Path, checkpoint: Option<&Path>, sigma: f64, noise: f64, crop: usize, seed: u64) -> Result<()> {
    let hr = load_scene(scene)?;
    let model = checkpoint.map(model_from).transpose()?;
    let alpha = model.as_ref().map(|m| m.alpha()).unwrap_or(4);
    let cfg = DegradationConfig::new(sigma, noise, alpha, seed)?;
    let (lr, _) = degrade_lightfield(&hr, &cfg)?;
    let mut methods: Vec<&dyn SrMethod> = vec![&Bicubic];
    if let Some(m) = &model {
        methods.push(m);
    }
    println!("sigma {sigma}, noise {noise}, crop {crop}");
    for m in methods {
        let sr = m.run(&lr, alpha, "", &cfg)?;
        println!("{:>10}  {:.2} dB  SSIM {:.4}", m.name(), psnr(&sr, &hr, crop)?, ssim(&sr, &hr, crop)?);
    }
    Ok(())
}

struct SweepArgs<'a> {
    scenes: &'a Path,
    checkpoint: Option<&'a Path>,
    spec: Option<&'a Path>,
    out: &'a Path,
    markdown: Option<&'a Path>,
    external: &'a [(String, PathBuf)],
    serial: bool,
}

fn sweep(a: SweepArgs) -> Result<()> {
    let spec: SweepSpec = match a.spec {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => SweepSpec::default(),
    };
    let scenes = collect_scenes(a.scenes)?;
    let model = a.checkpoint.map(model_from).transpose()?;
    let externals: Vec<ExternalDir> = a
        .external
        .iter()
        .map(|(label, root)| ExternalDir {
            label: label.clone(),
            root: root.clone(),
        })
        .collect();
    let mut methods: Vec<&dyn SrMethod> = Vec::new();
    for name in &spec.methods {
        match name.as_str() {
            "bicubic" => methods.push(&Bicubic),
            "lf-dest" => match &model {
                Some(m) => methods.push(m),
                None => eprintln!("no --checkpoint given, skipping lf-dest"),
            },
            other => match externals.iter().find(|e| e.label == other) {
                Some(e) => methods.push(e),
                None => bail!("unknown method `{other}`; pass --external {other}=DIR"),
            },
        }
    }
    for e in &externals {
        if !spec.methods.contains(&e.label) {
            methods.push(e);
        }
    }
    let report = run_sweep(&scenes, &spec, &methods, !a.serial)?;
    report.write_csv(a.out)?;
    let failed = report.rows.iter().filter(|r| r.failed()).count();
    println!("{} rows ({failed} failed) written to {}", report.rows.len(), a.out.display());
    let md = report.to_markdown();
    match a.markdown {
        Some(p) => fs::write(p, md)?,
        None => print!("{md}"),
    }
    Ok(())
}

fn report(csv: &Path, out: Option<&Path>, crop: usize) -> Result<()> {
    let md = MetricReport::read_csv(csv, crop)?.to_markdown();
    match out {
        Some(p) => fs::write(p, md)?,
        None => print!("{md}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Degrade { scene, sigma, noise, alpha, seed, out } => degrade(&scene, sigma, noise, alpha, seed, &out),
        Command::Estimate { scene, checkpoint, out } => estimate(&scene, &checkpoint, &out),
        Command::Infer { scene, checkpoint, out, dump_latent, dump_estimates, gt, estimates } => infer(InferArgs {
            scene: &scene,
            checkpoint: &checkpoint,
            out: &out,
            dump_latent,
            dump_estimates,
            gt: gt.as_deref(),
            estimates: estimates.as_deref(),
        }),
        Command::Train { data, config, out, preset, resume, deterministic, wde } => train(TrainArgs {
            data: &data,
            config: config.as_deref(),
            out: &out,
            preset: &preset,
            resume: resume.as_deref(),
            deterministic,
            wde,
        }),
        Command::Eval { scene, checkpoint, sigma, noise, crop, seed } => {
            eval(&scene, checkpoint.as_deref(), sigma, noise, crop, seed)
        }
        Command::Sweep { scenes, checkpoint, spec, out, markdown, external, serial } => sweep(SweepArgs {
            scenes: &scenes,
            checkpoint: checkpoint.as_deref(),
            spec: spec.as_deref(),
            out: &out,
            markdown: markdown.as_deref(),
            external: &external,
            serial,
        }),
        Command::Report { csv, out, crop } => report(&csv, out.as_deref(), crop),
    }
}
