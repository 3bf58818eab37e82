//! Training pairs: patch cropping, on-the-fly degradation and augmentation.

use ndarray::{s, Array5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TrainConfig;
use crate::degradation::{
    make_isotropic_gaussian_kernel, sample_degradation_in, view_noise, BlurMode, DegradationConfig,
    DegradationRecord, KERNEL_SIZE,
};
use crate::error::{contract, Result};
use crate::lightfield::resample::resize_to_unclamped;
use crate::lightfield::{augment, Augmentation, LightField, CHANNELS};

/// One training pair with its ground-truth degradation.
#[derive(Debug, Clone)]
pub struct PatchSample {
    /// Central `hr_crop` region of the window.
    pub hr: LightField,
    pub lr: LightField,
    pub record: DegradationRecord,
    /// The full `hr_patch` window that was degraded.
    pub source: LightField,
    /// Augmentations applied after degradation, in order.
    pub augmentations: Vec<Augmentation>,
}

/// Blur the whole window, keep the central `crop` region, downsample, add
/// the seeded noise and clamp. The blur only reads pixels inside the window,
/// so no border handling reaches the kept region.
pub fn degrade_patch(source: &LightField, config: &DegradationConfig, crop: usize) -> Result<(LightField, LightField, DegradationRecord)> {
    config.validate()?;
    let (nu, nv) = source.angular_shape();
    let (h, w) = source.spatial_shape();
    let a = config.alpha;
    if crop > h || crop > w || (h - crop) % 2 != 0 || (w - crop) % 2 != 0 {
        return Err(contract(format!("cannot centre a {crop}x{crop} crop in a {h}x{w} window")));
    }
    if (h - crop) / 2 < KERNEL_SIZE / 2 || (w - crop) / 2 < KERNEL_SIZE / 2 {
        return Err(contract("window margin is narrower than the blur radius"));
    }
    if crop % a != 0 {
        return Err(contract(format!("crop {crop} is not divisible by alpha = {a}")));
    }
    let (top, left) = ((h - crop) / 2, (w - crop) / 2);
    let l = crop / a;
    let kernel = make_isotropic_gaussian_kernel(config.sigma, KERNEL_SIZE)?;
    let mut lr = Array5::zeros((nu, nv, l, l, CHANNELS));
    let mut noise = Array5::zeros((nu, nv, l, l, CHANNELS));
    for u in 0..nu {
        for v in 0..nv {
            let blurred = kernel.blur(source.view((u, v).into())?, BlurMode::Reflect)?;
            let kept = blurred.slice(s![top..top + crop, left..left + crop, ..]);
            let down = resize_to_unclamped(kept, l, l);
            let n = view_noise(config, u * nv + v, (l, l));
            lr.slice_mut(s![u, v, .., .., ..]).assign(&(&down + &n));
            noise.slice_mut(s![u, v, .., .., ..]).assign(&n);
        }
    }
    let record = DegradationRecord {
        kernels: vec![kernel; nu * nv],
        noise,
        config: *config,
        augmented: false,
    };
    Ok((source.center_crop((crop, crop))?, LightField::from_clamped(lr)?, record))
}

/// Crop a stride-aligned window, degrade it with a freshly sampled
/// configuration and optionally augment the pair.
pub fn sample_patch<R: Rng + ?Sized>(scene: &LightField, rng: &mut R, cfg: &TrainConfig) -> Result<PatchSample> {
    let (h, w) = scene.spatial_shape();
    let p = cfg.hr_patch;
    if h < p || w < p {
        return Err(contract(format!("scene {h}x{w} is smaller than the {p}x{p} patch")));
    }
    let top = rng.random_range(0..=(h - p) / cfg.stride) * cfg.stride;
    let left = rng.random_range(0..=(w - p) / cfg.stride) * cfg.stride;
    let source = scene.crop_patch(top, left, (p, p))?;
    let deg = sample_degradation_in(
        rng,
        (cfg.sigma_range[0], cfg.sigma_range[1]),
        (cfg.noise_range[0], cfg.noise_range[1]),
        cfg.alpha,
    );
    let (mut hr, mut lr, mut record) = degrade_patch(&source, &deg, cfg.hr_crop)?;
    let mut augmentations = Vec::new();
    if cfg.augment {
        let mut ops = Vec::new();
        for op in [Augmentation::HFlip, Augmentation::VFlip, Augmentation::Rot90] {
            if rng.random_bool(0.5) {
                ops.push(op);
            }
        }
        if rng.random_bool(0.5) {
            let mut perm = [0, 1, 2];
            perm.shuffle(rng);
            ops.push(Augmentation::ChannelShuffle(perm));
        }
        for op in ops {
            (hr, lr) = augment((&hr, &lr), op)?;
            augmentations.push(op);
        }
        record.augmented = !augmentations.is_empty();
    }
    Ok(PatchSample {
        hr,
        lr,
        record,
        source,
        augmentations,
    })
}

/// Re-run the recorded degradation on the stored window.
pub fn redegrade(sample: &PatchSample) -> Result<LightField> {
    let (_, mut lr, _) = degrade_patch(&sample.source, &sample.record.config, sample.hr.spatial_shape().0)?;
    for &op in &sample.augmentations {
        lr = op.apply(&lr)?;
    }
    Ok(lr)
}

/// Draw a batch. Each sample gets its own seed from `rng`, so serial and
/// parallel generation agree.
pub fn sample_batch(scenes: &[LightField], rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Result<Vec<PatchSample>> {
    if scenes.is_empty() {
        return Err(contract("no training scenes"));
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.batch_size)
        .map(|_| (rng.random_range(0..scenes.len()), rng.random()))
        .collect();
    let one = |&(scene, seed): &(usize, u64)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        sample_patch(&scenes[scene], &mut r, cfg)
    };
    if cfg.deterministic {
        jobs.iter().map(one).collect()
    } else {
        jobs.par_iter().map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(seed: u64) -> LightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LightField::from_shape_fn((3, 3), (48, 52), |_| rng.random()).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            hr_patch: 40,
            hr_crop: 16,
            stride: 4,
            angular: [3, 3],
            ..TrainConfig::paper()
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let s = scene(0);
        let a = sample_patch(&s, &mut ChaCha8Rng::seed_from_u64(5), &cfg()).unwrap();
        let b = sample_patch(&s, &mut ChaCha8Rng::seed_from_u64(5), &cfg()).unwrap();
        assert_eq!(a.hr.spatial_shape(), (16, 16));
        assert_eq!(a.lr.spatial_shape(), (4, 4));
        assert_eq!(a.hr, b.hr);
        assert_eq!(a.lr, b.lr);
    }

    #[test]
    fn redegrading_reproduces_lr() {
        let s = scene(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let p = sample_patch(&s, &mut rng, &cfg()).unwrap();
            assert_eq!(redegrade(&p).unwrap(), p.lr);
        }
    }

    #[test]
    fn clean_draw_is_plain_downsampling() {
        let c = TrainConfig {
            sigma_range: [0.0, 0.0],
            noise_range: [0.0, 0.0],
            augment: false,
            ..cfg()
        };
        let p = sample_patch(&scene(2), &mut ChaCha8Rng::seed_from_u64(1), &c).unwrap();
        assert_eq!(p.lr, p.hr.resize(0.25).unwrap());
    }

    #[test]
    fn too_small_scene_is_rejected() {
        let tiny = LightField::constant((3, 3), (20, 20), 0.5).unwrap();
        assert!(sample_patch(&tiny, &mut ChaCha8Rng::seed_from_u64(0), &cfg()).is_err());
    }

    #[test]
    fn serial_and_parallel_batches_agree() {
        let scenes = vec![scene(3), scene(4)];
        let mut c = cfg();
        c.batch_size = 4;
        c.deterministic = true;
        let a = sample_batch(&scenes, &mut ChaCha8Rng::seed_from_u64(2), &c).unwrap();
        c.deterministic = false;
        let b = sample_batch(&scenes, &mut ChaCha8Rng::seed_from_u64(2), &c).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.lr, y.lr);
        }
    }
}
