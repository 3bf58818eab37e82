//! Scene evaluation, the kernel × noise sweep and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim};
use crate::degradation::{degrade_lightfield, DegradationConfig};
use crate::error::{contract, Result};
use crate::lightfield::load_scene;
use crate::lightfield::LightField;
use crate::nn::restoration::LfDest;

/// A super-resolution method under evaluation.
pub trait SrMethod: Sync {
    fn name(&self) -> String;
    /// Upscale `lr` by `alpha`. `scene` and `config` identify the row, for
    /// methods that look results up rather than compute them.
    fn run(&self, lr: &LightField, alpha: usize, scene: &str, config: &DegradationConfig) -> Result<LightField>;
}

/// Clamped bicubic upsampling.
pub struct Bicubic;

impl SrMethod for Bicubic {
    fn name(&self) -> String {
        "bicubic".into()
    }
    fn run(&self, lr: &LightField, alpha: usize, _: &str, _: &DegradationConfig) -> Result<LightField> {
        lr.resize(alpha as f64)
    }
}

impl SrMethod for LfDest {
    fn name(&self) -> String {
        "lf-dest".into()
    }
    fn run(&self, lr: &LightField, alpha: usize, _: &str, _: &DegradationConfig) -> Result<LightField> {
        if alpha != self.alpha() {
            return Err(contract(format!("model upscales by {}, asked for {alpha}", self.alpha())));
        }
        self.infer(lr)
    }
}

/// Results produced elsewhere, laid out as
/// `root/<scene>/sigma_<σ>_noise_<n>/` scene directories.
pub struct ExternalDir {
    pub label: String,
    pub root: PathBuf,
}

impl ExternalDir {
    pub fn result_dir(&self, scene: &str, config: &DegradationConfig) -> PathBuf {
        self.root
            .join(scene)
            .join(format!("sigma_{}_noise_{}", config.sigma, config.noise_level))
    }
}

impl SrMethod for ExternalDir {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn run(&self, _: &LightField, _: usize, scene: &str, config: &DegradationConfig) -> Result<LightField> {
        load_scene(self.result_dir(scene, config))
    }
}

/// One evaluated (scene, degradation, method) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub scene: String,
    pub kernel_width: f64,
    pub noise_level: f64,
    pub method: String,
    /// Empty for failed rows.
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
}

impl MetricRow {
    pub fn failed(&self) -> bool {
        self.psnr_db.is_none()
    }
}

/// Mean metrics of one (dataset, kernel, noise, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub psnr_db: f64,
    pub ssim: f64,
    pub count: usize,
}

/// Key of an aggregate cell; floats are stored by bit pattern.
pub type CellKey = (String, u64, u64, String);

pub fn cell_key(dataset: &str, kernel: f64, noise: f64, method: &str) -> CellKey {
    (dataset.to_string(), kernel.to_bits(), noise.to_bits(), method.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Border pixels excluded from both metrics.
    pub crop: usize,
}

impl MetricReport {
    /// Means over successful rows; cells without any are omitted.
    pub fn aggregates(&self) -> BTreeMap<CellKey, Aggregate> {
        let mut acc: BTreeMap<CellKey, (f64, f64, usize)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| !r.failed()) {
            let e = acc
                .entry(cell_key(&r.dataset, r.kernel_width, r.noise_level, &r.method))
                .or_insert((0.0, 0.0, 0));
            e.0 += r.psnr_db.unwrap_or(0.0);
            e.1 += r.ssim.unwrap_or(0.0);
            e.2 += 1;
        }
        acc.into_iter()
            .map(|(k, (p, s, n))| {
                (
                    k,
                    Aggregate {
                        psnr_db: p / n as f64,
                        ssim: s / n as f64,
                        count: n,
                    },
                )
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, crop: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        Ok(Self { rows, crop })
    }

    /// One table per dataset: methods down the side, kernel-width blocks of
    /// noise-level columns across, `PSNR/SSIM` cells.
    pub fn to_markdown(&self) -> String {
        let aggs = self.aggregates();
        let mut datasets: Vec<&str> = Vec::new();
        let mut kernels: Vec<f64> = Vec::new();
        let mut noises: Vec<f64> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
            if !kernels.contains(&r.kernel_width) {
                kernels.push(r.kernel_width);
            }
            if !noises.contains(&r.noise_level) {
                noises.push(r.noise_level);
            }
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "PSNR (dB) / SSIM on RGB, averaged over all views; SSIM averaged over channels, then views; border crop {}.\n",
            self.crop
        );
        for ds in datasets {
            let _ = writeln!(out, "### {ds}\n");
            let mut header = String::from("| Method |");
            let mut rule = String::from("|---|");
            for k in &kernels {
                for n in &noises {
                    let _ = write!(header, " σ={k}, noise={n} |");
                    rule.push_str("---|");
                }
            }
            let _ = writeln!(out, "{header}\n{rule}");
            for m in &methods {
                let mut line = format!("| {m} |");
                let mut any = false;
                for k in &kernels {
                    for n in &noises {
                        match aggs.get(&cell_key(ds, *k, *n, m)) {
                            Some(a) => {
                                any = true;
                                let _ = write!(line, " {} |", format_cell(a.psnr_db, a.ssim));
                            }
                            None => line.push_str(" – |"),
                        }
                    }
                }
                if any {
                    let _ = writeln!(out, "{line}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `29.21/0.877`.
pub fn format_cell(psnr_db: f64, ssim: f64) -> String {
    format!("{psnr_db:.2}/{ssim:.3}")
}

/// Degrade `hr` under `config`, run `method`, and score it. Any failure of
/// the method, including a wrongly shaped result, yields a failed row.
pub fn evaluate_scene(
    dataset: &str,
    scene: &str,
    hr: &LightField,
    method: &dyn SrMethod,
    config: &DegradationConfig,
    crop: usize,
) -> Result<MetricRow> {
    let (lr, _) = degrade_lightfield(hr, config)?;
    let scored = method
        .run(&lr, config.alpha, scene, config)
        .and_then(|sr| Ok((psnr(&sr, hr, crop)?, ssim(&sr, hr, crop)?)));
    let (p, s) = match scored {
        Ok((p, s)) => (Some(p), Some(s)),
        Err(_) => (None, None),
    };
    Ok(MetricRow {
        dataset: dataset.to_string(),
        scene: scene.to_string(),
        kernel_width: config.sigma,
        noise_level: config.noise_level,
        method: method.name(),
        psnr_db: p,
        ssim: s,
    })
}

/// Grid of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub kernel_widths: Vec<f64>,
    pub noise_levels: Vec<f64>,
    pub methods: Vec<String>,
    pub seed: u64,
    pub alpha: usize,
    pub crop: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kernel_widths: vec![0.0, 1.5, 3.0, 4.5],
            noise_levels: vec![0.0, 15.0, 50.0],
            methods: vec!["bicubic".into(), "lf-dest".into()],
            seed: 0,
            alpha: 4,
            crop: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_widths.is_empty() || self.noise_levels.is_empty() || self.methods.is_empty() {
            return Err(contract("sweep grids must be non-empty"));
        }
        Ok(())
    }
}

/// A scene taking part in a sweep.
#[derive(Debug, Clone)]
pub struct NamedScene {
    pub dataset: String,
    pub name: String,
    pub hr: LightField,
}

/// Scenes under `root`: `root` itself when it holds a `meta.json`, else
/// each `root/<scene>/` and `root/<dataset>/<scene>/` that does. Scenes
/// found directly under `root` take the root's name as their dataset.
/// Sorted by dataset, then name.
pub fn collect_scenes(root: impl AsRef<Path>) -> Result<Vec<NamedScene>> {
    let root = root.as_ref();
    let label = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let is_scene = |p: &Path| p.join("meta.json").is_file();
    let subdirs = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        Ok(dirs)
    };
    let mut found = Vec::new();
    if is_scene(root) {
        found.push((label(root.parent().unwrap_or(root)), root.to_path_buf()));
    } else {
        for dir in subdirs(root)? {
            if is_scene(&dir) {
                found.push((label(root), dir));
            } else {
                for inner in subdirs(&dir)? {
                    if is_scene(&inner) {
                        found.push((label(&dir), inner));
                    }
                }
            }
        }
    }
    if found.is_empty() {
        return Err(crate::error::Error::Scene {
            path: root.to_path_buf(),
            reason: "no scene directories found".into(),
        });
    }
    let mut scenes = found
        .into_iter()
        .map(|(dataset, dir)| {
            Ok(NamedScene {
                dataset,
                name: label(&dir),
                hr: load_scene(&dir)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scenes.sort_by(|a, b| (&a.dataset, &a.name).cmp(&(&b.dataset, &b.name)));
    Ok(scenes)
}

/// Noise seed of one grid cell, independent of evaluation order.
pub fn row_seed(seed: u64, scene: usize, kernel: usize, noise: usize) -> u64 {
    // SplitMix64 over the packed indices.
    let mut z = seed
        ^ (scene as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (kernel as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (noise as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Evaluate every kernel × noise × method × scene combination. Rows come
/// out in that nesting order whether or not they are computed in parallel.
pub fn run_sweep(scenes: &[NamedScene], spec: &SweepSpec, methods: &[&dyn SrMethod], parallel: bool) -> Result<MetricReport> {
    spec.validate()?;
    if scenes.is_empty() {
        return Err(contract("no scenes to evaluate"));
    }
    if methods.is_empty() {
        return Err(contract("no methods to evaluate"));
    }
    let mut jobs = Vec::new();
    for (ki, &k) in spec.kernel_widths.iter().enumerate() {
        for (ni, &n) in spec.noise_levels.iter().enumerate() {
            for mi in 0..methods.len() {
                for si in 0..scenes.len() {
                    let cfg = DegradationConfig::new(k, n, spec.alpha, row_seed(spec.seed, si, ki, ni))?;
                    jobs.push((si, mi, cfg));
                }
            }
        }
    }
    let eval = |&(si, mi, cfg): &(usize, usize, DegradationConfig)| {
        let s = &scenes[si];
        evaluate_scene(&s.dataset, &s.name, &s.hr, methods[mi], &cfg, spec.crop)
    };
    let rows = if parallel {
        jobs.par_iter().map(eval).collect::<Result<Vec<_>>>()?
    } else {
        jobs.iter().map(eval).collect::<Result<Vec<_>>>()?
    };
    Ok(MetricReport { rows, crop: spec.crop })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;
    impl SrMethod for Identity {
        fn name(&self) -> String {
            "identity".into()
        }
        fn run(&self, lr: &LightField, _: usize, _: &str, _: &DegradationConfig) -> Result<LightField> {
            Ok(lr.clone())
        }
    }

    fn scene() -> LightField {
        LightField::from_shape_fn((1, 1), (24, 24), |(_, _, h, w, c)| {
            (((h * 7 + w * 3 + c) % 13) as f64 / 12.0).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn wrong_shape_becomes_a_failed_row() {
        let cfg = DegradationConfig::new(0.0, 0.0, 4, 0).unwrap();
        let row = evaluate_scene("d", "s", &scene(), &Identity, &cfg, 0).unwrap();
        assert!(row.failed());
    }

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(29.2149, 0.87712), "29.21/0.877");
    }

    #[test]
    fn markdown_layout() {
        let spec = SweepSpec {
            kernel_widths: vec![0.0, 1.5],
            noise_levels: vec![0.0],
            methods: vec!["bicubic".into()],
            ..Default::default()
        };
        let named = vec![NamedScene {
            dataset: "synthetic".into(),
            name: "a".into(),
            hr: scene(),
        }];
        let report = run_sweep(&named, &spec, &[&Bicubic, &Identity], false).unwrap();
        let md = report.to_markdown();
        assert!(md.contains("| Method | σ=0, noise=0 | σ=1.5, noise=0 |"), "{md}");
        assert!(md.contains("| bicubic |"));
        // Every identity row failed, so its line is omitted.
        assert!(!md.contains("| identity |"));
    }

    #[test]
    fn scene_tree_discovery() {
        let dir = tempfile::tempdir().unwrap();
        let lf = LightField::constant((1, 1), (4, 4), 0.5).unwrap();
        crate::lightfield::save_scene(&lf, dir.path().join("setA/one")).unwrap();
        crate::lightfield::save_scene(&lf, dir.path().join("setA/two")).unwrap();
        crate::lightfield::save_scene(&lf, dir.path().join("three")).unwrap();
        let found = collect_scenes(dir.path()).unwrap();
        let names: Vec<(&str, &str)> = found.iter().map(|s| (s.dataset.as_str(), s.name.as_str())).collect();
        let root = dir.path().file_name().unwrap().to_str().unwrap();
        let mut expected = vec![("setA", "one"), ("setA", "two"), (root, "three")];
        expected.sort();
        assert_eq!(names, expected);
        assert_eq!(collect_scenes(dir.path().join("three")).unwrap().len(), 1);
        assert!(collect_scenes(dir.path().join("setA/one/..").join("missing")).is_err());
    }
}
