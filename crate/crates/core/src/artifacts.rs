//! Files written next to scenes: kernel CSVs, the flat noise-map binary,
//! kernel heat maps, degradation records and inspection panels.
//!
//! Noise maps are stored as the 8-byte magic `LFNOISE1`, five little-endian
//! `u32` extents `U V H W C`, then `U·V·H·W·C` little-endian `f32` values in
//! row-major order.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array5, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::degradation::{DegradationConfig, DegradationRecord};
use crate::error::{Error, Result};
use crate::lightfield::{to_rgb8, EpiOrientation, LightField};

pub const NOISE_MAGIC: &[u8; 8] = b"LFNOISE1";

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Scene {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn kernel_file_name(u: usize, v: usize) -> String {
    format!("kernel_est_{u}_{v}.csv")
}

pub fn heatmap_file_name(u: usize, v: usize) -> String {
    format!("kernel_est_{u}_{v}.png")
}

/// One row per kernel row, comma-separated, at full precision.
pub fn write_kernel_csv(kernel: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in kernel.rows() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a square kernel written by [`write_kernel_csv`] (or by hand).
pub fn read_kernel_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(path, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(bad(path, "kernel must be a non-empty square table"));
    }
    Ok(Array2::from_shape_fn((k, k), |(i, j)| rows[i][j]))
}

/// Per-view kernels in raster order from `kernel_est_{u}_{v}.csv` files.
pub fn read_kernel_dir(dir: impl AsRef<Path>, angular: (usize, usize)) -> Result<Vec<Array2<f64>>> {
    let dir = dir.as_ref();
    let mut out = Vec::with_capacity(angular.0 * angular.1);
    for u in 0..angular.0 {
        for v in 0..angular.1 {
            out.push(read_kernel_csv(dir.join(kernel_file_name(u, v)))?);
        }
    }
    Ok(out)
}

pub fn write_noise_bin(maps: &Array5<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(NOISE_MAGIC)?;
    let (nu, nv, h, ww, c) = maps.dim();
    for d in [nu, nv, h, ww, c] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in maps.iter() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_noise_bin(path: impl AsRef<Path>) -> Result<Array5<f64>> {
    let path = path.as_ref();
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NOISE_MAGIC {
        return Err(bad(path, "not a noise-map file"));
    }
    let mut dims = [0usize; 5];
    let mut word = [0u8; 4];
    for d in &mut dims {
        r.read_exact(&mut word)?;
        *d = u32::from_le_bytes(word) as usize;
    }
    let n: usize = dims.iter().product();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * n {
        return Err(bad(path, format!("expected {} values, found {} bytes", n, bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Array5::from_shape_vec((dims[0], dims[1], dims[2], dims[3], dims[4]), values)
        .map_err(|e| bad(path, e.to_string()))
}

/// Black → red → yellow → white.
fn hot(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([q(t), q(t - 1.0), q(t - 2.0)])
}

/// Kernel rendered with each tap as a `cell`×`cell` block, scaled to its
/// own maximum.
pub fn kernel_heatmap(kernel: ArrayView2<f64>, cell: u32) -> RgbImage {
    let (kh, kw) = kernel.dim();
    let peak = kernel.iter().cloned().fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    RgbImage::from_fn(kw as u32 * cell, kh as u32 * cell, |x, y| {
        hot(kernel[[(y / cell) as usize, (x / cell) as usize]] * scale)
    })
}

/// Write kernel CSVs, heat maps and `noise_est.bin` for one estimate.
pub fn write_estimates(dir: impl AsRef<Path>, kernels: &[Array2<f64>], noise: &Array5<f64>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (nu, nv, ..) = noise.dim();
    if kernels.len() != nu * nv {
        return Err(bad(dir, format!("{} kernels for a {nu}x{nv} grid", kernels.len())));
    }
    for u in 0..nu {
        for v in 0..nv {
            let k = &kernels[u * nv + v];
            write_kernel_csv(k.view(), dir.join(kernel_file_name(u, v)))?;
            kernel_heatmap(k.view(), 8).save(dir.join(heatmap_file_name(u, v)))?;
        }
    }
    write_noise_bin(noise, dir.join("noise_est.bin"))
}

/// Kernels and noise maps previously written by [`write_estimates`] or
/// supplied by another estimator in the same formats.
pub fn read_estimates(dir: impl AsRef<Path>, angular: (usize, usize)) -> Result<(Vec<Array2<f64>>, Array5<f64>)> {
    let dir = dir.as_ref();
    let kernels = read_kernel_dir(dir, angular)?;
    let noise = read_noise_bin(dir.join("noise_est.bin"))?;
    if (noise.dim().0, noise.dim().1) != angular {
        return Err(bad(dir, format!("noise maps cover {:?} views, expected {angular:?}", (noise.dim().0, noise.dim().1))));
    }
    Ok((kernels, noise))
}

/// Contents of `degradation.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegradationDump {
    pub config: DegradationConfig,
    pub kernel_size: usize,
    pub noise_std: f64,
}

/// `degradation.json` plus `kernel.csv` for a degraded scene.
pub fn write_degradation(dir: impl AsRef<Path>, record: &DegradationRecord) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let kernel = &record.kernels[0];
    let dump = DegradationDump {
        config: record.config,
        kernel_size: kernel.size(),
        noise_std: record.config.noise_std(),
    };
    fs::write(dir.join("degradation.json"), serde_json::to_vec_pretty(&dump)?)?;
    write_kernel_csv(kernel.weights(), dir.join("kernel.csv"))
}

pub fn read_degradation(dir: impl AsRef<Path>) -> Result<DegradationDump> {
    Ok(serde_json::from_slice(&fs::read(dir.as_ref().join("degradation.json"))?)?)
}

fn blit(canvas: &mut RgbImage, img: &RgbImage, x0: u32, y0: u32) {
    for (x, y, p) in img.enumerate_pixels() {
        canvas.put_pixel(x0 + x, y0 + y, *p);
    }
}

/// Central views side by side (`bicubic | SR | ground truth`) above the
/// horizontal EPIs through their middle rows, each angular row stretched to
/// `epi_row` pixels.
pub fn comparison_panel(fields: &[&LightField], epi_row: u32) -> Result<RgbImage> {
    const GAP: u32 = 4;
    let first = fields.first().ok_or_else(|| crate::error::contract("panel needs at least one field"))?;
    for f in fields {
        if f.data().dim() != first.data().dim() {
            return Err(crate::error::shape("panel fields differ in shape"));
        }
    }
    let (h, w) = first.spatial_shape();
    let (h, w) = (h as u32, w as u32);
    let c = first.center_index()?;
    let nv = first.angular_shape().1 as u32;
    let n = fields.len() as u32;
    let mut canvas = RgbImage::from_pixel(n * w + (n - 1) * GAP, h + GAP + nv * epi_row, Rgb([255, 255, 255]));
    for (i, f) in fields.iter().enumerate() {
        let x0 = i as u32 * (w + GAP);
        blit(&mut canvas, &to_rgb8(f.view(c)?), x0, 0);
        let epi = f.extract_epi(EpiOrientation::Horizontal, c.u, h as usize / 2)?;
        let strip = to_rgb8(epi.data.view());
        for y in 0..nv * epi_row {
            for x in 0..w {
                canvas.put_pixel(x0 + x, h + GAP + y, *strip.get_pixel(x, y / epi_row));
            }
        }
    }
    Ok(canvas)
}
