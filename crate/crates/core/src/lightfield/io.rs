//! Scene directories: `view_{u:02}_{v:02}.png` files plus `meta.json`.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Image, LightField, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub angular: [usize; 2],
    pub bit_depth: u8,
}

pub fn view_file_name(u: usize, v: usize) -> String {
    format!("view_{u:02}_{v:02}.png")
}

fn scene_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Scene {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Load a scene, requiring every view of the `U×V` grid to be present and
/// equally sized.
pub fn load_scene(dir: impl AsRef<Path>) -> Result<LightField> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: SceneMeta = serde_json::from_slice(
        &fs::read(&meta_path).map_err(|e| scene_err(dir, format!("meta.json: {e}")))?,
    )?;
    if meta.bit_depth != 8 {
        return Err(scene_err(dir, format!("unsupported bit depth {}", meta.bit_depth)));
    }
    let [nu, nv] = meta.angular;
    if nu == 0 || nv == 0 {
        return Err(scene_err(dir, "empty angular grid"));
    }
    let mut views = Vec::with_capacity(nu * nv);
    let mut size = None;
    for u in 0..nu {
        for v in 0..nv {
            let path = dir.join(view_file_name(u, v));
            if !path.is_file() {
                return Err(scene_err(dir, format!("missing view ({u}, {v})")));
            }
            let img = image::open(&path)?.to_rgb8();
            let dims = img.dimensions();
            if *size.get_or_insert(dims) != dims {
                return Err(scene_err(dir, format!("view ({u}, {v}) has a different size")));
            }
            views.push(Image::from_shape_fn(
                (dims.1 as usize, dims.0 as usize, CHANNELS),
                |(y, x, c)| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0,
            ));
        }
    }
    LightField::from_views((nu, nv), &views)
}

/// Quantise a view to 8-bit RGB.
pub fn to_rgb8(view: ndarray::ArrayView3<f64>) -> RgbImage {
    let (h, w, _) = view.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let q = |c: usize| (view[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    })
}

/// Write a scene directory, creating it if needed.
pub fn save_scene(lf: &LightField, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (nu, nv) = lf.angular_shape();
    for u in 0..nu {
        for v in 0..nv {
            to_rgb8(lf.view((u, v).into())?).save(dir.join(view_file_name(u, v)))?;
        }
    }
    let meta = SceneMeta {
        angular: [nu, nv],
        bit_depth: 8,
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}
