//! PSNR and SSIM over RGB light fields.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{contract, shape, Result};
use crate::lightfield::LightField;

/// Returned for identical inputs instead of infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &LightField, b: &LightField, crop: usize) -> Result<(usize, usize)> {
    if a.data().dim() != b.data().dim() {
        return Err(contract(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        )));
    }
    let (h, w) = a.spatial_shape();
    if 2 * crop >= h.min(w) {
        return Err(shape(format!("crop {crop} leaves nothing of a {h}x{w} view")));
    }
    Ok((h - 2 * crop, w - 2 * crop))
}

/// `10·log10(1 / MSE)` over all views, pixels and channels after removing
/// `crop` border pixels; [`PSNR_CAP_DB`] when the inputs agree.
pub fn psnr(a: &LightField, b: &LightField, crop: usize) -> Result<f64> {
    let (h, w) = check_pair(a, b, crop)?;
    let da = a.data();
    let db = b.data();
    let region = s![.., .., crop..crop + h, crop..crop + w, ..];
    let va = da.slice(region);
    let vb = db.slice(region);
    let mut sum = 0.0;
    ndarray::Zip::from(&va).and(&vb).for_each(|x, y| sum += (x - y) * (x - y));
    let mse = sum / va.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalised 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(img: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let k = g.len();
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            tmp[[y, x]] = (0..k).map(|j| g[j] * img[[y, x + j]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..k).map(|i| g[i] * tmp[[y + i, x]]).sum();
        }
    }
    out
}

/// Mean SSIM of one single-channel plane pair.
pub fn ssim_plane(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let g = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let a = a.to_owned();
    let b = b.to_owned();
    let mu_a = filter_valid(&a, &g);
    let mu_b = filter_valid(&b, &g);
    let aa = filter_valid(&(&a * &a), &g);
    let bb = filter_valid(&(&b * &b), &g);
    let ab = filter_valid(&(&a * &b), &g);
    let mut total = 0.0;
    for ((((&ma, &mb), &saa), &sbb), &sab) in mu_a.iter().zip(&mu_b).zip(&aa).zip(&bb).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Single-scale SSIM per view and channel (11×11 Gaussian window,
/// σ = 1.5, dynamic range 1), averaged over channels, then over views.
pub fn ssim(a: &LightField, b: &LightField, crop: usize) -> Result<f64> {
    let (h, w) = check_pair(a, b, crop)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(contract(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (nu, nv) = a.angular_shape();
    let mut views = 0.0;
    for u in 0..nu {
        for v in 0..nv {
            let va = a.view((u, v).into())?;
            let vb = b.view((u, v).into())?;
            let mut chans = 0.0;
            for c in 0..3 {
                let pa = va.slice(s![crop..crop + h, crop..crop + w, c]);
                let pb = vb.slice(s![crop..crop + h, crop..crop + w, c]);
                chans += ssim_plane(pa, pb);
            }
            views += chans / 3.0;
        }
    }
    Ok(views / (nu * nv) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_fields_hit_the_caps() {
        let a = LightField::from_shape_fn((2, 2), (12, 12), |(u, v, h, w, c)| {
            ((u + v * 3 + h * 5 + w * 7 + c) % 11) as f64 / 10.0
        })
        .unwrap();
        assert_eq!(psnr(&a, &a, 0).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&a, &a, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_closed_form() {
        let a = LightField::constant((1, 1), (16, 16), 0.2).unwrap();
        let b = LightField::constant((1, 1), (16, 16), 0.2 + 10.0 / 255.0).unwrap();
        let p = psnr(&a, &b, 0).unwrap();
        assert!((p - 20.0 * (255.0f64 / 10.0).log10()).abs() < 1e-9);
        assert_eq!(p, psnr(&b, &a, 0).unwrap());
    }

    #[test]
    fn guards() {
        let a = LightField::constant((1, 1), (10, 10), 0.2).unwrap();
        let b = LightField::constant((1, 1), (10, 12), 0.2).unwrap();
        assert!(psnr(&a, &b, 0).is_err());
        assert!(psnr(&a, &a, 5).is_err());
        assert!(ssim(&a, &a, 0).is_err());
    }

    #[test]
    fn window_is_normalised_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(g[i], g[SSIM_WINDOW - 1 - i]);
        }
    }
}
