//! Procedural light fields with known disparity, for dataset-free tests.

use ndarray::Array3;
use rand::Rng;

use crate::error::{contract, Result};
use crate::lightfield::resample::sample_bicubic;
use crate::lightfield::{Image, LightField, CHANNELS};

/// A generated scene and the disparity it was built with.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub hr: LightField,
    /// Pixel shift between horizontally (and vertically) adjacent views.
    pub disparity: f64,
}

/// A seeded texture: a few oriented sinusoids plus hard-edged rectangles
/// and discs, in colour.
pub fn make_texture<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Image {
    let mut img = Array3::<f64>::zeros((h, w, CHANNELS));
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(0.05..0.45);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (theta, freq, phase, [rng.random_range(0.03..0.12), rng.random_range(0.03..0.12), rng.random_range(0.03..0.12)])
        })
        .collect();
    let base = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut v = base[c];
                for (theta, f, p, amp) in &waves {
                    let t = x as f64 * theta.cos() + y as f64 * theta.sin();
                    v += amp[c] * (t * f + p).sin();
                }
                img[[y, x, c]] = v;
            }
        }
    }
    let shapes = 6 + (h * w) / 600;
    for _ in 0..shapes {
        let colour = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let r = rng.random_range(2.0..(h.min(w) as f64 / 5.0).max(3.0));
        let disc = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disc {
                    dy * dy + dx * dx <= r * r
                } else {
                    dy.abs() <= r && dx.abs() <= 0.6 * r
                };
                if inside {
                    for c in 0..CHANNELS {
                        img[[y, x, c]] = colour[c];
                    }
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Render a `U×V×H×W` scene whose view `(u, v)` samples one texture at an
/// offset of `disparity · (u − uc, v − vc)`, so
/// `view(u, v)[y, x] = view(uc, vc)[y − d(u − uc), x − d(v − vc)]`.
pub fn make_synthetic_scene<R: Rng + ?Sized>(
    rng: &mut R,
    angular: (usize, usize),
    spatial: (usize, usize),
    disparity: f64,
) -> Result<SyntheticScene> {
    let (nu, nv) = angular;
    let (h, w) = spatial;
    if nu == 0 || nv == 0 || h == 0 || w == 0 {
        return Err(contract("scene extents must be positive"));
    }
    if !disparity.is_finite() {
        return Err(contract("disparity must be finite"));
    }
    let (uc, vc) = ((nu as f64 - 1.0) / 2.0, (nv as f64 - 1.0) / 2.0);
    let reach = disparity.abs() * uc.max(vc);
    if 2.0 * reach >= h.min(w) as f64 {
        return Err(contract(format!(
            "disparity {disparity} over a {nu}x{nv} grid shifts views by {reach:.1} px, too much for {h}x{w}"
        )));
    }
    // Margin for the shift plus the bicubic footprint.
    let m = reach.ceil() as usize + 2;
    let tex = make_texture(rng, h + 2 * m, w + 2 * m);
    let mut views = Vec::with_capacity(nu * nv);
    let mut px = [0.0; CHANNELS];
    for u in 0..nu {
        for v in 0..nv {
            let oy = m as f64 - disparity * (u as f64 - uc);
            let ox = m as f64 - disparity * (v as f64 - vc);
            let mut img = Image::zeros((h, w, CHANNELS));
            for y in 0..h {
                for x in 0..w {
                    sample_bicubic(tex.view(), y as f64 + oy, x as f64 + ox, &mut px);
                    for c in 0..CHANNELS {
                        img[[y, x, c]] = px[c].clamp(0.0, 1.0);
                    }
                }
            }
            views.push(img);
        }
    }
    Ok(SyntheticScene {
        hr: LightField::from_views(angular, &views)?,
        disparity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_disparity_gives_identical_views() {
        let s = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(0), (3, 3), (20, 24), 0.0).unwrap();
        let c = s.hr.center_view().unwrap();
        for view in s.hr.views() {
            assert_eq!(view, c.view());
        }
    }

    #[test]
    fn unit_disparity_is_an_exact_pixel_shift() {
        let s = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(1), (3, 3), (16, 16), 1.0).unwrap();
        let c = s.hr.get_view((1, 1)).unwrap();
        let right = s.hr.get_view((1, 2)).unwrap();
        assert_eq!(right.slice(s![.., 1.., ..]), c.slice(s![.., ..15, ..]));
        let down = s.hr.get_view((2, 1)).unwrap();
        assert_eq!(down.slice(s![1.., .., ..]), c.slice(s![..15, .., ..]));
    }

    #[test]
    fn excessive_disparity_is_rejected() {
        assert!(make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(0), (5, 5), (16, 16), 5.0).is_err());
    }

    #[test]
    fn seeded() {
        let a = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(3), (3, 3), (16, 16), 0.5).unwrap();
        let b = make_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(3), (3, 3), (16, 16), 0.5).unwrap();
        assert_eq!(a.hr, b.hr);
    }
}
