//! The 4D light field container and geometry-preserving manipulations.
//!
//! A [`LightField`] stores `U×V` RGB sub-aperture views of `H×W` pixels as a
//! single `U×V×H×W×3` array with values in `[0, 1]`.

mod io;
pub mod resample;

use ndarray::{s, Array3, Array5, ArrayView3, ArrayView5, Axis};

use crate::error::{contract, shape, Error, Result};

pub use io::{load_scene, save_scene, to_rgb8, view_file_name, SceneMeta};
pub use resample::bicubic_resize;

/// An `H×W×3` image.
pub type Image = Array3<f64>;

/// Number of colour channels.
pub const CHANNELS: usize = 3;

/// Angular position of a sub-aperture view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViewIndex {
    pub u: usize,
    pub v: usize,
}

impl ViewIndex {
    pub const fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }
}

impl From<(usize, usize)> for ViewIndex {
    fn from((u, v): (usize, usize)) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    data: Array5<f64>,
}

impl LightField {
    /// Wrap a `U×V×H×W×3` array, checking shape, finiteness and range.
    pub fn new(data: Array5<f64>) -> Result<Self> {
        let (u, v, h, w, c) = data.dim();
        if u == 0 || v == 0 || h == 0 || w == 0 {
            return Err(shape(format!("empty light field {:?}", data.shape())));
        }
        if c != CHANNELS {
            return Err(shape(format!("expected 3 channels, got {c}")));
        }
        if let Some(bad) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(contract(format!(
                "light field value {bad} is not a finite number in [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Clamp `data` into `[0, 1]` (NaN becomes 0) and wrap it.
    pub fn from_clamped(mut data: Array5<f64>) -> Result<Self> {
        data.mapv_inplace(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) });
        Self::new(data)
    }

    pub fn constant(angular: (usize, usize), spatial: (usize, usize), value: f64) -> Result<Self> {
        Self::new(Array5::from_elem(
            (angular.0, angular.1, spatial.0, spatial.1, CHANNELS),
            value,
        ))
    }

    pub fn from_shape_fn<F>(angular: (usize, usize), spatial: (usize, usize), f: F) -> Result<Self>
    where
        F: FnMut((usize, usize, usize, usize, usize)) -> f64,
    {
        Self::new(Array5::from_shape_fn(
            (angular.0, angular.1, spatial.0, spatial.1, CHANNELS),
            f,
        ))
    }

    /// Assemble a field from row-major views (`views[u * V + v]`).
    pub fn from_views(angular: (usize, usize), views: &[Image]) -> Result<Self> {
        if views.len() != angular.0 * angular.1 || views.is_empty() {
            return Err(shape(format!(
                "{} views supplied for a {}x{} grid",
                views.len(),
                angular.0,
                angular.1
            )));
        }
        let (h, w, _) = views[0].dim();
        let mut data = Array5::zeros((angular.0, angular.1, h, w, CHANNELS));
        for (i, view) in views.iter().enumerate() {
            if view.dim() != (h, w, CHANNELS) {
                return Err(shape(format!(
                    "view {i} has shape {:?}, expected ({h}, {w}, 3)",
                    view.dim()
                )));
            }
            data.slice_mut(s![i / angular.1, i % angular.1, .., .., ..])
                .assign(view);
        }
        Self::new(data)
    }

    pub fn data(&self) -> ArrayView5<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array5<f64> {
        self.data
    }

    pub fn angular_shape(&self) -> (usize, usize) {
        (self.data.dim().0, self.data.dim().1)
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.data.dim().2, self.data.dim().3)
    }

    pub fn num_views(&self) -> usize {
        let (u, v) = self.angular_shape();
        u * v
    }

    fn check_index(&self, idx: ViewIndex) -> Result<()> {
        let (nu, nv) = self.angular_shape();
        if idx.u >= nu {
            return Err(Error::Index { axis: "u", index: idx.u, extent: nu });
        }
        if idx.v >= nv {
            return Err(Error::Index { axis: "v", index: idx.v, extent: nv });
        }
        Ok(())
    }

    /// Borrow the view at `idx`.
    pub fn view(&self, idx: ViewIndex) -> Result<ArrayView3<'_, f64>> {
        self.check_index(idx)?;
        Ok(self.data.slice(s![idx.u, idx.v, .., .., ..]))
    }

    /// Copy of the view at `idx`; mutating it never touches the field.
    pub fn get_view(&self, idx: impl Into<ViewIndex>) -> Result<Image> {
        self.view(idx.into()).map(|v| v.to_owned())
    }

    /// Views in row-major `(u, v)` order.
    pub fn views(&self) -> impl Iterator<Item = ArrayView3<'_, f64>> + '_ {
        let (nu, nv) = self.angular_shape();
        (0..nu).flat_map(move |u| (0..nv).map(move |v| self.data.slice(s![u, v, .., .., ..])))
    }

    pub fn center_index(&self) -> Result<ViewIndex> {
        center_of(self.angular_shape())
    }

    pub fn center_view(&self) -> Result<Image> {
        self.get_view(self.center_index()?)
    }

    /// Apply `f` to every view, producing a new field of possibly different
    /// spatial size. The result is clamped into `[0, 1]`.
    pub fn map_views<F>(&self, mut f: F) -> Result<LightField>
    where
        F: FnMut(ViewIndex, ArrayView3<f64>) -> Result<Image>,
    {
        let (nu, nv) = self.angular_shape();
        let mut out = Vec::with_capacity(nu * nv);
        for u in 0..nu {
            for v in 0..nv {
                let idx = ViewIndex::new(u, v);
                let mut img = f(idx, self.view(idx)?)?;
                img.mapv_inplace(|x| x.clamp(0.0, 1.0));
                out.push(img);
            }
        }
        LightField::from_views((nu, nv), &out)
    }

    /// Horizontal EPI holds `u` and `h` fixed; vertical holds `v` and `w`.
    pub fn extract_epi(
        &self,
        orientation: EpiOrientation,
        fixed_angular: usize,
        fixed_spatial: usize,
    ) -> Result<Epi> {
        let (nu, nv) = self.angular_shape();
        let (h, w) = self.spatial_shape();
        let data = match orientation {
            EpiOrientation::Horizontal => {
                check_axis("u", fixed_angular, nu)?;
                check_axis("h", fixed_spatial, h)?;
                self.data.slice(s![fixed_angular, .., fixed_spatial, .., ..]).to_owned()
            }
            EpiOrientation::Vertical => {
                check_axis("v", fixed_angular, nv)?;
                check_axis("w", fixed_spatial, w)?;
                self.data.slice(s![.., fixed_angular, .., fixed_spatial, ..]).to_owned()
            }
        };
        Ok(Epi {
            data,
            orientation,
            fixed: (fixed_angular, fixed_spatial),
        })
    }

    /// Write an EPI back into the line it was sampled from.
    pub fn scatter_epi(&mut self, epi: &Epi) -> Result<()> {
        let (a, b) = epi.fixed;
        let mut target = match epi.orientation {
            EpiOrientation::Horizontal => {
                check_axis("u", a, self.angular_shape().0)?;
                check_axis("h", b, self.spatial_shape().0)?;
                self.data.slice_mut(s![a, .., b, .., ..])
            }
            EpiOrientation::Vertical => {
                check_axis("v", a, self.angular_shape().1)?;
                check_axis("w", b, self.spatial_shape().1)?;
                self.data.slice_mut(s![.., a, .., b, ..])
            }
        };
        if target.dim() != epi.data.dim() {
            return Err(shape(format!(
                "EPI of shape {:?} does not fit line of shape {:?}",
                epi.data.dim(),
                target.dim()
            )));
        }
        if epi.data.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(contract("EPI values must lie in [0, 1]"));
        }
        target.assign(&epi.data);
        Ok(())
    }

    /// Crop every view to the window at `(top, left)` of `size = (h, w)`.
    pub fn crop_patch(&self, top: usize, left: usize, size: (usize, usize)) -> Result<LightField> {
        let (h, w) = self.spatial_shape();
        if size.0 == 0 || size.1 == 0 || top + size.0 > h || left + size.1 > w {
            return Err(contract(format!(
                "crop window {}x{} at ({top}, {left}) exceeds spatial extent {h}x{w}",
                size.0, size.1
            )));
        }
        Ok(LightField {
            data: self
                .data
                .slice(s![.., .., top..top + size.0, left..left + size.1, ..])
                .to_owned(),
        })
    }

    /// Crop the central `size` window.
    pub fn center_crop(&self, size: (usize, usize)) -> Result<LightField> {
        let (h, w) = self.spatial_shape();
        if size.0 > h || size.1 > w {
            return Err(contract(format!(
                "central crop {}x{} exceeds spatial extent {h}x{w}",
                size.0, size.1
            )));
        }
        self.crop_patch((h - size.0) / 2, (w - size.1) / 2, size)
    }

    /// Remove `border` pixels from each spatial edge.
    pub fn crop_border(&self, border: usize) -> Result<LightField> {
        if border == 0 {
            return Ok(self.clone());
        }
        let (h, w) = self.spatial_shape();
        if 2 * border >= h || 2 * border >= w {
            return Err(contract(format!(
                "border crop {border} leaves nothing of {h}x{w}"
            )));
        }
        self.crop_patch(border, border, (h - 2 * border, w - 2 * border))
    }

    /// Resize every view by `scale` with [`bicubic_resize`].
    pub fn resize(&self, scale: f64) -> Result<LightField> {
        self.map_views(|_, view| bicubic_resize(view, scale))
    }

    /// Per-channel means over all views and pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.data.len() / CHANNELS) as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data.index_axis(Axis(4), c).sum() / n;
        }
        out
    }
}

/// Centre view index of an odd angular grid.
pub fn center_of(angular: (usize, usize)) -> Result<ViewIndex> {
    let (u, v) = angular;
    if u % 2 == 0 || v % 2 == 0 {
        return Err(contract(format!(
            "center undefined for even angular shape {u}x{v}"
        )));
    }
    Ok(ViewIndex::new((u - 1) / 2, (v - 1) / 2))
}

fn check_axis(axis: &'static str, index: usize, extent: usize) -> Result<()> {
    if index >= extent {
        Err(Error::Index { axis, index, extent })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiOrientation {
    /// `A = V`, `S = W`, fixed `(u, h)`.
    Horizontal,
    /// `A = U`, `S = H`, fixed `(v, w)`.
    Vertical,
}

/// An epipolar-plane image: one angular and one spatial axis of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct Epi {
    /// `A×S×3`.
    pub data: Array3<f64>,
    pub orientation: EpiOrientation,
    /// The held-constant (angular, spatial) pair.
    pub fixed: (usize, usize),
}

/// Light-field-consistent augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    /// Mirror `w` and reverse `v`.
    HFlip,
    /// Mirror `h` and reverse `u`.
    VFlip,
    /// Rotate a quarter turn counter-clockwise; `(U, V, H, W)` becomes
    /// `(V, U, W, H)` with `out[u, v, h, w] = in[v, V-1-u, w, W-1-h]`.
    Rot90,
    /// `out[.., c] = in[.., perm[c]]`.
    ChannelShuffle([usize; 3]),
}

impl Augmentation {
    /// Apply to a single field.
    pub fn apply(&self, lf: &LightField) -> Result<LightField> {
        let d = &lf.data;
        let data = match *self {
            Augmentation::HFlip => d.slice(s![.., ..;-1, .., ..;-1, ..]).to_owned(),
            Augmentation::VFlip => d.slice(s![..;-1, .., ..;-1, .., ..]).to_owned(),
            Augmentation::Rot90 => {
                // in[v', V-1-u', w', W-1-h'] as out[u', v', h', w']
                let t = d.view().permuted_axes([1, 0, 3, 2, 4]);
                t.slice(s![..;-1, .., ..;-1, .., ..]).to_owned()
            }
            Augmentation::ChannelShuffle(perm) => {
                let mut seen = [false; 3];
                for &p in &perm {
                    if p >= 3 || seen[p] {
                        return Err(contract(format!(
                            "{perm:?} is not a permutation of (0, 1, 2)"
                        )));
                    }
                    seen[p] = true;
                }
                let mut out = Array5::zeros(d.raw_dim());
                for (c, &p) in perm.iter().enumerate() {
                    out.index_axis_mut(Axis(4), c).assign(&d.index_axis(Axis(4), p));
                }
                out
            }
        };
        Ok(LightField { data })
    }
}

/// Apply the same augmentation to an (HR, LR) pair.
pub fn augment(
    pair: (&LightField, &LightField),
    op: Augmentation,
) -> Result<(LightField, LightField)> {
    let (hr, lr) = pair;
    if hr.angular_shape() != lr.angular_shape() {
        return Err(shape(format!(
            "pair angular shapes differ: {:?} vs {:?}",
            hr.angular_shape(),
            lr.angular_shape()
        )));
    }
    let (hh, hw) = hr.spatial_shape();
    let (lh, lw) = lr.spatial_shape();
    if hh % lh != 0 || hw % lw != 0 || hh / lh != hw / lw {
        return Err(shape(format!(
            "spatial shapes {hh}x{hw} and {lh}x{lw} are not related by an integer scale"
        )));
    }
    Ok((op.apply(hr)?, op.apply(lr)?))
}
