//! CT volume data model, binarization and isotropic resampling.
//!
//! Voxels are stored x-fastest: index = x + nx * (y + ny * z). World
//! coordinates are millimetres relative to the isocenter; voxel `(i, j, k)`
//! has its center at `origin + (i, j, k) * spacing`. Axis convention: x runs
//! patient right to left, y anterior to posterior, z along the
//! superior-inferior axis (one axial slice per z).

mod format;
mod resample;

pub use format::{load_binary_volume, load_volume, save_binary_volume, save_volume, VolumeHeader};
pub use resample::{resample_binary, resample_isotropic, resample_isotropic_with};

use crate::error::{Error, Result};

/// Default HU outside the subject (air).
pub const AIR_HU: f32 = -1000.0;

/// A 3D scalar grid in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    voxels: Vec<f32>,
    background_fill: f32,
}

/// A 3D {0,1} mask on the same kind of grid as [`CtVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    voxels: Vec<u8>,
}

fn check_grid(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidVolume(format!("dims {dims:?} overflow")))?;
    if expected != len {
        return Err(Error::InvalidVolume(format!(
            "voxel count {len} does not match dims {dims:?} ({expected})"
        )));
    }
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidVolume(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(Error::InvalidVolume(format!("origin must be finite, got {origin:?}")));
    }
    Ok(())
}

/// Origin that puts the grid center on the isocenter.
pub fn centered_origin(dims: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| -((dims[a] - 1) as f64) * spacing[a] / 2.0)
}

impl CtVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        voxels: Vec<f32>,
        background_fill: f32,
    ) -> Result<Self> {
        check_grid(dims, spacing, origin, voxels.len())?;
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite voxel value at index {i}")));
        }
        if !background_fill.is_finite() {
            return Err(Error::InvalidVolume("background fill must be finite".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
            background_fill,
        })
    }

    /// A constant-valued volume centered on the isocenter.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, centered_origin(dims, spacing), vec![value; n], AIR_HU)
    }

    /// Builds a volume by evaluating `f` at every voxel center (world mm).
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        f: impl Fn([f64; 3]) -> f32,
    ) -> Result<Self> {
        let n = dims.iter().product();
        let mut voxels = Vec::with_capacity(n);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    voxels.push(f([
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    ]));
                }
            }
        }
        Self::new(dims, spacing, origin, voxels, AIR_HU)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn background_fill(&self) -> f32 {
        self.background_fill
    }

    pub fn with_background_fill(mut self, fill: f32) -> Result<Self> {
        if !fill.is_finite() {
            return Err(Error::InvalidVolume("background fill must be finite".into()));
        }
        self.background_fill = fill;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// One axial slice (fixed z), x-fastest.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.voxels[z * n..(z + 1) * n]
    }

    /// Replaces the voxel array, keeping the grid.
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, voxels, self.background_fill)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

impl BinaryVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], voxels: Vec<u8>) -> Result<Self> {
        check_grid(dims, spacing, origin, voxels.len())?;
        if let Some(i) = voxels.iter().position(|&v| v > 1) {
            return Err(Error::InvalidVolume(format!("binary voxel at index {i} is not 0 or 1")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        f: impl Fn([f64; 3]) -> bool,
    ) -> Result<Self> {
        let vol = CtVolume::from_fn(dims, spacing, origin, |p| if f(p) { 1.0 } else { 0.0 })?;
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels: vol.voxels.iter().map(|&v| v as u8).collect(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn count_ones(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    /// The mask as a 0/1-valued scalar volume.
    pub fn to_volume(&self) -> CtVolume {
        CtVolume {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            voxels: self.voxels.iter().map(|&v| v as f32).collect(),
            background_fill: 0.0,
        }
    }
}

/// Voxel = 1 iff value >= `threshold_hu`.
pub fn binarize(v: &CtVolume, threshold_hu: f64) -> BinaryVolume {
    BinaryVolume {
        dims: v.dims,
        spacing: v.spacing,
        origin: v.origin,
        voxels: v
            .voxels
            .iter()
            .map(|&x| u8::from(x as f64 >= threshold_hu))
            .collect(),
    }
}

/// Trilinear sample at a continuous voxel index. Indices inside the voxel
/// support `[-0.5, n - 0.5]` clamp to the edge voxels; anything further out
/// returns `None`.
pub(crate) fn trilinear_at(data: &[f32], dims: [usize; 3], ci: [f64; 3]) -> Option<f64> {
    for a in 0..3 {
        if !(ci[a] >= -0.5 && ci[a] <= dims[a] as f64 - 0.5) {
            return None;
        }
    }
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let c = ci[a].clamp(0.0, (dims[a] - 1) as f64);
        let f = c.floor();
        base[a] = (f as usize).min(dims[a] - 1);
        frac[a] = c - f;
    }
    let step = |a: usize| usize::from(base[a] + 1 < dims[a]);
    let (sx, sy, sz) = (step(0), step(1) * dims[0], step(2) * dims[0] * dims[1]);
    let i0 = base[0] + dims[0] * (base[1] + dims[1] * base[2]);
    let v = |off: usize| data[i0 + off] as f64;
    let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
    let c00 = v(0) * (1.0 - fx) + v(sx) * fx;
    let c10 = v(sy) * (1.0 - fx) + v(sy + sx) * fx;
    let c01 = v(sz) * (1.0 - fx) + v(sz + sx) * fx;
    let c11 = v(sz + sy) * (1.0 - fx) + v(sz + sy + sx) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    Some(c0 * (1.0 - fz) + c1 * fz)
}
