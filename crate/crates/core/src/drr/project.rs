use serde::{Deserialize, Serialize};

use super::geometry::{ProjectionGeometry, Ray};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mask::Mask2;
use crate::volume::{BinaryVolume, CtVolume};

/// Linear HU to attenuation map, clamped at zero below air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttenuationModel {
    pub mu_water_per_mm: f64,
}

impl Default for AttenuationModel {
    fn default() -> Self {
        Self { mu_water_per_mm: 0.02 }
    }
}

impl AttenuationModel {
    pub fn new(mu_water_per_mm: f64) -> Result<Self> {
        if !(mu_water_per_mm.is_finite() && mu_water_per_mm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu_water must be positive, got {mu_water_per_mm}"
            )));
        }
        Ok(Self { mu_water_per_mm })
    }

    #[inline]
    pub fn mu(&self, hu: f64) -> f64 {
        (self.mu_water_per_mm * (1.0 + hu / 1000.0)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Intensity,
    Mask,
}

/// One detector image. Intensity images hold line integrals of attenuation
/// (dimensionless); mask images hold 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    view_angle_deg: f64,
    kind: ProjectionKind,
    geometry: ProjectionGeometry,
}

impl ProjectionImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f32>,
        view_angle_deg: f64,
        kind: ProjectionKind,
        geometry: ProjectionGeometry,
    ) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "projection {width}x{height} with {} pixels",
                pixels.len()
            )));
        }
        let ok = match kind {
            ProjectionKind::Intensity => pixels.iter().all(|p| p.is_finite() && *p >= 0.0),
            ProjectionKind::Mask => pixels.iter().all(|&p| p == 0.0 || p == 1.0),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("pixel values invalid for {kind:?} projection")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            view_angle_deg,
            kind,
            geometry,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn view_angle_deg(&self) -> f64 {
        self.view_angle_deg
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    /// The image as a binary mask. Errors on intensity images.
    pub fn to_mask(&self) -> Result<Mask2> {
        if self.kind != ProjectionKind::Mask {
            return Err(Error::InvalidParameter("expected a mask-kind projection".into()));
        }
        Ok(Mask2::from_raw(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| p as u8).collect(),
        ))
    }

    pub fn from_mask(mask: &Mask2, view_angle_deg: f64, geometry: ProjectionGeometry) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            pixels: mask.pixels().iter().map(|&p| p as f32).collect(),
            view_angle_deg,
            kind: ProjectionKind::Mask,
            geometry,
        }
    }

    pub fn max_value(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }
}

/// A scalar field on a voxel grid prepared for ray marching: padded by one
/// replicated voxel per side so trilinear lookups never branch on edges.
struct Marcher {
    dims: [usize; 3],
    padded: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl Marcher {
    fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: impl Fn(usize) -> f32) -> Self {
        let padded = [dims[0] + 2, dims[1] + 2, dims[2] + 2];
        let mut data = Vec::with_capacity(padded[0] * padded[1] * padded[2]);
        for pz in 0..padded[2] {
            let z = pz.saturating_sub(1).min(dims[2] - 1);
            for py in 0..padded[1] {
                let y = py.saturating_sub(1).min(dims[1] - 1);
                for px in 0..padded[0] {
                    let x = px.saturating_sub(1).min(dims[0] - 1);
                    data.push(value(x + dims[0] * (y + dims[1] * z)));
                }
            }
        }
        Self {
            dims,
            padded,
            spacing,
            origin,
            data,
        }
    }

    /// Entry and exit distances of a ray through the voxel support box.
    fn clip(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = ray.length;
        for a in 0..3 {
            let lo = self.origin[a] - self.spacing[a] / 2.0;
            let hi = self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a];
            let d = ray.dir[a];
            if d.abs() < 1e-15 {
                if ray.origin[a] < lo || ray.origin[a] > hi {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo - ray.origin[a]) / d, (hi - ray.origin[a]) / d);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }

    /// Sample positions along the clipped ray: midpoints of `n` equal
    /// sub-steps no longer than `max_step`. Yields continuous indices into
    /// the padded grid and the sub-step length.
    fn march(&self, ray: &Ray, max_step: f64, mut visit: impl FnMut([f64; 3])) -> f64 {
        let Some((t0, t1)) = self.clip(ray) else {
            return 0.0;
        };
        let len = t1 - t0;
        let n = (len / max_step).ceil().max(1.0) as usize;
        let ds = len / n as f64;
        let mut p = [0.0; 3];
        let mut dp = [0.0; 3];
        for a in 0..3 {
            let start = ray.origin[a] + ray.dir[a] * (t0 + 0.5 * ds);
            p[a] = (start - self.origin[a]) / self.spacing[a] + 1.0;
            dp[a] = ray.dir[a] * ds / self.spacing[a];
        }
        for k in 0..n {
            let kf = k as f64;
            visit([p[0] + dp[0] * kf, p[1] + dp[1] * kf, p[2] + dp[2] * kf]);
        }
        ds
    }

    #[inline]
    fn trilinear(&self, c: [f64; 3]) -> f64 {
        let [nx, ny, nz] = self.padded;
        let fx = c[0].clamp(0.0, (nx - 1) as f64);
        let fy = c[1].clamp(0.0, (ny - 1) as f64);
        let fz = c[2].clamp(0.0, (nz - 1) as f64);
        let (ix, iy, iz) = (
            (fx as usize).min(nx - 2),
            (fy as usize).min(ny - 2),
            (fz as usize).min(nz - 2),
        );
        let (tx, ty, tz) = (fx - ix as f64, fy - iy as f64, fz - iz as f64);
        let sy = nx;
        let sz = nx * ny;
        let i = ix + nx * (iy + ny * iz);
        let d = &self.data;
        let lerp = |a: f32, b: f32, t: f64| a as f64 + (b as f64 - a as f64) * t;
        let c00 = lerp(d[i], d[i + 1], tx);
        let c10 = lerp(d[i + sy], d[i + sy + 1], tx);
        let c01 = lerp(d[i + sz], d[i + sz + 1], tx);
        let c11 = lerp(d[i + sz + sy], d[i + sz + sy + 1], tx);
        let c0 = c00 + (c10 - c00) * ty;
        let c1 = c01 + (c11 - c01) * ty;
        c0 + (c1 - c0) * tz
    }

    #[inline]
    fn nearest(&self, c: [f64; 3]) -> f32 {
        let [nx, ny, nz] = self.padded;
        // padded index p covers voxel p - 1; round to the nearest center,
        // staying inside the original grid
        let ix = (c[0].round() as usize).clamp(1, nx - 2);
        let iy = (c[1].round() as usize).clamp(1, ny - 2);
        let iz = (c[2].round() as usize).clamp(1, nz - 2);
        self.data[ix + nx * (iy + ny * iz)]
    }
}

fn check_volume(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidVolume("cannot project an empty volume".into()));
    }
    Ok(())
}

fn march_step(spacing: [f64; 3]) -> f64 {
    spacing.iter().copied().fold(f64::INFINITY, f64::min) / 2.0
}

fn render(g: &ProjectionGeometry, angle_deg: f64, exec: Exec, pixel: impl Fn(&Ray) -> f32 + Sync + Send) -> Vec<f32> {
    let [nu, nv] = g.detector_pixels();
    let mut out = vec![0f32; nu * nv];
    exec.fill_chunks(&mut out, nu, |row, line| {
        for (col, px) in line.iter_mut().enumerate() {
            *px = pixel(&g.ray(angle_deg, col, row));
        }
    });
    out
}

/// Precomputed attenuation volume, reusable across views.
pub struct AttenuationVolume {
    marcher: Marcher,
    step: f64,
}

impl AttenuationVolume {
    pub fn new(v: &CtVolume, m: &AttenuationModel) -> Result<Self> {
        check_volume(v.dims())?;
        let voxels = v.voxels();
        Ok(Self {
            marcher: Marcher::new(v.dims(), v.spacing(), v.origin(), |i| m.mu(voxels[i] as f64) as f32),
            step: march_step(v.spacing()),
        })
    }

    /// Line integral of attenuation along one ray.
    pub fn line_integral(&self, ray: &Ray) -> f64 {
        let mut sum = 0.0;
        let ds = self.marcher.march(ray, self.step, |c| sum += self.marcher.trilinear(c));
        sum * ds
    }
}

pub fn project_view(v: &CtVolume, g: &ProjectionGeometry, angle_deg: f64, m: &AttenuationModel) -> Result<ProjectionImage> {
    project_view_with(v, g, angle_deg, m, Exec::default())
}

/// Cone-beam line integrals for one view, by fixed-step trilinear sampling.
pub fn project_view_with(
    v: &CtVolume,
    g: &ProjectionGeometry,
    angle_deg: f64,
    m: &AttenuationModel,
    exec: Exec,
) -> Result<ProjectionImage> {
    let mu = AttenuationVolume::new(v, m)?;
    project_prepared(&mu, g, angle_deg, exec)
}

/// Projects one view from precomputed attenuation, so several views can
/// share the conversion.
pub fn project_prepared(mu: &AttenuationVolume, g: &ProjectionGeometry, angle_deg: f64, exec: Exec) -> Result<ProjectionImage> {
    if !angle_deg.is_finite() {
        return Err(Error::InvalidGeometry(format!("view angle must be finite, got {angle_deg}")));
    }
    let pixels = render(g, angle_deg, exec, |ray| mu.line_integral(ray) as f32);
    let [nu, nv] = g.detector_pixels();
    Ok(ProjectionImage {
        width: nu,
        height: nv,
        pixels,
        view_angle_deg: angle_deg,
        kind: ProjectionKind::Intensity,
        geometry: g.clone(),
    })
}

pub fn project_all_views(v: &CtVolume, g: &ProjectionGeometry, m: &AttenuationModel) -> Result<Vec<ProjectionImage>> {
    project_all_views_with(v, g, m, Exec::default())
}

/// One image per configured view angle, in order.
pub fn project_all_views_with(
    v: &CtVolume,
    g: &ProjectionGeometry,
    m: &AttenuationModel,
    exec: Exec,
) -> Result<Vec<ProjectionImage>> {
    let mu = AttenuationVolume::new(v, m)?;
    g.view_angles_deg()
        .iter()
        .map(|&a| project_prepared(&mu, g, a, exec))
        .collect()
}

/// Default minimum in-mask path for a mask pixel to be set.
pub const DEFAULT_MIN_PATH_MM: f64 = 1.0;

pub fn project_binary_mask(b: &BinaryVolume, g: &ProjectionGeometry, angle_deg: f64, min_path_mm: f64) -> Result<ProjectionImage> {
    project_binary_mask_with(b, g, angle_deg, min_path_mm, Exec::default())
}

/// Pixel = 1 iff the ray travels more than `min_path_mm` through voxels
/// equal to 1 (nearest-voxel occupancy, same step as intensity views).
pub fn project_binary_mask_with(
    b: &BinaryVolume,
    g: &ProjectionGeometry,
    angle_deg: f64,
    min_path_mm: f64,
    exec: Exec,
) -> Result<ProjectionImage> {
    check_volume(b.dims())?;
    if !(min_path_mm.is_finite() && min_path_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("min path must be positive, got {min_path_mm}")));
    }
    if !angle_deg.is_finite() {
        return Err(Error::InvalidGeometry(format!("view angle must be finite, got {angle_deg}")));
    }
    let voxels = b.voxels();
    let marcher = Marcher::new(b.dims(), b.spacing(), b.origin(), |i| voxels[i] as f32);
    let step = march_step(b.spacing());
    let pixels = render(g, angle_deg, exec, |ray| {
        let mut hits = 0usize;
        let ds = marcher.march(ray, step, |c| {
            if marcher.nearest(c) > 0.5 {
                hits += 1;
            }
        });
        if hits as f64 * ds > min_path_mm {
            1.0
        } else {
            0.0
        }
    });
    let [nu, nv] = g.detector_pixels();
    Ok(ProjectionImage {
        width: nu,
        height: nv,
        pixels,
        view_angle_deg: angle_deg,
        kind: ProjectionKind::Mask,
        geometry: g.clone(),
    })
}
