//! Deterministic synthetic chest phantoms with analytic ground truth.
//!
//! A phantom is an elliptic body with two ellipsoidal lungs, an optional
//! curved scanning bed below the body, optional dense blocks and spherical
//! lesions inside the lungs. Voxels take the HU of the last solid that
//! contains their center, in the order air, bed, body, lungs, blocks,
//! lesions.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::volume::{centered_origin, save_binary_volume, save_volume, BinaryVolume, CtVolume, AIR_HU};

pub const BODY_HU: f32 = 0.0;
pub const LUNG_HU: f32 = -800.0;
pub const BED_HU: f32 = 300.0;
pub const LESION_HU: f32 = 50.0;
pub const BLOCK_HU: f32 = 8000.0;
/// Smallest allowed clearance between bed and body.
pub const MIN_BED_GAP_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub hu: f32,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius_mm: f64,
    pub hu: f32,
}

impl Sphere {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        dist2(p, self.center) <= self.radius_mm * self.radius_mm
    }
}

/// Axis-aligned box of dense material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBlock {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub hu: f32,
}

impl DenseBlock {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// A sector of a cylindrical shell running along z, centered on straight
/// down (+y) in the axial plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BedShell {
    /// Cylinder axis position in the axial plane (x, y).
    pub axis: [f64; 2],
    pub inner_radius_mm: f64,
    pub thickness_mm: f64,
    pub half_angle_deg: f64,
    pub hu: f32,
}

impl BedShell {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (dx, dy) = (p[0] - self.axis[0], p[1] - self.axis[1]);
        let r = (dx * dx + dy * dy).sqrt();
        if r < self.inner_radius_mm || r > self.inner_radius_mm + self.thickness_mm {
            return false;
        }
        // angle from +y
        dx.atan2(dy).abs() <= self.half_angle_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub body: Ellipsoid,
    pub lungs: [Ellipsoid; 2],
    #[serde(default)]
    pub bed: Option<BedShell>,
    #[serde(default)]
    pub lesions: Vec<Sphere>,
    #[serde(default)]
    pub blocks: Vec<DenseBlock>,
    /// Standard deviation of additive Gaussian noise, seeded by `seed`.
    #[serde(default)]
    pub noise_std_hu: f32,
    /// Optional; must agree with the lesion list when given.
    #[serde(default)]
    pub label: Option<Label>,
}

/// A voxelized phantom and its ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: CtVolume,
    pub subject_truth: BinaryVolume,
    pub lung_truth: BinaryVolume,
    pub bed_truth: BinaryVolume,
    pub label: Label,
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Evenly spread unit vectors (Fibonacci sphere).
fn sphere_directions(n: usize) -> impl Iterator<Item = [f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let t = golden * i as f64;
        [r * t.cos(), r * t.sin(), z]
    })
}

fn sphere_inside(s: &Sphere, e: &Ellipsoid) -> bool {
    e.contains(s.center)
        && sphere_directions(400).all(|d| {
            e.contains([
                s.center[0] + d[0] * s.radius_mm,
                s.center[1] + d[1] * s.radius_mm,
                s.center[2] + d[2] * s.radius_mm,
            ])
        })
}

fn ellipsoid_inside(inner: &Ellipsoid, outer: &Ellipsoid) -> bool {
    sphere_directions(600).all(|d| {
        outer.contains([
            inner.center[0] + d[0] * inner.radii[0],
            inner.center[1] + d[1] * inner.radii[1],
            inner.center[2] + d[2] * inner.radii[2],
        ])
    })
}

/// Distance between the widest axial cross-section of the body and the bed,
/// by dense sampling of both outlines.
fn bed_clearance(body: &Ellipsoid, bed: &BedShell) -> f64 {
    let body_pts: Vec<(f64, f64)> = (0..1440)
        .map(|i| {
            let t = i as f64 / 1440.0 * std::f64::consts::TAU;
            (body.center[0] + body.radii[0] * t.cos(), body.center[1] + body.radii[1] * t.sin())
        })
        .collect();
    let alpha = bed.half_angle_deg.to_radians();
    let mut best = f64::INFINITY;
    for ai in 0..=720 {
        let phi = -alpha + 2.0 * alpha * ai as f64 / 720.0;
        for ri in 0..=8 {
            let r = bed.inner_radius_mm + bed.thickness_mm * ri as f64 / 8.0;
            let (bx, by) = (bed.axis[0] + r * phi.sin(), bed.axis[1] + r * phi.cos());
            for &(x, y) in &body_pts {
                best = best.min(((x - bx).powi(2) + (y - by).powi(2)).sqrt());
            }
        }
    }
    best
}

impl PhantomSpec {
    pub fn label(&self) -> Label {
        if self.lesions.is_empty() {
            Label::Normal
        } else {
            Label::Abnormal
        }
    }

    pub fn origin(&self) -> [f64; 3] {
        centered_origin(self.dims, self.spacing_mm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPhantom(m));
        if self.dims.contains(&0) || self.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("invalid grid {:?} / {:?}", self.dims, self.spacing_mm));
        }
        let solids = std::iter::once(&self.body).chain(&self.lungs);
        if solids.clone().any(|e| e.radii.iter().any(|r| !(r.is_finite() && *r > 0.0))) {
            return bad("ellipsoid radii must be positive".into());
        }
        for (i, lung) in self.lungs.iter().enumerate() {
            if !ellipsoid_inside(lung, &self.body) {
                return bad(format!("lung {i} is not inside the body"));
            }
        }
        for (i, s) in self.lesions.iter().enumerate() {
            if !(s.radius_mm.is_finite() && s.radius_mm > 0.0) {
                return bad(format!("lesion {i} has a non-positive radius"));
            }
            if !self.lungs.iter().any(|l| sphere_inside(s, l)) {
                return bad(format!("lesion {i} is not entirely inside a lung"));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if (0..3).any(|a| b.min[a] >= b.max[a]) {
                return bad(format!("block {i} is empty"));
            }
            let corners = (0..8).map(|c| {
                std::array::from_fn(|a| if c >> a & 1 == 1 { b.max[a] } else { b.min[a] })
            });
            if corners.into_iter().any(|p: [f64; 3]| !self.body.contains(p)) {
                return bad(format!("block {i} is not inside the body"));
            }
        }
        if let Some(bed) = &self.bed {
            if !(bed.inner_radius_mm > 0.0 && bed.thickness_mm > 0.0 && bed.half_angle_deg > 0.0 && bed.half_angle_deg < 180.0)
            {
                return bad("bed shell parameters out of range".into());
            }
            let gap = bed_clearance(&self.body, bed);
            if gap < MIN_BED_GAP_MM {
                return bad(format!("bed is {gap:.2} mm from the body, needs at least {MIN_BED_GAP_MM} mm"));
            }
        }
        if let Some(l) = self.label {
            if l != self.label() {
                return bad(format!("label {l:?} disagrees with {} lesions", self.lesions.len()));
            }
        }
        Ok(())
    }

    /// HU at a point before noise.
    pub fn hu_at(&self, p: [f64; 3]) -> f32 {
        if let Some(s) = self.lesions.iter().rev().find(|s| s.contains(p)) {
            return s.hu;
        }
        if let Some(b) = self.blocks.iter().rev().find(|b| b.contains(p)) {
            return b.hu;
        }
        if let Some(l) = self.lungs.iter().rev().find(|l| l.contains(p)) {
            return l.hu;
        }
        if self.body.contains(p) {
            return self.body.hu;
        }
        match &self.bed {
            Some(b) if b.contains(p) => b.hu,
            _ => AIR_HU,
        }
    }
}

/// Voxelizes a phantom. Deterministic in `spec.seed`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (dims, spacing, origin) = (spec.dims, spec.spacing_mm, spec.origin());
    let mut volume = CtVolume::from_fn(dims, spacing, origin, |p| spec.hu_at(p))?;
    if spec.noise_std_hu > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_std_hu)
            .map_err(|e| Error::InvalidPhantom(format!("noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noisy = volume.voxels().iter().map(|&v| v + normal.sample(&mut rng)).collect();
        volume = volume.with_voxels(noisy)?;
    }
    let subject_truth = BinaryVolume::from_fn(dims, spacing, origin, |p| spec.body.contains(p))?;
    let lung_truth = BinaryVolume::from_fn(dims, spacing, origin, |p| spec.lungs.iter().any(|l| l.contains(p)))?;
    let bed_truth = BinaryVolume::from_fn(dims, spacing, origin, |p| {
        !spec.body.contains(p) && spec.bed.is_some_and(|b| b.contains(p))
    })?;
    Ok(Phantom {
        volume,
        subject_truth,
        lung_truth,
        bed_truth,
        label: spec.label(),
    })
}

/// A centered uniform sphere with partial-volume voxels: each boundary
/// voxel takes the HU mix given by the fraction of its `supersample³`
/// sub-voxel centers inside the sphere.
pub fn uniform_sphere(dims: [usize; 3], spacing: [f64; 3], radius_mm: f64, hu: f32, supersample: usize) -> Result<CtVolume> {
    let origin = centered_origin(dims, spacing);
    let half_diag = (spacing.iter().map(|s| s * s).sum::<f64>()).sqrt() / 2.0;
    let ss = supersample.max(1);
    let slice_len = dims[0] * dims[1];
    let mut voxels = vec![AIR_HU; slice_len * dims[2]];
    Exec::default().fill_chunks(&mut voxels, slice_len, |k, slice| {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = [
                    origin[0] + i as f64 * spacing[0],
                    origin[1] + j as f64 * spacing[1],
                    origin[2] + k as f64 * spacing[2],
                ];
                let r = dist2(c, [0.0; 3]).sqrt();
                let frac = if r <= radius_mm - half_diag {
                    1.0
                } else if r >= radius_mm + half_diag {
                    0.0
                } else {
                    let mut inside = 0usize;
                    for a in 0..ss {
                        for b in 0..ss {
                            for d in 0..ss {
                                let off = |n: usize, s: f64| ((n as f64 + 0.5) / ss as f64 - 0.5) * s;
                                let p = [c[0] + off(a, spacing[0]), c[1] + off(b, spacing[1]), c[2] + off(d, spacing[2])];
                                inside += usize::from(dist2(p, [0.0; 3]) <= radius_mm * radius_mm);
                            }
                        }
                    }
                    inside as f64 / (ss * ss * ss) as f64
                };
                slice[i + dims[0] * j] = (AIR_HU as f64 + frac * (hu as f64 - AIR_HU as f64)) as f32;
            }
        }
    });
    CtVolume::new(dims, spacing, origin, voxels, AIR_HU)
}

/// Cohort generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortOptions {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub noise_std_hu: f32,
    /// Give every phantom a dense block; abnormal phantoms get it directly
    /// in front of the lesion along the frontal central ray.
    pub occluded: bool,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            dims: [180, 150, 80],
            spacing_mm: 2.0,
            noise_std_hu: 10.0,
            occluded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub id: String,
    pub spec: PhantomSpec,
}

impl CohortEntry {
    pub fn label(&self) -> Label {
        self.spec.label()
    }
}

/// Source position of the frontal view for occluder placement.
const FRONTAL_SOURCE: [f64; 3] = [0.0, -541.0, 0.0];
const LESION_RADIUS_MM: (f64, f64) = (9.0, 13.0);
/// Distance of the occluder center in front of the lesion.
const OCCLUDER_DEPTH_MM: f64 = 60.0;
const OCCLUDER_HALF_MM: [f64; 3] = [22.0, 8.0, 22.0];
/// Redraws allowed when jittered parameters violate an invariant.
const MAX_DRAWS: usize = 64;

fn jitter(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_spec(rng: &mut ChaCha8Rng, seed: u64, abnormal: bool, opts: &CohortOptions) -> Result<PhantomSpec> {
    let dims = opts.dims;
    let spacing = [opts.spacing_mm; 3];
    let half_z = dims[2] as f64 * opts.spacing_mm / 2.0;
    let (rx, ry) = (jitter(rng, 135.0, 155.0), jitter(rng, 90.0, 105.0));
    let body = Ellipsoid {
        center: [jitter(rng, -5.0, 5.0), -35.0 + jitter(rng, -4.0, 4.0), 0.0],
        radii: [rx, ry, 50.0 * half_z],
        hu: BODY_HU,
    };
    let lung_r = [0.33 * rx * jitter(rng, 0.95, 1.05), 0.5 * ry * jitter(rng, 0.95, 1.05), 0.6 * half_z];
    let lung_dx = 0.45 * rx * jitter(rng, 0.95, 1.05);
    let lung_y = body.center[1] - 5.0;
    let lungs = [-1.0, 1.0].map(|side| Ellipsoid {
        center: [body.center[0] + side * lung_dx, lung_y, jitter(rng, -3.0, 3.0)],
        radii: lung_r,
        hu: LUNG_HU,
    });

    let alpha = jitter(rng, 45.0, 65.0);
    let (sa, ca) = alpha.to_radians().sin_cos();
    let r_alpha = 1.0 / ((sa / rx).powi(2) + (ca / ry).powi(2)).sqrt();
    let bed = BedShell {
        axis: [body.center[0], body.center[1]],
        inner_radius_mm: r_alpha + jitter(rng, 8.0, 14.0),
        thickness_mm: jitter(rng, 8.0, 12.0),
        half_angle_deg: alpha,
        hu: BED_HU,
    };

    // A target point near the middle of one lung: the lesion center for
    // abnormal phantoms, the occluder aim point for normal ones.
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let lung = lungs[usize::from(side > 0.0)];
    let radius = jitter(rng, LESION_RADIUS_MM.0, LESION_RADIUS_MM.1);
    let target = [
        lung.center[0] + side * jitter(rng, -0.2, 0.2) * lung.radii[0],
        lung.center[1] + jitter(rng, -0.1, 0.1) * lung.radii[1],
        lung.center[2] + jitter(rng, -0.3, 0.3) * lung.radii[2],
    ];
    let lesions = if abnormal {
        vec![Sphere {
            center: target,
            radius_mm: radius,
            hu: LESION_HU,
        }]
    } else {
        Vec::new()
    };
    let blocks = if opts.occluded {
        // centered on the frontal ray through the target, anterior to it
        let t = (target[1] - OCCLUDER_DEPTH_MM - FRONTAL_SOURCE[1]) / (target[1] - FRONTAL_SOURCE[1]);
        let c: [f64; 3] = std::array::from_fn(|a| FRONTAL_SOURCE[a] + (target[a] - FRONTAL_SOURCE[a]) * t);
        let half = OCCLUDER_HALF_MM;
        vec![DenseBlock {
            min: std::array::from_fn(|a| c[a] - half[a]),
            max: std::array::from_fn(|a| c[a] + half[a]),
            hu: BLOCK_HU,
        }]
    } else {
        Vec::new()
    };
    let spec = PhantomSpec {
        seed,
        dims,
        spacing_mm: spacing,
        body,
        lungs,
        bed: Some(bed),
        lesions,
        blocks,
        noise_std_hu: opts.noise_std_hu,
        label: None,
    };
    spec.validate()?;
    Ok(spec)
}

/// Specs for a reproducible cohort with jittered geometry. Ids are
/// `case_000`, `case_001`, ...; labels are dealt by a seeded shuffle.
pub fn generate_cohort(n_normal: usize, n_abnormal: usize, seed: u64, opts: &CohortOptions) -> Result<Vec<CohortEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = std::iter::repeat_n(false, n_normal)
        .chain(std::iter::repeat_n(true, n_abnormal))
        .collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, abnormal)| {
            let patient_seed = rng.random::<u64>();
            let mut prng = ChaCha8Rng::seed_from_u64(patient_seed);
            let mut draw = random_spec(&mut prng, patient_seed, abnormal, opts);
            for _ in 1..MAX_DRAWS {
                if draw.is_ok() {
                    break;
                }
                draw = random_spec(&mut prng, patient_seed, abnormal, opts);
            }
            Ok(CohortEntry {
                id: format!("case_{i:03}"),
                spec: draw?,
            })
        })
        .collect()
}

/// Paths written for one phantom.
#[derive(Debug, Clone)]
pub struct PhantomFiles {
    pub dir: PathBuf,
    pub ct: PathBuf,
    pub subject_truth: PathBuf,
    pub lung_truth: PathBuf,
    pub spec: PathBuf,
}

impl PhantomFiles {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        Self {
            ct: dir.join("ct.json"),
            subject_truth: dir.join("subject_truth.json"),
            lung_truth: dir.join("lung_truth.json"),
            spec: dir.join("spec.json"),
            dir,
        }
    }
}

pub fn write_phantom(spec: &PhantomSpec, dir: impl AsRef<Path>) -> Result<(Phantom, PhantomFiles)> {
    let files = PhantomFiles::in_dir(dir.as_ref());
    let phantom = generate(spec)?;
    fs::create_dir_all(&files.dir).map_err(|e| Error::io(&files.dir, e))?;
    save_volume(&phantom.volume, &files.ct)?;
    save_binary_volume(&phantom.subject_truth, &files.subject_truth)?;
    save_binary_volume(&phantom.lung_truth, &files.lung_truth)?;
    fs::write(&files.spec, serde_json::to_string_pretty(spec)? + "\n").map_err(|e| Error::io(&files.spec, e))?;
    Ok((phantom, files))
}

pub fn read_spec(path: impl AsRef<Path>) -> Result<PhantomSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: PhantomSpec = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidPhantom(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Writes every phantom under `out_dir/<id>/` plus `out_dir/truth.csv`.
pub fn write_cohort(entries: &[CohortEntry], out_dir: impl AsRef<Path>) -> Result<Vec<PhantomFiles>> {
    let out_dir = out_dir.as_ref();
    let files = Exec::default().try_map_range(entries.len(), |i| {
        write_phantom(&entries[i].spec, out_dir.join(&entries[i].id)).map(|(_, f)| f)
    })?;
    let truth = entries
        .iter()
        .map(|e| (e.id.clone(), e.label().is_abnormal()))
        .collect();
    crate::tables::write_truth(out_dir.join("truth.csv"), &truth)?;
    Ok(files)
}
