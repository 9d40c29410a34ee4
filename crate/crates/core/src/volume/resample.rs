use super::{trilinear_at, BinaryVolume, CtVolume};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Output grid for an isotropic resample: same physical center, dims
/// rounded half-up, at least one voxel per axis.
fn target_grid(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], target: f64) -> ([usize; 3], [f64; 3]) {
    let out_dims: [usize; 3] =
        std::array::from_fn(|a| ((dims[a] as f64 * spacing[a] / target + 0.5).floor() as usize).max(1));
    let out_origin = std::array::from_fn(|a| {
        let center = origin[a] + (dims[a] - 1) as f64 * spacing[a] / 2.0;
        center - (out_dims[a] - 1) as f64 * target / 2.0
    });
    (out_dims, out_origin)
}

fn check_target(target_mm: f64) -> Result<()> {
    if !(target_mm.is_finite() && target_mm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resample target must be positive, got {target_mm}"
        )));
    }
    Ok(())
}

pub fn resample_isotropic(v: &CtVolume, target_mm: f64) -> Result<CtVolume> {
    resample_isotropic_with(v, target_mm, Exec::default())
}

/// Trilinear resample onto an isotropic `target_mm` grid.
pub fn resample_isotropic_with(v: &CtVolume, target_mm: f64, exec: Exec) -> Result<CtVolume> {
    check_target(target_mm)?;
    if v.spacing.iter().all(|&s| s == target_mm) {
        return Ok(v.clone());
    }
    let (dims, origin) = target_grid(v.dims, v.spacing, v.origin, target_mm);
    let slice_len = dims[0] * dims[1];
    let mut out = vec![0f32; slice_len * dims[2]];
    exec.fill_chunks(&mut out, slice_len, |k, slice| {
        let ck = (origin[2] + k as f64 * target_mm - v.origin[2]) / v.spacing[2];
        for j in 0..dims[1] {
            let cj = (origin[1] + j as f64 * target_mm - v.origin[1]) / v.spacing[1];
            for i in 0..dims[0] {
                let ci = (origin[0] + i as f64 * target_mm - v.origin[0]) / v.spacing[0];
                slice[i + dims[0] * j] = match trilinear_at(&v.voxels, v.dims, [ci, cj, ck]) {
                    Some(x) => x as f32,
                    None => v.background_fill,
                };
            }
        }
    });
    CtVolume::new(dims, [target_mm; 3], origin, out, v.background_fill)
}

/// Resamples a mask onto the same grid [`resample_isotropic`] would use,
/// keeping voxels whose interpolated occupancy is at least one half.
pub fn resample_binary(b: &BinaryVolume, target_mm: f64) -> Result<BinaryVolume> {
    check_target(target_mm)?;
    if b.spacing.iter().all(|&s| s == target_mm) {
        return Ok(b.clone());
    }
    let as_vol = b.to_volume();
    let r = resample_isotropic(&as_vol, target_mm)?;
    BinaryVolume::new(
        r.dims,
        r.spacing,
        r.origin,
        r.voxels.iter().map(|&x| u8::from(x >= 0.5)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AIR_HU;
    use proptest::prelude::*;

    #[test]
    fn output_dims_follow_round_half_up() {
        let (d, _) = target_grid([512, 512, 300], [0.5, 0.5, 1.0], [0.0; 3], 1.0);
        assert_eq!(d, [256, 256, 300]);
        let (d, _) = target_grid([3, 5, 1], [0.5, 0.7, 0.2], [0.0; 3], 1.0);
        // 1.5 -> 2, 3.5 -> 4, 0.2 -> 0 -> clamped to 1
        assert_eq!(d, [2, 4, 1]);
    }

    #[test]
    fn already_isotropic_is_identity() {
        let v = CtVolume::from_fn([4, 3, 2], [1.0; 3], [0.3, -2.0, 5.0], |p| (p[0] * p[1] + p[2]) as f32).unwrap();
        assert_eq!(resample_isotropic(&v, 1.0).unwrap(), v);
    }

    #[test]
    fn rejects_non_positive_target() {
        let v = CtVolume::filled([2, 2, 2], [1.0; 3], 0.0).unwrap();
        assert!(resample_isotropic(&v, 0.0).is_err());
        assert!(resample_isotropic(&v, -1.0).is_err());
    }

    #[test]
    fn large_anisotropic_dims() {
        let v = CtVolume::filled([64, 64, 30], [0.5, 0.5, 1.0], -20.0).unwrap();
        let r = resample_isotropic(&v, 1.0).unwrap();
        assert_eq!(r.dims(), [32, 32, 30]);
        assert_eq!(r.spacing(), [1.0; 3]);
    }

    #[test]
    fn linear_field_is_reproduced_when_downsampling() {
        let v = CtVolume::from_fn([20, 20, 10], [0.5, 0.5, 1.0], [0.0; 3], |p| (3.0 * p[0] - 2.0 * p[1] + p[2]) as f32)
            .unwrap();
        let r = resample_isotropic(&v, 1.0).unwrap();
        for k in 0..r.dims()[2] {
            for j in 0..r.dims()[1] {
                for i in 0..r.dims()[0] {
                    let p = r.voxel_center(i, j, k);
                    let want = 3.0 * p[0] - 2.0 * p[1] + p[2];
                    assert!((r.get(i, j, k) as f64 - want).abs() < 1e-4, "{i} {j} {k}");
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let v = CtVolume::from_fn([17, 9, 5], [0.6, 0.9, 2.0], [0.0; 3], |p| (p[0].sin() * 100.0 + p[2]) as f32).unwrap();
        assert_eq!(
            resample_isotropic_with(&v, 1.0, Exec::Sequential).unwrap(),
            resample_isotropic_with(&v, 1.0, Exec::Parallel).unwrap()
        );
    }

    fn arb_volume() -> impl Strategy<Value = CtVolume> {
        (1usize..6, 1usize..6, 1usize..5, 0.3f64..2.5, 0.3f64..2.5, 0.3f64..2.5)
            .prop_flat_map(|(nx, ny, nz, sx, sy, sz)| {
                proptest::collection::vec(-1000f32..2000.0, nx * ny * nz).prop_map(move |vals| {
                    CtVolume::new([nx, ny, nz], [sx, sy, sz], [0.0; 3], vals, AIR_HU).unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn values_stay_within_input_bounds(v in arb_volume()) {
            let (lo, hi) = v.min_max();
            let r = resample_isotropic(&v, 1.0).unwrap();
            for &x in r.voxels() {
                prop_assert!(x == v.background_fill() || (x >= lo - 1e-3 && x <= hi + 1e-3));
            }
        }

        #[test]
        fn idempotent_at_target_spacing(v in arb_volume()) {
            let once = resample_isotropic(&v, 1.0).unwrap();
            let twice = resample_isotropic(&once, 1.0).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn constant_stays_constant(c in -1000f32..3000.0, sx in 0.2f64..3.0, sz in 0.2f64..3.0) {
            let v = CtVolume::filled([7, 5, 4], [sx, sx, sz], c).unwrap();
            let r = resample_isotropic(&v, 1.0).unwrap();
            prop_assert!(r.voxels().iter().all(|&x| (x - c).abs() <= c.abs() * 1e-6 + 1e-4));
        }
    }
}
