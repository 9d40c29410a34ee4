use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cone-beam source/detector placement.
///
/// At view angle 0 the point source sits anterior of the isocenter at
/// `(0, -sod, 0)` and the flat detector is posterior, centered at
/// `(0, oid, 0)` and facing the source. A view angle rotates the
/// source-detector pair about the z (superior-inferior) axis; positive
/// angles swing the source toward +x.
///
/// Detector columns run along the rotated x axis, rows run from +z (row 0)
/// to -z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryFields", into = "GeometryFields")]
pub struct ProjectionGeometry {
    sod_mm: f64,
    sid_mm: f64,
    oid_mm: f64,
    detector_size_mm: [f64; 2],
    detector_pixels: [usize; 2],
    view_angles_deg: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFields {
    sod_mm: f64,
    sid_mm: f64,
    oid_mm: f64,
    detector_size_mm: [f64; 2],
    detector_pixels: [usize; 2],
    view_angles_deg: Vec<f64>,
}

impl TryFrom<GeometryFields> for ProjectionGeometry {
    type Error = Error;

    fn try_from(f: GeometryFields) -> Result<Self> {
        ProjectionGeometry::new(f.sod_mm, f.sid_mm, f.oid_mm, f.detector_size_mm, f.detector_pixels, f.view_angles_deg)
    }
}

impl From<ProjectionGeometry> for GeometryFields {
    fn from(g: ProjectionGeometry) -> Self {
        GeometryFields {
            sod_mm: g.sod_mm,
            sid_mm: g.sid_mm,
            oid_mm: g.oid_mm,
            detector_size_mm: g.detector_size_mm,
            detector_pixels: g.detector_pixels,
            view_angles_deg: g.view_angles_deg,
        }
    }
}

/// Default tomosynthesis sweep: left 60, left 30, front, right 30, right 60.
pub const DEFAULT_VIEW_ANGLES_DEG: [f64; 5] = [-60.0, -30.0, 0.0, 30.0, 60.0];

impl Default for ProjectionGeometry {
    fn default() -> Self {
        Self {
            sod_mm: 541.0,
            sid_mm: 949.0,
            oid_mm: 408.0,
            detector_size_mm: [500.0, 500.0],
            detector_pixels: [512, 512],
            view_angles_deg: DEFAULT_VIEW_ANGLES_DEG.to_vec(),
        }
    }
}

/// A ray from the source through one detector pixel center. `dir` is unit
/// length; `length` is the source-to-pixel distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub length: f64,
}

impl ProjectionGeometry {
    pub fn new(
        sod_mm: f64,
        sid_mm: f64,
        oid_mm: f64,
        detector_size_mm: [f64; 2],
        detector_pixels: [usize; 2],
        view_angles_deg: Vec<f64>,
    ) -> Result<Self> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidGeometry(format!("{name} must be positive, got {x}")))
            }
        };
        positive("sod_mm", sod_mm)?;
        positive("sid_mm", sid_mm)?;
        positive("oid_mm", oid_mm)?;
        positive("detector width", detector_size_mm[0])?;
        positive("detector height", detector_size_mm[1])?;
        if (sod_mm + oid_mm - sid_mm).abs() > 1e-9 * sid_mm {
            return Err(Error::InvalidGeometry(format!(
                "sid ({sid_mm}) must equal sod + oid ({sod_mm} + {oid_mm})"
            )));
        }
        if detector_pixels.contains(&0) {
            return Err(Error::InvalidGeometry("detector pixel counts must be positive".into()));
        }
        if view_angles_deg.is_empty() {
            return Err(Error::InvalidGeometry("at least one view angle is required".into()));
        }
        if view_angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidGeometry("view angles must be finite".into()));
        }
        for (i, a) in view_angles_deg.iter().enumerate() {
            if view_angles_deg[..i].contains(a) {
                return Err(Error::InvalidGeometry(format!("duplicate view angle {a}")));
            }
        }
        Ok(Self {
            sod_mm,
            sid_mm,
            oid_mm,
            detector_size_mm,
            detector_pixels,
            view_angles_deg,
        })
    }

    pub fn with_views(&self, view_angles_deg: Vec<f64>) -> Result<Self> {
        Self::new(self.sod_mm, self.sid_mm, self.oid_mm, self.detector_size_mm, self.detector_pixels, view_angles_deg)
    }

    pub fn with_detector_pixels(&self, detector_pixels: [usize; 2]) -> Result<Self> {
        Self::new(
            self.sod_mm,
            self.sid_mm,
            self.oid_mm,
            self.detector_size_mm,
            detector_pixels,
            self.view_angles_deg.clone(),
        )
    }

    /// Multiplies all three distances by `factor`.
    pub fn scaled_distances(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.sod_mm * factor,
            self.sid_mm * factor,
            self.oid_mm * factor,
            self.detector_size_mm,
            self.detector_pixels,
            self.view_angles_deg.clone(),
        )
    }

    pub fn sod_mm(&self) -> f64 {
        self.sod_mm
    }

    pub fn sid_mm(&self) -> f64 {
        self.sid_mm
    }

    pub fn oid_mm(&self) -> f64 {
        self.oid_mm
    }

    pub fn detector_size_mm(&self) -> [f64; 2] {
        self.detector_size_mm
    }

    pub fn detector_pixels(&self) -> [usize; 2] {
        self.detector_pixels
    }

    pub fn view_angles_deg(&self) -> &[f64] {
        &self.view_angles_deg
    }

    pub fn n_views(&self) -> usize {
        self.view_angles_deg.len()
    }

    /// Detector pixel pitch (mm) along columns and rows.
    pub fn pitch_mm(&self) -> [f64; 2] {
        [
            self.detector_size_mm[0] / self.detector_pixels[0] as f64,
            self.detector_size_mm[1] / self.detector_pixels[1] as f64,
        ]
    }

    /// Magnification of an object at the isocenter.
    pub fn magnification(&self) -> f64 {
        self.sid_mm / self.sod_mm
    }

    /// Full fan angle subtended by the detector width at the source.
    pub fn fan_angle_deg(&self) -> f64 {
        2.0 * (self.detector_size_mm[0] / 2.0 / self.sid_mm).atan().to_degrees()
    }

    /// In-plane detector coordinates (mm) of a pixel center, `(u, v)`.
    pub fn pixel_uv(&self, col: usize, row: usize) -> (f64, f64) {
        let [pu, pv] = self.pitch_mm();
        let [nu, nv] = self.detector_pixels;
        (
            (col as f64 + 0.5 - nu as f64 / 2.0) * pu,
            (nv as f64 / 2.0 - row as f64 - 0.5) * pv,
        )
    }

    /// Source position, detector center and detector column axis at an angle.
    pub fn frame(&self, angle_deg: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let source = [self.sod_mm * s, -self.sod_mm * c, 0.0];
        let center = [-self.oid_mm * s, self.oid_mm * c, 0.0];
        let u_axis = [c, s, 0.0];
        (source, center, u_axis)
    }

    pub fn ray(&self, angle_deg: f64, col: usize, row: usize) -> Ray {
        let (source, center, u_axis) = self.frame(angle_deg);
        let (u, v) = self.pixel_uv(col, row);
        let target = [center[0] + u * u_axis[0], center[1] + u * u_axis[1], v];
        let d = [target[0] - source[0], target[1] - source[1], target[2] - source[2]];
        let length = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        Ray {
            origin: source,
            dir: [d[0] / length, d[1] / length, d[2] / length],
            length,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_satisfy_distance_identity() {
        let g = ProjectionGeometry::default();
        assert_eq!(g.sod_mm() + g.oid_mm(), g.sid_mm());
        assert_eq!(g.view_angles_deg(), &[-60.0, -30.0, 0.0, 30.0, 60.0]);
        assert!((g.pitch_mm()[0] - 0.9765625).abs() < 1e-12);
    }

    #[test]
    fn fan_angle_from_detector_and_sid() {
        let g = ProjectionGeometry::default();
        let expected = 2.0 * (250.0f64 / 949.0).atan().to_degrees();
        assert!((g.fan_angle_deg() - expected).abs() < 1e-12);
        assert!((g.fan_angle_deg() - 29.5).abs() < 0.05);
    }

    #[test]
    fn rejects_inconsistent_distances() {
        assert!(ProjectionGeometry::new(541.0, 950.0, 408.0, [500.0; 2], [512; 2], vec![0.0]).is_err());
        assert!(ProjectionGeometry::new(541.0, 0.0, 408.0, [500.0; 2], [512; 2], vec![0.0]).is_err());
        assert!(ProjectionGeometry::new(541.0, 949.0, 408.0, [500.0; 2], [512; 2], vec![]).is_err());
        assert!(ProjectionGeometry::new(541.0, 949.0, 408.0, [500.0; 2], [512; 2], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let g = ProjectionGeometry::default();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<ProjectionGeometry>(&text).unwrap(), g);
        let bad = text.replace("949.0", "950.0");
        assert!(serde_json::from_str::<ProjectionGeometry>(&bad).is_err());
    }

    #[test]
    fn central_ray_at_zero_is_anterior_posterior() {
        let g = ProjectionGeometry::default().with_detector_pixels([2, 2]).unwrap();
        let (source, center, _) = g.frame(0.0);
        assert_eq!(source, [0.0, -541.0, 0.0]);
        assert_eq!(center, [0.0, 408.0, 0.0]);
        let r = g.ray(0.0, 1, 0);
        assert!(r.dir[0] > 0.0 && r.dir[1] > 0.0 && r.dir[2] > 0.0);
    }
}
