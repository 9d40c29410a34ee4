//! Projection image files.
//!
//! Intensity views are 16-bit binary PGM files holding
//! `round(line_integral * scale)`, with `scale` and the geometry declared in
//! a JSON sidecar of the same stem. Masks and display images are 8-bit PGM;
//! masks store 0/255 and read back as "nonzero means 1".

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use super::geometry::ProjectionGeometry;
use super::project::{ProjectionImage, ProjectionKind};
use crate::error::{Error, Result};
use crate::mask::Mask2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSidecar {
    pub kind: ProjectionKind,
    pub view_angle_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Stored sample = round(line integral * scale).
    pub scale: f64,
    pub geometry: ProjectionGeometry,
}

/// File stem for a view, e.g. `view_+30`, `view_-60`, `view_+0`.
pub fn view_stem(angle_deg: f64) -> String {
    format!("view_{angle_deg:+}")
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::ImageFormat(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let subtype = match color {
        ExtendedColorType::Rgb8 => PnmSubtype::Pixmap(SampleEncoding::Binary),
        _ => PnmSubtype::Graymap(SampleEncoding::Binary),
    };
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| image_err(path, e))
}

/// Writes a 16-bit PGM plus its JSON sidecar.
pub fn write_projection(p: &ProjectionImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let max = p.max_value() as f64;
    let scale = if max > 0.0 { 65535.0 / max } else { 1.0 };
    ensure_parent(path)?;
    // 16-bit PNM samples are big-endian
    let mut bytes = format!("P5\n{} {}\n65535\n", p.width(), p.height()).into_bytes();
    for &x in p.pixels() {
        let q = (x as f64 * scale).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = ProjectionSidecar {
        kind: p.kind(),
        view_angle_deg: p.view_angle_deg(),
        width: p.width(),
        height: p.height(),
        scale,
        geometry: p.geometry().clone(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&side, e))
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<ProjectionImage> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ProjectionSidecar = serde_json::from_str(&text)?;
    if !(meta.scale.is_finite() && meta.scale > 0.0) {
        return Err(image_err(&side, "scale must be positive"));
    }
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .into_luma16();
    if (img.width() as usize, img.height() as usize) != (meta.width, meta.height) {
        return Err(image_err(path, "image size disagrees with sidecar"));
    }
    let pixels = img.pixels().map(|p| (p.0[0] as f64 / meta.scale) as f32).collect();
    ProjectionImage::new(meta.width, meta.height, pixels, meta.view_angle_deg, meta.kind, meta.geometry)
}

pub fn write_mask_pgm(m: &Mask2, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = m.pixels().iter().map(|&p| p * 255).collect();
    write_pgm(path.as_ref(), m.width(), m.height(), &bytes, ExtendedColorType::L8)
}

/// Reads any grayscale PGM as a mask; nonzero samples become 1.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<Mask2> {
    let g = read_gray_pgm(path)?;
    Mask2::new(
        g.width() as usize,
        g.height() as usize,
        g.pixels().map(|p| u8::from(p.0[0] > 0)).collect(),
    )
}

pub fn write_gray_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(path.as_ref(), img.width() as usize, img.height() as usize, img.as_raw(), ExtendedColorType::L8)
}

pub fn read_gray_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    Ok(ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .into_luma8())
}

pub fn write_rgb_ppm(img: &image::RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(path.as_ref(), img.width() as usize, img.height() as usize, img.as_raw(), ExtendedColorType::Rgb8)
}

pub fn write_geometry(g: &ProjectionGeometry, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(g)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_geometry(path: impl AsRef<Path>) -> Result<ProjectionGeometry> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidGeometry(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(view_stem(-60.0), "view_-60");
        assert_eq!(view_stem(30.0), "view_+30");
        assert_eq!(view_stem(0.0), "view_+0");
        assert_eq!(view_stem(12.5), "view_+12.5");
    }

    #[test]
    fn projection_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let g = ProjectionGeometry::default().with_detector_pixels([5, 3]).unwrap();
        let px: Vec<f32> = (0..15).map(|i| i as f32 * 0.37).collect();
        let p = ProjectionImage::new(5, 3, px, -30.0, ProjectionKind::Intensity, g).unwrap();
        let path = dir.path().join("view_-30.pgm");
        write_projection(&p, &path).unwrap();
        let back = read_projection(&path).unwrap();
        assert_eq!(back.view_angle_deg(), -30.0);
        assert_eq!(back.geometry(), p.geometry());
        let step = p.max_value() / 65535.0;
        for (a, b) in back.pixels().iter().zip(p.pixels()) {
            assert!((a - b).abs() <= step, "{a} {b}");
        }
    }

    #[test]
    fn zero_projection_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = ProjectionGeometry::default().with_detector_pixels([2, 2]).unwrap();
        let p = ProjectionImage::new(2, 2, vec![0.0; 4], 0.0, ProjectionKind::Intensity, g).unwrap();
        let path = dir.path().join("z.pgm");
        write_projection(&p, &path).unwrap();
        assert_eq!(read_projection(&path).unwrap(), p);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask2::from_fn(7, 4, |x, y| x > y);
        let path = dir.path().join("m.pgm");
        write_mask_pgm(&m, &path).unwrap();
        assert_eq!(read_mask_pgm(&path).unwrap(), m);
    }

    #[test]
    fn geometry_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geom.json");
        let g = ProjectionGeometry::default().with_views(vec![-60.0, 0.0, 60.0]).unwrap();
        write_geometry(&g, &path).unwrap();
        assert_eq!(read_geometry(&path).unwrap(), g);
    }
}
