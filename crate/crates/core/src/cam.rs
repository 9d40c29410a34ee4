//! Lung-mask refinement of class activation maps and heatmap overlays.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::drr::{resize_bilinear, ProjectionImage};
use crate::error::{Error, Result};
use crate::mask::Mask2;

/// A binary mask on the activation grid.
pub type FeatureMask = Mask2;

/// Opacity of the heatmap over the base image.
pub const OVERLAY_ALPHA: f64 = 0.4;

/// `h × w × c` activations, row-major with channels fastest:
/// `values[(y * w + x) * c + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    h: usize,
    w: usize,
    c: usize,
    values: Vec<f32>,
    pub patient_id: String,
    pub view_angle_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelReduce {
    Mean,
    Max,
}

impl std::str::FromStr for ChannelReduce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidParameter(format!("unknown channel reduction {other:?}"))),
        }
    }
}

impl ActivationMap {
    pub fn new(
        h: usize,
        w: usize,
        c: usize,
        values: Vec<f32>,
        patient_id: impl Into<String>,
        view_angle_deg: f64,
    ) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 || values.len() != h * w * c {
            return Err(Error::DimensionMismatch(format!(
                "activation {h}x{w}x{c} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("activation values must be finite".into()));
        }
        Ok(Self {
            h,
            w,
            c,
            values,
            patient_id: patient_id.into(),
            view_angle_deg,
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, k: usize) -> f32 {
        self.values[(y * self.w + x) * self.c + k]
    }

    /// Collapses channels to one `h × w` plane.
    pub fn reduce(&self, how: ChannelReduce) -> Vec<f32> {
        self.values
            .chunks_exact(self.c)
            .map(|px| match how {
                ChannelReduce::Mean => px.iter().sum::<f32>() / self.c as f32,
                ChannelReduce::Max => px.iter().copied().fold(f32::NEG_INFINITY, f32::max),
            })
            .collect()
    }
}

/// Nearest-neighbour resize of a projected mask onto the activation grid.
pub fn align_mask(m: &ProjectionImage, h: usize, w: usize) -> Result<FeatureMask> {
    m.to_mask()?.resize_nearest(w, h)
}

/// Zeroes every activation outside the mask; all channels share the mask.
pub fn refine(a: &ActivationMap, m: &FeatureMask) -> Result<ActivationMap> {
    if (m.height(), m.width()) != (a.h, a.w) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs activation {}x{}",
            m.height(),
            m.width(),
            a.h,
            a.w
        )));
    }
    let values = a
        .values
        .chunks_exact(a.c)
        .zip(m.pixels())
        .flat_map(|(px, &keep)| px.iter().map(move |&v| v * f32::from(keep)))
        .collect();
    Ok(ActivationMap { values, ..a.clone() })
}

/// The jet colormap at `t ∈ [0, 1]`.
pub fn jet(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |offset: f64| ((1.5 - (4.0 * t - offset).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Heatmap overlay of `a` on `base`.
///
/// Channels are reduced, negatives clipped, the map bilinearly upscaled to
/// the base size and, when `mask` is given, gated by its nearest-neighbour
/// upscale. Values are min–max normalized over in-mask pixels, mapped
/// through [`jet`] and blended at [`OVERLAY_ALPHA`] wherever the upscaled
/// activation is positive; other pixels keep the base gray level.
pub fn render_overlay(a: &ActivationMap, base: &GrayImage, reduce: ChannelReduce, mask: Option<&FeatureMask>) -> Result<RgbImage> {
    let (bw, bh) = (base.width() as usize, base.height() as usize);
    let plane: Vec<f64> = a.reduce(reduce).into_iter().map(|v| f64::from(v.max(0.0))).collect();
    let mut up = resize_bilinear(&plane, a.w, a.h, bw, bh);
    let gate = match mask {
        Some(m) => {
            if (m.height(), m.width()) != (a.h, a.w) {
                return Err(Error::DimensionMismatch("overlay mask must match the activation grid".into()));
            }
            Some(m.resize_nearest(bw, bh)?)
        }
        None => None,
    };
    if let Some(g) = &gate {
        up.iter_mut().zip(g.pixels()).filter(|(_, &k)| k == 0).for_each(|(v, _)| *v = 0.0);
    }
    let inside = |i: usize| gate.as_ref().is_none_or(|g| g.pixels()[i] == 1);
    let (lo, hi) = (0..up.len())
        .filter(|&i| inside(i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(up[i]), hi.max(up[i])));
    let mut out = RgbImage::new(base.width(), base.height());
    for (i, (px, g)) in out.pixels_mut().zip(base.pixels()).enumerate() {
        let gray = f64::from(g.0[0]);
        *px = if up[i] > 0.0 {
            let t = if hi > lo { (up[i] - lo) / (hi - lo) } else { 1.0 };
            let c = jet(t);
            Rgb(c.map(|v| ((1.0 - OVERLAY_ALPHA) * gray + OVERLAY_ALPHA * f64::from(v)).round() as u8))
        } else {
            Rgb([g.0[0]; 3])
        };
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ActivationHeader {
    h: usize,
    w: usize,
    c: usize,
    patient_id: String,
    view_angle_deg: f64,
}

/// One JSON header line, a newline, then `h·w·c` little-endian f32 values.
pub fn write_activation(path: impl AsRef<Path>, a: &ActivationMap) -> Result<()> {
    let path = path.as_ref();
    let header = ActivationHeader {
        h: a.h,
        w: a.w,
        c: a.c,
        patient_id: a.patient_id.clone(),
        view_angle_deg: a.view_angle_deg,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.extend(a.values.iter().flat_map(|v| v.to_le_bytes()));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_activation(path: impl AsRef<Path>) -> Result<ActivationMap> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let h: ActivationHeader = serde_json::from_str(line.trim_end()).map_err(|e| malformed(e.to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = h.h * h.w * h.c;
    if payload.len() != expected * 4 {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    ActivationMap::new(h.h, h.w, h.c, values, h.patient_id, h.view_angle_deg)
}
