//! A deterministic stand-in for the per-view classifier: flags compact dark
//! spots inside the lung field of a projection.
//!
//! The image is converted to transmission `exp(-p)`, shrunk to a working
//! grid and lightly smoothed. A pixel is "hot" when it lies in the lung
//! mask and, along each of four axes, the mean of the two ring points at
//! `ring_radius` on either side is brighter than the pixel by more than
//! `contrast_cutoff`, measured relative to the median lung transmission.
//! Averaging opposite points cancels smooth gradients, and taking the
//! weakest axis makes straight edges score near zero. Pixels darker than
//! `min_transmission` times the median are unreadable (behind dense
//! material); a pixel is only scored when it and its whole ring are
//! readable lung.
//! Working in transmission means a dense object in front of a lesion
//! suppresses its contrast, as in a real radiograph.

use serde::{Deserialize, Serialize};

use super::ViewPrediction;
use crate::drr::{resize_bilinear, ProjectionImage, ProjectionKind};
use crate::error::{Error, Result};
use crate::mask::Mask2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// Longer side of the working grid, in pixels.
    pub work_size: usize,
    pub smooth_radius: usize,
    /// Ring radius in working pixels; must exceed the spot radius.
    pub ring_radius: usize,
    pub contrast_cutoff: f64,
    /// Fraction of the median lung transmission below which a pixel is
    /// considered occluded.
    pub min_transmission: f64,
    /// Hot-pixel count at which the probability reaches 0.5.
    pub min_hot: f64,
    pub decision_cutoff: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            work_size: 128,
            smooth_radius: 1,
            ring_radius: 8,
            contrast_cutoff: 0.08,
            min_transmission: 0.25,
            min_hot: 6.0,
            decision_cutoff: super::DEFAULT_CUTOFF,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.work_size > 0
            && self.ring_radius > 0
            && self.contrast_cutoff.is_finite()
            && self.min_transmission.is_finite()
            && self.min_hot > 0.0
            && (0.0..=1.0).contains(&self.decision_cutoff);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid scorer config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDetail {
    pub prediction: ViewPrediction,
    pub hot_pixels: usize,
    pub lung_pixels: usize,
    pub width: usize,
    pub height: usize,
    /// Non-negative ring contrast on the working grid, zero outside the lung.
    pub residual: Vec<f32>,
}

fn shrink(src: &[f64], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    if w.is_multiple_of(ow) && h.is_multiple_of(oh) && w / ow == h / oh {
        let k = w / ow;
        let norm = (k * k) as f64;
        let mut out = vec![0.0; ow * oh];
        for y in 0..h {
            for x in 0..w {
                out[(y / k) * ow + x / k] += src[y * w + x];
            }
        }
        out.iter_mut().for_each(|v| *v /= norm);
        out
    } else {
        resize_bilinear(src, w, h, ow, oh)
    }
}

fn box_smooth(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (pos, n) = if horizontal { (x, w) } else { (y, h) };
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(n - 1);
                let sum: f64 = (lo..=hi)
                    .map(|q| if horizontal { src[y * w + q] } else { src[q * w + x] })
                    .sum();
                out[y * w + x] = sum / (hi - lo + 1) as f64;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scores one view against its projected lung mask.
pub fn threshold_scorer(
    patient_id: &str,
    projection: &ProjectionImage,
    lung_mask: &Mask2,
    cfg: &ScorerConfig,
) -> Result<ScoreDetail> {
    cfg.validate()?;
    if projection.kind() != ProjectionKind::Intensity {
        return Err(Error::InvalidParameter("scorer needs an intensity projection".into()));
    }
    let (w, h) = (projection.width(), projection.height());
    if (lung_mask.width(), lung_mask.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "lung mask {}x{} vs projection {w}x{h}",
            lung_mask.width(),
            lung_mask.height()
        )));
    }
    let scale = cfg.work_size as f64 / w.max(h) as f64;
    let (ow, oh) = if scale >= 1.0 {
        (w, h)
    } else {
        (((w as f64 * scale).round() as usize).max(1), ((h as f64 * scale).round() as usize).max(1))
    };
    let transmission: Vec<f64> = projection.pixels().iter().map(|&p| (-(p as f64)).exp()).collect();
    let s = box_smooth(&shrink(&transmission, w, h, ow, oh), ow, oh, cfg.smooth_radius);
    let lung = lung_mask.resize_nearest(ow, oh)?;

    let lung_values: Vec<f64> = (0..ow * oh).filter(|&i| lung.pixels()[i] == 1).map(|i| s[i]).collect();
    let lung_pixels = lung_values.len();
    let reference = if lung_pixels > 0 { median(lung_values) } else { 0.0 };

    let d = cfg.ring_radius as isize;
    let dd = (cfg.ring_radius as f64 / std::f64::consts::SQRT_2).round() as isize;
    // opposite ring points, one pair per axis
    let pairs = [[(d, 0), (-d, 0)], [(0, d), (0, -d)], [(dd, dd), (-dd, -dd)], [(dd, -dd), (-dd, dd)]];
    let readable = cfg.min_transmission * reference;
    let mut residual = vec![0.0f32; ow * oh];
    let mut hot_pixels = 0;
    if reference > 0.0 {
        for y in 0..oh as isize {
            for x in 0..ow as isize {
                let i = y as usize * ow + x as usize;
                if lung.pixels()[i] == 0 || s[i] < readable {
                    continue;
                }
                // ring points must be readable lung too
                let at = |(dx, dy): (isize, isize)| -> Option<f64> {
                    let (rx, ry) = (x + dx, y + dy);
                    if rx < 0 || ry < 0 || rx >= ow as isize || ry >= oh as isize {
                        return None;
                    }
                    let j = ry as usize * ow + rx as usize;
                    (lung.pixels()[j] == 1 && s[j] >= readable).then_some(s[j])
                };
                let mut min_diff = f64::INFINITY;
                for [a, b] in pairs {
                    min_diff = match (at(a), at(b)) {
                        (Some(a), Some(b)) => min_diff.min(0.5 * (a + b) - s[i]),
                        _ => f64::NEG_INFINITY,
                    };
                }
                let contrast = min_diff / reference;
                if contrast > 0.0 {
                    residual[i] = contrast as f32;
                }
                if contrast > cfg.contrast_cutoff {
                    hot_pixels += 1;
                }
            }
        }
    }
    let prob = hot_pixels as f64 / (hot_pixels as f64 + cfg.min_hot);
    Ok(ScoreDetail {
        prediction: ViewPrediction::new(patient_id, projection.view_angle_deg(), prob, cfg.decision_cutoff)?,
        hot_pixels,
        lung_pixels,
        width: ow,
        height: oh,
        residual,
    })
}
