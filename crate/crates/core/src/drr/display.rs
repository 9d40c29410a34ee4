use image::{GrayImage, Luma};

use super::project::{ProjectionImage, ProjectionKind};
use crate::error::{Error, Result};

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(src: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if out_w == width && out_h == height {
        return src.to_vec();
    }
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let c = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, c - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, out_w, width)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = coord(y, out_h, height);
        for &(x0, x1, tx) in &xs {
            let top = src[y0 * width + x0] * (1.0 - tx) + src[y0 * width + x1] * tx;
            let bottom = src[y1 * width + x0] * (1.0 - tx) + src[y1 * width + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// 256-bin histogram equalization of a real-valued image.
///
/// Values are binned uniformly over `[min, max]`; each bin maps to
/// `round(255 * (cdf - cdf_min) / (total - cdf_min))`. An image whose values
/// all land in one bin maps to 255.
pub fn equalize_histogram(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let bin = |v: f64| -> usize {
        if hi > lo {
            (((v - lo) / (hi - lo) * 256.0).floor() as usize).min(255)
        } else {
            0
        }
    };
    let mut hist = [0usize; 256];
    for &v in values {
        hist[bin(v)] += 1;
    }
    let total = values.len();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let lut: Vec<u8> = cdf
        .iter()
        .map(|&c| {
            if total == cdf_min {
                255
            } else {
                let num = c.saturating_sub(cdf_min) as f64 * 255.0;
                (num / (total - cdf_min) as f64).round() as u8
            }
        })
        .collect();
    values.iter().map(|&v| lut[bin(v)]).collect()
}

/// Radiograph-style 8-bit rendering: negated line integrals (air bright),
/// bilinear resize to `out_pixels`, then histogram equalization.
pub fn to_display(p: &ProjectionImage, out_pixels: [usize; 2]) -> Result<GrayImage> {
    if p.kind() != ProjectionKind::Intensity {
        return Err(Error::InvalidParameter("display transform needs an intensity projection".into()));
    }
    let [ow, oh] = out_pixels;
    if ow == 0 || oh == 0 {
        return Err(Error::InvalidParameter("display size must be positive".into()));
    }
    let negated: Vec<f64> = p.pixels().iter().map(|&x| -(x as f64)).collect();
    let resized = resize_bilinear(&negated, p.width(), p.height(), ow, oh);
    let levels = equalize_histogram(&resized);
    Ok(GrayImage::from_fn(ow as u32, oh as u32, |x, y| {
        Luma([levels[y as usize * ow + x as usize]])
    }))
}
