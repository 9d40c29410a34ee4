//! Scanning-bed removal, one axial slice at a time.
//!
//! Each slice is thresholded, cleaned with a median filter followed by an
//! erosion/dilation pair, and reduced to the hole-filled 8-connected
//! component with the largest filled area. Voxels outside that mask are set
//! to the volume's background fill.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mask::SliceMask;
use crate::volume::{BinaryVolume, CtVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BedRemovalConfig {
    pub threshold_hu: f64,
    pub median_kernel: usize,
    pub erode_radius: usize,
    pub dilate_radius: usize,
}

impl Default for BedRemovalConfig {
    fn default() -> Self {
        Self {
            threshold_hu: -500.0,
            median_kernel: 5,
            erode_radius: 2,
            dilate_radius: 2,
        }
    }
}

impl BedRemovalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "median kernel must be odd and positive, got {}",
                self.median_kernel
            )));
        }
        if !self.threshold_hu.is_finite() {
            return Err(Error::InvalidParameter("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Pixel = 1 iff HU >= threshold.
pub fn threshold_slice(slice: &[f32], width: usize, height: usize, cfg: &BedRemovalConfig) -> Result<SliceMask> {
    SliceMask::new(
        width,
        height,
        slice
            .iter()
            .map(|&v| u8::from(v as f64 >= cfg.threshold_hu))
            .collect(),
    )
}

/// Sum of each pixel's square window of the given radius, with the border
/// replicated. Separable: a clamped row pass, then a clamped column pass.
pub(crate) fn box_count(m: &SliceMask, radius: usize) -> Vec<u32> {
    let (w, h) = (m.width(), m.height());
    let r = radius as isize;
    let px = m.pixels();
    let mut rows = vec![0u32; w * h];
    for y in 0..h {
        let row = &px[y * w..(y + 1) * w];
        // running window over clamped indices
        let at = |x: isize| row[x.clamp(0, w as isize - 1) as usize] as u32;
        let mut acc: u32 = (-r..=r).map(at).sum();
        for x in 0..w as isize {
            rows[y * w + x as usize] = acc;
            acc = acc + at(x + r + 1) - at(x - r);
        }
    }
    let mut out = vec![0u32; w * h];
    for x in 0..w {
        let at = |y: isize| rows[y.clamp(0, h as isize - 1) as usize * w + x];
        let mut acc: u32 = (-r..=r).map(at).sum();
        for y in 0..h as isize {
            out[y as usize * w + x] = acc;
            acc = acc + at(y + r + 1) - at(y - r);
        }
    }
    out
}

fn median_binary(m: &SliceMask, kernel: usize) -> SliceMask {
    if kernel <= 1 {
        return m.clone();
    }
    let area = (kernel * kernel) as u32;
    let counts = box_count(m, kernel / 2);
    SliceMask::from_raw(
        m.width(),
        m.height(),
        counts.iter().map(|&c| u8::from(2 * c > area)).collect(),
    )
}

pub(crate) fn erode(m: &SliceMask, radius: usize) -> SliceMask {
    if radius == 0 {
        return m.clone();
    }
    let area = ((2 * radius + 1) * (2 * radius + 1)) as u32;
    let counts = box_count(m, radius);
    SliceMask::from_raw(m.width(), m.height(), counts.iter().map(|&c| u8::from(c == area)).collect())
}

pub(crate) fn dilate(m: &SliceMask, radius: usize) -> SliceMask {
    if radius == 0 {
        return m.clone();
    }
    let counts = box_count(m, radius);
    SliceMask::from_raw(m.width(), m.height(), counts.iter().map(|&c| u8::from(c > 0)).collect())
}

/// Median filter, then erosion, then dilation (square elements,
/// replicate-edge padding).
pub fn denoise_binary(m: &SliceMask, cfg: &BedRemovalConfig) -> SliceMask {
    let med = median_binary(m, cfg.median_kernel);
    dilate(&erode(&med, cfg.erode_radius), cfg.dilate_radius)
}

/// 8-connected component labels (0 = background) and per-component
/// bounding boxes `[x0, y0, x1, y1]` (inclusive).
fn label_components(m: &SliceMask) -> (Vec<u32>, Vec<[usize; 4]>) {
    let (w, h) = (m.width(), m.height());
    let mut labels = vec![0u32; w * h];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if m.pixels()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = boxes.len() as u32 + 1;
        let mut bb = [start % w, start / w, start % w, start / w];
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            bb = [bb[0].min(x), bb[1].min(y), bb[2].max(x), bb[3].max(y)];
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if m.pixels()[q] == 1 && labels[q] == 0 {
                        labels[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        boxes.push(bb);
    }
    (labels, boxes)
}

/// Filled region of one component: everything in its bounding box that the
/// outside cannot reach through 4-connected non-component pixels.
/// Returns the filled pixels as (x, y) in the full image.
fn filled_component(labels: &[u32], width: usize, id: u32, bb: [usize; 4]) -> Vec<(usize, usize)> {
    // bounding box padded by one pixel on each side
    let bw = bb[2] - bb[0] + 3;
    let bh = bb[3] - bb[1] + 3;
    let inside = |lx: usize, ly: usize| -> bool {
        if lx == 0 || ly == 0 || lx == bw - 1 || ly == bh - 1 {
            return false;
        }
        labels[(bb[1] + ly - 1) * width + bb[0] + lx - 1] == id
    };
    let mut outside = vec![false; bw * bh];
    let mut queue = VecDeque::new();
    outside[0] = true;
    queue.push_back((0usize, 0usize));
    while let Some((x, y)) = queue.pop_front() {
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx >= bw || ny >= bh {
                continue;
            }
            let idx = ny * bw + nx;
            if !outside[idx] && !inside(nx, ny) {
                outside[idx] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    let mut filled = Vec::new();
    for ly in 1..bh - 1 {
        for lx in 1..bw - 1 {
            if !outside[ly * bw + lx] {
                filled.push((bb[0] + lx - 1, bb[1] + ly - 1));
            }
        }
    }
    filled
}

/// The hole-filled 8-connected component with the largest filled area.
/// Ties go to the component found first in raster order.
pub fn largest_component_mask(m: &SliceMask) -> SliceMask {
    let (w, h) = (m.width(), m.height());
    let (labels, boxes) = label_components(m);
    if boxes.is_empty() {
        return SliceMask::zeros(w, h);
    }
    // Bounding-box area bounds the filled area, so candidates can be
    // visited in descending box area and the scan cut short.
    let box_area = |b: &[usize; 4]| (b[2] - b[0] + 1) * (b[3] - b[1] + 1);
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| box_area(&boxes[b]).cmp(&box_area(&boxes[a])).then(a.cmp(&b)));
    // (filled area, component index, filled pixels)
    type Candidate = (usize, usize, Vec<(usize, usize)>);
    let mut best: Option<Candidate> = None;
    for idx in order {
        if let Some((area, _, _)) = &best {
            if box_area(&boxes[idx]) < *area {
                break;
            }
        }
        let filled = filled_component(&labels, w, idx as u32 + 1, boxes[idx]);
        let better = match &best {
            None => true,
            Some((area, best_idx, _)) => filled.len() > *area || (filled.len() == *area && idx < *best_idx),
        };
        if better {
            best = Some((filled.len(), idx, filled));
        }
    }
    let mut out = vec![0u8; w * h];
    if let Some((_, _, filled)) = best {
        for (x, y) in filled {
            out[y * w + x] = 1;
        }
    }
    SliceMask::from_raw(w, h, out)
}

/// Stages 1-3 for a single axial slice.
pub fn subject_mask_for_slice(slice: &[f32], width: usize, height: usize, cfg: &BedRemovalConfig) -> Result<SliceMask> {
    let raw = threshold_slice(slice, width, height, cfg)?;
    Ok(largest_component_mask(&denoise_binary(&raw, cfg)))
}

pub fn strip_bed(v: &CtVolume, cfg: &BedRemovalConfig) -> Result<(CtVolume, BinaryVolume)> {
    strip_bed_with(v, cfg, Exec::default())
}

/// Removes everything outside the per-slice subject mask; returns the
/// subject-only volume and the stacked 3D mask.
pub fn strip_bed_with(v: &CtVolume, cfg: &BedRemovalConfig, exec: Exec) -> Result<(CtVolume, BinaryVolume)> {
    cfg.validate()?;
    let [w, h, d] = v.dims();
    let masks = exec.try_map_range(d, |z| subject_mask_for_slice(v.slice(z), w, h, cfg))?;
    let fill = v.background_fill();
    let mut voxels = Vec::with_capacity(v.len());
    let mut mask_voxels = Vec::with_capacity(v.len());
    for (z, m) in masks.iter().enumerate() {
        for (&value, &keep) in v.slice(z).iter().zip(m.pixels()) {
            voxels.push(if keep == 1 { value } else { fill });
        }
        mask_voxels.extend_from_slice(m.pixels());
    }
    Ok((
        v.with_voxels(voxels)?,
        BinaryVolume::new(v.dims(), v.spacing(), v.origin(), mask_voxels)?,
    ))
}
