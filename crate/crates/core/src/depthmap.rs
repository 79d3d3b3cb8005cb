//! Shape-from-focus depth estimation over a focal stack: per-pixel sharpness
//! via a modified Laplacian, argmax depth with sub-slice refinement,
//! all-in-focus compositing, foreground segmentation, and depth histograms.
//!
//! Depth values carry whatever unit the caller's z axis uses. Undefined and
//! background pixels store depth 0 by convention.

use core::fmt;

use alloc::vec::Vec;

use crate::reconstruct::{FocalStack, ImageGrid};

#[derive(Debug, Clone, PartialEq)]
pub enum DepthError {
    /// Second differences need at least a 3x3 image.
    GridTooSmall { width: usize, height: usize },
    /// Peak refinement needs at least 3 slices.
    TooFewSlices { slices: usize },
    AxisMismatch { axis: usize, slices: usize },
    AxisNotIncreasing { index: usize },
    /// Slices of one stack must share dimensions.
    MixedSliceShapes,
    /// Threshold window must be odd so the mean is centered.
    BadWindow { window_px: usize },
}

impl fmt::Display for DepthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthError::GridTooSmall { width, height } => {
                write!(f, "sharpness needs at least 3x3 pixels, got {width}x{height}")
            }
            DepthError::TooFewSlices { slices } => {
                write!(f, "depth estimation needs at least 3 slices, got {slices}")
            }
            DepthError::AxisMismatch { axis, slices } => {
                write!(f, "z axis has {axis} entries for {slices} slices")
            }
            DepthError::AxisNotIncreasing { index } => {
                write!(f, "z axis must increase strictly (violated at index {index})")
            }
            DepthError::MixedSliceShapes => write!(f, "stack slices differ in shape"),
            DepthError::BadWindow { window_px } => {
                write!(f, "threshold window must be odd and >= 3, got {window_px}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DepthError {}

/// Per-pixel sharpness for every stack slice, stored slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessVolume {
    pub width: usize,
    pub height: usize,
    pub slices: Vec<Vec<f64>>,
}

impl SharpnessVolume {
    pub fn ml(&self, z: usize) -> &[f64] {
        &self.slices[z]
    }
}

/// Per-pixel depth, peak sharpness, and foreground mask on the stack grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Same unit as the z axis the map was built from; 0 where undefined
    /// or masked out.
    pub depth: Vec<f64>,
    /// Peak ML value per pixel; 0 where no sharpness was found.
    pub confidence: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Squared second central differences, (Dxx)^2 + (Dyy)^2, unit pixel step,
/// replicate border.
pub fn modified_laplacian(image: &ImageGrid) -> Result<Vec<f64>, DepthError> {
    let (w, h) = (image.spec.width, image.spec.height);
    if w < 3 || h < 3 {
        return Err(DepthError::GridTooSmall { width: w, height: h });
    }
    let c = &image.counts;
    let mut ml = alloc::vec![0.0f64; w * h];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let dxx = c[y * w + xm] - 2.0 * c[y * w + x] + c[y * w + xp];
            let dyy = c[ym * w + x] - 2.0 * c[y * w + x] + c[yp * w + x];
            ml[y * w + x] = dxx * dxx + dyy * dyy;
        }
    }
    Ok(ml)
}

/// Sharpness of every slice of a stack.
pub fn sharpness_volume(stack: &FocalStack) -> Result<SharpnessVolume, DepthError> {
    let first = stack.slices.first().ok_or(DepthError::TooFewSlices { slices: 0 })?;
    let (w, h) = (first.spec.width, first.spec.height);
    if stack.slices.iter().any(|s| s.spec.width != w || s.spec.height != h) {
        return Err(DepthError::MixedSliceShapes);
    }
    let slices = stack
        .slices
        .iter()
        .map(modified_laplacian)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SharpnessVolume {
        width: w,
        height: h,
        slices,
    })
}

fn validate_axis(z_axis: &[f64], slices: usize) -> Result<(), DepthError> {
    if z_axis.len() != slices {
        return Err(DepthError::AxisMismatch {
            axis: z_axis.len(),
            slices,
        });
    }
    if let Some(i) = z_axis.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(DepthError::AxisNotIncreasing { index: i + 1 });
    }
    Ok(())
}

/// Per-pixel depth from the sharpness volume.
///
/// The depth is the z of the slice with the largest ML (ties take the
/// smallest z). When the peak is interior and both neighbors are positive,
/// a parabola through ln(ML) at the three slices refines the depth below
/// slice pitch; a Gaussian peak is recovered exactly because its log is the
/// parabola. The refinement offset is clamped to one slice. Pixels whose ML
/// is zero everywhere get depth 0 and confidence 0.
///
/// The returned mask marks pixels with any sharpness; segmentation usually
/// replaces it via [`apply_mask`].
pub fn depth_from_focus(
    volume: &SharpnessVolume,
    z_axis: &[f64],
) -> Result<DepthMap, DepthError> {
    let nz = volume.slices.len();
    if nz < 3 {
        return Err(DepthError::TooFewSlices { slices: nz });
    }
    validate_axis(z_axis, nz)?;

    let npx = volume.width * volume.height;
    let mut depth = alloc::vec![0.0f64; npx];
    let mut confidence = alloc::vec![0.0f64; npx];
    let mut mask = alloc::vec![false; npx];

    for p in 0..npx {
        let mut best = 0usize;
        let mut best_ml = volume.slices[0][p];
        for z in 1..nz {
            let v = volume.slices[z][p];
            if v > best_ml {
                best_ml = v;
                best = z;
            }
        }
        if !(best_ml > 0.0) {
            continue;
        }
        confidence[p] = best_ml;
        mask[p] = true;

        let mut d = z_axis[best];
        if best > 0 && best + 1 < nz {
            let lo = volume.slices[best - 1][p];
            let hi = volume.slices[best + 1][p];
            if lo > 0.0 && hi > 0.0 {
                let lm = ln(lo);
                let l0 = ln(best_ml);
                let lp = ln(hi);
                let denom = lm + lp - 2.0 * l0;
                if denom < 0.0 {
                    let t = ((lm - lp) / (2.0 * denom)).clamp(-1.0, 1.0);
                    let spacing = if t >= 0.0 {
                        z_axis[best + 1] - z_axis[best]
                    } else {
                        z_axis[best] - z_axis[best - 1]
                    };
                    d += t * spacing;
                }
            }
        }
        depth[p] = d;
    }
    Ok(DepthMap {
        width: volume.width,
        height: volume.height,
        depth,
        confidence,
        mask,
    })
}

fn ln(x: f64) -> f64 {
    num_traits::Float::ln(x)
}

/// Intersect the map's mask with `foreground` and zero the depth of every
/// background pixel.
pub fn apply_mask(map: &mut DepthMap, foreground: &[bool]) {
    assert_eq!(foreground.len(), map.depth.len());
    for (i, &fg) in foreground.iter().enumerate() {
        map.mask[i] = map.mask[i] && fg;
        if !map.mask[i] {
            map.depth[i] = 0.0;
        }
    }
}

/// Composite image taking each pixel from the stack slice nearest to that
/// pixel's depth. `z_axis` must be the axis the depth map was built from.
pub fn all_in_focus(
    stack: &FocalStack,
    map: &DepthMap,
    z_axis: &[f64],
) -> Result<ImageGrid, DepthError> {
    let nz = stack.slices.len();
    validate_axis(z_axis, nz)?;
    let first = stack.slices.first().ok_or(DepthError::TooFewSlices { slices: 0 })?;
    let (w, h) = (first.spec.width, first.spec.height);
    if map.width != w || map.height != h {
        return Err(DepthError::MixedSliceShapes);
    }

    let mut counts = alloc::vec![0.0f64; w * h];
    for p in 0..w * h {
        let z = nearest_slice(z_axis, map.depth[p]);
        counts[p] = stack.slices[z].counts[p];
    }
    let in_weight = counts.iter().sum();
    Ok(ImageGrid {
        spec: first.spec,
        // A composite has no single depth; callers label it separately.
        z_m: 0.0,
        counts,
        in_weight,
        overflow_weight: 0.0,
    })
}

/// Index of the axis entry closest to `z`; ties take the smaller index.
fn nearest_slice(z_axis: &[f64], z: f64) -> usize {
    let hi = z_axis.partition_point(|&v| v < z);
    if hi == 0 {
        return 0;
    }
    if hi == z_axis.len() {
        return z_axis.len() - 1;
    }
    if z - z_axis[hi - 1] <= z_axis[hi] - z {
        hi - 1
    } else {
        hi
    }
}

/// Foreground mask: pixel is kept iff its value exceeds the local mean over
/// a window (replicate border) plus `offset`. `offset = -inf` keeps all.
pub fn adaptive_threshold(
    image: &ImageGrid,
    window_px: usize,
    offset: f64,
) -> Result<Vec<bool>, DepthError> {
    if window_px < 3 || window_px % 2 == 0 {
        return Err(DepthError::BadWindow { window_px });
    }
    let (w, h) = (image.spec.width, image.spec.height);
    let r = (window_px / 2) as isize;
    let c = &image.counts;

    // Separable box mean with clamped (replicated) indices.
    let mut rows = alloc::vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in -r..=r {
                let xi = (x as isize + k).clamp(0, w as isize - 1) as usize;
                s += c[y * w + xi];
            }
            rows[y * w + x] = s;
        }
    }
    let norm = (window_px * window_px) as f64;
    let mut mask = alloc::vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in -r..=r {
                let yi = (y as isize + k).clamp(0, h as isize - 1) as usize;
                s += rows[yi * w + x];
            }
            mask[y * w + x] = c[y * w + x] > s / norm + offset;
        }
    }
    Ok(mask)
}

/// Histogram of masked depths over bins centered on the z axis entries.
/// Out-of-range depths clamp into the end bins, so the total always equals
/// the number of mask-true pixels.
pub fn depth_histogram(map: &DepthMap, z_axis: &[f64]) -> Result<Vec<u64>, DepthError> {
    if z_axis.is_empty() {
        return Err(DepthError::AxisMismatch { axis: 0, slices: 0 });
    }
    if let Some(i) = z_axis.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(DepthError::AxisNotIncreasing { index: i + 1 });
    }
    let mut counts = alloc::vec![0u64; z_axis.len()];
    for p in 0..map.depth.len() {
        if map.mask[p] {
            counts[nearest_slice(z_axis, map.depth[p])] += 1;
        }
    }
    Ok(counts)
}
