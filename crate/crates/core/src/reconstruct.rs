//! Conversion of matched pairs into sample-plane rays, and rendering of
//! those rays into refocused images, focal stacks, and parallax views.
//!
//! Each pair fixes one ray: the image arm pins the transverse position at
//! the reference plane, the Fourier arm pins the twin-implied angle.
//! Refocusing to depth z then bins r + z*theta, so one recorded data set
//! renders at any depth after the fact.

use core::fmt;

// Float methods resolve through the trait when std is off.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use crate::coincidence::PairRecord;
use crate::event::{coordinate_to_pixel, pixel_to_coordinate, CoordinateMap};
use crate::optics::{apply, klyshko_solve, AbcdMatrix, OpticsError, Ray};
use crate::vec2::Vec2;

/// One backtracked ray at the sample reference plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRay {
    /// Transverse position, meters.
    pub r: Vec2,
    /// Propagation angle, radians, within the paraxial bound.
    pub theta: Vec2,
    pub weight: f64,
}

/// How the Fourier-arm measurement turns into an angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleRecovery {
    /// Calibrated radians-per-pixel map; assumes the Fourier-arm camera sits
    /// in an exact Fourier plane of the crystal.
    CalibratedMap,
    /// Backtrack through an arbitrary crystal-to-camera prescription: the
    /// camera reads a metric position, and the angle follows from the
    /// position pair. Fails up front when the prescription makes the camera
    /// plane conjugate to the crystal (|b| <= b_min), where position carries
    /// no angle information.
    Klyshko {
        crystal_to_camera: AbcdMatrix,
        pixel_pitch_m: f64,
        b_min_m: f64,
    },
}

/// Everything needed to turn pairs into sample-plane rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayConversion {
    pub map_image: CoordinateMap,
    pub map_fourier: CoordinateMap,
    pub angle_recovery: AngleRecovery,
    /// Propagation from the reference (crystal image) plane to the sample
    /// plane. None when the sample sits at the reference plane itself; a
    /// Fourier-plane sample uses an f-f relay here, which exchanges the
    /// roles of position and angle.
    pub sample_relay: Option<AbcdMatrix>,
    pub paraxial_max_rad: f64,
}

/// Conversion outcome counters. converted + dropped_non_paraxial equals the
/// input pair count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConversionReport {
    pub converted: usize,
    pub dropped_non_paraxial: usize,
}

/// Angular acceptance disk, expressed in Fourier-arm pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumFilter {
    pub center_px: Vec2,
    pub radius_px: f64,
}

/// Rectangular binning target at the refocus plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Center of the window, meters at the sample plane.
    pub center_m: Vec2,
    /// Full extent of the window, meters.
    pub extent_m: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconstructError {
    Optics(OpticsError),
    InvalidGrid { width: usize, height: usize, extent_m: Vec2 },
    InvalidZRange { z_min_m: f64, z_max_m: f64, z_step_m: f64 },
    /// Parallax sub-regions would poke outside the full aperture.
    LayoutTooLarge { needed_px: f64, aperture_px: f64 },
}

impl fmt::Display for ReconstructError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReconstructError::Optics(e) => e.fmt(f),
            ReconstructError::InvalidGrid { width, height, extent_m } => write!(
                f,
                "grid must have positive bins and extent, got {width}x{height} over ({}, {}) m",
                extent_m.x, extent_m.y
            ),
            ReconstructError::InvalidZRange { z_min_m, z_max_m, z_step_m } => write!(
                f,
                "need z_min <= z_max and z_step > 0, got [{z_min_m}, {z_max_m}] step {z_step_m}"
            ),
            ReconstructError::LayoutTooLarge { needed_px, aperture_px } => write!(
                f,
                "3x3 sub-regions need {needed_px:.1} px of aperture radius, have {aperture_px:.1}"
            ),
        }
    }
}

impl From<OpticsError> for ReconstructError {
    fn from(e: OpticsError) -> Self {
        ReconstructError::Optics(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ReconstructError {}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ReconstructError> {
        if self.width == 0
            || self.height == 0
            || !(self.extent_m.x > 0.0)
            || !(self.extent_m.y > 0.0)
        {
            return Err(ReconstructError::InvalidGrid {
                width: self.width,
                height: self.height,
                extent_m: self.extent_m,
            });
        }
        Ok(())
    }

    pub fn bin_size_m(&self) -> Vec2 {
        Vec2::new(
            self.extent_m.x / self.width as f64,
            self.extent_m.y / self.height as f64,
        )
    }

    /// Physical position of a bin center.
    pub fn bin_center_m(&self, ix: usize, iy: usize) -> Vec2 {
        let b = self.bin_size_m();
        Vec2::new(
            self.center_m.x - self.extent_m.x / 2.0 + (ix as f64 + 0.5) * b.x,
            self.center_m.y - self.extent_m.y / 2.0 + (iy as f64 + 0.5) * b.y,
        )
    }
}

/// Binned intensity image at one refocus depth. Row-major, row 0 at the
/// smallest y.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub spec: GridSpec,
    pub z_m: f64,
    pub counts: Vec<f64>,
    /// Total weight deposited inside the window.
    pub in_weight: f64,
    /// Total weight that fell outside.
    pub overflow_weight: f64,
}

impl ImageGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.counts[iy * self.spec.width + ix]
    }

    pub fn max_count(&self) -> f64 {
        self.counts.iter().fold(0.0f64, |m, &c| m.max(c))
    }
}

/// Ordered refocus slices over a uniform z axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalStack {
    pub z_m: Vec<f64>,
    pub slices: Vec<ImageGrid>,
}

/// How ray weight lands in bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Binning {
    /// All weight into the bin containing the point. Keeps integer count
    /// semantics for Poisson statistics.
    #[default]
    Nearest,
    /// Weight shared over the four nearest bin centers.
    Bilinear,
}

/// Convert matched pairs into sample-plane rays, one per pair, order
/// preserved. Rays whose final angle exceeds the paraxial bound are dropped
/// and counted.
pub fn pairs_to_rays(
    pairs: &[PairRecord],
    conv: &RayConversion,
) -> Result<(Vec<SampleRay>, ConversionReport), OpticsError> {
    // Surface a conjugate-plane prescription before touching any data.
    if let AngleRecovery::Klyshko {
        crystal_to_camera,
        b_min_m,
        ..
    } = conv.angle_recovery
    {
        if crystal_to_camera.b.abs() <= b_min_m {
            return Err(OpticsError::DegenerateImagingPlane {
                b: crystal_to_camera.b,
                b_min: b_min_m,
            });
        }
    }

    let mut rays = Vec::with_capacity(pairs.len());
    let mut report = ConversionReport::default();
    for pair in pairs {
        let r = pixel_to_coordinate(&conv.map_image, &pair.image);
        let theta = match conv.angle_recovery {
            AngleRecovery::CalibratedMap => pixel_to_coordinate(&conv.map_fourier, &pair.fourier),
            AngleRecovery::Klyshko {
                crystal_to_camera,
                pixel_pitch_m,
                b_min_m,
            } => {
                // Camera position relative to the beam axis, meters. Signs
                // and scale of the angle come out of the matrix algebra.
                let p = Vec2::new(pair.fourier.x, pair.fourier.y);
                let r_camera = (p - conv.map_fourier.center_px) * pixel_pitch_m;
                let (theta_ref, _) = klyshko_solve(&crystal_to_camera, r, r_camera, b_min_m)?;
                // The solved angle belongs to the reference-arm photon; its
                // twin in the sample arm carries the opposite angle.
                -theta_ref
            }
        };
        let ray = match &conv.sample_relay {
            Some(m) => apply(m, &Ray::new(r, theta)),
            None => Ray::new(r, theta),
        };
        if !ray.is_paraxial(conv.paraxial_max_rad) {
            report.dropped_non_paraxial += 1;
            continue;
        }
        rays.push(SampleRay {
            r: ray.r,
            theta: ray.theta,
            weight: 1.0,
        });
        report.converted += 1;
    }
    Ok((rays, report))
}

/// Keep rays whose angle maps back into the given Fourier-arm pixel disk,
/// boundary inclusive. Because the angle map is invertible this is exactly
/// an angular acceptance disk at the sample.
pub fn momentum_filter(
    rays: &[SampleRay],
    filter: &MomentumFilter,
    map_fourier: &CoordinateMap,
) -> Vec<SampleRay> {
    rays.iter()
        .filter(|ray| {
            let px = coordinate_to_pixel(map_fourier, ray.theta);
            (px - filter.center_px).norm() <= filter.radius_px
        })
        .copied()
        .collect()
}

/// Render rays at refocus depth z: each ray lands at r + z*theta.
///
/// The window is closed on all edges; weight outside it accumulates in
/// `overflow_weight`, so in_weight + overflow_weight equals the total ray
/// weight at every z.
pub fn form_image(rays: &[SampleRay], spec: &GridSpec, z_m: f64, binning: Binning) -> ImageGrid {
    spec.validate().expect("grid spec must be validated by the caller");
    let bin = spec.bin_size_m();
    let left = spec.center_m.x - spec.extent_m.x / 2.0;
    let top = spec.center_m.y - spec.extent_m.y / 2.0;
    let (w, h) = (spec.width, spec.height);

    let mut counts = alloc::vec![0.0f64; w * h];
    let mut in_weight = 0.0;
    let mut overflow_weight = 0.0;
    for ray in rays {
        let pos = ray.r + ray.theta * z_m;
        let u = (pos.x - left) / bin.x;
        let v = (pos.y - top) / bin.y;
        match binning {
            Binning::Nearest => {
                // Point exactly on the closing edge folds into the last bin.
                if u >= 0.0 && u <= w as f64 && v >= 0.0 && v <= h as f64 {
                    let ix = (u as usize).min(w - 1);
                    let iy = (v as usize).min(h - 1);
                    counts[iy * w + ix] += ray.weight;
                    in_weight += ray.weight;
                } else {
                    overflow_weight += ray.weight;
                }
            }
            Binning::Bilinear => {
                // Shares measured against bin centers; partial shares that
                // fall off the grid count as overflow.
                let uc = u - 0.5;
                let vc = v - 0.5;
                let i0 = uc.floor();
                let j0 = vc.floor();
                let fx = uc - i0;
                let fy = vc - j0;
                let mut deposited = 0.0;
                for (di, dj, share) in [
                    (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
                    (1.0, 0.0, fx * (1.0 - fy)),
                    (0.0, 1.0, (1.0 - fx) * fy),
                    (1.0, 1.0, fx * fy),
                ] {
                    let ix = i0 + di;
                    let iy = j0 + dj;
                    if ix >= 0.0 && ix < w as f64 && iy >= 0.0 && iy < h as f64 && share > 0.0 {
                        counts[iy as usize * w + ix as usize] += ray.weight * share;
                        deposited += ray.weight * share;
                    }
                }
                in_weight += deposited;
                overflow_weight += ray.weight - deposited;
            }
        }
    }
    ImageGrid {
        spec: *spec,
        z_m,
        counts,
        in_weight,
        overflow_weight,
    }
}

/// Render a uniform ladder of refocus depths. Slice i sits at
/// z_min + i*z_step; the count is floor((z_max - z_min) / z_step) + 1.
pub fn focal_stack(
    rays: &[SampleRay],
    spec: &GridSpec,
    z_min_m: f64,
    z_max_m: f64,
    z_step_m: f64,
    binning: Binning,
) -> Result<FocalStack, ReconstructError> {
    spec.validate()?;
    if !(z_step_m > 0.0) || !(z_min_m <= z_max_m) || !z_min_m.is_finite() || !z_max_m.is_finite() {
        return Err(ReconstructError::InvalidZRange {
            z_min_m,
            z_max_m,
            z_step_m,
        });
    }
    // Guard against 0.004/0.001 landing just under an integer.
    let n = (((z_max_m - z_min_m) / z_step_m) + 1e-9).floor() as usize + 1;
    let z_m: Vec<f64> = (0..n).map(|i| z_min_m + i as f64 * z_step_m).collect();
    let slices = z_m.iter().map(|&z| form_image(rays, spec, z, binning)).collect();
    Ok(FocalStack { z_m, slices })
}

/// 3x3 parallax layout: sub-region disks of `diameter_px` on a square grid
/// of `pitch_px` centered on the full aperture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallaxLayout {
    pub pitch_px: f64,
    pub diameter_px: f64,
}

/// One z=0 image per Fourier-plane sub-region, labeled 0..=8 row-major:
/// label k looks through the disk offset ((k%3 - 1)*pitch, (k/3 - 1)*pitch)
/// pixels from the aperture center.
pub fn parallax_grid(
    rays: &[SampleRay],
    layout: &ParallaxLayout,
    aperture: &MomentumFilter,
    map_fourier: &CoordinateMap,
    spec: &GridSpec,
    binning: Binning,
) -> Result<Vec<ImageGrid>, ReconstructError> {
    spec.validate()?;
    // The corner sub-regions sit sqrt(2)*pitch from the aperture center.
    let needed_px = core::f64::consts::SQRT_2 * layout.pitch_px + layout.diameter_px / 2.0;
    if needed_px > aperture.radius_px {
        return Err(ReconstructError::LayoutTooLarge {
            needed_px,
            aperture_px: aperture.radius_px,
        });
    }
    let mut views = Vec::with_capacity(9);
    for k in 0..9 {
        let row = (k / 3) as f64 - 1.0;
        let col = (k % 3) as f64 - 1.0;
        let sub = MomentumFilter {
            center_px: aperture.center_px
                + Vec2::new(col * layout.pitch_px, row * layout.pitch_px),
            radius_px: layout.diameter_px / 2.0,
        };
        let subset = momentum_filter(rays, &sub, map_fourier);
        views.push(form_image(&subset, spec, 0.0, binning));
    }
    Ok(views)
}

/// Build the identity-mode conversion used throughout the tests.
#[cfg(test)]
fn test_conversion() -> RayConversion {
    use crate::event::Arm;
    RayConversion {
        map_image: CoordinateMap::new(
            Arm::Image,
            Vec2::new(128.0, 128.0),
            11e-6,
            Vec2::new(1.0, 1.0),
        )
        .unwrap(),
        map_fourier: CoordinateMap::new(
            Arm::Fourier,
            Vec2::new(384.0, 128.0),
            1e-4,
            Vec2::new(-1.0, -1.0),
        )
        .unwrap(),
        angle_recovery: AngleRecovery::CalibratedMap,
        sample_relay: None,
        paraxial_max_rad: Ray::PARAXIAL_MAX_RAD,
    }
}
