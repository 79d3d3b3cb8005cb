//! Data model for time-tagged camera hits and centroided photon events, plus
//! the affine maps between pixel coordinates and physical sample-plane
//! coordinates.
//!
//! Times are integer picoseconds on the wire and in [`PixelHit`] to avoid
//! float drift over minute-long runs; everything downstream of centroiding
//! speaks f64 nanoseconds.

use core::fmt;

use alloc::vec::Vec;

use crate::vec2::Vec2;

/// One raw camera hit: a pixel that crossed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelHit {
    /// Pixel column, 0-based.
    pub x: u16,
    /// Pixel row, 0-based.
    pub y: u16,
    /// Time of arrival, picoseconds since run start.
    pub toa_ps: u64,
    /// Time over threshold, arbitrary amplitude units, >= 1.
    pub tot: u16,
}

/// One centroided photon: sub-pixel position, corrected time, summed
/// amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    pub x: f64,
    pub y: f64,
    pub t_ns: f64,
    /// Summed tot over the cluster.
    pub amplitude: u32,
}

/// Circular beam footprint on the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamRegion {
    /// Fractional pixel coordinates of the beam center.
    pub center_px: Vec2,
    pub radius_px: f64,
}

/// Which detection arm a camera region or coordinate map belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Sample arm: the camera plane is conjugate to the sample reference
    /// plane, pixels encode transverse position.
    Image,
    /// Reference arm: the camera sits in a Fourier plane, pixels encode the
    /// twin photon's angle.
    Fourier,
}

/// Sensor dimensions and the two beam footprints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGeometry {
    pub width: u16,
    pub height: u16,
    /// Physical pixel pitch, meters.
    pub pixel_pitch_m: f64,
    pub image_region: BeamRegion,
    pub fourier_region: BeamRegion,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventError {
    /// A beam region extends past the sensor edge.
    RegionOffSensor { arm: Arm },
    /// The two beam regions intersect; hits could not be attributed.
    RegionsOverlap,
    NonPositiveRadius { arm: Arm },
    NonPositiveScale { scale: f64 },
    /// Coordinate map sign components must be exactly +1 or -1.
    BadSign { sign: Vec2 },
}

impl fmt::Display for EventError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventError::RegionOffSensor { arm } => {
                write!(f, "{arm:?} beam region extends past the sensor edge")
            }
            EventError::RegionsOverlap => write!(f, "beam regions overlap"),
            EventError::NonPositiveRadius { arm } => {
                write!(f, "{arm:?} beam region radius must be > 0")
            }
            EventError::NonPositiveScale { scale } => {
                write!(f, "coordinate map scale must be > 0, got {scale}")
            }
            EventError::BadSign { sign } => write!(
                f,
                "coordinate map sign must be +/-1 per axis, got ({}, {})",
                sign.x, sign.y
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EventError {}

impl CameraGeometry {
    /// Both regions fully on sensor, disjoint, positive radii.
    pub fn validate(&self) -> Result<(), EventError> {
        for (arm, region) in [
            (Arm::Image, &self.image_region),
            (Arm::Fourier, &self.fourier_region),
        ] {
            if !(region.radius_px > 0.0) {
                return Err(EventError::NonPositiveRadius { arm });
            }
            let c = region.center_px;
            let r = region.radius_px;
            if c.x - r < 0.0
                || c.y - r < 0.0
                || c.x + r > self.width as f64
                || c.y + r > self.height as f64
            {
                return Err(EventError::RegionOffSensor { arm });
            }
        }
        let gap = (self.image_region.center_px - self.fourier_region.center_px).norm();
        if gap < self.image_region.radius_px + self.fourier_region.radius_px {
            return Err(EventError::RegionsOverlap);
        }
        Ok(())
    }

    pub fn region(&self, arm: Arm) -> &BeamRegion {
        match arm {
            Arm::Image => &self.image_region,
            Arm::Fourier => &self.fourier_region,
        }
    }
}

/// True iff the event lies within the region, boundary inclusive.
pub fn in_region(event: &PhotonEvent, region: &BeamRegion) -> bool {
    (Vec2::new(event.x, event.y) - region.center_px).norm() <= region.radius_px
}

/// Affine pixel -> physical map for one arm.
///
/// The image-arm coordinate is the photon's transverse position at the sample
/// reference plane (camera pixels divided by the arm magnification). The
/// Fourier-arm coordinate is the *sample-arm* angle the detected twin implies,
/// so the momentum anti-correlation sign flip lives in `sign`, not in callers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateMap {
    pub arm: Arm,
    pub center_px: Vec2,
    /// Meters per pixel (image arm) or radians per pixel (Fourier arm).
    pub scale: f64,
    /// +1 or -1 per axis.
    pub sign: Vec2,
}

impl CoordinateMap {
    pub fn new(arm: Arm, center_px: Vec2, scale: f64, sign: Vec2) -> Result<Self, EventError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(EventError::NonPositiveScale { scale });
        }
        if (sign.x.abs() - 1.0).abs() > 0.0 || (sign.y.abs() - 1.0).abs() > 0.0 {
            return Err(EventError::BadSign { sign });
        }
        Ok(CoordinateMap {
            arm,
            center_px,
            scale,
            sign,
        })
    }
}

/// sign (.) (pixel - center) * scale, per axis.
pub fn pixel_to_coordinate(map: &CoordinateMap, event: &PhotonEvent) -> Vec2 {
    let d = Vec2::new(event.x, event.y) - map.center_px;
    Vec2::new(d.x * map.sign.x * map.scale, d.y * map.sign.y * map.scale)
}

/// Exact inverse of [`pixel_to_coordinate`] on coordinates.
pub fn coordinate_to_pixel(map: &CoordinateMap, v: Vec2) -> Vec2 {
    // 1/sign == sign for +/-1, so the inverse reuses the sign factors.
    map.center_px + Vec2::new(v.x * map.sign.x / map.scale, v.y * map.sign.y / map.scale)
}

/// True iff toa_ps is nondecreasing.
pub fn is_time_sorted(hits: &[PixelHit]) -> bool {
    hits.windows(2).all(|w| w[0].toa_ps <= w[1].toa_ps)
}

/// Stable sort by time of arrival, ties broken by (y, x) so equal-time hits
/// have a canonical order regardless of acquisition interleaving.
pub fn sort_hits(hits: &mut Vec<PixelHit>) {
    hits.sort_by_key(|h| (h.toa_ps, h.y, h.x));
}
