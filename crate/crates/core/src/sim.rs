//! Ground-truth generator: a correlated pair source, an occluding scene in
//! the sample arm, and a detector model that turns photons into labeled
//! pixel-hit streams. The labels make the simulator the oracle for every
//! downstream stage.
//!
//! All randomness flows from one seeded stream in a fixed draw order, so a
//! run is reproducible bit for bit. The order is: pair count; all emission
//! times (then sorted); per pair in time order the shared position, shared
//! angle, and the four per-photon blur offsets (always drawn, even with
//! zero widths); then per sample-arm photon the detection draws; then per
//! reference-arm photon the detection draws; then dark counts, sample arm
//! first. Per-photon detection draws are: none if the photon maps off
//! sensor; otherwise one efficiency draw, and if detected one time-jitter
//! draw, one cluster-size draw, then per hit two scatter draws and one
//! amplitude draw.

use core::fmt;

// Float methods resolve through the trait when std is off.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::event::{
    coordinate_to_pixel, Arm, CameraGeometry, CoordinateMap, EventError, PixelHit,
};
use crate::vec2::Vec2;

/// Compact transverse vector for bulk photon storage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct V2f {
    pub x: f32,
    pub y: f32,
}

impl V2f {
    pub fn from_vec2(v: Vec2) -> V2f {
        V2f {
            x: v.x as f32,
            y: v.y as f32,
        }
    }

    pub fn to_vec2(self) -> Vec2 {
        Vec2::new(self.x as f64, self.y as f64)
    }
}

/// Pair source parameters. Spreads are standard deviations of isotropic
/// Gaussians; the blur widths decorrelate the two photons of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub pair_rate_hz: f64,
    /// Transverse position spread at the crystal, meters.
    pub beam_waist_sigma_m: f64,
    /// Angular spread, radians.
    pub theta_sigma_rad: f64,
    /// Per-photon position decorrelation, meters (finite crystal thickness).
    pub position_blur_sigma_m: f64,
    /// Per-photon angle decorrelation, radians (pump divergence and
    /// residual wavelength non-degeneracy).
    pub theta_blur_sigma_rad: f64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.pair_rate_hz > 0.0) || !self.pair_rate_hz.is_finite() {
            return Err(SimError::InvalidSource { field: "pair_rate_hz" });
        }
        for (field, v) in [
            ("beam_waist_sigma_m", self.beam_waist_sigma_m),
            ("theta_sigma_rad", self.theta_sigma_rad),
            ("position_blur_sigma_m", self.position_blur_sigma_m),
            ("theta_blur_sigma_rad", self.theta_blur_sigma_rad),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::InvalidSource { field });
            }
        }
        Ok(())
    }
}

/// Detector model shared by both camera regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    pub quantum_efficiency: f64,
    /// Uncorrelated single counts per second per beam region.
    pub dark_rate_hz: f64,
    pub jitter_sigma_ns: f64,
    /// Spread of intensifier-flash hits around the true position, pixels.
    pub cluster_sigma_px: f64,
    /// Cluster size is 1 + Poisson(mean_cluster_hits) pixels before
    /// same-pixel merging. 0 gives exactly one hit per photon.
    pub mean_cluster_hits: f64,
    pub tot_mean: f64,
    pub tot_sigma: f64,
    /// Time quantization of the camera clock, picoseconds.
    pub tick_ps: u64,
    /// Amplitude time walk added per hit, nanoseconds = coeff / tot.
    /// 0 disables.
    pub walk_coeff_ns: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(SimError::InvalidDetector {
                field: "quantum_efficiency",
            });
        }
        for (field, v) in [
            ("dark_rate_hz", self.dark_rate_hz),
            ("jitter_sigma_ns", self.jitter_sigma_ns),
            ("cluster_sigma_px", self.cluster_sigma_px),
            ("mean_cluster_hits", self.mean_cluster_hits),
            ("tot_sigma", self.tot_sigma),
            ("walk_coeff_ns", self.walk_coeff_ns),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::InvalidDetector { field });
            }
        }
        if !(self.tot_mean >= 1.0) || !self.tot_mean.is_finite() {
            return Err(SimError::InvalidDetector { field: "tot_mean" });
        }
        if self.tick_ps == 0 {
            return Err(SimError::InvalidDetector { field: "tick_ps" });
        }
        Ok(())
    }

    /// The correction table that undoes this detector's time walk,
    /// suitable for the centroiding calibration.
    pub fn walk_calibration_knots(&self) -> Vec<(f64, f64)> {
        if self.walk_coeff_ns == 0.0 {
            return Vec::new();
        }
        (1..=1023u16)
            .step_by(2)
            .map(|tot| (tot as f64, self.walk_coeff_ns / tot as f64))
            .collect()
    }
}

/// Binary occluder shapes, evaluated in sample-plane meters.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskShape {
    /// Group of parallel opaque stripes (a resolution-target element):
    /// `lines` stripes of width period/2 spaced one period apart, finite
    /// stripe length. Vertical stripes block by x.
    Bars {
        period_m: f64,
        lines: u32,
        stripe_len_m: f64,
        center_m: Vec2,
        vertical: bool,
    },
    /// Infinite straight rod. Vertical blocks |x - offset| <= width/2.
    Wire {
        width_m: f64,
        offset_m: f64,
        vertical: bool,
    },
    Disk {
        center_m: Vec2,
        radius_m: f64,
    },
    /// Rod tapering linearly from base_width at its base to a point at
    /// `tip_m`, extending `length_m` along `dir` (unit vector) from the tip.
    Needle {
        tip_m: Vec2,
        dir: Vec2,
        length_m: f64,
        base_width_m: f64,
    },
    /// Opaque where x exceeds the threshold.
    HalfPlane {
        opaque_above_x_m: f64,
    },
    /// Sampled binary mask over a physical window; transparent outside it.
    Raster(RasterMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterMask {
    pub center_m: Vec2,
    pub extent_m: Vec2,
    pub width: usize,
    pub height: usize,
    /// Row-major, true = opaque.
    pub opaque: Vec<bool>,
}

/// One occluder plane at a depth relative to the sample reference plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Occluder {
    pub z_m: f64,
    pub shape: MaskShape,
}

/// Ordered occluder planes. Construction sorts by z and validates shapes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneSpec {
    planes: Vec<Occluder>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidSource { field: &'static str },
    InvalidDetector { field: &'static str },
    InvalidScene { reason: &'static str },
    InvalidDuration { duration_s: f64 },
    Geometry(EventError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidSource { field } => write!(f, "source spec: bad {field}"),
            SimError::InvalidDetector { field } => write!(f, "detector spec: bad {field}"),
            SimError::InvalidScene { reason } => write!(f, "scene spec: {reason}"),
            SimError::InvalidDuration { duration_s } => {
                write!(f, "duration must be finite and > 0, got {duration_s} s")
            }
            SimError::Geometry(e) => e.fmt(f),
        }
    }
}

impl From<EventError> for SimError {
    fn from(e: EventError) -> Self {
        SimError::Geometry(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

fn validate_shape(shape: &MaskShape) -> Result<(), SimError> {
    match shape {
        MaskShape::Bars {
            period_m,
            lines,
            stripe_len_m,
            ..
        } => {
            if !(*period_m > 0.0) || *lines == 0 || !(*stripe_len_m > 0.0) {
                return Err(SimError::InvalidScene {
                    reason: "bars need positive period, stripe length, and at least one line",
                });
            }
        }
        MaskShape::Wire { width_m, .. } => {
            if !(*width_m > 0.0) {
                return Err(SimError::InvalidScene {
                    reason: "wire width must be > 0",
                });
            }
        }
        MaskShape::Disk { radius_m, .. } => {
            if !(*radius_m > 0.0) {
                return Err(SimError::InvalidScene {
                    reason: "disk radius must be > 0",
                });
            }
        }
        MaskShape::Needle {
            dir,
            length_m,
            base_width_m,
            ..
        } => {
            if !(*length_m > 0.0) || !(*base_width_m > 0.0) {
                return Err(SimError::InvalidScene {
                    reason: "needle length and base width must be > 0",
                });
            }
            if (dir.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidScene {
                    reason: "needle direction must be a unit vector",
                });
            }
        }
        MaskShape::HalfPlane { .. } => {}
        MaskShape::Raster(r) => {
            if r.width == 0
                || r.height == 0
                || r.opaque.len() != r.width * r.height
                || !(r.extent_m.x > 0.0)
                || !(r.extent_m.y > 0.0)
            {
                return Err(SimError::InvalidScene {
                    reason: "raster mask needs positive dims and matching data length",
                });
            }
        }
    }
    Ok(())
}

/// True where the shape absorbs at transverse position `p` (meters).
pub fn opaque_at(shape: &MaskShape, p: Vec2) -> bool {
    match shape {
        MaskShape::Bars {
            period_m,
            lines,
            stripe_len_m,
            center_m,
            vertical,
        } => {
            let (across, along) = if *vertical {
                (p.x - center_m.x, p.y - center_m.y)
            } else {
                (p.y - center_m.y, p.x - center_m.x)
            };
            if along.abs() > stripe_len_m / 2.0 {
                return false;
            }
            let n = *lines as f64;
            for k in 0..*lines {
                let c = (k as f64 - (n - 1.0) / 2.0) * period_m;
                if (across - c).abs() <= period_m / 4.0 {
                    return true;
                }
            }
            false
        }
        MaskShape::Wire {
            width_m,
            offset_m,
            vertical,
        } => {
            let across = if *vertical { p.x } else { p.y };
            (across - offset_m).abs() <= width_m / 2.0
        }
        MaskShape::Disk { center_m, radius_m } => (p - *center_m).norm() <= *radius_m,
        MaskShape::Needle {
            tip_m,
            dir,
            length_m,
            base_width_m,
        } => {
            let d = p - *tip_m;
            let s = d.x * dir.x + d.y * dir.y;
            if s < 0.0 || s > *length_m {
                return false;
            }
            let across = d.x * -dir.y + d.y * dir.x;
            across.abs() <= base_width_m / 2.0 * (s / length_m)
        }
        MaskShape::HalfPlane { opaque_above_x_m } => p.x > *opaque_above_x_m,
        MaskShape::Raster(r) => {
            let u = (p.x - r.center_m.x) / r.extent_m.x + 0.5;
            let v = (p.y - r.center_m.y) / r.extent_m.y + 0.5;
            if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
                return false;
            }
            let ix = ((u * r.width as f64) as usize).min(r.width - 1);
            let iy = ((v * r.height as f64) as usize).min(r.height - 1);
            r.opaque[iy * r.width + ix]
        }
    }
}

impl SceneSpec {
    pub fn transparent() -> SceneSpec {
        SceneSpec::default()
    }

    pub fn new(mut planes: Vec<Occluder>) -> Result<SceneSpec, SimError> {
        for p in &planes {
            if !p.z_m.is_finite() {
                return Err(SimError::InvalidScene {
                    reason: "occluder depth must be finite",
                });
            }
            validate_shape(&p.shape)?;
        }
        planes.sort_by(|a, b| a.z_m.total_cmp(&b.z_m));
        Ok(SceneSpec { planes })
    }

    pub fn planes(&self) -> &[Occluder] {
        &self.planes
    }

    /// Depth index of the first plane that absorbs the ray, scanning in z
    /// order.
    pub fn first_block(&self, r: Vec2, theta: Vec2) -> Option<usize> {
        self.planes
            .iter()
            .position(|pl| opaque_at(&pl.shape, r + theta * pl.z_m))
    }
}

/// Three-stripe resolution element at the given line-pair frequency,
/// centered on the axis, on a single plane at `z_m`.
pub fn make_bars_scene(
    lp_per_mm: f64,
    stripe_len_m: f64,
    center_m: Vec2,
    z_m: f64,
) -> Result<SceneSpec, SimError> {
    if !(lp_per_mm > 0.0) {
        return Err(SimError::InvalidScene {
            reason: "line-pair frequency must be > 0",
        });
    }
    SceneSpec::new(alloc::vec![Occluder {
        z_m,
        shape: MaskShape::Bars {
            period_m: 1e-3 / lp_per_mm,
            lines: 3,
            stripe_len_m,
            center_m,
            vertical: true,
        },
    }])
}

/// One straight wire per plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WirePlane {
    pub z_m: f64,
    pub width_m: f64,
    pub offset_m: f64,
    pub vertical: bool,
}

pub fn make_wires_scene(wires: &[WirePlane]) -> Result<SceneSpec, SimError> {
    SceneSpec::new(
        wires
            .iter()
            .map(|w| Occluder {
                z_m: w.z_m,
                shape: MaskShape::Wire {
                    width_m: w.width_m,
                    offset_m: w.offset_m,
                    vertical: w.vertical,
                },
            })
            .collect(),
    )
}

/// Two tapered rods at +/-z, tips almost meeting on the axis: one enters
/// from the left at -z, the other from the right at +z.
pub fn make_needles_scene(
    z_m: f64,
    length_m: f64,
    base_width_m: f64,
    tip_gap_m: f64,
) -> Result<SceneSpec, SimError> {
    if !(z_m > 0.0) || !(tip_gap_m >= 0.0) {
        return Err(SimError::InvalidScene {
            reason: "needle scene needs z > 0 and tip gap >= 0",
        });
    }
    SceneSpec::new(alloc::vec![
        Occluder {
            z_m: -z_m,
            shape: MaskShape::Needle {
                tip_m: Vec2::new(-tip_gap_m / 2.0, 0.0),
                dir: Vec2::new(-1.0, 0.0),
                length_m,
                base_width_m,
            },
        },
        Occluder {
            z_m,
            shape: MaskShape::Needle {
                tip_m: Vec2::new(tip_gap_m / 2.0, 0.0),
                dir: Vec2::new(1.0, 0.0),
                length_m,
                base_width_m,
            },
        },
    ])
}

/// One generated pair: emission time plus the kinematics of both photons.
/// Photon `a` travels the sample arm, `b` the reference arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPhotons {
    pub t_ns: f64,
    pub r_a: V2f,
    pub theta_a: V2f,
    pub r_b: V2f,
    pub theta_b: V2f,
}

/// What ultimately happened to one photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Detected,
    AbsorbedByScene,
    LostToQe,
    /// Mapped outside the sensor.
    OffSensor,
}

/// Per-arm outcome inside a truth record. The detection time is present
/// exactly when the fate is Detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmOutcome {
    pub fate: Fate,
    pub t_det_ns: Option<f64>,
}

impl ArmOutcome {
    fn pending() -> ArmOutcome {
        ArmOutcome {
            fate: Fate::Detected,
            t_det_ns: None,
        }
    }
}

/// Ground-truth label for one pair. The record index equals `pair_id`.
/// The stored ray is the sample-arm photon's, the one the scene can block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub pair_id: u64,
    pub r: V2f,
    pub theta: V2f,
    pub t_emit_ns: f64,
    pub image: ArmOutcome,
    pub fourier: ArmOutcome,
}

/// Photon of one arm surviving the scene, still tied to its pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPhoton {
    pub pair_id: u64,
    pub r: V2f,
    pub theta: V2f,
    pub t_ns: f64,
}

/// Hit-stream origin marker for dark counts.
pub const DARK_ORIGIN: u64 = u64::MAX;

/// Draw the correlated pairs for one run.
///
/// The pair count is Poisson(rate * duration); emission times are uniform
/// over the run and sorted; each pair shares one Gaussian position and one
/// Gaussian angle, the sample-arm photon takes the angle negated, and each
/// photon adds its own independent position/angle blur.
pub fn generate_pairs(
    source: &SourceSpec,
    duration_s: f64,
    seed: u64,
) -> Result<(Vec<PairPhotons>, Vec<TruthRecord>), SimError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    generate_pairs_with(&mut rng, source, duration_s)
}

/// [`generate_pairs`] drawing from a caller-supplied stream.
pub fn generate_pairs_with(
    rng: &mut impl Rng,
    source: &SourceSpec,
    duration_s: f64,
) -> Result<(Vec<PairPhotons>, Vec<TruthRecord>), SimError> {
    source.validate()?;
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(SimError::InvalidDuration { duration_s });
    }

    let n = poisson_count(rng, source.pair_rate_hz * duration_s);
    let mut times: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.0..duration_s) * 1e9)
        .collect();
    times.sort_by(f64::total_cmp);

    let mut pairs = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (id, &t_ns) in times.iter().enumerate() {
        let r = draw_iso(rng, source.beam_waist_sigma_m);
        let theta = draw_iso(rng, source.theta_sigma_rad);
        let dr_a = draw_iso(rng, source.position_blur_sigma_m);
        let dth_a = draw_iso(rng, source.theta_blur_sigma_rad);
        let dr_b = draw_iso(rng, source.position_blur_sigma_m);
        let dth_b = draw_iso(rng, source.theta_blur_sigma_rad);
        let r_a = V2f::from_vec2(r + dr_a);
        let theta_a = V2f::from_vec2(-theta + dth_a);
        let pair = PairPhotons {
            t_ns,
            r_a,
            theta_a,
            r_b: V2f::from_vec2(r + dr_b),
            theta_b: V2f::from_vec2(theta + dth_b),
        };
        pairs.push(pair);
        truth.push(TruthRecord {
            pair_id: id as u64,
            r: r_a,
            theta: theta_a,
            t_emit_ns: t_ns,
            image: ArmOutcome::pending(),
            fourier: ArmOutcome::pending(),
        });
    }
    Ok((pairs, truth))
}

fn poisson_count(rng: &mut impl Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("positive finite lambda");
    let v: f64 = d.sample(rng);
    v as usize
}

fn draw_iso(rng: &mut impl Rng, sigma: f64) -> Vec2 {
    // Standard normals are always drawn so the stream layout does not
    // depend on which widths are zero.
    let zx: f64 = StandardNormal.sample(rng);
    let zy: f64 = StandardNormal.sample(rng);
    Vec2::new(zx * sigma, zy * sigma)
}

/// Trace every sample-arm photon through the occluders; the first opaque
/// plane absorbs it and its truth fate records that. Reference-arm photons
/// never see the scene.
pub fn apply_scene(
    pairs: &[PairPhotons],
    scene: &SceneSpec,
    truth: &mut [TruthRecord],
) -> (Vec<ArmPhoton>, Vec<ArmPhoton>) {
    assert_eq!(pairs.len(), truth.len());
    let mut image = Vec::with_capacity(pairs.len());
    let mut fourier = Vec::with_capacity(pairs.len());
    for (id, pair) in pairs.iter().enumerate() {
        if scene
            .first_block(pair.r_a.to_vec2(), pair.theta_a.to_vec2())
            .is_some()
        {
            truth[id].image.fate = Fate::AbsorbedByScene;
        } else {
            image.push(ArmPhoton {
                pair_id: id as u64,
                r: pair.r_a,
                theta: pair.theta_a,
                t_ns: pair.t_ns,
            });
        }
        fourier.push(ArmPhoton {
            pair_id: id as u64,
            r: pair.r_b,
            theta: pair.theta_b,
            t_ns: pair.t_ns,
        });
    }
    (image, fourier)
}

/// Hits of one arm before time sorting, with per-hit origins.
#[derive(Debug, Default)]
pub struct ArmHits {
    pub hits: Vec<PixelHit>,
    /// Pair id per hit, [`DARK_ORIGIN`] for dark counts. Same length and
    /// order as `hits`.
    pub origins: Vec<u64>,
    pub detected: u64,
    pub lost_to_qe: u64,
    pub off_sensor: u64,
    pub dark: u64,
}

fn quantize_ps(t_ns: f64, tick_ps: u64) -> u64 {
    let ps = (t_ns * 1e3).max(0.0);
    let ticks = (ps / tick_ps as f64).round() as u64;
    ticks * tick_ps
}

/// Turn one arm's photons into camera hits.
///
/// The photon's own position (sample arm) or negated angle (reference arm,
/// whose map speaks in twin angles) is mapped to a fractional pixel. A
/// photon whose nearest pixel is off sensor is lost before the efficiency
/// draw. Detections expand into clusters of single-pixel hits; hits landing
/// on the same pixel merge by summing amplitude and keeping the earliest
/// time, and scatter falling off sensor is discarded.
pub fn detect_arm(
    rng: &mut impl Rng,
    photons: &[ArmPhoton],
    arm: Arm,
    detector: &DetectorSpec,
    geometry: &CameraGeometry,
    map: &CoordinateMap,
    truth: &mut [TruthRecord],
) -> Result<ArmHits, SimError> {
    detector.validate()?;
    geometry.validate()?;
    let mut out = ArmHits::default();
    // (x, y, tot, toa) scratch per cluster, merged before committing.
    let mut cluster: Vec<(u16, u16, u32, u64)> = Vec::new();

    for ph in photons {
        let value = match arm {
            Arm::Image => ph.r.to_vec2(),
            Arm::Fourier => -ph.theta.to_vec2(),
        };
        let center_px = coordinate_to_pixel(map, value);
        let cx = round_px(center_px.x);
        let cy = round_px(center_px.y);
        let on_sensor = cx >= 0
            && cy >= 0
            && (cx as u32) < geometry.width as u32
            && (cy as u32) < geometry.height as u32;
        let outcome = match arm {
            Arm::Image => &mut truth[ph.pair_id as usize].image,
            Arm::Fourier => &mut truth[ph.pair_id as usize].fourier,
        };
        if !on_sensor {
            outcome.fate = Fate::OffSensor;
            out.off_sensor += 1;
            continue;
        }
        if !rng.gen_bool(detector.quantum_efficiency) {
            outcome.fate = Fate::LostToQe;
            out.lost_to_qe += 1;
            continue;
        }
        let jitter: f64 = StandardNormal.sample(rng);
        let t_det_ns = ph.t_ns + jitter * detector.jitter_sigma_ns;
        outcome.fate = Fate::Detected;
        outcome.t_det_ns = Some(t_det_ns);
        out.detected += 1;

        let n_hits = 1 + poisson_count(rng, detector.mean_cluster_hits);
        cluster.clear();
        for _ in 0..n_hits {
            let sx: f64 = StandardNormal.sample(rng);
            let sy: f64 = StandardNormal.sample(rng);
            let tot = draw_tot(rng, detector);
            let hx = round_px(center_px.x + sx * detector.cluster_sigma_px);
            let hy = round_px(center_px.y + sy * detector.cluster_sigma_px);
            if hx < 0
                || hy < 0
                || hx as u32 >= geometry.width as u32
                || hy as u32 >= geometry.height as u32
            {
                continue;
            }
            let walk_ns = if detector.walk_coeff_ns > 0.0 {
                detector.walk_coeff_ns / tot as f64
            } else {
                0.0
            };
            let toa = quantize_ps(t_det_ns + walk_ns, detector.tick_ps);
            merge_into_cluster(&mut cluster, hx as u16, hy as u16, tot as u32, toa);
        }
        for &(x, y, tot, toa) in &cluster {
            out.hits.push(PixelHit {
                x,
                y,
                toa_ps: toa,
                tot: tot.min(1023) as u16,
            });
            out.origins.push(ph.pair_id);
        }
    }
    Ok(out)
}

fn round_px(v: f64) -> i64 {
    num_traits::Float::round(v) as i64
}

fn draw_tot(rng: &mut impl Rng, detector: &DetectorSpec) -> u16 {
    let z: f64 = StandardNormal.sample(rng);
    let v = num_traits::Float::round(detector.tot_mean + z * detector.tot_sigma);
    v.clamp(1.0, 1023.0) as u16
}

fn merge_into_cluster(cluster: &mut Vec<(u16, u16, u32, u64)>, x: u16, y: u16, tot: u32, toa: u64) {
    // Real pixels fire once per flash: a repeat integrates more charge
    // instead of producing a second hit. Summed amplitude keeps the
    // weighted centroid of the merged cluster unchanged.
    for c in cluster.iter_mut() {
        if c.0 == x && c.1 == y {
            c.2 += tot;
            c.3 = c.3.min(toa);
            return;
        }
    }
    cluster.push((x, y, tot, toa));
}

/// Uncorrelated single-pixel dark counts, uniform over the beam region disk
/// and over the run duration.
pub fn dark_counts(
    rng: &mut impl Rng,
    region_center_px: Vec2,
    region_radius_px: f64,
    detector: &DetectorSpec,
    geometry: &CameraGeometry,
    duration_s: f64,
) -> Vec<PixelHit> {
    let n = poisson_count(rng, detector.dark_rate_hz * duration_s);
    let mut hits = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let radius = region_radius_px * num_traits::Float::sqrt(u);
        let phi: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
        let x = round_px(region_center_px.x + radius * num_traits::Float::cos(phi));
        let y = round_px(region_center_px.y + radius * num_traits::Float::sin(phi));
        let t_ns = rng.gen_range(0.0..duration_s) * 1e9;
        let tot = draw_tot(rng, detector);
        if x < 0 || y < 0 || x as u32 >= geometry.width as u32 || y as u32 >= geometry.height as u32
        {
            continue;
        }
        hits.push(PixelHit {
            x: x as u16,
            y: y as u16,
            toa_ps: quantize_ps(t_ns, detector.tick_ps),
            tot,
        });
    }
    hits
}

/// Full simulation input.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub source: SourceSpec,
    pub scene: SceneSpec,
    pub detector: DetectorSpec,
    pub geometry: CameraGeometry,
    pub map_image: CoordinateMap,
    pub map_fourier: CoordinateMap,
    pub duration_s: f64,
    pub seed: u64,
}

/// Simulation result: two time-sorted labeled hit streams plus the truth
/// table (indexed by pair id).
#[derive(Debug)]
pub struct SimOutput {
    pub hits_image: Vec<PixelHit>,
    pub origins_image: Vec<u64>,
    pub hits_fourier: Vec<PixelHit>,
    pub origins_fourier: Vec<u64>,
    pub truth: Vec<TruthRecord>,
    pub counters: SimCounters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimCounters {
    pub pairs_generated: u64,
    pub absorbed_by_scene: u64,
    pub detected_image: u64,
    pub detected_fourier: u64,
    pub lost_to_qe_image: u64,
    pub lost_to_qe_fourier: u64,
    pub off_sensor_image: u64,
    pub off_sensor_fourier: u64,
    pub dark_image: u64,
    pub dark_fourier: u64,
}

/// Run source, scene, and detector in one seeded stream (see the module
/// docs for the draw order), then time-sort each arm's hits together with
/// their origin labels.
pub fn simulate(spec: &SimSpec) -> Result<SimOutput, SimError> {
    spec.geometry.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let (pairs, mut truth) = generate_pairs_with(&mut rng, &spec.source, spec.duration_s)?;
    let (ph_image, ph_fourier) = apply_scene(&pairs, &spec.scene, &mut truth);
    drop(pairs);

    let mut image = detect_arm(
        &mut rng,
        &ph_image,
        Arm::Image,
        &spec.detector,
        &spec.geometry,
        &spec.map_image,
        &mut truth,
    )?;
    drop(ph_image);
    let mut fourier = detect_arm(
        &mut rng,
        &ph_fourier,
        Arm::Fourier,
        &spec.detector,
        &spec.geometry,
        &spec.map_fourier,
        &mut truth,
    )?;
    drop(ph_fourier);

    for (arm_hits, region) in [
        (&mut image, &spec.geometry.image_region),
        (&mut fourier, &spec.geometry.fourier_region),
    ] {
        let dark = dark_counts(
            &mut rng,
            region.center_px,
            region.radius_px,
            &spec.detector,
            &spec.geometry,
            spec.duration_s,
        );
        arm_hits.dark = dark.len() as u64;
        arm_hits.origins.extend(core::iter::repeat(DARK_ORIGIN).take(dark.len()));
        arm_hits.hits.extend(dark);
    }

    let counters = SimCounters {
        pairs_generated: truth.len() as u64,
        absorbed_by_scene: truth
            .iter()
            .filter(|t| t.image.fate == Fate::AbsorbedByScene)
            .count() as u64,
        detected_image: image.detected,
        detected_fourier: fourier.detected,
        lost_to_qe_image: image.lost_to_qe,
        lost_to_qe_fourier: fourier.lost_to_qe,
        off_sensor_image: image.off_sensor,
        off_sensor_fourier: fourier.off_sensor,
        dark_image: image.dark,
        dark_fourier: fourier.dark,
    };

    let (hits_image, origins_image) = sort_with_origins(image.hits, image.origins);
    let (hits_fourier, origins_fourier) = sort_with_origins(fourier.hits, fourier.origins);
    Ok(SimOutput {
        hits_image,
        origins_image,
        hits_fourier,
        origins_fourier,
        truth,
        counters,
    })
}

fn sort_with_origins(hits: Vec<PixelHit>, origins: Vec<u64>) -> (Vec<PixelHit>, Vec<u64>) {
    let mut idx: Vec<u32> = (0..hits.len() as u32).collect();
    idx.sort_by_key(|&i| {
        let h = &hits[i as usize];
        (h.toa_ps, h.y, h.x)
    });
    let sorted_hits = idx.iter().map(|&i| hits[i as usize]).collect();
    let sorted_origins = idx.iter().map(|&i| origins[i as usize]).collect();
    (sorted_hits, sorted_origins)
}
