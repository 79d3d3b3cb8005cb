//! Pipeline configuration: one TOML file shared by every command.
//!
//! Each command requires a subset of the sections; a missing required
//! section is a configuration error that names both the command and the
//! section. Unknown keys anywhere are rejected. Every dimensional key
//! carries its unit as a suffix (`_mm`, `_ns`, `_px`, ...) and is converted
//! to base SI units at the boundary to the core crate, which works in
//! meters, radians, and nanoseconds throughout.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qcrt_core::centroid::ClusteringParams;
use qcrt_core::event::{Arm, BeamRegion, CameraGeometry, CoordinateMap};
use qcrt_core::optics::{compose, AbcdMatrix, OpticalElement, Ray};
use qcrt_core::reconstruct::{
    AngleRecovery, Binning, GridSpec, MomentumFilter, ParallaxLayout, RayConversion,
};
use qcrt_core::sim::{DetectorSpec, SourceSpec};
use qcrt_core::Vec2;

const UM: f64 = 1e-6;
const MM: f64 = 1e-3;
const MRAD: f64 = 1e-3;

#[derive(Debug)]
pub enum ConfigError {
    /// TOML syntax or schema violation; the message carries the line,
    /// column, and key reported by the parser.
    Parse(String),
    MissingSection {
        command: &'static str,
        section: &'static str,
    },
    /// Structurally valid TOML with semantically bad values.
    Invalid {
        section: &'static str,
        reason: String,
    },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::MissingSection { command, section } => {
                write!(f, "`{command}` needs a [{section}] section in the config")
            }
            ConfigError::Invalid { section, reason } => write!(f, "[{section}]: {reason}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(section: &'static str, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        section,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maps: Option<MapsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optics: Option<OpticsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroiding: Option<CentroidingSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coincidence: Option<CoincidenceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconstructionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depthmap: Option<DepthmapSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulator: Option<SimulatorSection>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// SHA-256 of the effective configuration (after any flag overrides),
    /// archived in every run report so outputs can be traced to settings.
    pub fn sha256_hex(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            use std::fmt::Write;
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }

    pub fn camera(&self, command: &'static str) -> Result<&CameraSection, ConfigError> {
        self.camera.as_ref().ok_or(ConfigError::MissingSection {
            command,
            section: "camera",
        })
    }

    pub fn maps(&self, command: &'static str) -> Result<&MapsSection, ConfigError> {
        self.maps.as_ref().ok_or(ConfigError::MissingSection {
            command,
            section: "maps",
        })
    }

    pub fn centroiding(&self, command: &'static str) -> Result<&CentroidingSection, ConfigError> {
        self.centroiding.as_ref().ok_or(ConfigError::MissingSection {
            command,
            section: "centroiding",
        })
    }

    pub fn coincidence(&self, command: &'static str) -> Result<&CoincidenceSection, ConfigError> {
        self.coincidence.as_ref().ok_or(ConfigError::MissingSection {
            command,
            section: "coincidence",
        })
    }

    pub fn reconstruction(
        &self,
        command: &'static str,
    ) -> Result<&ReconstructionSection, ConfigError> {
        self.reconstruction
            .as_ref()
            .ok_or(ConfigError::MissingSection {
                command,
                section: "reconstruction",
            })
    }

    pub fn depthmap(&self, command: &'static str) -> Result<&DepthmapSection, ConfigError> {
        self.depthmap.as_ref().ok_or(ConfigError::MissingSection {
            command,
            section: "depthmap",
        })
    }

    pub fn simulator(&self, command: &'static str) -> Result<&SimulatorSection, ConfigError> {
        self.simulator.as_ref().ok_or(ConfigError::MissingSection {
            command,
            section: "simulator",
        })
    }
}

// -------------------------------------------------------------------- camera

fn d_width_px() -> u16 { 512 }
fn d_height_px() -> u16 { 256 }
fn d_pixel_pitch_um() -> f64 { 55.0 }
fn d_image_center_px() -> [f64; 2] { [128.0, 128.0] }
fn d_fourier_center_px() -> [f64; 2] { [384.0, 128.0] }
fn d_region_radius_px() -> f64 { 65.0 }

/// Sensor dimensions and the two beam footprints. The image-arm beam and
/// the Fourier-arm beam land on disjoint regions of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    #[serde(default = "d_width_px")]
    pub width_px: u16,
    #[serde(default = "d_height_px")]
    pub height_px: u16,
    #[serde(default = "d_pixel_pitch_um")]
    pub pixel_pitch_um: f64,
    #[serde(default = "d_image_center_px")]
    pub image_center_px: [f64; 2],
    #[serde(default = "d_region_radius_px")]
    pub image_radius_px: f64,
    #[serde(default = "d_fourier_center_px")]
    pub fourier_center_px: [f64; 2],
    #[serde(default = "d_region_radius_px")]
    pub fourier_radius_px: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

impl CameraSection {
    pub fn geometry(&self) -> Result<CameraGeometry, ConfigError> {
        let g = CameraGeometry {
            width: self.width_px,
            height: self.height_px,
            pixel_pitch_m: self.pixel_pitch_um * UM,
            image_region: BeamRegion {
                center_px: Vec2::new(self.image_center_px[0], self.image_center_px[1]),
                radius_px: self.image_radius_px,
            },
            fourier_region: BeamRegion {
                center_px: Vec2::new(self.fourier_center_px[0], self.fourier_center_px[1]),
                radius_px: self.fourier_radius_px,
            },
        };
        g.validate().map_err(|e| invalid("camera", e))?;
        Ok(g)
    }
}

// ---------------------------------------------------------------------- maps

fn d_image_scale_um_per_px() -> f64 { 11.0 }
fn d_image_sign() -> [f64; 2] { [1.0, 1.0] }
fn d_fourier_scale_mrad_per_px() -> f64 { 0.692 }
fn d_fourier_sign() -> [f64; 2] { [-1.0, -1.0] }

/// Calibrated pixel-to-coordinate maps. The image map yields transverse
/// position at the sample reference plane in meters; the Fourier map yields
/// the sample-arm photon's propagation angle in radians. Map centers
/// default to the beam region centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsSection {
    #[serde(default = "d_image_scale_um_per_px")]
    pub image_scale_um_per_px: f64,
    #[serde(default = "d_image_sign")]
    pub image_sign: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_center_px: Option<[f64; 2]>,
    #[serde(default = "d_fourier_scale_mrad_per_px")]
    pub fourier_scale_mrad_per_px: f64,
    #[serde(default = "d_fourier_sign")]
    pub fourier_sign: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_center_px: Option<[f64; 2]>,
}

impl Default for MapsSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

impl MapsSection {
    pub fn image_map(&self, camera: &CameraSection) -> Result<CoordinateMap, ConfigError> {
        let c = self.image_center_px.unwrap_or(camera.image_center_px);
        CoordinateMap::new(
            Arm::Image,
            Vec2::new(c[0], c[1]),
            self.image_scale_um_per_px * UM,
            Vec2::new(self.image_sign[0], self.image_sign[1]),
        )
        .map_err(|e| invalid("maps", e))
    }

    pub fn fourier_map(&self, camera: &CameraSection) -> Result<CoordinateMap, ConfigError> {
        let c = self.fourier_center_px.unwrap_or(camera.fourier_center_px);
        CoordinateMap::new(
            Arm::Fourier,
            Vec2::new(c[0], c[1]),
            self.fourier_scale_mrad_per_px * MRAD,
            Vec2::new(self.fourier_sign[0], self.fourier_sign[1]),
        )
        .map_err(|e| invalid("maps", e))
    }
}

// -------------------------------------------------------------------- optics

fn d_angle_recovery() -> String { "map".into() }
fn d_sample_plane() -> String { "reference".into() }
fn d_b_min_um() -> f64 { 1.0 }

/// One element of an optical prescription, in propagation order. Exactly
/// one of the parameter keys must match the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_mm: Option<f64>,
}

impl ElementConfig {
    fn to_element(&self) -> Result<OpticalElement, ConfigError> {
        match self.kind.as_str() {
            "free_space" => {
                if self.focal_mm.is_some() {
                    return Err(invalid("optics", "free_space element takes length_mm, not focal_mm"));
                }
                let length_mm = self
                    .length_mm
                    .ok_or_else(|| invalid("optics", "free_space element needs length_mm"))?;
                Ok(OpticalElement::FreeSpace {
                    length_m: length_mm * MM,
                })
            }
            "thin_lens" => {
                if self.length_mm.is_some() {
                    return Err(invalid("optics", "thin_lens element takes focal_mm, not length_mm"));
                }
                let focal_mm = self
                    .focal_mm
                    .ok_or_else(|| invalid("optics", "thin_lens element needs focal_mm"))?;
                Ok(OpticalElement::ThinLens {
                    focal_length_m: focal_mm * MM,
                })
            }
            other => Err(invalid(
                "optics",
                format!("unknown element kind {other:?}, expected \"free_space\" or \"thin_lens\""),
            )),
        }
    }
}

fn compose_elements(
    elements: &[ElementConfig],
    what: &str,
) -> Result<AbcdMatrix, ConfigError> {
    let parsed: Result<Vec<OpticalElement>, ConfigError> =
        elements.iter().map(ElementConfig::to_element).collect();
    compose(&parsed?).map_err(|e| invalid("optics", format!("{what}: {e}")))
}

/// How pair coordinates become sample-plane rays. With `angle_recovery =
/// "map"` the calibrated Fourier map is trusted directly; with `"klyshko"`
/// the angle is backtracked through the listed Fourier-arm prescription.
/// `sample_plane = "fourier"` inserts an f-f relay so objects near a
/// Fourier plane of the crystal can be reconstructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    #[serde(default = "d_angle_recovery")]
    pub angle_recovery: String,
    #[serde(default = "d_b_min_um")]
    pub b_min_um: f64,
    #[serde(default = "d_sample_plane")]
    pub sample_plane: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_relay_focal_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_arm_elements: Vec<ElementConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fourier_arm_elements: Vec<ElementConfig>,
}

impl Default for OpticsSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

impl OpticsSection {
    pub fn angle_recovery(
        &self,
        camera: &CameraSection,
    ) -> Result<AngleRecovery, ConfigError> {
        match self.angle_recovery.as_str() {
            "map" => Ok(AngleRecovery::CalibratedMap),
            "klyshko" => {
                if self.fourier_arm_elements.is_empty() {
                    return Err(invalid(
                        "optics",
                        "angle_recovery = \"klyshko\" needs fourier_arm_elements",
                    ));
                }
                Ok(AngleRecovery::Klyshko {
                    crystal_to_camera: compose_elements(
                        &self.fourier_arm_elements,
                        "fourier_arm_elements",
                    )?,
                    pixel_pitch_m: camera.pixel_pitch_um * UM,
                    b_min_m: self.b_min_um * UM,
                })
            }
            other => Err(invalid(
                "optics",
                format!("unknown angle_recovery {other:?}, expected \"map\" or \"klyshko\""),
            )),
        }
    }

    pub fn sample_relay(&self) -> Result<Option<AbcdMatrix>, ConfigError> {
        match self.sample_plane.as_str() {
            "reference" => Ok(None),
            "fourier" => {
                let f_mm = self.sample_relay_focal_mm.ok_or_else(|| {
                    invalid(
                        "optics",
                        "sample_plane = \"fourier\" needs sample_relay_focal_mm",
                    )
                })?;
                let relay = [
                    OpticalElement::FreeSpace { length_m: f_mm * MM },
                    OpticalElement::ThinLens { focal_length_m: f_mm * MM },
                    OpticalElement::FreeSpace { length_m: f_mm * MM },
                ];
                Ok(Some(
                    compose(&relay).map_err(|e| invalid("optics", e))?,
                ))
            }
            other => Err(invalid(
                "optics",
                format!("unknown sample_plane {other:?}, expected \"reference\" or \"fourier\""),
            )),
        }
    }

    /// The image-arm prescription is descriptive; when present it must at
    /// least compose to a finite matrix.
    pub fn validate_image_arm(&self) -> Result<(), ConfigError> {
        if !self.image_arm_elements.is_empty() {
            compose_elements(&self.image_arm_elements, "image_arm_elements")?;
        }
        Ok(())
    }
}

/// Assemble the full pair-to-ray conversion for the reconstruct commands.
/// A missing [optics] section means the calibrated map with no relay.
pub fn ray_conversion(
    camera: &CameraSection,
    maps: &MapsSection,
    optics: Option<&OpticsSection>,
) -> Result<RayConversion, ConfigError> {
    let default_optics = OpticsSection::default();
    let optics = optics.unwrap_or(&default_optics);
    optics.validate_image_arm()?;
    Ok(RayConversion {
        map_image: maps.image_map(camera)?,
        map_fourier: maps.fourier_map(camera)?,
        angle_recovery: optics.angle_recovery(camera)?,
        sample_relay: optics.sample_relay()?,
        paraxial_max_rad: Ray::PARAXIAL_MAX_RAD,
    })
}

// --------------------------------------------------------------- centroiding

fn d_spatial_radius_px() -> u16 { 2 }
fn d_temporal_window_ns() -> f64 { 100.0 }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentroidingSection {
    #[serde(default = "d_spatial_radius_px")]
    pub spatial_radius_px: u16,
    #[serde(default = "d_temporal_window_ns")]
    pub temporal_window_ns: f64,
    /// Time-walk correction table (`tot,correction_ns`); identity when
    /// absent. Relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_csv: Option<String>,
}

impl Default for CentroidingSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

impl CentroidingSection {
    pub fn params(&self) -> ClusteringParams {
        ClusteringParams {
            spatial_radius_px: self.spatial_radius_px,
            temporal_window_ns: self.temporal_window_ns,
        }
    }
}

// --------------------------------------------------------------- coincidence

fn d_bin_width_ns() -> f64 { 1.0 }
fn d_max_delay_ns() -> f64 { 500.0 }
fn d_gate_ns() -> f64 { 50.0 }
fn d_peak_significance_sigma() -> f64 { qcrt_core::coincidence::PEAK_SIGNIFICANCE_DEFAULT }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceSection {
    #[serde(default = "d_bin_width_ns")]
    pub bin_width_ns: f64,
    #[serde(default = "d_max_delay_ns")]
    pub max_delay_ns: f64,
    /// Full width of the accepted delay window around the located peak.
    #[serde(default = "d_gate_ns")]
    pub gate_ns: f64,
    /// Poisson deviations the peak must clear above background.
    #[serde(default = "d_peak_significance_sigma")]
    pub peak_significance_sigma: f64,
}

impl Default for CoincidenceSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

// ------------------------------------------------------------ reconstruction

fn d_grid_width() -> usize { 256 }
fn d_grid_height() -> usize { 256 }
fn d_grid_center_mm() -> [f64; 2] { [0.0, 0.0] }
fn d_grid_extent_mm() -> [f64; 2] { [1.43, 1.43] }
fn d_binning() -> String { "nearest".into() }
fn d_z_mm() -> f64 { 0.0 }
fn d_z_min_mm() -> f64 { -20.0 }
fn d_z_max_mm() -> f64 { 20.0 }
fn d_z_step_mm() -> f64 { 1.0 }
fn d_parallax_pitch_px() -> f64 { 20.0 }
fn d_parallax_diameter_px() -> f64 { 20.0 }
fn d_aperture_radius_px() -> f64 { 65.0 }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionSection {
    #[serde(default = "d_grid_width")]
    pub grid_width: usize,
    #[serde(default = "d_grid_height")]
    pub grid_height: usize,
    #[serde(default = "d_grid_center_mm")]
    pub grid_center_mm: [f64; 2],
    #[serde(default = "d_grid_extent_mm")]
    pub grid_extent_mm: [f64; 2],
    /// "nearest" or "bilinear".
    #[serde(default = "d_binning")]
    pub binning: String,
    /// Refocus depth for the `refocus` command; overridable with --z-mm.
    #[serde(default = "d_z_mm")]
    pub z_mm: f64,
    #[serde(default = "d_z_min_mm")]
    pub z_min_mm: f64,
    #[serde(default = "d_z_max_mm")]
    pub z_max_mm: f64,
    #[serde(default = "d_z_step_mm")]
    pub z_step_mm: f64,
    /// Optional angular acceptance disk applied to refocus, stack, and
    /// depthmap, in Fourier-arm pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_center_px: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_radius_px: Option<f64>,
    /// Full angular aperture for parallax views; the center defaults to
    /// the Fourier map center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture_center_px: Option<[f64; 2]>,
    #[serde(default = "d_aperture_radius_px")]
    pub aperture_radius_px: f64,
    #[serde(default = "d_parallax_pitch_px")]
    pub parallax_pitch_px: f64,
    #[serde(default = "d_parallax_diameter_px")]
    pub parallax_diameter_px: f64,
}

impl Default for ReconstructionSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

impl ReconstructionSection {
    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        let spec = GridSpec {
            width: self.grid_width,
            height: self.grid_height,
            center_m: Vec2::new(self.grid_center_mm[0] * MM, self.grid_center_mm[1] * MM),
            extent_m: Vec2::new(self.grid_extent_mm[0] * MM, self.grid_extent_mm[1] * MM),
        };
        spec.validate().map_err(|e| invalid("reconstruction", e))?;
        Ok(spec)
    }

    pub fn binning(&self) -> Result<Binning, ConfigError> {
        match self.binning.as_str() {
            "nearest" => Ok(Binning::Nearest),
            "bilinear" => Ok(Binning::Bilinear),
            other => Err(invalid(
                "reconstruction",
                format!("unknown binning {other:?}, expected \"nearest\" or \"bilinear\""),
            )),
        }
    }

    pub fn momentum_filter(
        &self,
        fourier_map: &CoordinateMap,
    ) -> Result<Option<MomentumFilter>, ConfigError> {
        match (self.filter_center_px, self.filter_radius_px) {
            (None, None) => Ok(None),
            (center, Some(radius_px)) => {
                let c = center
                    .map(|c| Vec2::new(c[0], c[1]))
                    .unwrap_or(fourier_map.center_px);
                Ok(Some(MomentumFilter {
                    center_px: c,
                    radius_px,
                }))
            }
            (Some(_), None) => Err(invalid(
                "reconstruction",
                "filter_center_px without filter_radius_px",
            )),
        }
    }

    pub fn aperture(&self, fourier_map: &CoordinateMap) -> MomentumFilter {
        let c = self
            .aperture_center_px
            .map(|c| Vec2::new(c[0], c[1]))
            .unwrap_or(fourier_map.center_px);
        MomentumFilter {
            center_px: c,
            radius_px: self.aperture_radius_px,
        }
    }

    pub fn parallax_layout(&self) -> ParallaxLayout {
        ParallaxLayout {
            pitch_px: self.parallax_pitch_px,
            diameter_px: self.parallax_diameter_px,
        }
    }
}

// ------------------------------------------------------------------ depthmap

fn d_foreground() -> String { "dark".into() }
fn d_threshold_window_px() -> usize { 31 }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthmapSection {
    /// "dark" segments absorbing objects (shadows in the all-in-focus
    /// image); "bright" segments emitting or transmitting structure.
    #[serde(default = "d_foreground")]
    pub foreground: String,
    #[serde(default = "d_threshold_window_px")]
    pub threshold_window_px: usize,
    /// Margin over the local mean, in image counts. Defaults to half the
    /// global standard deviation of the all-in-focus image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_offset_counts: Option<f64>,
}

impl Default for DepthmapSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Foreground {
    Dark,
    Bright,
}

impl DepthmapSection {
    pub fn foreground(&self) -> Result<Foreground, ConfigError> {
        match self.foreground.as_str() {
            "dark" => Ok(Foreground::Dark),
            "bright" => Ok(Foreground::Bright),
            other => Err(invalid(
                "depthmap",
                format!("unknown foreground {other:?}, expected \"dark\" or \"bright\""),
            )),
        }
    }
}

// ----------------------------------------------------------------- simulator

fn d_seed() -> u64 { 0 }
fn d_duration_s() -> f64 { 60.0 }
fn d_pair_rate_hz() -> f64 { 1e5 }
fn d_beam_waist_sigma_mm() -> f64 { 0.6 }
fn d_theta_sigma_mrad() -> f64 { 18.0 }
fn d_position_blur_sigma_um() -> f64 { 10.0 }
fn d_theta_blur_sigma_mrad() -> f64 { 0.5 }
fn d_quantum_efficiency() -> f64 { 0.04 }
fn d_dark_rate_hz() -> f64 { 200.0 }
fn d_jitter_sigma_ns() -> f64 { 6.0 }
fn d_cluster_sigma_px() -> f64 { 1.75 }
fn d_mean_cluster_hits() -> f64 { 34.0 }
fn d_tot_mean() -> f64 { 50.0 }
fn d_tot_sigma() -> f64 { 15.0 }
fn d_tick_ps() -> u64 { 1000 }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSection {
    /// Seed for the single random stream; overridable with --seed.
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_duration_s")]
    pub duration_s: f64,
    #[serde(default = "d_pair_rate_hz")]
    pub pair_rate_hz: f64,
    #[serde(default = "d_beam_waist_sigma_mm")]
    pub beam_waist_sigma_mm: f64,
    #[serde(default = "d_theta_sigma_mrad")]
    pub theta_sigma_mrad: f64,
    #[serde(default = "d_position_blur_sigma_um")]
    pub position_blur_sigma_um: f64,
    #[serde(default = "d_theta_blur_sigma_mrad")]
    pub theta_blur_sigma_mrad: f64,
    #[serde(default = "d_quantum_efficiency")]
    pub quantum_efficiency: f64,
    #[serde(default = "d_dark_rate_hz")]
    pub dark_rate_hz: f64,
    #[serde(default = "d_jitter_sigma_ns")]
    pub jitter_sigma_ns: f64,
    #[serde(default = "d_cluster_sigma_px")]
    pub cluster_sigma_px: f64,
    #[serde(default = "d_mean_cluster_hits")]
    pub mean_cluster_hits: f64,
    #[serde(default = "d_tot_mean")]
    pub tot_mean: f64,
    #[serde(default = "d_tot_sigma")]
    pub tot_sigma: f64,
    #[serde(default = "d_tick_ps")]
    pub tick_ps: u64,
    /// Amplitude-dependent time walk, nanoseconds at tot = 1; zero
    /// disables walk and the calibration table.
    #[serde(default)]
    pub walk_coeff_ns: f64,
    #[serde(default)]
    pub scene: SceneConfig,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

impl SimulatorSection {
    pub fn source(&self) -> Result<SourceSpec, ConfigError> {
        let s = SourceSpec {
            pair_rate_hz: self.pair_rate_hz,
            beam_waist_sigma_m: self.beam_waist_sigma_mm * MM,
            theta_sigma_rad: self.theta_sigma_mrad * MRAD,
            position_blur_sigma_m: self.position_blur_sigma_um * UM,
            theta_blur_sigma_rad: self.theta_blur_sigma_mrad * MRAD,
        };
        s.validate().map_err(|e| invalid("simulator", e))?;
        Ok(s)
    }

    pub fn detector(&self) -> Result<DetectorSpec, ConfigError> {
        let d = DetectorSpec {
            quantum_efficiency: self.quantum_efficiency,
            dark_rate_hz: self.dark_rate_hz,
            jitter_sigma_ns: self.jitter_sigma_ns,
            cluster_sigma_px: self.cluster_sigma_px,
            mean_cluster_hits: self.mean_cluster_hits,
            tot_mean: self.tot_mean,
            tot_sigma: self.tot_sigma,
            tick_ps: self.tick_ps,
            walk_coeff_ns: self.walk_coeff_ns,
        };
        d.validate().map_err(|e| invalid("simulator", e))?;
        Ok(d)
    }
}

fn d_scene_kind() -> String { "transparent".into() }

/// Scene description. `kind` selects the shape family and each kind reads
/// its own subset of the keys; setting a key the kind does not use is an
/// error so typos cannot silently change the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "d_scene_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lp_per_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stripe_len_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wires: Option<Vec<WireConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_width_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip_gap_mm: Option<f64>,
    /// Binary mask image for kind = "raster"; dark pixels are opaque.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_pgm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent_mm: Option<[f64; 2]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireConfig {
    pub z_mm: f64,
    pub width_mm: f64,
    #[serde(default)]
    pub offset_mm: f64,
    #[serde(default = "d_vertical")]
    pub vertical: bool,
}

fn d_vertical() -> bool { true }

impl SceneConfig {
    /// The keys each scene kind consumes; everything else must stay unset.
    pub fn validate_keys(&self) -> Result<(), ConfigError> {
        let allowed: &[&str] = match self.kind.as_str() {
            "transparent" => &[],
            "bars" => &["z_mm", "lp_per_mm", "stripe_len_mm", "center_mm"],
            "wires" => &["wires"],
            "needles" => &["z_mm", "length_mm", "base_width_mm", "tip_gap_mm"],
            "raster" => &["z_mm", "mask_pgm", "extent_mm", "center_mm"],
            other => {
                return Err(invalid(
                    "simulator",
                    format!(
                        "unknown scene kind {other:?}, expected \"transparent\", \"bars\", \
                         \"wires\", \"needles\", or \"raster\""
                    ),
                ))
            }
        };
        let present: [(&str, bool); 9] = [
            ("z_mm", self.z_mm.is_some()),
            ("lp_per_mm", self.lp_per_mm.is_some()),
            ("stripe_len_mm", self.stripe_len_mm.is_some()),
            ("center_mm", self.center_mm.is_some()),
            ("wires", self.wires.is_some()),
            ("length_mm", self.length_mm.is_some()),
            ("base_width_mm", self.base_width_mm.is_some()),
            ("tip_gap_mm", self.tip_gap_mm.is_some()),
            ("mask_pgm", self.mask_pgm.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(invalid(
                    "simulator",
                    format!("scene key {key:?} does not apply to kind {:?}", self.kind),
                ));
            }
        }
        if self.extent_mm.is_some() && self.kind != "raster" {
            return Err(invalid(
                "simulator",
                format!("scene key \"extent_mm\" does not apply to kind {:?}", self.kind),
            ));
        }
        Ok(())
    }

    pub fn require(&self, key: &'static str, value: Option<f64>) -> Result<f64, ConfigError> {
        value.ok_or_else(|| {
            invalid(
                "simulator",
                format!("scene kind {:?} needs {key}", self.kind),
            )
        })
    }
}
