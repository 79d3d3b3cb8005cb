//! Command implementations: wiring between the config file, the core
//! algorithms, and the on-disk artifacts.
//!
//! Every command reads and writes conventional filenames under the output
//! directory, so `simulate`, `correlate`, and `reconstruct` chain without
//! repeating paths on the command line. Failures map to distinct exit
//! codes: 2 for configuration problems, 3 for unreadable or malformed
//! files, 4 when no coincidence peak clears the significance threshold
//! (the delay histogram is still written), and 5 when the optical
//! prescription makes the angle unrecoverable.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use qcrt_core::centroid::{process, TimingCalibration};
use qcrt_core::coincidence::{
    delay_histogram, extract_pairs, find_peak, rate_summary, sort_events, CoincidenceError,
    MatchWindow, PairRecord,
};
use qcrt_core::event::{in_region, sort_hits, CameraGeometry, PhotonEvent, PixelHit};
use qcrt_core::optics::OpticsError;
use qcrt_core::reconstruct::{
    form_image, momentum_filter, pairs_to_rays, parallax_grid, AngleRecovery, Binning, FocalStack,
    GridSpec, ImageGrid, MomentumFilter, RayConversion, SampleRay,
};
use qcrt_core::depthmap::{
    adaptive_threshold, all_in_focus, apply_mask, depth_from_focus, depth_histogram,
    sharpness_volume,
};
use qcrt_core::sim::{
    make_bars_scene, make_needles_scene, make_wires_scene, simulate, MaskShape, Occluder,
    RasterMask, SceneSpec, SimSpec, WirePlane,
};
use qcrt_core::Vec2;

use crate::config::{self, ConfigError, Foreground, PipelineConfig, SceneConfig};
use crate::formats::{self, FormatError};
use crate::report::{self, PeakSummary, RatesSummary, RunReport, StageReport};

const MM: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    /// A bookkeeping identity failed during `report`.
    Check(String),
    /// Bad or missing configuration, including semantic errors surfaced by
    /// the core validators.
    Config(String),
    /// Missing, unreadable, or malformed input and output files.
    Io(String),
    /// The delay histogram has no statistically significant peak.
    NoCorrelation(String),
    /// The Fourier-arm prescription is conjugate to the crystal plane.
    DegeneratePlane(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NoCorrelation(_) => 4,
            CliError::DegeneratePlane(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Check(msg)
            | CliError::Config(msg)
            | CliError::Io(msg)
            | CliError::NoCorrelation(msg)
            | CliError::DegeneratePlane(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Loaded configuration plus the directories everything resolves against.
pub struct Ctx {
    pub config: PipelineConfig,
    /// Parent of the config file; relative paths inside the config
    /// (calibration tables, mask images) resolve against it.
    pub config_dir: PathBuf,
    pub out: PathBuf,
    pub sha: String,
}

impl Ctx {
    /// Read the config, apply flag overrides, hash the effective result,
    /// and make sure the output directory exists.
    pub fn load(
        config_path: Option<&Path>,
        out: &Path,
        seed: Option<u64>,
        gate_ns: Option<f64>,
    ) -> Result<Ctx, CliError> {
        let path = config_path
            .ok_or_else(|| CliError::Config("this command needs --config PATH".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut config = PipelineConfig::from_toml_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(seed), Some(sim)) = (seed, config.simulator.as_mut()) {
            sim.seed = seed;
        }
        if let (Some(gate), Some(coin)) = (gate_ns, config.coincidence.as_mut()) {
            coin.gate_ns = gate;
        }
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        let sha = config.sha256_hex();
        let config_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(Ctx {
            config,
            config_dir,
            out: out.to_path_buf(),
            sha,
        })
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.config_dir.join(path)
        }
    }
}

fn timed<T>(
    stages: &mut Vec<StageReport>,
    name: &str,
    f: impl FnOnce(&mut StageReport) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let mut stage = StageReport::new(name);
    let t0 = Instant::now();
    let value = f(&mut stage)?;
    stage.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    stages.push(stage);
    Ok(value)
}

fn write_pgm_with_warning(
    path: &Path,
    counts: &[f64],
    width: usize,
    height: usize,
) -> Result<usize, CliError> {
    let clipped = formats::write_image_pgm(path, counts, width, height)?;
    if clipped > 0 {
        eprintln!(
            "warning: {clipped} pixels saturated the 16-bit range in {}",
            path.display()
        );
    }
    Ok(clipped)
}

fn total_weight(rays: &[SampleRay]) -> f64 {
    rays.iter().map(|r| r.weight).sum()
}

fn finish(report: RunReport, out: &Path) -> Result<(), CliError> {
    let json_path = report.write(out)?;
    print!("{}", report.to_text());
    println!("report: {}", json_path.display());
    Ok(())
}

// ------------------------------------------------------------------ simulate

fn build_scene(ctx: &Ctx, scene: &SceneConfig) -> Result<SceneSpec, CliError> {
    scene.validate_keys()?;
    let sim_err = |e: qcrt_core::sim::SimError| CliError::Config(format!("[simulator]: {e}"));
    match scene.kind.as_str() {
        "transparent" => Ok(SceneSpec::transparent()),
        "bars" => {
            let lp_per_mm = scene.require("lp_per_mm", scene.lp_per_mm)?;
            let z_mm = scene.require("z_mm", scene.z_mm)?;
            let stripe_len_mm = scene.stripe_len_mm.unwrap_or(2.0);
            let c = scene.center_mm.unwrap_or([0.0, 0.0]);
            make_bars_scene(
                lp_per_mm,
                stripe_len_mm * MM,
                Vec2::new(c[0] * MM, c[1] * MM),
                z_mm * MM,
            )
            .map_err(sim_err)
        }
        "wires" => {
            let wires = scene.wires.as_deref().unwrap_or(&[]);
            if wires.is_empty() {
                return Err(CliError::Config(
                    "[simulator]: scene kind \"wires\" needs a nonempty wires list".into(),
                ));
            }
            let planes: Vec<WirePlane> = wires
                .iter()
                .map(|w| WirePlane {
                    z_m: w.z_mm * MM,
                    width_m: w.width_mm * MM,
                    offset_m: w.offset_mm * MM,
                    vertical: w.vertical,
                })
                .collect();
            make_wires_scene(&planes).map_err(sim_err)
        }
        "needles" => {
            let z_mm = scene.require("z_mm", scene.z_mm)?;
            let length_mm = scene.require("length_mm", scene.length_mm)?;
            let base_width_mm = scene.require("base_width_mm", scene.base_width_mm)?;
            let tip_gap_mm = scene.tip_gap_mm.unwrap_or(0.1);
            make_needles_scene(z_mm * MM, length_mm * MM, base_width_mm * MM, tip_gap_mm * MM)
                .map_err(sim_err)
        }
        "raster" => {
            let z_mm = scene.require("z_mm", scene.z_mm)?;
            let path = scene.mask_pgm.as_ref().ok_or_else(|| {
                CliError::Config("[simulator]: scene kind \"raster\" needs mask_pgm".into())
            })?;
            let extent = scene.extent_mm.ok_or_else(|| {
                CliError::Config("[simulator]: scene kind \"raster\" needs extent_mm".into())
            })?;
            let c = scene.center_mm.unwrap_or([0.0, 0.0]);
            let img = formats::read_pgm(&ctx.resolve(path))?;
            // Dark pixels block; the mask is drawn black-on-white.
            let threshold = img.maxval / 2;
            let mask = RasterMask {
                center_m: Vec2::new(c[0] * MM, c[1] * MM),
                extent_m: Vec2::new(extent[0] * MM, extent[1] * MM),
                width: img.width,
                height: img.height,
                opaque: img.samples.iter().map(|&s| s <= threshold).collect(),
            };
            SceneSpec::new(vec![Occluder {
                z_m: z_mm * MM,
                shape: MaskShape::Raster(mask),
            }])
            .map_err(sim_err)
        }
        _ => unreachable!("validate_keys rejects unknown kinds"),
    }
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let sim_cfg = ctx.config.simulator("simulate")?;
    let cam = ctx.config.camera("simulate")?;
    let maps = ctx.config.maps("simulate")?;
    if !(sim_cfg.duration_s > 0.0) || !sim_cfg.duration_s.is_finite() {
        return Err(CliError::Config(format!(
            "[simulator]: duration_s must be positive and finite, got {}",
            sim_cfg.duration_s
        )));
    }
    let geometry = cam.geometry()?;
    let spec = SimSpec {
        source: sim_cfg.source()?,
        scene: build_scene(ctx, &sim_cfg.scene)?,
        detector: sim_cfg.detector()?,
        geometry,
        map_image: maps.image_map(cam)?,
        map_fourier: maps.fourier_map(cam)?,
        duration_s: sim_cfg.duration_s,
        seed: sim_cfg.seed,
    };

    let mut stages = Vec::new();
    let output = timed(&mut stages, "simulate", |st| {
        let out = simulate(&spec).map_err(|e| CliError::Config(format!("[simulator]: {e}")))?;
        let c = &out.counters;
        st.count("pairs_generated", c.pairs_generated)
            .count("absorbed_by_scene", c.absorbed_by_scene)
            .count("detected_image", c.detected_image)
            .count("detected_fourier", c.detected_fourier)
            .count("lost_to_qe_image", c.lost_to_qe_image)
            .count("lost_to_qe_fourier", c.lost_to_qe_fourier)
            .count("off_sensor_image", c.off_sensor_image)
            .count("off_sensor_fourier", c.off_sensor_fourier)
            .count("dark_image", c.dark_image)
            .count("dark_fourier", c.dark_fourier)
            .count("hits_image", out.hits_image.len() as u64)
            .count("hits_fourier", out.hits_fourier.len() as u64);
        Ok(out)
    })?;

    timed(&mut stages, "write", |st| {
        let hits_image = ctx.out.join("hits_image.qcrt");
        let hits_fourier = ctx.out.join("hits_fourier.qcrt");
        let truth = ctx.out.join("truth.csv");
        formats::write_hits(&hits_image, geometry.width, geometry.height, &output.hits_image)?;
        formats::write_hits(&hits_fourier, geometry.width, geometry.height, &output.hits_fourier)?;
        formats::write_truth_csv(&truth, &output.truth)?;
        if spec.detector.walk_coeff_ns > 0.0 {
            formats::write_calibration_csv(
                &ctx.out.join("walk_calibration.csv"),
                &spec.detector.walk_calibration_knots(),
            )?;
        }
        st.count("hits_image_rows", output.hits_image.len() as u64)
            .count("hits_fourier_rows", output.hits_fourier.len() as u64)
            .count("truth_rows", output.truth.len() as u64);
        println!("wrote {}", hits_image.display());
        println!("wrote {}", hits_fourier.display());
        println!("wrote {}", truth.display());
        Ok(())
    })?;

    let mut report = RunReport::new("simulate", &ctx.sha);
    report.seed = Some(spec.seed);
    report.stages = stages;
    finish(report, &ctx.out)
}

// ----------------------------------------------------------------- correlate

fn read_hits_auto(path: &Path, geometry: &CameraGeometry) -> Result<Vec<PixelHit>, CliError> {
    if path.extension().is_some_and(|e| e == "csv") {
        return Ok(formats::read_hits_csv(path)?);
    }
    let (w, h, hits) = formats::read_hits(path)?;
    if (w, h) != (geometry.width, geometry.height) {
        return Err(CliError::Config(format!(
            "{}: file header says {w}x{h} pixels but [camera] says {}x{}",
            path.display(),
            geometry.width,
            geometry.height
        )));
    }
    Ok(hits)
}

pub fn cmd_correlate(
    ctx: &Ctx,
    hits_image: Option<PathBuf>,
    hits_fourier: Option<PathBuf>,
) -> Result<(), CliError> {
    let cam = ctx.config.camera("correlate")?;
    let cen = ctx.config.centroiding("correlate")?;
    let coin = ctx.config.coincidence("correlate")?;
    let geometry = cam.geometry()?;
    let params = cen.params();
    let calibration = match &cen.calibration_csv {
        None => TimingCalibration::identity(),
        Some(p) => {
            let knots = formats::read_calibration_csv(&ctx.resolve(p))?;
            TimingCalibration::from_knots(knots)
                .map_err(|e| CliError::Config(format!("[centroiding] calibration: {e}")))?
        }
    };

    let image_path = hits_image.unwrap_or_else(|| ctx.out.join("hits_image.qcrt"));
    let fourier_path = hits_fourier.unwrap_or_else(|| ctx.out.join("hits_fourier.qcrt"));

    let mut stages = Vec::new();
    let (mut hits_i, mut hits_f) = timed(&mut stages, "read", |st| {
        let a = read_hits_auto(&image_path, &geometry)?;
        let b = read_hits_auto(&fourier_path, &geometry)?;
        st.count("hits_image", a.len() as u64)
            .count("hits_fourier", b.len() as u64);
        Ok((a, b))
    })?;

    let cfg_err = |e: qcrt_core::centroid::CentroidError| CliError::Config(e.to_string());
    let events_i = timed(&mut stages, "centroid_image", |st| {
        sort_hits(&mut hits_i);
        let ev = process(&hits_i, &params, &calibration).map_err(cfg_err)?;
        st.count("hits_in", hits_i.len() as u64)
            .count("events", ev.len() as u64);
        Ok(ev)
    })?;
    let events_f = timed(&mut stages, "centroid_fourier", |st| {
        sort_hits(&mut hits_f);
        let ev = process(&hits_f, &params, &calibration).map_err(cfg_err)?;
        st.count("hits_in", hits_f.len() as u64)
            .count("events", ev.len() as u64);
        Ok(ev)
    })?;
    drop(hits_i);
    drop(hits_f);

    let (mut in_i, mut in_f) = timed(&mut stages, "region_filter", |st| {
        let (in_i, out_i): (Vec<PhotonEvent>, Vec<PhotonEvent>) = events_i
            .into_iter()
            .partition(|e| in_region(e, &geometry.image_region));
        let (in_f, out_f): (Vec<PhotonEvent>, Vec<PhotonEvent>) = events_f
            .into_iter()
            .partition(|e| in_region(e, &geometry.fourier_region));
        st.count("in_image", in_i.len() as u64)
            .count("out_image", out_i.len() as u64)
            .count("in_fourier", in_f.len() as u64)
            .count("out_fourier", out_f.len() as u64);
        Ok((in_i, in_f))
    })?;

    sort_events(&mut in_i);
    sort_events(&mut in_f);

    // Time spanned by the event streams, used to turn gate counts into
    // rates. Taken from the data so correlate does not need [simulator].
    let span_s = {
        let lo = in_i
            .first()
            .map(|e| e.t_ns)
            .into_iter()
            .chain(in_f.first().map(|e| e.t_ns))
            .fold(f64::INFINITY, f64::min);
        let hi = in_i
            .last()
            .map(|e| e.t_ns)
            .into_iter()
            .chain(in_f.last().map(|e| e.t_ns))
            .fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (hi - lo) * 1e-9
        } else {
            0.0
        }
    };

    let hist_path = ctx.out.join("histogram.csv");
    let hist = timed(&mut stages, "histogram", |st| {
        let hist = delay_histogram(&in_i, &in_f, coin.bin_width_ns, coin.max_delay_ns)
            .map_err(|e| CliError::Config(format!("[coincidence]: {e}")))?;
        formats::write_histogram_csv(&hist_path, &hist)?;
        st.count("bins", hist.counts.len() as u64)
            .count("delays_histogrammed", hist.total());
        st.metric("span_s", span_s);
        Ok(hist)
    })?;
    println!("wrote {}", hist_path.display());

    let peak = find_peak(&hist, coin.peak_significance_sigma).map_err(|e| match e {
        CoincidenceError::NoCorrelation { .. } => CliError::NoCorrelation(format!(
            "{e}; the delay histogram was still written to {}",
            hist_path.display()
        )),
        other => CliError::Config(format!("[coincidence]: {other}")),
    })?;

    let window = MatchWindow {
        center_ns: peak.center_ns,
        gate_ns: coin.gate_ns,
    };
    let pairs = timed(&mut stages, "pairing", |st| {
        let (pairs, stats) = extract_pairs(&in_i, &in_f, window)
            .map_err(|e| CliError::Config(format!("[coincidence]: {e}")))?;
        st.count("matched", stats.matched as u64)
            .count("unmatched_image", stats.unmatched_image as u64)
            .count("unmatched_fourier", stats.unmatched_fourier as u64);
        st.metric("window_center_ns", window.center_ns)
            .metric("gate_ns", window.gate_ns);
        Ok(pairs)
    })?;

    timed(&mut stages, "write", |st| {
        let pairs_path = ctx.out.join("pairs.csv");
        formats::write_pairs_csv(&pairs_path, &pairs)?;
        formats::write_events_csv(&ctx.out.join("events_image.csv"), &in_i)?;
        formats::write_events_csv(&ctx.out.join("events_fourier.csv"), &in_f)?;
        st.count("pair_rows", pairs.len() as u64);
        println!("wrote {}", pairs_path.display());
        Ok(())
    })?;

    let mut report = RunReport::new("correlate", &ctx.sha);
    report.stages = stages;
    report.peak = Some(PeakSummary {
        center_ns: peak.center_ns,
        height: peak.height,
        background: peak.background,
        significance: peak.significance,
    });
    if span_s > 0.0 {
        let rates = rate_summary(&hist, &peak, coin.gate_ns, span_s);
        report.rates = Some(RatesSummary {
            true_rate_hz: rates.true_rate_hz,
            accidental_rate_hz: rates.accidental_rate_hz,
            snr: rates.snr,
        });
    }
    finish(report, &ctx.out)
}

// --------------------------------------------------------------- reconstruct

struct ReconstructJob {
    stages: Vec<StageReport>,
    rays: Vec<SampleRay>,
    grid: GridSpec,
    binning: Binning,
    conv: RayConversion,
}

fn optics_to_cli(e: OpticsError, conv: &RayConversion) -> CliError {
    if let OpticsError::DegenerateImagingPlane { b, b_min } = e {
        let matrix = match conv.angle_recovery {
            AngleRecovery::Klyshko {
                crystal_to_camera, ..
            } => format!(
                "[[{}, {}], [{}, {}]]",
                crystal_to_camera.a, crystal_to_camera.b, crystal_to_camera.c, crystal_to_camera.d
            ),
            AngleRecovery::CalibratedMap => "the calibrated map".to_string(),
        };
        return CliError::DegeneratePlane(format!(
            "the Fourier-arm prescription composes to {matrix} with |B| = {:e} m <= {:e} m: \
             the camera plane is conjugate to the crystal, so pixel position carries no angle \
             information; change the prescription or use angle_recovery = \"map\"",
            b.abs(),
            b_min
        ));
    }
    CliError::Config(format!("[optics]: {e}"))
}

/// Shared front half of every reconstruct command: read pairs, convert to
/// sample-plane rays, optionally apply the angular acceptance filter.
fn load_rays(
    ctx: &Ctx,
    command: &'static str,
    pairs_path: Option<PathBuf>,
    apply_filter: bool,
) -> Result<ReconstructJob, CliError> {
    let cam = ctx.config.camera(command)?;
    let maps = ctx.config.maps(command)?;
    let rec = ctx.config.reconstruction(command)?;
    let conv = config::ray_conversion(cam, maps, ctx.config.optics.as_ref())?;
    let grid = rec.grid()?;
    let binning = rec.binning()?;

    let path = pairs_path.unwrap_or_else(|| ctx.out.join("pairs.csv"));
    let mut stages = Vec::new();
    let pairs: Vec<PairRecord> = timed(&mut stages, "read", |st| {
        let pairs = formats::read_pairs_csv(&path)?;
        st.count("pairs", pairs.len() as u64);
        Ok(pairs)
    })?;

    let rays = timed(&mut stages, "convert", |st| {
        let (rays, rep) = pairs_to_rays(&pairs, &conv).map_err(|e| optics_to_cli(e, &conv))?;
        st.count("converted", rep.converted as u64)
            .count("dropped_non_paraxial", rep.dropped_non_paraxial as u64);
        Ok(rays)
    })?;

    let rays = if apply_filter {
        match rec.momentum_filter(&conv.map_fourier)? {
            Some(filter) => timed(&mut stages, "filter", |st| {
                let kept = momentum_filter(&rays, &filter, &conv.map_fourier);
                st.count("rays_in", rays.len() as u64)
                    .count("rays_out", kept.len() as u64);
                Ok(kept)
            })?,
            None => rays,
        }
    } else {
        rays
    };

    Ok(ReconstructJob {
        stages,
        rays,
        grid,
        binning,
        conv,
    })
}

fn z_ladder_mm(ctx: &Ctx, command: &'static str) -> Result<Vec<f64>, CliError> {
    let rec = ctx.config.reconstruction(command)?;
    let (lo, hi, step) = (rec.z_min_mm, rec.z_max_mm, rec.z_step_mm);
    if !(step > 0.0) || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(CliError::Config(format!(
            "[reconstruction]: need z_min_mm <= z_max_mm and z_step_mm > 0, got [{lo}, {hi}] step {step}"
        )));
    }
    // Match the slice-count rule used by the core focal stack: a guard of
    // one part in 1e9 keeps spans that are an exact multiple of the step
    // from losing their last slice to rounding.
    let n = (((hi - lo) / step) + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

/// Render one slice per depth in parallel. Slices are independent, so the
/// result is identical for any thread count.
fn render_stack(rays: &[SampleRay], grid: &GridSpec, binning: Binning, z_mm: &[f64]) -> FocalStack {
    let slices: Vec<ImageGrid> = z_mm
        .par_iter()
        .map(|&z| form_image(rays, grid, z * MM, binning))
        .collect();
    FocalStack {
        z_m: z_mm.iter().map(|&z| z * MM).collect(),
        slices,
    }
}

pub fn cmd_refocus(
    ctx: &Ctx,
    z_mm_flag: Option<f64>,
    pairs_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut job = load_rays(ctx, "reconstruct refocus", pairs_path, true)?;
    let z_mm = z_mm_flag.unwrap_or(ctx.config.reconstruction("reconstruct refocus")?.z_mm);

    let image = timed(&mut job.stages, "render", |st| {
        let image = form_image(&job.rays, &job.grid, z_mm * MM, job.binning);
        st.count("slices", 1);
        st.metric("z_mm", z_mm)
            .metric("weight_expected", total_weight(&job.rays))
            .metric("weight_binned", image.in_weight + image.overflow_weight)
            .metric("in_weight", image.in_weight)
            .metric("overflow_weight", image.overflow_weight)
            .metric("max_count", image.max_count());
        Ok(image)
    })?;

    timed(&mut job.stages, "write", |_| {
        let pgm = ctx.out.join("refocus.pgm");
        write_pgm_with_warning(&pgm, &image.counts, job.grid.width, job.grid.height)?;
        formats::write_matrix_csv(
            &ctx.out.join("refocus.csv"),
            &image.counts,
            job.grid.width,
            job.grid.height,
        )?;
        println!("wrote {}", pgm.display());
        Ok(())
    })?;

    let mut report = RunReport::new("refocus", &ctx.sha);
    report.stages = job.stages;
    finish(report, &ctx.out)
}

pub fn cmd_stack(ctx: &Ctx, pairs_path: Option<PathBuf>) -> Result<(), CliError> {
    let mut job = load_rays(ctx, "reconstruct stack", pairs_path, true)?;
    let z_mm = z_ladder_mm(ctx, "reconstruct stack")?;

    let stack = timed(&mut job.stages, "render", |st| {
        let stack = render_stack(&job.rays, &job.grid, job.binning, &z_mm);
        let binned: f64 = stack
            .slices
            .iter()
            .map(|s| s.in_weight + s.overflow_weight)
            .sum();
        st.count("slices", stack.slices.len() as u64);
        st.metric("weight_expected", total_weight(&job.rays) * stack.slices.len() as f64)
            .metric("weight_binned", binned);
        Ok(stack)
    })?;

    timed(&mut job.stages, "write", |_| {
        let mut clipped = 0usize;
        let mut index = Vec::with_capacity(stack.slices.len());
        for (i, (slice, &z)) in stack.slices.iter().zip(&z_mm).enumerate() {
            let name = format!("slice_{i:03}.pgm");
            clipped += formats::write_image_pgm(
                &ctx.out.join(&name),
                &slice.counts,
                job.grid.width,
                job.grid.height,
            )?;
            index.push((i, z, name));
        }
        if clipped > 0 {
            eprintln!("warning: {clipped} pixels saturated the 16-bit range across the stack");
        }
        let index_path = ctx.out.join("stack_index.csv");
        formats::write_stack_index_csv(&index_path, &index)?;
        println!(
            "wrote {} slices and {}",
            stack.slices.len(),
            index_path.display()
        );
        Ok(())
    })?;

    let mut report = RunReport::new("stack", &ctx.sha);
    report.stages = job.stages;
    finish(report, &ctx.out)
}

pub fn cmd_parallax(ctx: &Ctx, pairs_path: Option<PathBuf>) -> Result<(), CliError> {
    let mut job = load_rays(ctx, "reconstruct parallax", pairs_path, false)?;
    let rec = ctx.config.reconstruction("reconstruct parallax")?;
    let aperture = rec.aperture(&job.conv.map_fourier);
    let layout = rec.parallax_layout();

    let views = timed(&mut job.stages, "render", |st| {
        let views = parallax_grid(
            &job.rays,
            &layout,
            &aperture,
            &job.conv.map_fourier,
            &job.grid,
            job.binning,
        )
        .map_err(|e| CliError::Config(format!("[reconstruction]: {e}")))?;
        // Re-derive each sub-region's ray budget so the report can prove
        // no weight was lost inside the renderer.
        let mut expected = 0.0;
        for k in 0..9usize {
            let sub = MomentumFilter {
                center_px: aperture.center_px
                    + Vec2::new(
                        ((k % 3) as f64 - 1.0) * layout.pitch_px,
                        ((k / 3) as f64 - 1.0) * layout.pitch_px,
                    ),
                radius_px: layout.diameter_px / 2.0,
            };
            expected += total_weight(&momentum_filter(&job.rays, &sub, &job.conv.map_fourier));
        }
        let binned: f64 = views.iter().map(|v| v.in_weight + v.overflow_weight).sum();
        st.count("views", views.len() as u64);
        st.metric("weight_expected", expected)
            .metric("weight_binned", binned);
        Ok(views)
    })?;

    timed(&mut job.stages, "write", |_| {
        let mut clipped = 0usize;
        for (k, view) in views.iter().enumerate() {
            clipped += formats::write_image_pgm(
                &ctx.out.join(format!("parallax_{k}.pgm")),
                &view.counts,
                job.grid.width,
                job.grid.height,
            )?;
        }
        if clipped > 0 {
            eprintln!("warning: {clipped} pixels saturated the 16-bit range across the views");
        }
        println!("wrote parallax_0.pgm .. parallax_8.pgm in {}", ctx.out.display());
        Ok(())
    })?;

    let mut report = RunReport::new("parallax", &ctx.sha);
    report.stages = job.stages;
    finish(report, &ctx.out)
}

fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

pub fn cmd_depthmap(ctx: &Ctx, pairs_path: Option<PathBuf>) -> Result<(), CliError> {
    let mut job = load_rays(ctx, "reconstruct depthmap", pairs_path, true)?;
    let depth_cfg = ctx.config.depthmap("reconstruct depthmap")?;
    let foreground = depth_cfg.foreground()?;
    let z_mm = z_ladder_mm(ctx, "reconstruct depthmap")?;

    let stack = timed(&mut job.stages, "render", |st| {
        let stack = render_stack(&job.rays, &job.grid, job.binning, &z_mm);
        let binned: f64 = stack
            .slices
            .iter()
            .map(|s| s.in_weight + s.overflow_weight)
            .sum();
        st.count("slices", stack.slices.len() as u64);
        st.metric("weight_expected", total_weight(&job.rays) * stack.slices.len() as f64)
            .metric("weight_binned", binned);
        Ok(stack)
    })?;

    let depth_err = |e: qcrt_core::depthmap::DepthError| CliError::Config(format!("[depthmap]: {e}"));
    let (map, hist) = timed(&mut job.stages, "depth", |st| {
        let volume = sharpness_volume(&stack).map_err(depth_err)?;
        let mut map = depth_from_focus(&volume, &z_mm).map_err(depth_err)?;
        let aif = all_in_focus(&stack, &map, &z_mm).map_err(depth_err)?;
        let offset = depth_cfg
            .threshold_offset_counts
            .unwrap_or_else(|| 0.5 * std_dev(&aif.counts));
        // Dark foreground means absorbing objects: they sit below the
        // local mean, which is the same test on the negated image.
        let mut seg = aif;
        if foreground == Foreground::Dark {
            for v in &mut seg.counts {
                *v = -*v;
            }
        }
        let fg = adaptive_threshold(&seg, depth_cfg.threshold_window_px, offset)
            .map_err(depth_err)?;
        apply_mask(&mut map, &fg);
        let hist = depth_histogram(&map, &z_mm).map_err(depth_err)?;
        st.count("foreground_px", fg.iter().filter(|&&m| m).count() as u64)
            .count("masked_px", map.mask.iter().filter(|&&m| m).count() as u64);
        st.metric("threshold_offset_counts", offset);
        Ok((map, hist))
    })?;

    timed(&mut job.stages, "write", |_| {
        let depth_path = ctx.out.join("depth_mm.csv");
        formats::write_matrix_csv(&depth_path, &map.depth, map.width, map.height)?;
        formats::write_matrix_csv(
            &ctx.out.join("confidence.csv"),
            &map.confidence,
            map.width,
            map.height,
        )?;
        formats::write_mask_pgm(&ctx.out.join("mask.pgm"), &map.mask, map.width, map.height)?;
        formats::write_depth_histogram_csv(&ctx.out.join("depth_histogram.csv"), &z_mm, &hist)?;
        println!("wrote {}", depth_path.display());
        Ok(())
    })?;

    let mut report = RunReport::new("depthmap", &ctx.sha);
    report.stages = job.stages;
    finish(report, &ctx.out)
}

// -------------------------------------------------------------------- report

const REPORT_COMMANDS: [&str; 6] = [
    "simulate",
    "correlate",
    "refocus",
    "stack",
    "parallax",
    "depthmap",
];

/// Print every report in the output directory and re-check its
/// conservation identities.
pub fn cmd_report(out: &Path) -> Result<(), CliError> {
    let mut found = 0usize;
    let mut violations = Vec::new();
    for name in REPORT_COMMANDS {
        let path = out.join(format!("report_{name}.json"));
        if !path.exists() {
            continue;
        }
        let run = RunReport::read_json(&path)?;
        found += 1;
        print!("{}", run.to_text());
        let (checks, bad) = report::verify(&run);
        if bad.is_empty() {
            println!("bookkeeping: {checks} identities hold");
        } else {
            for v in &bad {
                println!("bookkeeping violation: {v}");
            }
        }
        println!();
        violations.extend(bad);
    }
    if found == 0 {
        return Err(CliError::Io(format!(
            "no report_*.json files in {}",
            out.display()
        )));
    }
    if !violations.is_empty() {
        return Err(CliError::Check(format!(
            "{} bookkeeping identities violated",
            violations.len()
        )));
    }
    Ok(())
}
