//! End-to-end acceptance runs over the whole pipeline, one verdict line per
//! criterion on stdout.
//!
//! The target opts out of the default harness so the criteria run one at a
//! time: several assert wall-clock budgets that parallel test threads would
//! distort. Each criterion prints `ACCEPTANCE <n> PASS|FAIL: <detail>` and
//! the process exits nonzero if any fail. Simulation scales are sized so the
//! statistical margins are wide; the pass thresholds themselves are pinned
//! here and are not tunable.

use std::collections::{HashMap, HashSet};
use std::panic::AssertUnwindSafe;
use std::process::Command;
use std::time::Instant;

use qcrt::config::{CameraSection, CentroidingSection, MapsSection, SimulatorSection};
use qcrt_core::centroid::{cluster_hits, process, ClusteringParams, TimingCalibration};
use qcrt_core::coincidence::{
    delay_histogram, extract_pairs, find_peak, sort_events, MatchWindow, PairRecord,
};
use qcrt_core::depthmap::{
    adaptive_threshold, all_in_focus, apply_mask, depth_from_focus, depth_histogram,
    modified_laplacian, sharpness_volume, SharpnessVolume,
};
use qcrt_core::event::{
    coordinate_to_pixel, in_region, pixel_to_coordinate, sort_hits, BeamRegion, PhotonEvent,
    PixelHit,
};
use qcrt_core::optics::{apply, compose, klyshko_solve, OpticalElement, Ray};
use qcrt_core::reconstruct::{
    focal_stack, form_image, momentum_filter, pairs_to_rays, parallax_grid, Binning, GridSpec,
    ImageGrid, MomentumFilter, ParallaxLayout, SampleRay,
};
use qcrt_core::sim::{
    make_bars_scene, make_wires_scene, simulate, SceneSpec, SimSpec, WirePlane, DARK_ORIGIN,
};
use qcrt_core::Vec2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const MM: f64 = 1e-3;

fn main() {
    let wall = Instant::now();
    let mut failed: Vec<usize> = Vec::new();

    // Criterion 1 hands its raw hit streams to criterion 10, and criterion 4
    // hands its reconstructed rays to criterion 7, so the expensive
    // simulations run once.
    let mut streams: Option<(Vec<PixelHit>, Vec<PixelHit>)> = None;
    let mut bars: Option<Vec<SampleRay>> = None;

    report(1, guarded(AssertUnwindSafe(|| pairing_accuracy(&mut streams))), &mut failed);
    report(2, guarded(histogram_matches_oracle), &mut failed);
    report(3, guarded(klyshko_round_trip), &mut failed);
    report(4, guarded(AssertUnwindSafe(|| refocus_recovery(&mut bars))), &mut failed);
    report(5, guarded(wire_depth_map), &mut failed);
    report(6, guarded(parallax_displacement), &mut failed);
    report(7, guarded(AssertUnwindSafe(|| depth_of_field_gain(bars.as_deref()))), &mut failed);
    report(8, guarded(centroid_precision_and_partition), &mut failed);
    report(9, guarded(sharpness_kernels), &mut failed);
    report(
        10,
        guarded(AssertUnwindSafe(|| determinism_and_throughput(streams.as_ref()))),
        &mut failed,
    );

    println!(
        "acceptance: {} of 10 criteria pass in {:.1} s",
        10 - failed.len(),
        wall.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn guarded<F>(f: F) -> Result<String, String>
where
    F: FnOnce() -> Result<String, String> + std::panic::UnwindSafe,
{
    match std::panic::catch_unwind(f) {
        Ok(verdict) => verdict,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "opaque panic payload".into());
            Err(format!("panicked: {msg}"))
        }
    }
}

fn report(n: usize, verdict: Result<String, String>, failed: &mut Vec<usize>) {
    match verdict {
        Ok(detail) => println!("ACCEPTANCE {n} PASS: {detail}"),
        Err(detail) => {
            println!("ACCEPTANCE {n} FAIL: {detail}");
            failed.push(n);
        }
    }
}

// ------------------------------------------------------------ shared fixtures

/// Calibrated-instrument simulation with the given scene; every knob starts
/// at the config defaults and callers adjust the public fields.
fn base_spec(scene: SceneSpec, duration_s: f64, seed: u64) -> SimSpec {
    let cam = CameraSection::default();
    let maps = MapsSection::default();
    let sim = SimulatorSection::default();
    SimSpec {
        source: sim.source().expect("default source is valid"),
        scene,
        detector: sim.detector().expect("default detector is valid"),
        geometry: cam.geometry().expect("default camera is valid"),
        map_image: maps.image_map(&cam).expect("default image map is valid"),
        map_fourier: maps.fourier_map(&cam).expect("default fourier map is valid"),
        duration_s,
        seed,
    }
}

/// Bright single-hit configuration used by the imaging criteria: enough ray
/// statistics that reconstruction quality, not detector noise, decides the
/// outcome.
fn brighten(spec: &mut SimSpec) {
    spec.source.pair_rate_hz = 2e5;
    spec.detector.quantum_efficiency = 0.8;
    spec.detector.dark_rate_hz = 0.0;
    spec.detector.jitter_sigma_ns = 1.0;
    spec.detector.mean_cluster_hits = 0.0;
}

fn clustering() -> ClusteringParams {
    CentroidingSection::default().params()
}

/// Per-arm events with the dominant truth label of each cluster carried
/// along, plus the cluster size for fragment ranking.
struct LabeledEvents {
    events: Vec<PhotonEvent>,
    origins: Vec<u64>,
    sizes: Vec<usize>,
}

fn centroid_arm(hits: &[PixelHit], hit_origins: &[u64], params: &ClusteringParams) -> LabeledEvents {
    let clusters = cluster_hits(hits, params).expect("simulator streams are time sorted");
    let events = process(hits, params, &TimingCalibration::identity())
        .expect("simulator streams are time sorted");
    assert_eq!(clusters.len(), events.len());
    let mut origins = Vec::with_capacity(clusters.len());
    let mut sizes = Vec::with_capacity(clusters.len());
    for members in &clusters {
        let mut tally: HashMap<u64, usize> = HashMap::new();
        for &m in members {
            *tally.entry(hit_origins[m]).or_insert(0) += 1;
        }
        let (&origin, _) = tally
            .iter()
            .max_by_key(|&(&origin, &n)| (n, origin))
            .expect("clusters are nonempty");
        origins.push(origin);
        sizes.push(members.len());
    }
    LabeledEvents { events, origins, sizes }
}

/// Keep in-region events and order them exactly as the histogram expects.
fn select_region(arm: LabeledEvents, region: &BeamRegion) -> LabeledEvents {
    let mut keep: Vec<(PhotonEvent, u64, usize)> = arm
        .events
        .into_iter()
        .zip(arm.origins)
        .zip(arm.sizes)
        .filter(|((e, _), _)| in_region(e, region))
        .map(|((e, o), s)| (e, o, s))
        .collect();
    keep.sort_by(|a, b| {
        a.0.t_ns
            .total_cmp(&b.0.t_ns)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
    });
    let mut events = Vec::with_capacity(keep.len());
    let mut origins = Vec::with_capacity(keep.len());
    let mut sizes = Vec::with_capacity(keep.len());
    for (e, o, s) in keep {
        events.push(e);
        origins.push(o);
        sizes.push(s);
    }
    LabeledEvents { events, origins, sizes }
}

struct Correlated {
    image: LabeledEvents,
    fourier: LabeledEvents,
    peak_center_ns: f64,
    pairs: Vec<PairRecord>,
    /// Truth labels of each matched pair, image arm then fourier arm.
    pair_origins: Vec<(u64, u64)>,
}

fn event_key(e: &PhotonEvent) -> (u64, u64, u64) {
    (e.t_ns.to_bits(), e.y.to_bits(), e.x.to_bits())
}

/// The full correlation chain on simulator output: centroid both arms,
/// region-filter, histogram, peak search, greedy pairing. Mirrors the CLI
/// stages but keeps truth labels attached throughout.
fn correlate(spec: &SimSpec, out: &qcrt_core::sim::SimOutput, gate_ns: f64) -> Result<Correlated, String> {
    let params = clustering();
    let image = centroid_arm(&out.hits_image, &out.origins_image, &params);
    let fourier = centroid_arm(&out.hits_fourier, &out.origins_fourier, &params);
    let image = select_region(image, &spec.geometry.image_region);
    let fourier = select_region(fourier, &spec.geometry.fourier_region);

    let hist = delay_histogram(&image.events, &fourier.events, 1.0, 500.0)
        .map_err(|e| format!("histogram: {e}"))?;
    let peak = find_peak(&hist, 5.0).map_err(|e| format!("peak search: {e}"))?;
    let window = MatchWindow { center_ns: peak.center_ns, gate_ns };
    let (pairs, _) = extract_pairs(&image.events, &fourier.events, window)
        .map_err(|e| format!("pairing: {e}"))?;

    let label_i: HashMap<_, _> = image
        .events
        .iter()
        .zip(&image.origins)
        .map(|(e, &o)| (event_key(e), o))
        .collect();
    let label_f: HashMap<_, _> = fourier
        .events
        .iter()
        .zip(&fourier.origins)
        .map(|(e, &o)| (event_key(e), o))
        .collect();
    let pair_origins = pairs
        .iter()
        .map(|p| (label_i[&event_key(&p.image)], label_f[&event_key(&p.fourier)]))
        .collect();

    Ok(Correlated { image, fourier, peak_center_ns: peak.center_ns, pairs, pair_origins })
}

/// Matched pairs to sample-plane rays through the calibrated maps.
fn rays_from(pairs: &[PairRecord]) -> Vec<SampleRay> {
    let conv = qcrt::config::ray_conversion(&CameraSection::default(), &MapsSection::default(), None)
        .expect("default conversion is valid");
    let (rays, report) = pairs_to_rays(pairs, &conv).expect("calibrated maps have no conjugate plane");
    assert_eq!(report.dropped_non_paraxial, 0, "calibrated regions stay paraxial");
    rays
}

fn fourier_center_px() -> Vec2 {
    let cam = CameraSection::default();
    let map = MapsSection::default().fourier_map(&cam).expect("default map");
    coordinate_to_pixel(&map, Vec2::ZERO)
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

// --------------------------------------------------- 1: pairing vs truth

/// Sixty seconds of the calibrated instrument, dark counts and 6 ns jitter
/// on. The histogram peak must sit within 1 ns of zero and a 20 ns gate must
/// recover at least 95% of the recoverable truth pairs at 95% precision,
/// all inside a 60 s wall-clock budget.
///
/// A truth pair counts as recoverable when both of its photons survived to
/// in-region events and some combination of those events has a delay inside
/// the gate; with 6 ns per-arm jitter the gate itself excludes a fixed
/// fraction of true pairs, which is a property of the instrument settings,
/// not of the matcher under test.
fn pairing_accuracy(streams: &mut Option<(Vec<PixelHit>, Vec<PixelHit>)>) -> Result<String, String> {
    let t0 = Instant::now();
    let gate_ns = 20.0;
    let spec = base_spec(SceneSpec::transparent(), 60.0, 11);
    let out = simulate(&spec).map_err(|e| format!("simulate: {e}"))?;
    let c = correlate(&spec, &out, gate_ns)?;

    if c.peak_center_ns.abs() > 1.0 {
        return Err(format!("histogram peak at {:+.3} ns, expected within 1 ns of zero", c.peak_center_ns));
    }

    let mut times_i: HashMap<u64, Vec<f64>> = HashMap::new();
    for (e, &o) in c.image.events.iter().zip(&c.image.origins) {
        if o != DARK_ORIGIN {
            times_i.entry(o).or_default().push(e.t_ns);
        }
    }
    let mut times_f: HashMap<u64, Vec<f64>> = HashMap::new();
    for (e, &o) in c.fourier.events.iter().zip(&c.fourier.origins) {
        if o != DARK_ORIGIN {
            times_f.entry(o).or_default().push(e.t_ns);
        }
    }
    let half_gate = gate_ns / 2.0;
    let recoverable = times_i
        .iter()
        .filter(|(o, ti)| {
            times_f.get(o).is_some_and(|tf| {
                ti.iter().any(|a| tf.iter().any(|b| (a - b - c.peak_center_ns).abs() <= half_gate))
            })
        })
        .count();

    let correct_pairs = c
        .pair_origins
        .iter()
        .filter(|(a, b)| a == b && *a != DARK_ORIGIN)
        .count();
    let correct_origins: HashSet<u64> = c
        .pair_origins
        .iter()
        .filter(|(a, b)| a == b && *a != DARK_ORIGIN)
        .map(|&(a, _)| a)
        .collect();

    if recoverable == 0 || c.pairs.is_empty() {
        return Err("no recoverable pairs in the run".into());
    }
    let recall = correct_origins.len() as f64 / recoverable as f64;
    let precision = correct_pairs as f64 / c.pairs.len() as f64;
    let elapsed = t0.elapsed().as_secs_f64();

    *streams = Some((out.hits_image, out.hits_fourier));

    if recall < 0.95 {
        return Err(format!("recall {recall:.4} ({}/{recoverable}), needs >= 0.95", correct_origins.len()));
    }
    if precision < 0.95 {
        return Err(format!("precision {precision:.4} ({correct_pairs}/{}), needs >= 0.95", c.pairs.len()));
    }
    if elapsed > 60.0 {
        return Err(format!("took {elapsed:.1} s, budget is 60 s"));
    }
    Ok(format!(
        "peak {:+.3} ns, recall {recall:.4} ({}/{recoverable}), precision {precision:.4} ({correct_pairs}/{}), {elapsed:.1} s",
        c.peak_center_ns,
        correct_origins.len(),
        c.pairs.len()
    ))
}

// ------------------------------------------------ 2: histogram vs O(n^2)

/// The two-pointer histogram must agree bin for bin with a direct quadratic
/// count over every event pair, on 50 seeded random instances.
fn histogram_matches_oracle() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(22);
    let mut total_events = 0usize;
    for case in 0..50 {
        let span_ns = rng.gen_range(1e3..1e5);
        let mut image: Vec<PhotonEvent> = (0..rng.gen_range(1..=2000))
            .map(|_| PhotonEvent { x: 0.0, y: 0.0, t_ns: rng.gen_range(0.0..span_ns), amplitude: 0 })
            .collect();
        let mut fourier: Vec<PhotonEvent> = (0..rng.gen_range(1..=2000))
            .map(|_| PhotonEvent { x: 0.0, y: 0.0, t_ns: rng.gen_range(0.0..span_ns), amplitude: 0 })
            .collect();
        sort_events(&mut image);
        sort_events(&mut fourier);
        total_events += image.len() + fourier.len();

        let bin_ns = rng.gen_range(0.3..8.0);
        let max_ns = bin_ns * rng.gen_range(1.0..200.0);
        let hist = delay_histogram(&image, &fourier, bin_ns, max_ns)
            .map_err(|e| format!("case {case}: {e}"))?;

        // Direct count over all pairs, using the documented binning: both
        // edges inclusive, the closing edge folded into the last bin.
        let bins = hist.counts.len();
        let mut oracle = vec![0u64; bins];
        for a in &image {
            for b in &fourier {
                let dt = a.t_ns - b.t_ns;
                if dt >= -max_ns && dt <= max_ns {
                    oracle[(((dt + max_ns) / bin_ns) as usize).min(bins - 1)] += 1;
                }
            }
        }
        if oracle != hist.counts {
            let i = oracle.iter().zip(&hist.counts).position(|(o, h)| o != h).unwrap();
            return Err(format!(
                "case {case}: bin {i} has {} from the join, {} from the direct count",
                hist.counts[i], oracle[i]
            ));
        }
    }
    Ok(format!("50 instances agree bin for bin ({total_events} events total)"))
}

// ------------------------------------------------- 3: klyshko round trip

/// Random lossless prescriptions with |b| above the degeneracy floor: the
/// two-plane solve must reproduce the traced angles to 1e-9 relative error
/// and every composition must have unit determinant to 1e-9.
fn klyshko_round_trip() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(33);
    let signed = |rng: &mut ChaCha12Rng, lo: f64, hi: f64| {
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        s * rng.gen_range(lo..hi)
    };
    let mut worst_angle = 0.0f64;
    let mut worst_det = 0.0f64;
    for _ in 0..10_000 {
        let m = loop {
            let elements: Vec<OpticalElement> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        OpticalElement::FreeSpace { length_m: rng.gen_range(0.01..1.0) }
                    } else {
                        OpticalElement::ThinLens { focal_length_m: signed(&mut rng, 0.05, 2.0) }
                    }
                })
                .collect();
            let m = compose(&elements).map_err(|e| e.to_string())?;
            if m.b.abs() > 1e-6 {
                break m;
            }
        };
        worst_det = worst_det.max((m.a * m.d - m.b * m.c - 1.0).abs());

        let ray = Ray {
            r: Vec2::new(signed(&mut rng, 1e-4, 3e-3), signed(&mut rng, 1e-4, 3e-3)),
            theta: Vec2::new(signed(&mut rng, 5e-3, 5e-2), signed(&mut rng, 5e-3, 5e-2)),
        };
        let traced = apply(&m, &ray);
        let (theta_crystal, theta_camera) =
            klyshko_solve(&m, ray.r, traced.r, 1e-6).map_err(|e| e.to_string())?;
        for (got, want) in [
            (theta_crystal.x, ray.theta.x),
            (theta_crystal.y, ray.theta.y),
            (theta_camera.x, traced.theta.x),
            (theta_camera.y, traced.theta.y),
        ] {
            // Camera-side angles can pass near zero, so errors there are
            // measured against a paraxial-scale floor.
            worst_angle = worst_angle.max((got - want).abs() / want.abs().max(1e-3));
        }
    }
    if worst_angle > 1e-9 {
        return Err(format!("worst angle error {worst_angle:.2e} relative, needs <= 1e-9"));
    }
    if worst_det > 1e-9 {
        return Err(format!("worst |det - 1| is {worst_det:.2e}, needs <= 1e-9"));
    }
    Ok(format!(
        "10000 round trips, worst angle error {worst_angle:.1e}, worst |det - 1| {worst_det:.1e}"
    ))
}

// --------------------------------------------------- 4: refocus recovery

/// The stripe element's geometry is fixed: opaque stripes centered at 0 and
/// +/-200 um, clear gaps at +/-100 um. Contrast compares the column profile
/// at those known centers, so the beam envelope cancels out of the measure.
fn bar_contrast(img: &ImageGrid) -> f64 {
    let spec = &img.spec;
    let left = spec.center_m.x - spec.extent_m.x / 2.0;
    let bin = spec.bin_size_m().x;
    let col_of = |x_m: f64| ((((x_m - left) / bin) as usize).min(spec.width - 1)) as usize;

    let mut profile = vec![0.0f64; spec.width];
    for iy in 0..spec.height {
        if spec.bin_center_m(0, iy).y.abs() <= 0.5 * MM {
            for ix in 0..spec.width {
                profile[ix] += img.at(ix, iy);
            }
        }
    }
    let mean_at = |xs: &[f64]| xs.iter().map(|&x| profile[col_of(x)]).sum::<f64>() / xs.len() as f64;
    let dark = mean_at(&[-200e-6, 0.0, 200e-6]);
    let bright = mean_at(&[-100e-6, 100e-6]);
    (bright - dark) / (bright + dark)
}

/// Single-hit events sit on the camera pixel lattice, 11 um in sample
/// coordinates through the image map. Render bins here are exact multiples
/// of that pitch so every bin covers the same number of lattice columns;
/// otherwise the 2-vs-3 column alternation rips through every z=0 slice
/// with more contrast than the scene itself.
fn lattice_grid(width: usize, bin_m: f64) -> GridSpec {
    GridSpec {
        width,
        height: width,
        center_m: Vec2::ZERO,
        extent_m: Vec2::new(width as f64 * bin_m, width as f64 * bin_m),
    }
}

/// 22 um bins: close enough to sample each 100 um stripe and gap of the
/// 5 lp/mm element near its center, and an exact double of the lattice.
fn contrast_grid() -> GridSpec {
    lattice_grid(65, 22e-6)
}

/// A 5 lp/mm stripe element sitting 4 mm off the reference plane: the z=0
/// render must wash out below 0.2 Michelson contrast, refocusing to 4 mm
/// must restore at least 0.6, and the sharpness sweep must put best focus
/// at 4 +/- 1 mm, all inside a 2 minute budget.
fn refocus_recovery(shared: &mut Option<Vec<SampleRay>>) -> Result<String, String> {
    let t0 = Instant::now();
    let scene = make_bars_scene(5.0, 2.0 * MM, Vec2::ZERO, 4.0 * MM).map_err(|e| e.to_string())?;
    let mut spec = base_spec(scene, 20.0, 44);
    brighten(&mut spec);
    let out = simulate(&spec).map_err(|e| format!("simulate: {e}"))?;
    let c = correlate(&spec, &out, 20.0)?;
    let rays = rays_from(&c.pairs);

    let fine = contrast_grid();
    let c_defocus = bar_contrast(&form_image(&rays, &fine, 0.0, Binning::Nearest));
    let c_refocus = bar_contrast(&form_image(&rays, &fine, 4.0 * MM, Binning::Nearest));

    // 99 um bins tile the 100 um stripes and gaps nearly one-to-one, which
    // maximizes the second difference the sharpness metric responds to,
    // while staying an exact multiple of the event lattice.
    let coarse = lattice_grid(15, 99e-6);
    let stack = focal_stack(&rays, &coarse, -20.0 * MM, 20.0 * MM, 1.0 * MM, Binning::Nearest)
        .map_err(|e| e.to_string())?;
    let mut best_z_mm = f64::NAN;
    let mut best_mean = f64::NEG_INFINITY;
    for (slice, &z) in stack.slices.iter().zip(&stack.z_m) {
        let ml = modified_laplacian(slice).map_err(|e| e.to_string())?;
        let mean = ml.iter().sum::<f64>() / ml.len() as f64;
        if mean > best_mean {
            best_mean = mean;
            best_z_mm = z / MM;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();

    *shared = Some(rays);

    if !(c_defocus < 0.2) {
        return Err(format!("z=0 contrast {c_defocus:.3}, needs < 0.2"));
    }
    if !(c_refocus >= 0.6) {
        return Err(format!("z=4 mm contrast {c_refocus:.3}, needs >= 0.6"));
    }
    if !((best_z_mm - 4.0).abs() <= 1.0 + 1e-9) {
        return Err(format!("sharpness argmax at {best_z_mm:.1} mm, needs 4 +/- 1 mm"));
    }
    if elapsed > 120.0 {
        return Err(format!("took {elapsed:.1} s, budget is 120 s"));
    }
    Ok(format!(
        "contrast {c_defocus:.3} at z=0, {c_refocus:.3} at z=4 mm, sharpness argmax {best_z_mm:.0} mm, {elapsed:.1} s"
    ))
}

// ------------------------------------------------------- 5: wire depth map

/// Four wires at distinct depths inside +/-20 mm: a 41-slice sweep plus
/// focus search must place each wire's median depth within 1 mm, the depth
/// histogram must peak at the four true depths, and everything outside the
/// foreground mask must report depth exactly 0.
fn wire_depth_map() -> Result<String, String> {
    let wires = [
        WirePlane { z_m: -11.8 * MM, width_m: 0.15 * MM, offset_m: -0.45 * MM, vertical: true },
        WirePlane { z_m: -4.9 * MM, width_m: 0.15 * MM, offset_m: -0.15 * MM, vertical: true },
        WirePlane { z_m: 4.2 * MM, width_m: 0.15 * MM, offset_m: 0.15 * MM, vertical: true },
        WirePlane { z_m: 10.9 * MM, width_m: 0.15 * MM, offset_m: 0.45 * MM, vertical: true },
    ];
    let scene = make_wires_scene(&wires).map_err(|e| e.to_string())?;
    let mut spec = base_spec(scene, 20.0, 55);
    brighten(&mut spec);
    let out = simulate(&spec).map_err(|e| format!("simulate: {e}"))?;
    let c = correlate(&spec, &out, 20.0)?;
    let rays = rays_from(&c.pairs);

    let grid = lattice_grid(44, 33e-6);
    let stack = focal_stack(&rays, &grid, -20.0 * MM, 20.0 * MM, 1.0 * MM, Binning::Nearest)
        .map_err(|e| e.to_string())?;
    if stack.slices.len() != 41 {
        return Err(format!("expected a 41-slice sweep, got {}", stack.slices.len()));
    }
    let z_mm: Vec<f64> = stack.z_m.iter().map(|z| z / MM).collect();
    let volume = sharpness_volume(&stack).map_err(|e| e.to_string())?;
    let mut map = depth_from_focus(&volume, &z_mm).map_err(|e| e.to_string())?;

    // Wires absorb, so the foreground is darker than its surroundings in
    // the all-in-focus composite.
    let aif = all_in_focus(&stack, &map, &z_mm).map_err(|e| e.to_string())?;
    let offset = 0.5 * std_dev(&aif.counts);
    let negated = ImageGrid {
        spec: aif.spec,
        z_m: aif.z_m,
        counts: aif.counts.iter().map(|&v| -v).collect(),
        in_weight: aif.in_weight,
        overflow_weight: aif.overflow_weight,
    };
    let foreground = adaptive_threshold(&negated, 15, offset).map_err(|e| e.to_string())?;
    apply_mask(&mut map, &foreground);

    // Median recovered depth per wire, pixels assigned by column.
    let mut worst_median = 0.0f64;
    for wire in &wires {
        let mut depths = Vec::new();
        for iy in 0..grid.height {
            for ix in 0..grid.width {
                let p = iy * grid.width + ix;
                if map.mask[p] && (grid.bin_center_m(ix, iy).x - wire.offset_m).abs() <= 0.105 * MM {
                    depths.push(map.depth[p]);
                }
            }
        }
        if depths.len() < 20 {
            return Err(format!(
                "wire at {:.1} mm kept only {} masked pixels",
                wire.z_m / MM,
                depths.len()
            ));
        }
        let err = (median(&mut depths) - wire.z_m / MM).abs();
        worst_median = worst_median.max(err);
    }
    if worst_median > 1.0 {
        return Err(format!("worst per-wire median depth error {worst_median:.2} mm, needs <= 1 mm"));
    }

    // The four tallest histogram bins must sit at the four true depths.
    let hist = depth_histogram(&map, &z_mm).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = (0..hist.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(hist[i]));
    let mut modes: Vec<f64> = order[..4].iter().map(|&i| z_mm[i]).collect();
    modes.sort_by(|a, b| a.total_cmp(b));
    let mut truth: Vec<f64> = wires.iter().map(|w| w.z_m / MM).collect();
    truth.sort_by(|a, b| a.total_cmp(b));
    for (m, t) in modes.iter().zip(&truth) {
        if (m - t).abs() > 1.0 + 1e-9 {
            return Err(format!(
                "histogram modes at {modes:?} mm, expected near {truth:?} mm"
            ));
        }
    }

    let leaked = (0..map.depth.len()).filter(|&p| !map.mask[p] && map.depth[p] != 0.0).count();
    if leaked > 0 {
        return Err(format!("{leaked} background pixels report nonzero depth"));
    }

    Ok(format!(
        "worst per-wire median error {worst_median:.2} mm, histogram modes {:?} mm, background clean",
        modes.iter().map(|m| *m as i64).collect::<Vec<_>>()
    ))
}

// -------------------------------------------------- 6: parallax law

/// Count-deficit centroid of a wire shadow along one axis, against a linear
/// baseline over a fixed window around the predicted position.
fn shadow_centroid(
    view: &ImageGrid,
    vertical_wire: bool,
    band_m: (f64, f64),
    expected_m: f64,
) -> Result<f64, String> {
    let spec = &view.spec;
    let n = if vertical_wire { spec.width } else { spec.height };
    let mut profile = vec![0.0f64; n];
    for iy in 0..spec.height {
        for ix in 0..spec.width {
            let c = spec.bin_center_m(ix, iy);
            let (idx, across) = if vertical_wire { (ix, c.y) } else { (iy, c.x) };
            if across >= band_m.0 && across <= band_m.1 {
                profile[idx] += view.at(ix, iy);
            }
        }
    }
    let centers: Vec<f64> = (0..n)
        .map(|i| if vertical_wire { spec.bin_center_m(i, 0).x } else { spec.bin_center_m(0, i).y })
        .collect();
    let bin = if vertical_wire { spec.bin_size_m().x } else { spec.bin_size_m().y };
    let i0 = centers
        .iter()
        .position(|&c| (c - expected_m).abs() <= bin / 2.0)
        .ok_or("predicted shadow position is off the grid")?;
    if i0 < 7 || i0 + 7 >= n {
        return Err("shadow window is clipped by the grid".into());
    }
    let (a, b) = (i0 - 7, i0 + 7);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in a..=b {
        let t = (i - a) as f64 / (b - a) as f64;
        let base = profile[a] + (profile[b] - profile[a]) * t;
        let deficit = (base - profile[i]).max(0.0);
        num += deficit * centers[i];
        den += deficit;
    }
    if den < 100.0 {
        return Err(format!("shadow deficit too shallow ({den:.0} counts)"));
    }
    Ok(num / den)
}

/// A cross of two wires at depth z, viewed through the 3x3 sub-region grid:
/// the shadow displacement between adjacent views must equal z times the
/// angular step between the views, within one render bin; at z=0 the shadow
/// must not move at all (same bin tolerance).
fn parallax_displacement() -> Result<String, String> {
    let grid = lattice_grid(44, 33e-6);
    let bin_m = grid.bin_size_m().x;
    let layout = ParallaxLayout { pitch_px: 20.0, diameter_px: 20.0 };
    let aperture = MomentumFilter { center_px: fourier_center_px(), radius_px: 65.0 };
    let cam = CameraSection::default();
    let map_f = MapsSection::default().fourier_map(&cam).expect("default map");

    // Angle looked through by view k, taken at the sub-region center pixel.
    let theta_of = |k: usize| -> Vec2 {
        let px = aperture.center_px
            + Vec2::new(
                ((k % 3) as f64 - 1.0) * layout.pitch_px,
                ((k / 3) as f64 - 1.0) * layout.pitch_px,
            );
        pixel_to_coordinate(&map_f, &PhotonEvent { x: px.x, y: px.y, t_ns: 0.0, amplitude: 0 })
    };

    let run = |z_m: f64, seed: u64| -> Result<(Vec<f64>, Vec<f64>), String> {
        let scene = make_wires_scene(&[
            WirePlane { z_m, width_m: 0.15 * MM, offset_m: -0.3 * MM, vertical: true },
            WirePlane { z_m, width_m: 0.15 * MM, offset_m: 0.3 * MM, vertical: false },
        ])
        .map_err(|e| e.to_string())?;
        let mut spec = base_spec(scene, 12.0, seed);
        brighten(&mut spec);
        let out = simulate(&spec).map_err(|e| format!("simulate: {e}"))?;
        let c = correlate(&spec, &out, 20.0)?;
        let rays = rays_from(&c.pairs);
        let views = parallax_grid(&rays, &layout, &aperture, &map_f, &grid, Binning::Nearest)
            .map_err(|e| e.to_string())?;
        let mut xs = Vec::with_capacity(9);
        let mut ys = Vec::with_capacity(9);
        for (k, view) in views.iter().enumerate() {
            let th = theta_of(k);
            // The vertical wire is read in a row band below the horizontal
            // wire's shadow and vice versa, so the two never mix.
            xs.push(shadow_centroid(view, true, (-0.65 * MM, -0.10 * MM), -0.3 * MM - z_m * th.x)?);
            ys.push(shadow_centroid(view, false, (0.05 * MM, 0.65 * MM), 0.3 * MM - z_m * th.y)?);
        }
        Ok((xs, ys))
    };

    // Displaced cross: every adjacent view pair must obey dx = -z * dtheta.
    let z = 9.0 * MM;
    let (xs, ys) = run(z, 66)?;
    let mut worst = 0.0f64;
    for row in 0..3 {
        for col in 0..2 {
            let k = row * 3 + col;
            let measured = xs[k + 1] - xs[k];
            let predicted = -z * (theta_of(k + 1).x - theta_of(k).x);
            worst = worst.max((measured - predicted).abs());
        }
    }
    for col in 0..3 {
        for row in 0..2 {
            let k = row * 3 + col;
            let measured = ys[k + 3] - ys[k];
            let predicted = -z * (theta_of(k + 3).y - theta_of(k).y);
            worst = worst.max((measured - predicted).abs());
        }
    }
    if worst > bin_m {
        return Err(format!(
            "adjacent-view displacement off by {:.1} um, tolerance is one bin ({:.1} um)",
            worst / 1e-6,
            bin_m / 1e-6
        ));
    }

    // Cross at the reference plane: the shadow must hold still.
    let (xs0, ys0) = run(0.0, 67)?;
    let spread = |v: &[f64]| {
        v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
            - v.iter().fold(f64::INFINITY, |m, &x| m.min(x))
    };
    let still = spread(&xs0).max(spread(&ys0));
    if still >= bin_m {
        return Err(format!(
            "z=0 shadow wanders {:.1} um across views, needs < one bin ({:.1} um)",
            still / 1e-6,
            bin_m / 1e-6
        ));
    }

    Ok(format!(
        "12 adjacent pairs within {:.1} um of z*dtheta, z=0 spread {:.1} um (bin {:.1} um)",
        worst / 1e-6,
        still / 1e-6,
        bin_m / 1e-6
    ))
}

// ------------------------------------- 7: depth of field vs aperture

/// Restricting rays to a centered 20 px angular sub-region must at least
/// double the z-range over which stripe contrast stays above half its peak,
/// compared to the full 130 px aperture.
fn depth_of_field_gain(bars: Option<&[SampleRay]>) -> Result<String, String> {
    let rays = bars.ok_or("needs the ray set from criterion 4")?;
    let cam = CameraSection::default();
    let map_f = MapsSection::default().fourier_map(&cam).expect("default map");
    let center = fourier_center_px();
    let fine = contrast_grid();

    let span_mm = |radius_px: f64| -> Result<(f64, f64), String> {
        let filter = MomentumFilter { center_px: center, radius_px };
        let subset = momentum_filter(rays, &filter, &map_f);
        if subset.is_empty() {
            return Err(format!("no rays inside the {radius_px} px aperture"));
        }
        let contrast: Vec<f64> = (-20..=20)
            .map(|z| bar_contrast(&form_image(&subset, &fine, z as f64 * MM, Binning::Nearest)))
            .collect();
        let (i_peak, &peak) = contrast
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("contrast curve is nonempty");
        let half = peak / 2.0;
        let mut lo = i_peak;
        while lo > 0 && contrast[lo - 1] >= half {
            lo -= 1;
        }
        let mut hi = i_peak;
        while hi + 1 < contrast.len() && contrast[hi + 1] >= half {
            hi += 1;
        }
        Ok(((hi - lo) as f64, peak))
    };

    let (full_mm, full_peak) = span_mm(65.0)?;
    let (sub_mm, sub_peak) = span_mm(10.0)?;
    if full_mm <= 0.0 {
        return Err("full-aperture contrast never drops to half peak inside the sweep".into());
    }
    if sub_mm < 2.0 * full_mm {
        return Err(format!(
            "half-peak span {sub_mm:.0} mm with the sub-region vs {full_mm:.0} mm full aperture, needs >= 2x"
        ));
    }
    Ok(format!(
        "half-peak span {sub_mm:.0} mm (20 px sub-region, peak {sub_peak:.2}) vs {full_mm:.0} mm (full aperture, peak {full_peak:.2})"
    ))
}

// ------------------------------------ 8: centroid precision and partition

#[derive(Clone)]
struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// One photon's flash has a known center when source blur is off, so the
/// centroid error is measured directly against the truth table; clustering
/// is checked against a quadratic union-find over the linking predicate.
fn centroid_precision_and_partition() -> Result<String, String> {
    // Precision half: bright spot, unit efficiency, no darks, 34-hit
    // flashes with a 1.75 px footprint.
    let mut spec = base_spec(SceneSpec::transparent(), 2.0, 88);
    spec.source.pair_rate_hz = 1e4;
    spec.source.beam_waist_sigma_m = 0.25 * MM;
    spec.source.position_blur_sigma_m = 0.0;
    spec.detector.quantum_efficiency = 1.0;
    spec.detector.dark_rate_hz = 0.0;
    spec.detector.jitter_sigma_ns = 0.0;
    let out = simulate(&spec).map_err(|e| format!("simulate: {e}"))?;
    let arm = centroid_arm(&out.hits_image, &out.origins_image, &clustering());

    // The largest fragment per flash carries its centroid; occasional
    // single-hit outliers that split off are fragments, not new flashes.
    let mut main_of: HashMap<u64, (usize, usize)> = HashMap::new();
    for (idx, (&origin, &size)) in arm.origins.iter().zip(&arm.sizes).enumerate() {
        if origin == DARK_ORIGIN {
            continue;
        }
        let entry = main_of.entry(origin).or_insert((size, idx));
        if size > entry.0 {
            *entry = (size, idx);
        }
    }
    let mut sq_sum = 0.0;
    let mut n = 0usize;
    for (&origin, &(_, idx)) in &main_of {
        let truth = &out.truth[origin as usize];
        let want = coordinate_to_pixel(&spec.map_image, truth.r.to_vec2());
        let margin = 12.0;
        if want.x < margin
            || want.y < margin
            || want.x > f64::from(spec.geometry.width) - margin
            || want.y > f64::from(spec.geometry.height) - margin
        {
            continue;
        }
        let e = &arm.events[idx];
        sq_sum += (e.x - want.x).powi(2) + (e.y - want.y).powi(2);
        n += 1;
    }
    if n < 10_000 {
        return Err(format!("only {n} flashes scored, expected tens of thousands"));
    }
    let rms = (sq_sum / n as f64).sqrt();
    if rms >= 0.5 {
        return Err(format!("centroid RMS error {rms:.3} px over {n} flashes, needs < 0.5 px"));
    }

    // Partition half: random hit sets, some with injected dense flashes,
    // against transitive closure of the documented linking predicate
    // (Chebyshev distance <= radius, arrival gap <= the window in ps).
    let params = clustering();
    let window_ps = 100_000u64;
    for seed in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(8800 + seed);
        let mut hits: Vec<PixelHit> = (0..rng.gen_range(30..=800))
            .map(|_| PixelHit {
                x: rng.gen_range(0..64),
                y: rng.gen_range(0..64),
                toa_ps: rng.gen_range(0..2_000_000),
                tot: rng.gen_range(1..400),
            })
            .collect();
        for _ in 0..rng.gen_range(0..6) {
            let cx = rng.gen_range(4..60) as i32;
            let cy = rng.gen_range(4..60) as i32;
            let t0 = rng.gen_range(0..1_900_000);
            for _ in 0..rng.gen_range(5..25) {
                hits.push(PixelHit {
                    x: (cx + rng.gen_range(-3..=3)).clamp(0, 63) as u16,
                    y: (cy + rng.gen_range(-3..=3)).clamp(0, 63) as u16,
                    toa_ps: t0 + rng.gen_range(0..100_000),
                    tot: rng.gen_range(1..400),
                });
            }
        }
        sort_hits(&mut hits);

        let clusters = cluster_hits(&hits, &params).map_err(|e| format!("seed {seed}: {e}"))?;

        let mut dsu = Dsu((0..hits.len()).collect());
        for i in 0..hits.len() {
            for j in (i + 1)..hits.len() {
                let a = &hits[i];
                let b = &hits[j];
                let dx = (i32::from(a.x) - i32::from(b.x)).unsigned_abs();
                let dy = (i32::from(a.y) - i32::from(b.y)).unsigned_abs();
                if dx.max(dy) <= u32::from(params.spatial_radius_px)
                    && b.toa_ps.abs_diff(a.toa_ps) <= window_ps
                {
                    dsu.union(i, j);
                }
            }
        }
        let mut oracle: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..hits.len() {
            let root = dsu.find(i);
            oracle.entry(root).or_default().push(i);
        }
        let normalize = |mut groups: Vec<Vec<usize>>| {
            for g in &mut groups {
                g.sort_unstable();
            }
            groups.sort();
            groups
        };
        let got = normalize(clusters);
        let want = normalize(oracle.into_values().collect());

        let mut flat: Vec<usize> = got.iter().flatten().copied().collect();
        flat.sort_unstable();
        if flat != (0..hits.len()).collect::<Vec<_>>() {
            return Err(format!("seed {seed}: clustering lost or duplicated hits"));
        }
        if got != want {
            return Err(format!(
                "seed {seed}: {} clusters vs {} from the union-find oracle",
                got.len(),
                want.len()
            ));
        }
    }

    Ok(format!(
        "centroid RMS {rms:.3} px over {n} flashes; 100 hit sets partition identically"
    ))
}

// ------------------------------------------------ 9: sharpness kernels

/// The sharpness metric on I = x^2 is exactly 4 at every interior pixel, a
/// Gaussian sharpness column refines to its true center at 1e-9 precision,
/// and scaling the whole volume by a positive constant changes nothing.
fn sharpness_kernels() -> Result<String, String> {
    // Second difference of x^2 is exactly 2 in floats up to x = 2^25, so
    // the metric must return 2^2 + 0 bit for bit.
    let (w, h) = (32usize, 8usize);
    let img = ImageGrid {
        spec: GridSpec { width: w, height: h, center_m: Vec2::ZERO, extent_m: Vec2::new(1.0, 1.0) },
        z_m: 0.0,
        counts: (0..w * h).map(|p| ((p % w) as f64).powi(2)).collect(),
        in_weight: 0.0,
        overflow_weight: 0.0,
    };
    let ml = modified_laplacian(&img).map_err(|e| e.to_string())?;
    for iy in 0..h {
        for ix in 1..w - 1 {
            let got = ml[iy * w + ix];
            if got != 4.0 {
                return Err(format!("metric on x^2 is {got} at column {ix}, expected exactly 4"));
            }
        }
    }

    // Gaussian sharpness columns with known off-grid vertices.
    let slices = 41usize;
    let n = 64usize;
    let centers: Vec<f64> = (0..n).map(|p| 2.0 + 36.0 * p as f64 / (n - 1) as f64).collect();
    let volume = SharpnessVolume {
        width: n,
        height: 1,
        slices: (0..slices)
            .map(|z| centers.iter().map(|c| (-((z as f64 - c).powi(2)) / 18.0).exp()).collect())
            .collect(),
    };
    let z_axis: Vec<f64> = (0..slices).map(|z| z as f64).collect();
    let map = depth_from_focus(&volume, &z_axis).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (p, &c) in centers.iter().enumerate() {
        worst = worst.max((map.depth[p] - c).abs());
    }
    if worst > 1e-9 {
        return Err(format!("Gaussian vertex recovered to {worst:.2e} slice units, needs <= 1e-9"));
    }

    // Positive scaling invariance of argmax and refined depth.
    let scaled = SharpnessVolume {
        width: volume.width,
        height: volume.height,
        slices: volume.slices.iter().map(|s| s.iter().map(|v| v * 7.3).collect()).collect(),
    };
    let map2 = depth_from_focus(&scaled, &z_axis).map_err(|e| e.to_string())?;
    if map.mask != map2.mask {
        return Err("scaling the volume changed the mask".into());
    }
    let mut drift = 0.0f64;
    for (a, b) in map.depth.iter().zip(&map2.depth) {
        drift = drift.max((a - b).abs());
    }
    if drift > 1e-9 {
        return Err(format!("scaling the volume moved depths by {drift:.2e} slice units"));
    }

    Ok(format!(
        "x^2 metric exact, Gaussian vertex within {worst:.1e}, scale drift {drift:.1e} slice units"
    ))
}

// ------------------------------------ 10: determinism and throughput

fn run_cli(args: &[&str]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_qcrt"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning the binary: {e}"))?;
    if !output.status.success() {
        return Err(format!(
            "`qcrt {}` exited with {:?}: {}",
            args.join(" "),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr).trim()
        ));
    }
    Ok(())
}

/// Re-running every command with a fixed seed must reproduce each artifact
/// byte for byte (run reports carry wall-clock times and are exempt), and
/// the correlation chain must sustain at least 1e6 hits/s on the
/// criterion 1 streams.
fn determinism_and_throughput(
    streams: Option<&(Vec<PixelHit>, Vec<PixelHit>)>,
) -> Result<String, String> {
    let (hits_i, hits_f) = streams.ok_or("needs the hit streams from criterion 1")?;

    // Throughput: sort, cluster, centroid, region-filter, histogram.
    let cam = CameraSection::default();
    let geometry = cam.geometry().expect("default camera is valid");
    let params = clustering();
    let mut a = hits_i.clone();
    let mut b = hits_f.clone();
    let total_hits = a.len() + b.len();
    let t0 = Instant::now();
    sort_hits(&mut a);
    sort_hits(&mut b);
    let ev_a = process(&a, &params, &TimingCalibration::identity()).map_err(|e| e.to_string())?;
    let ev_b = process(&b, &params, &TimingCalibration::identity()).map_err(|e| e.to_string())?;
    let mut in_a: Vec<PhotonEvent> =
        ev_a.into_iter().filter(|e| in_region(e, &geometry.image_region)).collect();
    let mut in_b: Vec<PhotonEvent> =
        ev_b.into_iter().filter(|e| in_region(e, &geometry.fourier_region)).collect();
    sort_events(&mut in_a);
    sort_events(&mut in_b);
    let hist = delay_histogram(&in_a, &in_b, 1.0, 500.0).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    if hist.total() == 0 {
        return Err("throughput run produced an empty histogram".into());
    }
    let rate = total_hits as f64 / secs;
    if rate < 1e6 {
        return Err(format!(
            "correlation chain ran at {:.2e} hits/s over {total_hits} hits, needs >= 1e6",
            rate
        ));
    }

    // Determinism: the full command set twice into separate directories.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config_path = dir.path().join("acceptance.toml");
    std::fs::write(
        &config_path,
        r#"
[camera]

[maps]

[centroiding]

[coincidence]

[reconstruction]
grid_width = 48
grid_height = 48
z_mm = 4.0
z_min_mm = -6.0
z_max_mm = 6.0
z_step_mm = 2.0
parallax_pitch_px = 8.0
parallax_diameter_px = 8.0

[depthmap]
threshold_window_px = 15

[simulator]
seed = 7
duration_s = 0.3
quantum_efficiency = 0.25
mean_cluster_hits = 3.0

[simulator.scene]
kind = "bars"
lp_per_mm = 3.0
z_mm = 4.0
"#,
    )
    .map_err(|e| e.to_string())?;
    let config = config_path.to_str().expect("temp paths are utf-8");

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, threads) in [(&out_a, None), (&out_b, Some("1"))] {
        let out = out.to_str().expect("temp paths are utf-8");
        let mut base = vec!["--config", config, "--out", out];
        // The second pass pins the pool to one thread: identical bytes then
        // also prove the renders do not depend on scheduling.
        if let Some(t) = threads {
            base.extend(["--threads", t]);
        }
        for tail in [
            vec!["simulate"],
            vec!["correlate"],
            vec!["reconstruct", "refocus"],
            vec!["reconstruct", "stack"],
            vec!["reconstruct", "parallax"],
            vec!["reconstruct", "depthmap"],
        ] {
            let mut args = base.clone();
            args.extend(tail);
            run_cli(&args)?;
        }
    }

    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .map_err(|e| e.to_string())?
        .map(|entry| entry.expect("readable listing").file_name().into_string().expect("utf-8"))
        .filter(|name| !name.starts_with("report_"))
        .collect();
    names.sort();
    if names.len() < 20 {
        return Err(format!("expected the full artifact set, found {} files", names.len()));
    }
    for name in &names {
        let bytes_a = std::fs::read(out_a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let bytes_b = std::fs::read(out_b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if bytes_a != bytes_b {
            return Err(format!("{name} differs between identically seeded runs"));
        }
    }

    Ok(format!(
        "correlation chain at {:.1e} hits/s ({total_hits} hits in {secs:.1} s); {} artifacts byte-identical across reruns",
        rate,
        names.len()
    ))
}
