//! Run reports: per-stage wall clock and counters, the coincidence peak,
//! rate estimates, and the hash of the effective configuration.
//!
//! Each command writes the same report twice, as machine-readable JSON and
//! as human-readable text. The JSON side must stay parseable, so infinite
//! values (a significance over an empty background, an SNR over zero
//! accidentals) are clamped to +/-1e300 there; the text side prints them
//! as `inf`. [`verify`] re-checks the bookkeeping identities from the
//! counters alone, so a stale or edited report fails loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::formats::FormatError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub wall_ms: f64,
    /// Exact integer tallies (events in, events out, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counters: BTreeMap<String, u64>,
    /// Real-valued summaries (weights, rates, spans).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl StageReport {
    pub fn new(name: &str) -> StageReport {
        StageReport {
            name: name.to_string(),
            wall_ms: 0.0,
            counters: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn count(&mut self, key: &str, value: u64) -> &mut Self {
        self.counters.insert(key.to_string(), value);
        self
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSummary {
    pub center_ns: f64,
    pub height: u64,
    pub background: f64,
    pub significance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatesSummary {
    pub true_rate_hz: f64,
    pub accidental_rate_hz: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub stages: Vec<StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak: Option<PeakSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesSummary>,
}

impl RunReport {
    pub fn new(command: &str, config_sha256: &str) -> RunReport {
        RunReport {
            command: command.to_string(),
            config_sha256: config_sha256.to_string(),
            seed: None,
            stages: Vec::new(),
            peak: None,
            rates: None,
        }
    }

    fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// JSON body with every non-finite float clamped into range.
    pub fn to_json(&self) -> String {
        let mut clamped = self.clone();
        for stage in &mut clamped.stages {
            for v in stage.metrics.values_mut() {
                *v = clamp_json(*v);
            }
        }
        if let Some(p) = &mut clamped.peak {
            p.significance = clamp_json(p.significance);
            p.background = clamp_json(p.background);
        }
        if let Some(r) = &mut clamped.rates {
            r.true_rate_hz = clamp_json(r.true_rate_hz);
            r.accidental_rate_hz = clamp_json(r.accidental_rate_hz);
            r.snr = clamp_json(r.snr);
        }
        let mut body = serde_json::to_string_pretty(&clamped).expect("report serializes");
        body.push('\n');
        body
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "run report: {}", self.command).unwrap();
        writeln!(out, "config sha256: {}", self.config_sha256).unwrap();
        if let Some(seed) = self.seed {
            writeln!(out, "seed: {seed}").unwrap();
        }
        for stage in &self.stages {
            writeln!(out, "stage {}: {:.3} ms", stage.name, stage.wall_ms).unwrap();
            for (k, v) in &stage.counters {
                writeln!(out, "  {k}: {v}").unwrap();
            }
            for (k, v) in &stage.metrics {
                writeln!(out, "  {k}: {v}").unwrap();
            }
        }
        if let Some(p) = &self.peak {
            writeln!(
                out,
                "peak: center {} ns, height {}, background {}, significance {}",
                p.center_ns, p.height, p.background, p.significance
            )
            .unwrap();
        }
        if let Some(r) = &self.rates {
            writeln!(
                out,
                "rates: true {} Hz, accidental {} Hz, snr {}",
                r.true_rate_hz, r.accidental_rate_hz, r.snr
            )
            .unwrap();
        }
        out
    }

    /// Write `report_<command>.json` and `report_<command>.txt` under
    /// `dir`, returning the JSON path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, FormatError> {
        let json_path = dir.join(format!("report_{}.json", self.command));
        let txt_path = dir.join(format!("report_{}.txt", self.command));
        write_file(&json_path, self.to_json().as_bytes())?;
        write_file(&txt_path, self.to_text().as_bytes())?;
        Ok(json_path)
    }

    pub fn read_json(path: &Path) -> Result<RunReport, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| FormatError::Malformed {
            path: path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

fn clamp_json(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else if v.is_nan() {
        0.0
    } else if v > 0.0 {
        1e300
    } else {
        -1e300
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|e| FormatError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// -------------------------------------------------------------- verification

struct Checker<'a> {
    report: &'a RunReport,
    checks: usize,
    violations: Vec<String>,
}

impl<'a> Checker<'a> {
    fn counter(&mut self, stage: &str, key: &str) -> Option<u64> {
        match self.report.stage(stage).and_then(|s| s.counters.get(key)) {
            Some(&v) => Some(v),
            None => {
                self.violations
                    .push(format!("missing counter {stage}.{key}"));
                None
            }
        }
    }

    fn metric(&mut self, stage: &str, key: &str) -> Option<f64> {
        match self.report.stage(stage).and_then(|s| s.metrics.get(key)) {
            Some(&v) => Some(v),
            None => {
                self.violations.push(format!("missing metric {stage}.{key}"));
                None
            }
        }
    }

    /// lhs, described by `label`, must equal the sum of the named counters.
    fn sum_identity(&mut self, label: &str, lhs: (&str, &str), terms: &[(&str, &str)]) {
        self.checks += 1;
        let Some(want) = self.counter(lhs.0, lhs.1) else { return };
        let mut got = 0u64;
        for &(stage, key) in terms {
            let Some(v) = self.counter(stage, key) else { return };
            got += v;
        }
        if got != want {
            self.violations.push(format!(
                "{label}: {}.{} = {want} but terms sum to {got}",
                lhs.0, lhs.1
            ));
        }
    }

    fn weight_identity(&mut self, label: &str, expected: (&str, &str), got: (&str, &str)) {
        self.checks += 1;
        let Some(want) = self.metric(expected.0, expected.1) else { return };
        let Some(have) = self.metric(got.0, got.1) else { return };
        let tol = 1e-6 * want.abs().max(1.0);
        if (want - have).abs() > tol {
            self.violations
                .push(format!("{label}: expected {want}, binned {have}"));
        }
    }
}

/// Re-derive the conservation identities a healthy run must satisfy from
/// the report's counters. Returns (identities checked, violations).
pub fn verify(report: &RunReport) -> (usize, Vec<String>) {
    let mut c = Checker {
        report,
        checks: 0,
        violations: Vec::new(),
    };
    match report.command.as_str() {
        "simulate" => {
            // The scene sits in the image arm only, so absorption is a
            // possible fate for the image photon but not its twin.
            c.sum_identity(
                "every generated pair's image photon is accounted for",
                ("simulate", "pairs_generated"),
                &[
                    ("simulate", "detected_image"),
                    ("simulate", "lost_to_qe_image"),
                    ("simulate", "off_sensor_image"),
                    ("simulate", "absorbed_by_scene"),
                ],
            );
            c.sum_identity(
                "every generated pair's fourier photon is accounted for",
                ("simulate", "pairs_generated"),
                &[
                    ("simulate", "detected_fourier"),
                    ("simulate", "lost_to_qe_fourier"),
                    ("simulate", "off_sensor_fourier"),
                ],
            );
            for arm in ["image", "fourier"] {
                c.sum_identity(
                    &format!("{arm} hits written match the simulation"),
                    ("simulate", &format!("hits_{arm}")),
                    &[("write", &format!("hits_{arm}_rows"))],
                );
            }
            c.sum_identity(
                "one truth row per generated pair",
                ("simulate", "pairs_generated"),
                &[("write", "truth_rows")],
            );
        }
        "correlate" => {
            for arm in ["image", "fourier"] {
                c.sum_identity(
                    &format!("all {arm} hits entered clustering"),
                    ("read", &format!("hits_{arm}")),
                    &[(&format!("centroid_{arm}"), "hits_in")],
                );
                c.sum_identity(
                    &format!("{arm} events split cleanly by region"),
                    (&format!("centroid_{arm}"), "events"),
                    &[
                        ("region_filter", &format!("in_{arm}")),
                        ("region_filter", &format!("out_{arm}")),
                    ],
                );
                c.sum_identity(
                    &format!("every in-region {arm} event is matched or unmatched"),
                    ("region_filter", &format!("in_{arm}")),
                    &[
                        ("pairing", "matched"),
                        ("pairing", &format!("unmatched_{arm}")),
                    ],
                );
            }
        }
        "refocus" | "stack" | "parallax" | "depthmap" => {
            c.sum_identity(
                "every pair converts or is dropped as non-paraxial",
                ("read", "pairs"),
                &[
                    ("convert", "converted"),
                    ("convert", "dropped_non_paraxial"),
                ],
            );
            c.weight_identity(
                "binned weight conserves ray weight",
                ("render", "weight_expected"),
                ("render", "weight_binned"),
            );
        }
        other => {
            c.violations.push(format!("unknown report command {other:?}"));
        }
    }
    (c.checks, c.violations)
}
