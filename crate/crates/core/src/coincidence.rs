//! Temporal pairing of the two event streams: delay histogram, coincidence
//! peak search, and one-to-one pair extraction within a gate.
//!
//! Delays are always image-arm time minus Fourier-arm time, nanoseconds.

use core::fmt;

// Float methods resolve through the trait when std is off.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use crate::event::{Arm, PhotonEvent};

/// One matched photon pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub image: PhotonEvent,
    pub fourier: PhotonEvent,
    /// image.t_ns - fourier.t_ns.
    pub dt_ns: f64,
}

/// Histogram of cross-arm delays over [-max_delay, +max_delay].
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    pub bin_width_ns: f64,
    pub max_delay_ns: f64,
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    pub fn bin_center_ns(&self, bin: usize) -> f64 {
        -self.max_delay_ns + (bin as f64 + 0.5) * self.bin_width_ns
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Coincidence peak found in a delay histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakInfo {
    /// Count-weighted center of the above-half-maximum run, nanoseconds.
    pub center_ns: f64,
    /// Count in the tallest bin.
    pub height: u64,
    /// Median count outside the peak neighborhood.
    pub background: f64,
    /// (height - background) / sqrt(background); infinite when the
    /// background is exactly zero.
    pub significance: f64,
}

/// Accepted delay window for pair extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchWindow {
    pub center_ns: f64,
    /// Full gate width; accepted delays satisfy |dt - center| <= gate / 2.
    pub gate_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairingStats {
    pub matched: usize,
    pub unmatched_image: usize,
    pub unmatched_fourier: usize,
}

/// True and accidental coincidence rates within a gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    pub true_rate_hz: f64,
    pub accidental_rate_hz: f64,
    /// true_rate / accidental_rate; infinite when accidentals are zero.
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoincidenceError {
    /// Event stream must be nondecreasing in t_ns.
    UnsortedInput { arm: Arm, index: usize },
    InvalidBinning { bin_width_ns: f64, max_delay_ns: f64 },
    InvalidGate { gate_ns: f64 },
    /// Peak search needs enough bins to estimate a background.
    TooFewBins { bins: usize },
    /// Tallest bin does not clear the background significance threshold.
    NoCorrelation {
        height: u64,
        background: f64,
        threshold: f64,
    },
}

impl fmt::Display for CoincidenceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoincidenceError::UnsortedInput { arm, index } => {
                write!(f, "{arm:?} events must be sorted by time (violated at index {index})")
            }
            CoincidenceError::InvalidBinning {
                bin_width_ns,
                max_delay_ns,
            } => write!(
                f,
                "need 0 < bin width <= max delay, got bin width {bin_width_ns} ns, max delay {max_delay_ns} ns"
            ),
            CoincidenceError::InvalidGate { gate_ns } => {
                write!(f, "gate width must be finite and > 0, got {gate_ns} ns")
            }
            CoincidenceError::TooFewBins { bins } => {
                write!(f, "peak search needs at least 20 bins, got {bins}")
            }
            CoincidenceError::NoCorrelation {
                height,
                background,
                threshold,
            } => write!(
                f,
                "no coincidence peak: tallest bin {height} against background {background:.2} (needed >= {threshold:.2})"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoincidenceError {}

/// Sort events by time, ties broken by (y, x).
pub fn sort_events(events: &mut [PhotonEvent]) {
    events.sort_by(|a, b| {
        a.t_ns
            .total_cmp(&b.t_ns)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
}

fn check_sorted(events: &[PhotonEvent], arm: Arm) -> Result<(), CoincidenceError> {
    match events.windows(2).position(|w| w[0].t_ns > w[1].t_ns) {
        Some(i) => Err(CoincidenceError::UnsortedInput { arm, index: i + 1 }),
        None => Ok(()),
    }
}

/// Histogram every cross-arm delay with |dt| <= max_delay.
///
/// Both streams must be time-sorted. The scan advances a window over the
/// Fourier stream once per image event, so the cost is linear in events plus
/// delays counted. The closing edge falls into the last bin.
pub fn delay_histogram(
    image: &[PhotonEvent],
    fourier: &[PhotonEvent],
    bin_width_ns: f64,
    max_delay_ns: f64,
) -> Result<DelayHistogram, CoincidenceError> {
    if !(bin_width_ns > 0.0)
        || !(max_delay_ns >= bin_width_ns)
        || !bin_width_ns.is_finite()
        || !max_delay_ns.is_finite()
    {
        return Err(CoincidenceError::InvalidBinning {
            bin_width_ns,
            max_delay_ns,
        });
    }
    check_sorted(image, Arm::Image)?;
    check_sorted(fourier, Arm::Fourier)?;

    let bins = ((2.0 * max_delay_ns / bin_width_ns) - 1e-9).ceil().max(1.0) as usize;
    let mut counts = alloc::vec![0u64; bins];
    let mut lo = 0usize;
    for ev in image {
        // dt = ev.t - f.t stays within [-max, +max] iff
        // f.t within [ev.t - max, ev.t + max].
        while lo < fourier.len() && fourier[lo].t_ns < ev.t_ns - max_delay_ns {
            lo += 1;
        }
        for f in &fourier[lo..] {
            if f.t_ns > ev.t_ns + max_delay_ns {
                break;
            }
            let dt = ev.t_ns - f.t_ns;
            let bin = (((dt + max_delay_ns) / bin_width_ns) as usize).min(bins - 1);
            counts[bin] += 1;
        }
    }
    Ok(DelayHistogram {
        bin_width_ns,
        max_delay_ns,
        counts,
    })
}

fn median(sorted: &mut [u64]) -> f64 {
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Significance threshold below which a peak is treated as absent.
pub const PEAK_SIGNIFICANCE_DEFAULT: f64 = 5.0;

/// Locate the coincidence peak.
///
/// Background is the median of all bins at least 4 away from the tallest
/// bin. The peak is accepted when its height clears the background by
/// `k_sigma` Poisson deviations (with the deviation floored at 1 count so a
/// zero background cannot auto-accept noise). The reported center is the
/// count-weighted mean of the contiguous run of bins around the maximum
/// that stays above half prominence.
pub fn find_peak(hist: &DelayHistogram, k_sigma: f64) -> Result<PeakInfo, CoincidenceError> {
    let counts = &hist.counts;
    if counts.len() < 20 {
        return Err(CoincidenceError::TooFewBins { bins: counts.len() });
    }
    let peak_bin = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let height = counts[peak_bin];

    let mut outside: Vec<u64> = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| peak_bin.abs_diff(*i) > 3)
        .map(|(_, &c)| c)
        .collect();
    let background = median(&mut outside);

    let threshold = background + k_sigma * background.max(1.0).sqrt();
    if (height as f64) < threshold {
        return Err(CoincidenceError::NoCorrelation {
            height,
            background,
            threshold,
        });
    }

    let half = background + (height as f64 - background) / 2.0;
    let mut lo = peak_bin;
    while lo > 0 && counts[lo - 1] as f64 >= half {
        lo -= 1;
    }
    let mut hi = peak_bin;
    while hi + 1 < counts.len() && counts[hi + 1] as f64 >= half {
        hi += 1;
    }
    let mut sum_w = 0.0;
    let mut sum_wc = 0.0;
    for i in lo..=hi {
        let w = counts[i] as f64;
        sum_w += w;
        sum_wc += w * hist.bin_center_ns(i);
    }

    let significance = if background > 0.0 {
        (height as f64 - background) / background.sqrt()
    } else {
        f64::INFINITY
    };
    Ok(PeakInfo {
        center_ns: sum_wc / sum_w,
        height,
        background,
        significance,
    })
}

/// Pair each image event with at most one Fourier event inside the gate.
///
/// Among all candidate pairs with |dt - center| <= gate/2, the closest
/// delays win first (ties resolved by stream order), and every event is used
/// at most once. Output pairs are in image-time order.
pub fn extract_pairs(
    image: &[PhotonEvent],
    fourier: &[PhotonEvent],
    window: MatchWindow,
) -> Result<(Vec<PairRecord>, PairingStats), CoincidenceError> {
    if !(window.gate_ns > 0.0) || !window.gate_ns.is_finite() || !window.center_ns.is_finite() {
        return Err(CoincidenceError::InvalidGate {
            gate_ns: window.gate_ns,
        });
    }
    check_sorted(image, Arm::Image)?;
    check_sorted(fourier, Arm::Fourier)?;

    let half = window.gate_ns / 2.0;
    // (score, image index, fourier index)
    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    let mut lo = 0usize;
    for (i, ev) in image.iter().enumerate() {
        // dt within [center - half, center + half] iff
        // f.t within [ev.t - center - half, ev.t - center + half].
        let t_min = ev.t_ns - window.center_ns - half;
        let t_max = ev.t_ns - window.center_ns + half;
        while lo < fourier.len() && fourier[lo].t_ns < t_min {
            lo += 1;
        }
        for (j, f) in fourier.iter().enumerate().skip(lo) {
            if f.t_ns > t_max {
                break;
            }
            let score = (ev.t_ns - f.t_ns - window.center_ns).abs();
            candidates.push((score, i as u32, j as u32));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_image = alloc::vec![false; image.len()];
    let mut used_fourier = alloc::vec![false; fourier.len()];
    let mut picks: Vec<(u32, u32)> = Vec::new();
    for &(_, i, j) in &candidates {
        if !used_image[i as usize] && !used_fourier[j as usize] {
            used_image[i as usize] = true;
            used_fourier[j as usize] = true;
            picks.push((i, j));
        }
    }
    picks.sort_unstable();

    let pairs: Vec<PairRecord> = picks
        .iter()
        .map(|&(i, j)| {
            let a = image[i as usize];
            let b = fourier[j as usize];
            PairRecord {
                image: a,
                fourier: b,
                dt_ns: a.t_ns - b.t_ns,
            }
        })
        .collect();
    let stats = PairingStats {
        matched: pairs.len(),
        unmatched_image: image.len() - pairs.len(),
        unmatched_fourier: fourier.len() - pairs.len(),
    };
    Ok((pairs, stats))
}

/// Expected accidental coincidence rate inside the gate, pairs per second,
/// from the flat background of the delay histogram.
pub fn accidental_rate_hz(
    background_per_bin: f64,
    bin_width_ns: f64,
    gate_ns: f64,
    duration_s: f64,
) -> f64 {
    background_per_bin * (gate_ns / bin_width_ns) / duration_s
}

/// True and accidental rates around a located peak.
pub fn rate_summary(
    hist: &DelayHistogram,
    peak: &PeakInfo,
    gate_ns: f64,
    duration_s: f64,
) -> RateSummary {
    let mut in_gate = 0u64;
    let mut gate_bins = 0u64;
    for (i, &c) in hist.counts.iter().enumerate() {
        if (hist.bin_center_ns(i) - peak.center_ns).abs() <= gate_ns / 2.0 {
            in_gate += c;
            gate_bins += 1;
        }
    }
    let accidental_in_gate = peak.background * gate_bins as f64;
    let true_rate_hz = (in_gate as f64 - accidental_in_gate).max(0.0) / duration_s;
    let accidental_rate_hz = accidental_in_gate / duration_s;
    let snr = if accidental_rate_hz > 0.0 {
        true_rate_hz / accidental_rate_hz
    } else {
        f64::INFINITY
    };
    RateSummary {
        true_rate_hz,
        accidental_rate_hz,
        snr,
    }
}
