//! Delay histogramming against an O(n^2) oracle on dozens of seeded random
//! instances, plus structural guarantees of the pair extractor.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use qcrt_core::coincidence::{
    delay_histogram, extract_pairs, find_peak, DelayHistogram, MatchWindow,
    PEAK_SIGNIFICANCE_DEFAULT,
};
use qcrt_core::event::PhotonEvent;

fn ev(t_ns: f64) -> PhotonEvent {
    PhotonEvent {
        x: 0.0,
        y: 0.0,
        t_ns,
        amplitude: 1,
    }
}

fn sorted_events(rng: &mut impl Rng, n: usize, span_ns: f64) -> Vec<PhotonEvent> {
    let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..span_ns)).collect();
    // Exact duplicates exercise tie handling in binning and matching.
    for i in (10..n).step_by(17) {
        t[i] = t[i - 1];
    }
    t.sort_by(f64::total_cmp);
    t.into_iter().map(ev).collect()
}

/// All-pairs delay histogram, written independently of the production scan.
fn brute_force_histogram(
    image: &[PhotonEvent],
    fourier: &[PhotonEvent],
    bin_width_ns: f64,
    max_delay_ns: f64,
) -> Vec<u64> {
    let bins = ((2.0 * max_delay_ns / bin_width_ns) - 1e-9).ceil().max(1.0) as usize;
    let mut counts = vec![0u64; bins];
    for a in image {
        for b in fourier {
            let dt = a.t_ns - b.t_ns;
            if dt.abs() <= max_delay_ns {
                let idx = ((dt + max_delay_ns) / bin_width_ns) as usize;
                counts[idx.min(bins - 1)] += 1;
            }
        }
    }
    counts
}

#[test]
fn histogram_matches_brute_force_on_fifty_instances() {
    let binnings = [(1.0, 20.0), (0.2, 5.0), (2.5, 50.0), (0.55, 13.75), (1.0, 1.0)];
    for seed in 0..50u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(900 + seed);
        let n_image = rng.gen_range(0..2000);
        let n_fourier = rng.gen_range(0..2000);
        let image = sorted_events(&mut rng, n_image, 10_000.0);
        let fourier = sorted_events(&mut rng, n_fourier, 10_000.0);
        let (bin_width, max_delay) = binnings[seed as usize % binnings.len()];
        let hist = delay_histogram(&image, &fourier, bin_width, max_delay).unwrap();
        let expect = brute_force_histogram(&image, &fourier, bin_width, max_delay);
        assert_eq!(hist.counts, expect, "seed {seed}");
    }
}

#[test]
fn peak_center_lands_on_an_injected_delay() {
    // Pairs delayed by exactly 7.3 ns over a diffuse background.
    let mut rng = ChaCha12Rng::seed_from_u64(4242);
    let mut image: Vec<PhotonEvent> = Vec::new();
    let mut fourier: Vec<PhotonEvent> = Vec::new();
    for _ in 0..900 {
        let t = rng.gen_range(0.0..1e6);
        image.push(ev(t + 7.3));
        fourier.push(ev(t));
    }
    for _ in 0..2000 {
        image.push(ev(rng.gen_range(0.0..1e6)));
        fourier.push(ev(rng.gen_range(0.0..1e6)));
    }
    image.sort_by(|a, b| a.t_ns.total_cmp(&b.t_ns));
    fourier.sort_by(|a, b| a.t_ns.total_cmp(&b.t_ns));

    let hist = delay_histogram(&image, &fourier, 1.0, 50.0).unwrap();
    let peak = find_peak(&hist, PEAK_SIGNIFICANCE_DEFAULT).unwrap();
    assert!(
        (peak.center_ns - 7.3).abs() <= 1.0,
        "peak center {} vs 7.3",
        peak.center_ns
    );
    assert!(peak.significance > 20.0);
}

#[test]
fn flat_histogram_has_no_peak() {
    let counts: Vec<u64> = (0..40).map(|i| 10 + (i % 3) as u64).collect();
    let hist = DelayHistogram {
        bin_width_ns: 1.0,
        max_delay_ns: 20.0,
        counts,
    };
    assert!(find_peak(&hist, PEAK_SIGNIFICANCE_DEFAULT).is_err());
}

/// Greedy matching redone independently: sort all in-gate candidates by
/// (score, image index, fourier index) and take the first free pair.
fn brute_force_match_count(
    image: &[PhotonEvent],
    fourier: &[PhotonEvent],
    window: MatchWindow,
) -> usize {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in image.iter().enumerate() {
        for (j, b) in fourier.iter().enumerate() {
            let dt = a.t_ns - b.t_ns;
            if (dt - window.center_ns).abs() <= window.gate_ns / 2.0 {
                cands.push(((dt - window.center_ns).abs(), i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_i = vec![false; image.len()];
    let mut used_j = vec![false; fourier.len()];
    let mut matched = 0;
    for (_, i, j) in cands {
        if !used_i[i] && !used_j[j] {
            used_i[i] = true;
            used_j[j] = true;
            matched += 1;
        }
    }
    matched
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extraction_is_injective_in_gate_and_greedy(
        seed in 0u64..1u64 << 40,
        n_image in 0usize..160,
        n_fourier in 0usize..160,
        gate in 0.5f64..50.0,
        center in -10.0f64..10.0,
    ) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let image = sorted_events(&mut rng, n_image, 2_000.0);
        let fourier = sorted_events(&mut rng, n_fourier, 2_000.0);
        let window = MatchWindow { center_ns: center, gate_ns: gate };
        let (pairs, stats) = extract_pairs(&image, &fourier, window).unwrap();

        prop_assert_eq!(stats.matched, pairs.len());
        prop_assert_eq!(stats.unmatched_image, image.len() - pairs.len());
        prop_assert_eq!(stats.unmatched_fourier, fourier.len() - pairs.len());

        // In-gate, consistent dt, image-time output order.
        for p in &pairs {
            prop_assert!((p.dt_ns - (p.image.t_ns - p.fourier.t_ns)).abs() <= 1e-12);
            prop_assert!((p.dt_ns - center).abs() <= gate / 2.0);
        }
        for w in pairs.windows(2) {
            prop_assert!(w[0].image.t_ns <= w[1].image.t_ns);
        }

        // No event used twice (times can repeat; count multiplicities).
        let count_multiplicity = |ts: &mut Vec<f64>| {
            ts.sort_by(f64::total_cmp);
        };
        let mut used: Vec<f64> = pairs.iter().map(|p| p.image.t_ns).collect();
        count_multiplicity(&mut used);
        let mut avail: Vec<f64> = image.iter().map(|e| e.t_ns).collect();
        count_multiplicity(&mut avail);
        let mut ai = 0;
        for u in &used {
            while ai < avail.len() && avail[ai] < *u {
                ai += 1;
            }
            prop_assert!(ai < avail.len() && avail[ai] == *u);
            ai += 1;
        }

        prop_assert_eq!(pairs.len(), brute_force_match_count(&image, &fourier, window));
    }
}
