use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tse_core::metrics::{eer, min_dcf, si_sdr, si_sdr_improvement, DcfParams, TrialScores};

/// Brute-force ROC: for every candidate threshold (each score plus +inf),
/// count misses and false accepts directly.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let miss = scores.iter().zip(labels).filter(|(s, &l)| l && **s < t).count() as f64;
            let fa = scores.iter().zip(labels).filter(|(s, &l)| !l && **s >= t).count() as f64;
            (fa / n_neg, miss / n_pos)
        })
        .collect()
}

/// Lowest point where any chord between two operating points meets the
/// diagonal p_miss == p_fa.
fn eer_oracle(pts: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for &a in pts {
        for &b in pts {
            let (da, db) = (a.1 - a.0, b.1 - b.0);
            if da >= 0.0 && db <= 0.0 {
                let x = if da == db { a.0 } else { a.0 + da / (da - db) * (b.0 - a.0) };
                best = best.min(x);
            }
        }
    }
    best
}

fn dcf_oracle(pts: &[(f64, f64)], p: DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    pts.iter()
        .map(|(fa, miss)| (p.c_miss * miss * p.p_target + p.c_fa * fa * (1.0 - p.p_target)) / norm)
        .fold(f64::INFINITY, f64::min)
}

fn random_trials(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..40);
    let sep = rng.gen_range(0.0..2.0);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let v: f64 = rng.gen_range(-1.0..1.0) + if l { sep } else { 0.0 };
            // coarse grid so ties occur
            (v * 8.0).round() / 8.0
        })
        .collect();
    (scores, labels)
}

#[test]
fn eer_and_min_dcf_match_exhaustive_sweep() {
    for seed in 0..200 {
        let (s, l) = random_trials(seed);
        let pts = sweep(&s, &l);
        let t = TrialScores::new(s, l).unwrap();
        assert!((eer(&t) - eer_oracle(&pts)).abs() < 1e-12, "seed {seed}");
        for p in [DcfParams::default(), DcfParams { p_target: 0.3, c_miss: 2.0, c_fa: 1.0 }] {
            assert!((min_dcf(&t, p).unwrap() - dcf_oracle(&pts, p)).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn uninformative_scores_give_half_eer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4000;
    let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let e = eer(&TrialScores::new(scores, labels).unwrap());
    assert!((e - 0.5).abs() < 0.05, "eer {e}");
}

fn signal() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (8usize..64).prop_flat_map(|n| {
        (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n))
    })
}

proptest! {
    #[test]
    fn si_sdr_scale_invariant((s, e) in signal(), alpha in 1e-3f64..1e3) {
        let a = si_sdr(&s, &e).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| v * alpha).collect();
        let b = si_sdr(&s, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn si_sdr_ignores_dc_offset((s, e) in signal(), dc in -5.0f64..5.0) {
        let a = si_sdr(&s, &e).unwrap();
        let shifted: Vec<f64> = e.iter().map(|v| v + dc).collect();
        prop_assert!((a - si_sdr(&s, &shifted).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn identity_system_has_zero_improvement((s, m) in signal()) {
        prop_assert_eq!(si_sdr_improvement(&s, &m, &m).unwrap(), 0.0);
    }

    #[test]
    fn verification_metrics_rank_invariant(seed in 0u64..10_000, shift in -3.0f64..3.0, gain in 0.1f64..10.0) {
        let (s, l) = random_trials(seed);
        let t = TrialScores::new(s.clone(), l.clone()).unwrap();
        let warped: Vec<f64> = s.iter().map(|v| (gain * v + shift).exp()).collect();
        let w = TrialScores::new(warped, l).unwrap();
        prop_assert!((eer(&t) - eer(&w)).abs() < 1e-12);
        let p = DcfParams::default();
        prop_assert!((min_dcf(&t, p).unwrap() - min_dcf(&w, p).unwrap()).abs() < 1e-12);
    }
}
