mod common;

use common::*;
use depeg_core::bocd::{detect_series, Detector, DetectorConfig, DetectorSnapshot, NGParams, PredictiveScale};
use depeg_core::model::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exact_cfg(lambda: f64, prior: NGParams, scale: PredictiveScale) -> DetectorConfig {
    DetectorConfig {
        hazard_lambda: lambda,
        prior,
        prob_floor: 0.0,
        max_run_length: 10_000,
        predictive_scale: scale,
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, NGParams, f64) {
    let n = rng.random_range(1..=10);
    let xs = (0..n)
        .map(|_| rng.random_range(-3.0..3.0) + if rng.random_bool(0.3) { 4.0 } else { 0.0 })
        .collect();
    let prior = NGParams::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(0.5..3.0),
        rng.random_range(0.2..3.0),
        rng.random_range(0.1..2.0),
    )
    .unwrap();
    (xs, prior, rng.random_range(2.0..50.0))
}

#[test]
fn run_length_posterior_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..12 {
        let (xs, prior, lambda) = random_case(&mut rng);
        for scale in [PredictiveScale::PosteriorPredictive, PredictiveScale::MeanMarginal] {
            let mut det = Detector::new(exact_cfg(lambda, prior, scale)).unwrap();
            for t in 0..xs.len() {
                det.step(Timestamp(t as u64 + 1), xs[t]).unwrap();
                let oracle = brute_force_posterior(&xs[..=t], &prior, lambda, scale);
                let mut got = vec![0.0; t + 2];
                for (r, p) in det.state().posterior() {
                    got[r] += p;
                }
                for (r, (a, b)) in got.iter().zip(&oracle).enumerate() {
                    assert!((a - b).abs() < 1e-8, "case {case} step {t} r {r}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn hypothesis_params_match_batch_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (xs, prior, lambda) = random_case(&mut rng);
    let mut det = Detector::new(exact_cfg(lambda, prior, PredictiveScale::PosteriorPredictive)).unwrap();
    for t in 0..xs.len() {
        det.step(Timestamp(t as u64), xs[t]).unwrap();
        for h in &det.state().hypotheses {
            let want = batch_posterior(&prior, &xs[t + 1 - h.run_length..=t]);
            let got = h.params;
            for (a, b) in [
                (got.mu, want.mu),
                (got.alpha, want.alpha),
                (got.beta, want.beta),
                (got.kappa, want.kappa),
            ] {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn pruning_keeps_emissions() {
    let xs = mean_shift(3, 300, 300, 5.0);
    let s = series(&xs);
    let full = detect_series(
        &s,
        &exact_cfg(
            100.0,
            DetectorConfig::default().prior,
            PredictiveScale::PosteriorPredictive,
        ),
    )
    .unwrap();
    let pruned = detect_series(&s, &DetectorConfig::default()).unwrap();
    let steps = |d: &depeg_core::bocd::Detection| d.changepoints.iter().map(|c| c.step).collect::<Vec<_>>();
    assert_eq!(steps(&full), steps(&pruned));
    assert!(!full.changepoints.is_empty());
}

#[test]
fn snapshot_json_round_trip_resumes_bit_exactly() {
    let xs = mean_shift(4, 200, 200, 4.0);
    let s = series(&xs);
    let whole = detect_series(&s, &DetectorConfig::default()).unwrap();

    let mut det = Detector::new(DetectorConfig::default()).unwrap();
    let first = det.run(&s.slice(Timestamp(0), Timestamp(149))).unwrap();
    let json = serde_json::to_string(&det.snapshot()).unwrap();
    let snap: DetectorSnapshot = serde_json::from_str(&json).unwrap();
    assert_eq!(snap, det.snapshot());
    let mut resumed = Detector::from_snapshot(snap).unwrap();
    let second = resumed.run(&s.slice(Timestamp(150), Timestamp(u64::MAX))).unwrap();

    let mut cps = first.changepoints;
    cps.extend(second.changepoints);
    let mut trace = first.trace;
    trace.extend(second.trace);
    assert_eq!(cps, whole.changepoints);
    assert_eq!(trace, whole.trace);
}

#[test]
fn jump_of_ten_is_flagged_within_three_steps() {
    let mut xs = mean_shift(5, 200, 0, 0.0);
    xs.extend(mean_shift(6, 20, 0, 0.0).iter().map(|x| x + 10.0));
    let d = detect_series(&series(&xs), &DetectorConfig::default()).unwrap();
    assert!(
        d.changepoints.iter().any(|c| (200..=203).contains(&c.ts.0)),
        "{:?}",
        d.changepoints
    );
}
