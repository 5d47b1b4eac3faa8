//! One line per acceptance criterion, then a single assertion over all of them.

mod common;

use std::time::{Duration, Instant};

use common::*;
use depeg_core::bocd::{detect_series, Detector, DetectorConfig, NGParams, PredictiveScale};
use depeg_core::evaluation::{grid_configs, lf_score, GridSpace, ScoringConfig};
use depeg_core::metrics::{
    estimate_pin, gini, pin_value, shannon_entropy, trade_markout, PinParams, PriceTable, Side, SHANNON_ENTROPY,
};
use depeg_core::model::{PriceSample, Timestamp, TokenId, TradeEvent};
use depeg_core::pipeline::{
    compute_metrics, default_detection_metrics, detect_stream, evaluate, run_scenario_files, scenario_pipeline_config,
    Dataset, RunManifest,
};
use depeg_core::simulator::{run_scenario, slippage_experiment, DepegEvent, ScenarioConfig};
use depeg_core::stableswap::{apply_swap, compute_d, invariant_residual, virtual_price, PoolState};
use depeg_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    println!(
        "criterion {n}: {} ({:.2} s) {}",
        if o.pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64(),
        o.detail
    );
    o.pass
}

fn within(t0: Instant, limit: Duration) -> bool {
    t0.elapsed() < limit
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let n = rng.random_range(1..=10);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let prior = NGParams::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(0.1..2.0),
        )
        .unwrap();
        let lambda = rng.random_range(2.0..50.0);
        let cfg = DetectorConfig {
            hazard_lambda: lambda,
            prior,
            prob_floor: 0.0,
            ..DetectorConfig::default()
        };
        let mut det = Detector::new(cfg).unwrap();
        for t in 0..n {
            det.step(Timestamp(t as u64), xs[t]).unwrap();
            let oracle = brute_force_posterior(&xs[..=t], &prior, lambda, PredictiveScale::PosteriorPredictive);
            let mut got = vec![0.0; t + 2];
            for (r, p) in det.state().posterior() {
                got[r] += p;
            }
            for (a, b) in got.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let fast = within(t0, Duration::from_secs(1));
    Outcome {
        pass: worst < 1e-8 && fast,
        detail: format!("max |posterior - oracle| = {worst:.1e} over 12 sequences"),
    }
}

fn shift_ok(seed: u64) -> bool {
    let d = detect_series(&series(&mean_shift(seed, 500, 500, 5.0)), &DetectorConfig::default()).unwrap();
    let near = d.changepoints.iter().filter(|c| (500..=505).contains(&c.step)).count();
    let early = d.changepoints.iter().filter(|c| (10..=499).contains(&c.step)).count();
    near == 1 && early == 0
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let ok = shift_ok(1);
    let elapsed = t0.elapsed();
    let fast = elapsed < Duration::from_secs(1);
    let sweep = (0..200).filter(|&s| shift_ok(s)).count();
    Outcome {
        pass: ok && fast,
        detail: format!(
            "seed 1 {} in {:.3} s; same check holds on {sweep}/200 seeds",
            if ok { "ok" } else { "failed" },
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_3() -> Outcome {
    let ts = |v: &[u64]| v.iter().map(|&t| Timestamp(t)).collect::<Vec<_>>();
    let cfg = ScoringConfig {
        margin_m: 10,
        f_beta: 1.0,
        ..ScoringConfig::default()
    };
    let a = lf_score(&ts(&[100]), &ts(&[98]), &cfg);
    let b = lf_score(&ts(&[100]), &ts(&[98, 50]), &cfg);
    let pass = a.precision == 1.0
        && a.weighted_recall == 0.2
        && a.lf_score == 1.0 / 3.0
        && (b.lf_score - 2.0 / 7.0).abs() < 1e-12;
    Outcome {
        pass,
        detail: format!(
            "(P, R, F) = ({}, {}, {}); with a stray prediction F = {}",
            a.precision, a.weighted_recall, a.lf_score, b.lf_score
        ),
    }
}

fn criterion_4() -> Outcome {
    let balanced = PoolState::fresh(vec![1e6, 1e6, 1e6], 200.0, 0.0004).unwrap();
    let d_exact = compute_d(&balanced).unwrap().d == 3e6;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d0 = compute_d(&balanced).unwrap().d;
    let mut frictionless = PoolState {
        fee: 0.0,
        ..balanced.clone()
    };
    let mut with_fee = balanced.clone();
    let mut worst_residual = 0.0f64;
    let mut vp_monotone = true;
    let mut vp = virtual_price(&with_fee).unwrap();
    for _ in 0..1000 {
        let i = rng.random_range(0..3);
        let j = (i + rng.random_range(1..3)) % 3;
        let frac = rng.random_range(0.0..0.2);
        let dx = frac * frictionless.balances[i];
        frictionless = apply_swap(&frictionless, i, j, dx).unwrap().0;
        worst_residual = worst_residual.max(invariant_residual(&frictionless, d0).abs() / d0);

        let dx = frac * with_fee.balances[i];
        with_fee = apply_swap(&with_fee, i, j, dx).unwrap().0;
        let next = virtual_price(&with_fee).unwrap();
        vp_monotone &= next >= vp;
        vp = next;
    }
    let rows = slippage_experiment(&balanced, &[5.0, 50.0, 500.0], 4.0).unwrap();
    let increasing = rows.windows(2).all(|w| w[1].marginal_price > w[0].marginal_price);
    Outcome {
        pass: d_exact && worst_residual < 1e-10 && vp_monotone && increasing,
        detail: format!(
            "D exact {d_exact}; max residual/D {worst_residual:.1e}; virtual price monotone {vp_monotone}; marginal prices {:?}",
            rows.iter().map(|r| r.marginal_price).collect::<Vec<_>>()
        ),
    }
}

fn criterion_5() -> Outcome {
    let entropy = shannon_entropy(&[50.0, 50.0]).unwrap();
    let g = gini(&[1.0, 1.0, 4.0]).unwrap();

    let tokens = ["USDC", "DAI", "USDT"].map(|s| TokenId::new(s).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prices: Vec<PriceSample> = (0..1100u64)
        .flat_map(|t| {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.9..1.1)).collect();
            tokens
                .clone()
                .into_iter()
                .zip(p)
                .map(move |(token, usd_price)| PriceSample {
                    ts: Timestamp(t * 60),
                    token,
                    usd_price,
                })
        })
        .collect();
    let table = PriceTable::new(&prices);
    let mut exact_zero = 0;
    for k in 0..1000u64 {
        let i = rng.random_range(0..3);
        let j = (i + rng.random_range(1..3)) % 3;
        let t = TradeEvent {
            ts: Timestamp(k * 60),
            trader: format!("t{}", k % 17),
            token_in: tokens[i].clone(),
            amount_in: rng.random_range(1.0..1e6),
            token_out: tokens[j].clone(),
            amount_out: rng.random_range(1.0..1e6),
        };
        let a = trade_markout(&t, &table, 300, 60, Side::Taker).unwrap();
        let b = trade_markout(&t, &table, 300, 60, Side::Lp).unwrap();
        exact_zero += usize::from(a + b == 0.0);
    }
    let sym = pin_value(&PinParams {
        alpha: 1.0,
        theta: 0.5,
        eps_i: 30.0,
        eps_b: 30.0,
        eps_s: 30.0,
    });

    let t0 = Instant::now();
    let truth = PinParams {
        alpha: 0.4,
        theta: 0.1,
        eps_i: 40.0,
        eps_b: 50.0,
        eps_s: 50.0,
    };
    let est = estimate_pin(&pin_mixture(&truth, 200, 5)).unwrap();
    let fast = within(t0, Duration::from_secs(30));
    let err = (est.pin - pin_value(&truth)).abs();
    Outcome {
        pass: (entropy - 1.0).abs() <= 1e-12
            && (g - 0.5).abs() <= 1e-12
            && exact_zero == 1000
            && sym == 1.0 / 3.0
            && err <= 0.05
            && fast,
        detail: format!(
            "entropy {entropy}, gini {g}, markout sums exactly zero {exact_zero}/1000, symmetric PIN {sym}, estimated PIN {:.4} vs true {:.4}",
            est.pin,
            pin_value(&truth)
        ),
    }
}

fn depeg_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig::two_pool(
        seed,
        14,
        Some(DepegEvent {
            token: "USDC".into(),
            start: 7 * 86_400,
            target: 0.85,
            ramp: 6 * 3600,
            recovery: None,
        }),
    )
}

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let (train_cfg, test_cfg) = (depeg_scenario(101), depeg_scenario(202));
    assert_eq!(train_cfg.informed_lead, 6 * 3600);
    let train = Dataset::from_scenario(&run_scenario(&train_cfg).unwrap(), &train_cfg);
    let test = Dataset::from_scenario(&run_scenario(&test_cfg).unwrap(), &test_cfg);
    let cfg = scenario_pipeline_config(&test_cfg);
    let names = default_detection_metrics(&cfg);
    let pool = evaluate(&train, &test, &cfg, &names, Execution::default())
        .unwrap()
        .remove(0);
    let fast = within(t0, Duration::from_secs(120));

    let mut leading = 0;
    let mut all_positive = true;
    let mut parts = Vec::new();
    for m in &pool.metrics {
        let lead = m.leads.first().and_then(|l| l.lead);
        leading += usize::from(lead.is_some());
        all_positive &= m.score.report.lf_score > 0.0;
        parts.push(format!(
            "{} lF1={:.3} lead={} cps={}",
            m.tuned.metric,
            m.score.report.lf_score,
            lead.map_or("-".into(), |l| format!("{:.0}h", l as f64 / 3600.0)),
            m.score.changepoints.len()
        ));
    }
    Outcome {
        pass: pool.test_labels >= 1 && !pool.crossings.is_empty() && leading >= 2 && all_positive && fast,
        detail: format!("{} test labels; {}", pool.test_labels, parts.join("; ")),
    }
}

fn criterion_7() -> Outcome {
    let sc = depeg_scenario(31);
    let ds = Dataset::from_scenario(&run_scenario(&sc).unwrap(), &sc);
    let cfg = scenario_pipeline_config(&sc);
    let raw = compute_metrics(&ds, &cfg, Execution::default()).unwrap()[0]
        .get(SHANNON_ENTROPY)
        .unwrap()
        .clone();
    let det = DetectorConfig::default();
    let fit = Some(raw.points[raw.len() / 4].0);
    let whole = detect_stream(&raw, &det, None, fit).unwrap();
    let mut split = (Vec::new(), Vec::new());
    let mut state = None;
    for cut in [raw.len() / 3, 2 * raw.len() / 3, raw.len()] {
        let chunk = raw.slice(Timestamp(0), raw.points[cut - 1].0);
        let r = detect_stream(&chunk, &det, state.take(), fit).unwrap();
        split.0.extend(r.detection.changepoints);
        split.1.extend(r.detection.trace);
        state = Some(r.state);
    }
    let resume_ok = split.0 == whole.detection.changepoints && split.1 == whole.detection.trace;

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let digests: Vec<_> = dirs
        .iter()
        .map(|d| {
            let outs = run_scenario_files(&sc, d.path()).unwrap();
            RunManifest::record("simulate", &sc, &[], d.path(), &outs)
                .unwrap()
                .outputs
        })
        .collect();
    let digest_ok = digests[0] == digests[1];
    Outcome {
        pass: resume_ok && digest_ok,
        detail: format!(
            "3-chunk resume identical {resume_ok} ({} changepoints); {} output digests identical {digest_ok}",
            whole.detection.changepoints.len(),
            digests[0].len()
        ),
    }
}

fn criterion_8() -> Outcome {
    let grid = grid_configs(&GridSpace::default()).unwrap();
    let triples = [
        (0.1, 1000.0, 1.0),
        (1e-5, 1.0, 1e4),
        (100.0, 100.0, 1e4),
        (0.1, 100.0, 1000.0),
        (0.01, 1000.0, 1.0),
        (10.0, 100.0, 1e-4),
    ];
    let found = triples
        .iter()
        .filter(|&&(a, b, k)| grid.iter().any(|p| p.alpha == a && p.beta == b && p.kappa == k))
        .count();
    Outcome {
        pass: grid.len() == 1000 && found == triples.len(),
        detail: format!(
            "{} configs; {found}/{} reference triples present",
            grid.len(),
            triples.len()
        ),
    }
}

#[test]
fn acceptance() {
    let results = [
        check(1, criterion_1),
        check(2, criterion_2),
        check(3, criterion_3),
        check(4, criterion_4),
        check(5, criterion_5),
        check(6, criterion_6),
        check(7, criterion_7),
        check(8, criterion_8),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(k, _)| k + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
