use std::path::Path;

use depeg_core::bocd::DetectorConfig;
use depeg_core::metrics::{PriceTable, SHANNON_ENTROPY};
use depeg_core::model::Timestamp;
use depeg_core::pipeline::csvio;
use depeg_core::pipeline::*;
use depeg_core::simulator::{run_scenario, DepegEvent, ScenarioConfig};
use depeg_core::{Error, Execution};

fn depeg_scenario(seed: u64, days: u64, target: f64) -> ScenarioConfig {
    ScenarioConfig::two_pool(
        seed,
        days,
        Some(DepegEvent {
            token: "USDC".into(),
            start: days * 86_400 / 2,
            target,
            ramp: 6 * 3600,
            recovery: None,
        }),
    )
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn small_input(dir: &Path, trades: &str) -> PipelineConfig {
    let sc = ScenarioConfig::two_pool(1, 1, None);
    let cfg = scenario_pipeline_config(&sc);
    write(dir, "trades.csv", trades);
    write(
        dir,
        "reserves.csv",
        "ts,pool_id,token,balance,lp_supply\n3600,usdc-dai,USDC,10,20\n3600,usdc-dai,DAI,10,20\n",
    );
    write(dir, "prices.csv", "ts,token,usd_price\n3600,USDC,1\n3600,DAI,1\n");
    cfg
}

const TRADES_HEADER: &str = "ts,pool_id,trader,token_in,amount_in,token_out,amount_out\n";

#[test]
fn written_scenario_ingests_back_identically() {
    let sc = depeg_scenario(3, 2, 0.9);
    let out = run_scenario(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scenario(&out, &sc, dir.path()).unwrap();
    let cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    let ds = ingest(dir.path(), &cfg).unwrap();
    assert_eq!(ds, Dataset::from_scenario(&out, &sc));
    let truth = read_truth(&dir.path().join(TRUTH_FILE)).unwrap();
    assert_eq!(truth, out.truth);
}

#[test]
fn header_mismatch_is_reported_on_line_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_input(dir.path(), "ts,pool,trader,token_in,amount_in,token_out,amount_out\n");
    match ingest(dir.path(), &cfg) {
        Err(Error::Row { line, message, .. }) => {
            assert_eq!(line, 1);
            assert!(message.contains("expected header"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_rows_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_input(
        dir.path(),
        &format!("{TRADES_HEADER}10,usdc-dai,a,USDC,1,DAI,1\n20,usdc-dai,a,USDC,abc,DAI,1\n"),
    );
    assert!(matches!(ingest(dir.path(), &cfg), Err(Error::Row { line: 3, .. })));

    let cfg = small_input(dir.path(), &format!("{TRADES_HEADER}10,other-pool,a,USDC,1,DAI,1\n"));
    match ingest(dir.path(), &cfg) {
        Err(Error::Row { line: 2, message, .. }) => assert!(message.contains("unknown pool_id")),
        other => panic!("unexpected {other:?}"),
    }

    let cfg = small_input(dir.path(), &format!("{TRADES_HEADER}10,usdc-dai,a,USDC,-1,DAI,1\n"));
    assert!(matches!(ingest(dir.path(), &cfg), Err(Error::Row { line: 2, .. })));

    let cfg = small_input(dir.path(), &format!("{TRADES_HEADER}10,usdc-dai,a,USDT,1,DAI,1\n"));
    assert!(matches!(ingest(dir.path(), &cfg), Err(Error::Row { line: 2, .. })));
}

#[test]
fn out_of_order_rows_within_one_period_are_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_input(
        dir.path(),
        &format!(
            "{TRADES_HEADER}4000,usdc-dai,a,USDC,1,DAI,1\n1000,usdc-dai,b,USDC,2,DAI,2\n4000,usdc-dai,c,USDC,3,DAI,3\n"
        ),
    );
    let ds = ingest(dir.path(), &cfg).unwrap();
    let traders: Vec<&str> = ds.pools[0].trades.iter().map(|t| t.trader.as_str()).collect();
    assert_eq!(traders, ["b", "a", "c"]);

    let cfg = small_input(
        dir.path(),
        &format!("{TRADES_HEADER}8000,usdc-dai,a,USDC,1,DAI,1\n1000,usdc-dai,b,USDC,2,DAI,2\n"),
    );
    assert!(matches!(ingest(dir.path(), &cfg), Err(Error::Row { line: 3, .. })));
}

#[test]
fn empty_streams_write_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    csvio::write_rows::<csvio::TradeRow>(&p, &csvio::TRADES_HEADER, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), TRADES_HEADER);
}

#[test]
fn missing_price_names_the_offline_provider() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_input(dir.path(), TRADES_HEADER);
    write(dir.path(), "prices.csv", "ts,token,usd_price\n3600,DAI,1\n");
    cfg.token_exchange_map
        .0
        .insert("USDC".into(), ("ccxt".into(), "binanceus".into()));
    let ds = ingest(dir.path(), &cfg).unwrap();
    let table = PriceTable::new(&ds.prices);
    let err = pool_labels(&ds.pools[0], &table, &cfg).unwrap_err();
    assert!(matches!(err, Error::Offline { .. }), "{err}");
}

#[test]
fn deep_depeg_is_labelled_within_the_ramp() {
    let sc = depeg_scenario(9, 4, 0.8);
    let out = run_scenario(&sc).unwrap();
    let ds = Dataset::from_scenario(&out, &sc);
    let cfg = scenario_pipeline_config(&sc);
    let labels = pool_labels(&ds.pools[0], &PriceTable::new(&ds.prices), &cfg).unwrap();
    let ev = &out.truth.events[0];
    let first = labels.labels.first().expect("a label").ts;
    assert!(first >= ev.start_ts, "{first} before start {}", ev.start_ts);
    assert!(
        first.0 <= ev.ramp_end_ts.0 + cfg.period,
        "{first} after ramp end {}",
        ev.ramp_end_ts
    );
}

#[test]
fn chunked_detection_equals_one_pass() {
    let sc = depeg_scenario(5, 4, 0.85);
    let out = run_scenario(&sc).unwrap();
    let ds = Dataset::from_scenario(&out, &sc);
    let cfg = scenario_pipeline_config(&sc);
    let pm = compute_metrics(&ds, &cfg, Execution::Sequential).unwrap();
    let raw = pm[0].get(SHANNON_ENTROPY).unwrap();
    let cut = raw.points[raw.len() / 2].0;
    let fit_until = Some(raw.points[raw.len() / 3].0);
    let det = DetectorConfig::default();

    let whole = detect_stream(raw, &det, None, fit_until).unwrap();
    let a = detect_stream(&raw.slice(Timestamp(0), cut), &det, None, fit_until).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let state_path = dir.path().join("state.json");
    a.state.save(&state_path).unwrap();
    let resumed = DetectorStateFile::load(&state_path).unwrap();
    assert_eq!(resumed, a.state);
    // feeding the whole file again only consumes the unseen tail
    let b = detect_stream(raw, &det, Some(resumed), None).unwrap();

    let mut cps = a.detection.changepoints.clone();
    cps.extend(b.detection.changepoints.clone());
    let mut trace = a.detection.trace.clone();
    trace.extend(b.detection.trace.clone());
    assert_eq!(cps, whole.detection.changepoints);
    assert_eq!(trace, whole.detection.trace);
    assert_eq!(b.state, whole.state);
}

#[test]
fn same_seed_same_digests() {
    let sc = depeg_scenario(12, 2, 0.9);
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut other = sc.clone();
    other.seed = 13;
    let manifests: Vec<RunManifest> = [&sc, &sc, &other]
        .iter()
        .zip(&dirs)
        .map(|(s, d)| {
            let outs = run_scenario_files(s, d.path()).unwrap();
            RunManifest::record("simulate", s, &[], d.path(), &outs).unwrap()
        })
        .collect();
    assert_eq!(manifests[0].outputs, manifests[1].outputs);
    assert_ne!(manifests[0].outputs["trades.csv"], manifests[2].outputs["trades.csv"]);
    let path = manifests[0].write(dirs[0].path()).unwrap();
    assert_eq!(verify_manifest(&path).unwrap(), manifests[0].outputs.len());
}

#[test]
fn parallel_and_sequential_metrics_agree() {
    let sc = depeg_scenario(6, 8, 0.85);
    let out = run_scenario(&sc).unwrap();
    let ds = Dataset::from_scenario(&out, &sc);
    let cfg = scenario_pipeline_config(&sc);
    let a = compute_metrics(&ds, &cfg, Execution::Sequential).unwrap();
    let b = compute_metrics(&ds, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let names: Vec<&str> = a[0].series.iter().map(|s| s.metric_name.as_str()).collect();
    for want in [
        "shannonsEntropy",
        "giniCoefficient",
        "netSwapFlow",
        "netLPFlow",
        "logReturns.USDC",
        "300.Markout",
        "sharkflow",
        "pin",
    ] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
}
