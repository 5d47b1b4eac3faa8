//! Metric computation, labelling, detection with resumable state, tuning,
//! scoring and reporting over an ingested dataset.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{read_json, write_json, PipelineConfig};
use super::csvio::{LeadRow, ScoreRow};
use super::{Dataset, PoolData};
use crate::bocd::{Changepoint, Detection, Detector, DetectorConfig, DetectorSnapshot, NGParams, STATE_VERSION};
use crate::error::{Error, Result};
use crate::evaluation::{label_depegs, price_threshold_crossings, tune, DepegLabel, ScoreReport};
use crate::exec::Execution;
use crate::metrics::{
    classify_sharks, composition_series, gini, markout_name, net_lp_flow, net_swap_flow, pin_buckets,
    pool_markout_series, rolling_pin, shannon_entropy, shark_flow, PriceTable, GINI, LOG_RETURNS, SHANNON_ENTROPY,
};
use crate::model::{
    aggregate, diff, fit_stats, log_diff, standardize, AggregationMode, Bucketing, FitStats, MetricSeries, Point,
    Timestamp,
};
use crate::stableswap::{share_price_from, virtual_price, PoolState};

/// First and last event time of a pool, over reserves and trades.
pub fn pool_span(pool: &PoolData) -> Option<(Timestamp, Timestamp)> {
    let stamps = pool
        .reserves
        .iter()
        .map(|r| r.ts)
        .chain(pool.trades.iter().map(|t| t.ts));
    let (mut lo, mut hi) = (None::<Timestamp>, None::<Timestamp>);
    for t in stamps {
        lo = Some(lo.map_or(t, |l| l.min(t)));
        hi = Some(hi.map_or(t, |h| h.max(t)));
    }
    Some((lo?, hi?))
}

fn grid(pool: &PoolData, period: u64) -> Result<Bucketing> {
    let (a, b) = pool_span(pool).ok_or_else(|| Error::invalid(format!("pool {} has no events", pool.entry.pool_id)))?;
    Ok(Bucketing::spanning(period, a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolMetrics {
    pub pool_id: String,
    pub series: Vec<MetricSeries>,
    /// Trades left out of the markout series for lack of a mark price.
    pub markout_skipped: usize,
    pub sharks: BTreeSet<String>,
}

impl PoolMetrics {
    pub fn get(&self, metric: &str) -> Result<&MetricSeries> {
        self.series
            .iter()
            .find(|s| s.metric_name == metric)
            .ok_or_else(|| Error::invalid(format!("pool {} has no metric {metric}", self.pool_id)))
    }
}

#[derive(Clone, Copy)]
enum Work {
    Entropy,
    Gini,
    SwapFlow,
    LpFlow,
    LogReturns(usize),
    Markout,
    Sharks,
    Pin,
}

#[derive(Default)]
struct WorkOut {
    series: Vec<MetricSeries>,
    skipped: usize,
    sharks: BTreeSet<String>,
}

impl From<MetricSeries> for WorkOut {
    fn from(s: MetricSeries) -> Self {
        WorkOut {
            series: vec![s],
            ..WorkOut::default()
        }
    }
}

fn level_series(name: &str, points: &[Point], grid: Bucketing) -> Result<MetricSeries> {
    MetricSeries::new(name, "", aggregate(points, grid, AggregationMode::Last)?)
}

/// Every metric of one pool on its hourly grid, work items run through `exec`.
pub fn compute_pool_metrics(
    pool: &PoolData,
    table: &PriceTable,
    cfg: &PipelineConfig,
    exec: Execution,
) -> Result<PoolMetrics> {
    let grid = grid(pool, cfg.period)?;
    let tracked = pool.entry.tracked()?;
    let mcfg = &cfg.metrics;
    let snaps: Vec<(Timestamp, Vec<f64>)> = pool.reserves.iter().map(|r| (r.ts, r.balances.clone())).collect();

    let mut work = vec![Work::Entropy, Work::Gini, Work::SwapFlow, Work::LpFlow];
    work.extend((0..pool.tokens.len()).map(Work::LogReturns));
    work.extend([Work::Markout, Work::Sharks, Work::Pin]);

    let run = |w: &Work| -> Result<WorkOut> {
        Ok(match *w {
            Work::Entropy | Work::Gini => {
                let raw = match w {
                    Work::Entropy => composition_series(SHANNON_ENTROPY, &snaps, shannon_entropy)?,
                    _ => composition_series(GINI, &snaps, gini)?,
                };
                let name = raw.metric_name.clone();
                level_series(&name, &raw.points, grid)?.into()
            }
            Work::SwapFlow => net_swap_flow(&pool.trades, &tracked, grid)?.into(),
            Work::LpFlow => net_lp_flow(&pool.liquidity, &tracked, grid)?.into(),
            Work::LogReturns(k) => {
                let token = &pool.tokens[k];
                let samples = table.series(token);
                if samples.is_empty() {
                    return Err(cfg.token_exchange_map.missing(&token.symbol));
                }
                let name = format!("{LOG_RETURNS}.{}", token.symbol);
                log_diff(&level_series(&name, samples, grid)?)?.into()
            }
            Work::Markout => {
                let m = pool_markout_series(&pool.trades, table, mcfg.markout_horizon, grid)?;
                WorkOut {
                    series: vec![m.series],
                    skipped: m.skipped,
                    ..WorkOut::default()
                }
            }
            Work::Sharks => {
                let sharks = classify_sharks(&pool.trades, table, mcfg)?;
                WorkOut {
                    series: vec![shark_flow(&pool.trades, &sharks, &tracked, grid)?],
                    sharks,
                    ..WorkOut::default()
                }
            }
            Work::Pin => {
                let (a, b) = grid.span.expect("spanning grid");
                let buckets = pin_buckets(&pool.trades, &tracked, Bucketing::spanning(mcfg.pin_bucket, a, b))?;
                if buckets.len() < mcfg.pin_window {
                    WorkOut::default()
                } else {
                    rolling_pin(&buckets, mcfg.pin_window, exec)?.into()
                }
            }
        })
    };

    let mut out = PoolMetrics {
        pool_id: pool.entry.pool_id.clone(),
        series: Vec::new(),
        markout_skipped: 0,
        sharks: BTreeSet::new(),
    };
    for r in exec.map(&work, run) {
        let r = r?;
        out.series.extend(r.series);
        out.markout_skipped += r.skipped;
        out.sharks.extend(r.sharks);
    }
    for s in &mut out.series {
        s.pool_id = out.pool_id.clone();
    }
    Ok(out)
}

pub fn compute_metrics(ds: &Dataset, cfg: &PipelineConfig, exec: Execution) -> Result<Vec<PoolMetrics>> {
    let table = PriceTable::new(&ds.prices);
    ds.pools
        .iter()
        .map(|p| compute_pool_metrics(p, &table, cfg, exec))
        .collect()
}

/// Share price, virtual price and depeg labels of one pool on its hourly grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolLabels {
    pub pool_id: String,
    pub share_price: MetricSeries,
    pub virtual_price: MetricSeries,
    pub labels: Vec<DepegLabel>,
}

impl PoolLabels {
    pub fn timestamps(&self) -> Vec<Timestamp> {
        self.labels.iter().map(|l| l.ts).collect()
    }
}

pub fn pool_labels(pool: &PoolData, table: &PriceTable, cfg: &PipelineConfig) -> Result<PoolLabels> {
    let grid = grid(pool, cfg.period)?;
    let mut sp = Vec::with_capacity(pool.reserves.len());
    let mut vp = Vec::with_capacity(pool.reserves.len());
    for snap in &pool.reserves {
        let prices = pool
            .tokens
            .iter()
            .map(|t| {
                table
                    .lookup(t, snap.ts, cfg.period)
                    .ok_or_else(|| cfg.token_exchange_map.missing(&t.symbol))
            })
            .collect::<Result<Vec<f64>>>()?;
        let state = PoolState::new(snap.balances.clone(), pool.entry.amp, pool.entry.fee, snap.lp_supply)?;
        sp.push((snap.ts, share_price_from(&snap.balances, &prices, snap.lp_supply)?));
        vp.push((snap.ts, virtual_price(&state)?));
    }
    let mut share_price = level_series("sharePrice", &sp, grid)?;
    let mut virtual_price = level_series("virtualPrice", &vp, grid)?;
    share_price.pool_id = pool.entry.pool_id.clone();
    virtual_price.pool_id = pool.entry.pool_id.clone();
    let labels = label_depegs(&share_price, &virtual_price, &cfg.scoring)?;
    Ok(PoolLabels {
        pool_id: pool.entry.pool_id.clone(),
        share_price,
        virtual_price,
        labels,
    })
}

/// Hourly USD price of a pool's tracked token.
pub fn tracked_price(pool: &PoolData, table: &PriceTable, cfg: &PipelineConfig) -> Result<MetricSeries> {
    let token = pool.entry.tracked()?;
    let samples = table.series(&token);
    if samples.is_empty() {
        return Err(cfg.token_exchange_map.missing(&token.symbol));
    }
    let mut s = level_series(&format!("price.{}", token.symbol), samples, grid(pool, cfg.period)?)?;
    s.pool_id = pool.entry.pool_id.clone();
    Ok(s)
}

/// Series transform applied before standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    LogDiff,
    Diff,
}

/// Composition levels are differenced; flows, returns, markouts and PIN are used as is.
pub fn transform_for(metric: &str) -> Transform {
    match metric {
        SHANNON_ENTROPY => Transform::LogDiff,
        GINI => Transform::Diff,
        _ => Transform::None,
    }
}

/// Applies `transform`, continuing from `prev` (the last raw point already
/// consumed) so that chunked input yields the same values as one pass.
pub fn apply_transform(raw: &MetricSeries, transform: Transform, prev: Option<Point>) -> Result<MetricSeries> {
    if transform == Transform::None {
        return Ok(raw.clone());
    }
    let mut joined = raw.clone();
    if let Some(p) = prev {
        joined.points.insert(0, p);
    }
    match transform {
        Transform::LogDiff => log_diff(&joined),
        Transform::Diff => Ok(diff(&joined)),
        Transform::None => unreachable!(),
    }
}

/// Standardisation statistics of the transformed series up to `until`.
/// A constant training slice gets unit scale.
pub fn fit_transformed(transformed: &MetricSeries, until: Option<Timestamp>) -> Result<FitStats> {
    let train = match until {
        Some(u) => transformed.slice(Timestamp(0), u),
        None => transformed.clone(),
    };
    let mut stats = fit_stats(&train)?;
    if !(stats.std > 0.0) {
        stats.std = 1.0;
    }
    Ok(stats)
}

/// Everything needed to continue a detector on the next chunk of a raw series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorStateFile {
    pub version: u32,
    pub pool_id: String,
    pub metric: String,
    pub transform: Transform,
    pub stats: FitStats,
    pub last_raw: Option<Point>,
    pub detector: DetectorSnapshot,
}

impl DetectorStateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let s: DetectorStateFile = read_json(path)?;
        if s.version != STATE_VERSION {
            return Err(Error::StateVersion {
                found: s.version,
                expected: STATE_VERSION,
            });
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub detection: Detection,
    pub state: DetectorStateFile,
}

/// Transforms, standardises and runs the detector over a raw metric series.
///
/// Fresh runs fit statistics on points up to `fit_until` (all points if
/// `None`). Resumed runs reuse the stored statistics and skip raw points at
/// or before the last one already consumed.
pub fn detect_stream(
    raw: &MetricSeries,
    detector_cfg: &DetectorConfig,
    resume: Option<DetectorStateFile>,
    fit_until: Option<Timestamp>,
) -> Result<StreamResult> {
    let (mut detector, stats, prev, transform) = match resume {
        Some(s) => {
            if s.metric != raw.metric_name || s.pool_id != raw.pool_id {
                return Err(Error::invalid(format!(
                    "state is for {}/{}, not {}/{}",
                    s.pool_id, s.metric, raw.pool_id, raw.metric_name
                )));
            }
            (Detector::from_snapshot(s.detector)?, s.stats, s.last_raw, s.transform)
        }
        None => {
            let transform = transform_for(&raw.metric_name);
            let stats = fit_transformed(&apply_transform(raw, transform, None)?, fit_until)?;
            (Detector::new(*detector_cfg)?, stats, None, transform)
        }
    };
    let fresh = match prev {
        Some((t, _)) => raw.slice(Timestamp(t.0 + 1), Timestamp(u64::MAX)),
        None => raw.clone(),
    };
    let x = standardize(&apply_transform(&fresh, transform, prev)?, stats.mean, stats.std)?;
    let detection = detector.run(&x)?;
    Ok(StreamResult {
        detection,
        state: DetectorStateFile {
            version: STATE_VERSION,
            pool_id: raw.pool_id.clone(),
            metric: raw.metric_name.clone(),
            transform,
            stats,
            last_raw: fresh.points.last().copied().or(prev),
            detector: detector.snapshot(),
        },
    })
}

/// Tuned prior and frozen standardisation for one pool metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedMetric {
    pub pool_id: String,
    pub metric: String,
    pub transform: Transform,
    pub stats: FitStats,
    pub params: NGParams,
    pub exponents: (i32, i32, i32),
    pub train_report: ScoreReport,
    /// Every grid point scored zero on the training slice.
    pub all_zero: bool,
}

pub fn tune_metric(
    train_raw: &MetricSeries,
    labels: &[Timestamp],
    cfg: &PipelineConfig,
    exec: Execution,
) -> Result<TunedMetric> {
    let transform = transform_for(&train_raw.metric_name);
    let t = apply_transform(train_raw, transform, None)?;
    let stats = fit_transformed(&t, None)?;
    let x = standardize(&t, stats.mean, stats.std)?;
    let res = tune(&x, labels, &cfg.grid, &cfg.scoring, &cfg.detector, exec)?;
    Ok(TunedMetric {
        pool_id: train_raw.pool_id.clone(),
        metric: train_raw.metric_name.clone(),
        transform,
        stats,
        params: res.best.params,
        exponents: res.best.exponents,
        train_report: res.report,
        all_zero: res.all_zero,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub pool_id: String,
    pub metric: String,
    pub params: NGParams,
    pub report: ScoreReport,
    pub changepoints: Vec<Changepoint>,
}

/// Runs the tuned detector over a test series with the frozen training statistics.
pub fn score_metric(
    test_raw: &MetricSeries,
    tuned: &TunedMetric,
    labels: &[Timestamp],
    cfg: &PipelineConfig,
) -> Result<MetricScore> {
    let x = standardize(
        &apply_transform(test_raw, tuned.transform, None)?,
        tuned.stats.mean,
        tuned.stats.std,
    )?;
    let det = Detector::new(cfg.detector.with_prior(tuned.params))?.run(&x)?;
    let preds: Vec<Timestamp> = det.changepoints.iter().map(|c| c.ts).collect();
    Ok(MetricScore {
        pool_id: test_raw.pool_id.clone(),
        metric: test_raw.metric_name.clone(),
        params: tuned.params,
        report: crate::evaluation::lf_score(labels, &preds, &cfg.scoring),
        changepoints: det.changepoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadTime {
    pub crossing: Timestamp,
    pub changepoint: Option<Timestamp>,
    pub lead: Option<u64>,
}

/// Earliest changepoint within `margin` seconds before (or at) each crossing.
pub fn lead_times(crossings: &[Timestamp], changepoints: &[Timestamp], margin: u64) -> Vec<LeadTime> {
    crossings
        .iter()
        .map(|&c| {
            let cp = changepoints
                .iter()
                .copied()
                .filter(|&t| t <= c && c.0 - t.0 <= margin)
                .min();
            LeadTime {
                crossing: c,
                changepoint: cp,
                lead: cp.map(|t| c.0 - t.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub tuned: TunedMetric,
    pub score: MetricScore,
    pub leads: Vec<LeadTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolOutcome {
    pub pool_id: String,
    pub train_labels: usize,
    pub test_labels: usize,
    /// Downward crossings of the price threshold by the tracked token in the test data.
    pub crossings: Vec<Timestamp>,
    pub metrics: Vec<MetricOutcome>,
}

/// Tunes each named metric on `train`, scores it on `test` and measures lead
/// times against price-threshold crossings. Pools are matched by id.
pub fn evaluate(
    train: &Dataset,
    test: &Dataset,
    cfg: &PipelineConfig,
    metric_names: &[String],
    exec: Execution,
) -> Result<Vec<PoolOutcome>> {
    let train_table = PriceTable::new(&train.prices);
    let test_table = PriceTable::new(&test.prices);
    let mut out = Vec::new();
    for test_pool in &test.pools {
        let train_pool = train.pool(&test_pool.entry.pool_id)?;
        let train_metrics = compute_pool_metrics(train_pool, &train_table, cfg, exec)?;
        let test_metrics = compute_pool_metrics(test_pool, &test_table, cfg, exec)?;
        let train_labels = pool_labels(train_pool, &train_table, cfg)?.timestamps();
        let test_labels = pool_labels(test_pool, &test_table, cfg)?.timestamps();
        let crossings = price_threshold_crossings(&tracked_price(test_pool, &test_table, cfg)?, cfg.price_threshold);
        let mut metrics = Vec::new();
        for name in metric_names {
            let tuned = tune_metric(train_metrics.get(name)?, &train_labels, cfg, exec)?;
            let score = score_metric(test_metrics.get(name)?, &tuned, &test_labels, cfg)?;
            let cps: Vec<Timestamp> = score.changepoints.iter().map(|c| c.ts).collect();
            let leads = lead_times(&crossings, &cps, cfg.scoring.margin_m);
            metrics.push(MetricOutcome { tuned, score, leads });
        }
        out.push(PoolOutcome {
            pool_id: test_pool.entry.pool_id.clone(),
            train_labels: train_labels.len(),
            test_labels: test_labels.len(),
            crossings,
            metrics,
        });
    }
    Ok(out)
}

pub fn score_row(tuned: &TunedMetric, report: &ScoreReport) -> ScoreRow {
    ScoreRow {
        pool: tuned.pool_id.clone(),
        metric: tuned.metric.clone(),
        f: report.lf_score,
        p: report.precision,
        r: report.weighted_recall,
        alpha: tuned.params.alpha,
        beta: tuned.params.beta,
        kappa: tuned.params.kappa,
    }
}

pub fn lead_rows(pool: &str, metric: &str, leads: &[LeadTime]) -> Vec<LeadRow> {
    leads
        .iter()
        .map(|l| LeadRow {
            pool: pool.to_string(),
            metric: metric.to_string(),
            crossing_ts: l.crossing.0,
            changepoint_ts: l.changepoint.map(|t| t.0),
            lead_seconds: l.lead,
        })
        .collect()
}

/// Plain-text pool results table followed by lead times.
pub fn render_report(scores: &[ScoreRow], leads: &[LeadRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Pool results");
    let _ = writeln!(
        s,
        "{:<16} {:<28} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10}",
        "pool", "metric", "F", "P", "R", "alpha", "beta", "kappa"
    );
    for r in scores {
        let _ = writeln!(
            s,
            "{:<16} {:<28} {:>8.4} {:>8.4} {:>8.4} {:>10e} {:>10e} {:>10e}",
            r.pool, r.metric, r.f, r.p, r.r, r.alpha, r.beta, r.kappa
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Lead times");
    let _ = writeln!(
        s,
        "{:<16} {:<28} {:>12} {:>12} {:>8}",
        "pool", "metric", "crossing", "changepoint", "lead_h"
    );
    for r in leads {
        let cp = r.changepoint_ts.map_or("-".to_string(), |t| t.to_string());
        let lead = r
            .lead_seconds
            .map_or("-".to_string(), |l| format!("{:.1}", l as f64 / 3600.0));
        let _ = writeln!(
            s,
            "{:<16} {:<28} {:>12} {:>12} {:>8}",
            r.pool, r.metric, r.crossing_ts, cp, lead
        );
    }
    s
}

/// Metrics used for the end-to-end check when none are named.
pub fn default_detection_metrics(cfg: &PipelineConfig) -> Vec<String> {
    vec![
        crate::metrics::NET_SWAP_FLOW.to_string(),
        SHANNON_ENTROPY.to_string(),
        markout_name(cfg.metrics.markout_horizon),
    ]
}
