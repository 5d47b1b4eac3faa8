//! Pool composition, flow, volatility, markout and shark metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    aggregate, AggregationMode, Bucketing, LiquidityEvent, MetricSeries, Point, PriceSample, Timestamp, TokenId,
    TradeEvent,
};

mod pin;

pub use pin::{estimate_pin, pin_buckets, pin_likelihood, pin_value, rolling_pin, PinBucket, PinEstimate, PinParams};

pub const SHANNON_ENTROPY: &str = "shannonsEntropy";
pub const GINI: &str = "giniCoefficient";
pub const NET_SWAP_FLOW: &str = "netSwapFlow";
pub const NET_LP_FLOW: &str = "netLPFlow";
pub const LOG_RETURNS: &str = "logReturns";
pub const SHARK_FLOW: &str = "sharkflow";
pub const PIN: &str = "pin";

/// `"{h}.Markout"`, e.g. `300.Markout`.
pub fn markout_name(horizon: u64) -> String {
    format!("{horizon}.Markout")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Bucket width for flows and markouts, seconds.
    pub window: u64,
    pub markout_horizon: u64,
    pub shark_markout_horizon: u64,
    pub shark_quantile: f64,
    /// PIN bucket width, seconds.
    pub pin_bucket: u64,
    /// PIN rolling window, in buckets.
    pub pin_window: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            window: 3600,
            markout_horizon: 300,
            shark_markout_horizon: 86_400,
            shark_quantile: 0.01,
            pin_bucket: 86_400,
            pin_window: 7,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0
            || self.markout_horizon == 0
            || self.shark_markout_horizon == 0
            || self.pin_bucket == 0
            || self.pin_window == 0
        {
            return Err(Error::invalid("metric windows and horizons must be positive"));
        }
        if !(self.shark_quantile > 0.0 && self.shark_quantile < 1.0) {
            return Err(Error::invalid(format!(
                "shark_quantile must lie in (0, 1), got {}",
                self.shark_quantile
            )));
        }
        Ok(())
    }
}

fn check_balances(balances: &[f64]) -> Result<f64> {
    if balances.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
        return Err(Error::domain("balances must be finite and non-negative"));
    }
    let total: f64 = balances.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("balances sum to zero"));
    }
    Ok(total)
}

/// Shannon entropy of the normalised balances, in bits.
pub fn shannon_entropy(balances: &[f64]) -> Result<f64> {
    let total = check_balances(balances)?;
    let h = balances
        .iter()
        .map(|b| b / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>();
    // -0.0 for a single non-zero balance
    Ok(h.max(0.0))
}

pub fn gini(balances: &[f64]) -> Result<f64> {
    if balances.len() < 2 {
        return Err(Error::domain("gini needs at least two balances"));
    }
    let total = check_balances(balances)?;
    let mut sorted = balances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let g = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| (2.0 * (k as f64 + 1.0) - n - 1.0) * x / total)
        .sum::<f64>();
    Ok(g / (n - 1.0))
}

/// Applies a composition measure to each balance snapshot.
pub fn composition_series(
    name: &str,
    snapshots: &[(Timestamp, Vec<f64>)],
    measure: impl Fn(&[f64]) -> Result<f64>,
) -> Result<MetricSeries> {
    let points = snapshots
        .iter()
        .map(|(ts, b)| measure(b).map(|v| (*ts, v)))
        .collect::<Result<Vec<_>>>()?;
    MetricSeries::new(name, "", points)
}

fn bucket_sum(name: &str, points: &[Point], window: Bucketing) -> Result<MetricSeries> {
    let mut points = points.to_vec();
    points.sort_by_key(|p| p.0);
    MetricSeries::new(name, "", aggregate(&points, window, AggregationMode::Sum)?)
}

fn signed_flow(trade: &TradeEvent, token: &TokenId) -> f64 {
    let mut v = 0.0;
    if &trade.token_out == token {
        v += trade.amount_out;
    }
    if &trade.token_in == token {
        v -= trade.amount_in;
    }
    v
}

/// Per-bucket net amount of `token` bought from the pool by traders.
pub fn net_swap_flow(trades: &[TradeEvent], token: &TokenId, window: impl Into<Bucketing>) -> Result<MetricSeries> {
    let points: Vec<Point> = trades.iter().map(|t| (t.ts, signed_flow(t, token))).collect();
    bucket_sum(NET_SWAP_FLOW, &points, window.into())
}

/// Per-bucket net deposit of `token`; withdrawals are negative.
pub fn net_lp_flow(events: &[LiquidityEvent], token: &TokenId, window: impl Into<Bucketing>) -> Result<MetricSeries> {
    let points: Vec<Point> = events.iter().map(|e| (e.ts, e.delta_of(token))).collect();
    bucket_sum(NET_LP_FLOW, &points, window.into())
}

/// Net swap flow counting only trades by the given accounts.
pub fn shark_flow(
    trades: &[TradeEvent],
    sharks: &BTreeSet<String>,
    token: &TokenId,
    window: impl Into<Bucketing>,
) -> Result<MetricSeries> {
    let points: Vec<Point> = trades
        .iter()
        .map(|t| {
            (
                t.ts,
                if sharks.contains(&t.trader) {
                    signed_flow(t, token)
                } else {
                    0.0
                },
            )
        })
        .collect();
    bucket_sum(SHARK_FLOW, &points, window.into())
}

/// Population standard deviation of the trailing `window` log returns.
///
/// The first value appears once `window` returns are available.
pub fn rolling_volatility(prices: &MetricSeries, window: usize) -> Result<MetricSeries> {
    if window < 2 {
        return Err(Error::invalid("volatility window must cover at least 2 returns"));
    }
    let returns = crate::model::log_diff(prices)?;
    let points = returns
        .points
        .windows(window)
        .map(|w| {
            let n = w.len() as f64;
            let mean = w.iter().map(|p| p.1).sum::<f64>() / n;
            let var = w.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
            (w[w.len() - 1].0, var.sqrt())
        })
        .collect();
    MetricSeries::new(format!("volatility.{window}"), prices.pool_id.clone(), points)
}

/// USD price samples per token, for nearest-sample lookups.
#[derive(Debug, Clone, Default)]
pub struct PriceTable {
    by_token: HashMap<TokenId, Vec<(Timestamp, f64)>>,
}

impl PriceTable {
    pub fn new(samples: &[PriceSample]) -> Self {
        let mut by_token: HashMap<TokenId, Vec<(Timestamp, f64)>> = HashMap::new();
        for s in samples {
            by_token.entry(s.token.clone()).or_default().push((s.ts, s.usd_price));
        }
        for v in by_token.values_mut() {
            v.sort_by_key(|p| p.0);
        }
        PriceTable { by_token }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenId> {
        self.by_token.keys()
    }

    pub fn series(&self, token: &TokenId) -> &[(Timestamp, f64)] {
        self.by_token.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nearest sample to `ts` no further than `tolerance` seconds away.
    /// Equidistant samples resolve to the earlier one.
    pub fn lookup(&self, token: &TokenId, ts: Timestamp, tolerance: u64) -> Option<f64> {
        let samples = self.by_token.get(token)?;
        let k = samples.partition_point(|p| p.0 < ts);
        let after = samples.get(k).map(|p| (p.0 .0 - ts.0, p.1));
        let before = k.checked_sub(1).map(|j| (ts.0 - samples[j].0 .0, samples[j].1));
        let best = match (before, after) {
            (Some(b), Some(a)) => {
                if a.0 < b.0 {
                    a
                } else {
                    b
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        (best.0 <= tolerance).then_some(best.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Taker,
    Lp,
}

/// Dollar markout of a trade marked `h` seconds later.
///
/// Prices are the nearest samples within `tolerance` of `ts + h`.
pub fn trade_markout(trade: &TradeEvent, prices: &PriceTable, h: u64, tolerance: u64, side: Side) -> Result<f64> {
    let mark = trade.ts.plus(h);
    let p_out = prices
        .lookup(&trade.token_out, mark, tolerance)
        .ok_or_else(|| Error::MissingPrice(format!("{} at {mark}", trade.token_out)))?;
    let p_in = prices
        .lookup(&trade.token_in, mark, tolerance)
        .ok_or_else(|| Error::MissingPrice(format!("{} at {mark}", trade.token_in)))?;
    let taker = trade.amount_out * p_out - trade.amount_in * p_in;
    Ok(match side {
        Side::Taker => taker,
        Side::Lp => -taker,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkoutSeries {
    pub series: MetricSeries,
    /// Trades dropped for lack of a mark price.
    pub skipped: usize,
}

/// Per-bucket sum of LP-side markouts at horizon `h`.
pub fn pool_markout_series(
    trades: &[TradeEvent],
    prices: &PriceTable,
    h: u64,
    window: impl Into<Bucketing>,
) -> Result<MarkoutSeries> {
    let window = window.into();
    let mut skipped = 0;
    let mut points = Vec::with_capacity(trades.len());
    for t in trades {
        match trade_markout(t, prices, h, window.period, Side::Lp) {
            Ok(v) => points.push((t.ts, v)),
            Err(Error::MissingPrice(_)) => {
                skipped += 1;
                // keep the bucket present with a zero contribution
                points.push((t.ts, 0.0));
            }
            Err(e) => return Err(e),
        }
    }
    let mut series = bucket_sum("", &points, window)?;
    series.metric_name = markout_name(h);
    Ok(MarkoutSeries { series, skipped })
}

/// Accounts whose cumulative taker markout reaches the top `shark_quantile`.
///
/// With `N` accounts the cutoff is the `k`-th largest cumulative markout,
/// `k = max(1, ceil(q·N))`; every account at or above it is returned.
pub fn classify_sharks(trades: &[TradeEvent], prices: &PriceTable, cfg: &MetricConfig) -> Result<BTreeSet<String>> {
    cfg.validate()?;
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for t in trades {
        if let Ok(m) = trade_markout(t, prices, cfg.shark_markout_horizon, cfg.window, Side::Taker) {
            *totals.entry(t.trader.as_str()).or_insert(0.0) += m;
        }
    }
    if totals.is_empty() {
        return Ok(BTreeSet::new());
    }
    let mut values: Vec<f64> = totals.values().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let n = values.len() as f64;
    let k = ((cfg.shark_quantile * n - 1e-9).ceil() as usize).clamp(1, values.len());
    let cutoff = values[k - 1];
    Ok(totals
        .into_iter()
        .filter(|(_, v)| *v >= cutoff)
        .map(|(a, _)| a.to_string())
        .collect())
}
