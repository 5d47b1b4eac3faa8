//! Shared domain types and the series transforms applied before detection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn secs(self) -> u64 {
        self.0
    }

    pub fn plus(self, secs: u64) -> Timestamp {
        Timestamp(self.0 + secs)
    }

    pub fn saturating_minus(self, secs: u64) -> Timestamp {
        Timestamp(self.0.saturating_sub(secs))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId {
    pub symbol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

impl TokenId {
    pub fn new(symbol: impl Into<String>) -> Result<Self> {
        let symbol = symbol.into();
        if symbol.is_empty() {
            return Err(Error::invalid("token symbol must be non-empty"));
        }
        Ok(TokenId { symbol, address: None })
    }

    /// Attaches an on-chain address. Accepts an optional `0x` prefix and
    /// normalises to lowercase hex.
    pub fn with_address(mut self, address: &str) -> Result<Self> {
        self.address = Some(normalize_address(address)?);
        Ok(self)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol)
    }
}

/// Validates a 40-hex-digit address and returns it lowercased without prefix.
pub fn normalize_address(address: &str) -> Result<String> {
    let hex = address
        .strip_prefix("0x")
        .or_else(|| address.strip_prefix("0X"))
        .unwrap_or(address);
    if hex.len() != 40 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::invalid(format!("address {address:?} is not 40 hex characters")));
    }
    Ok(hex.to_ascii_lowercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEvent {
    pub ts: Timestamp,
    pub trader: String,
    pub token_in: TokenId,
    pub amount_in: f64,
    pub token_out: TokenId,
    pub amount_out: f64,
}

impl TradeEvent {
    pub fn validate(&self) -> Result<()> {
        if !(self.amount_in > 0.0 && self.amount_in.is_finite()) {
            return Err(Error::invalid(format!(
                "amount_in must be positive, got {}",
                self.amount_in
            )));
        }
        if !(self.amount_out > 0.0 && self.amount_out.is_finite()) {
            return Err(Error::invalid(format!(
                "amount_out must be positive, got {}",
                self.amount_out
            )));
        }
        if self.token_in == self.token_out {
            return Err(Error::invalid(format!(
                "token_in and token_out are both {}",
                self.token_in
            )));
        }
        Ok(())
    }
}

/// A deposit (positive deltas) or withdrawal (negative deltas).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityEvent {
    pub ts: Timestamp,
    pub provider: String,
    pub deltas: Vec<(TokenId, f64)>,
    pub lp_token_delta: f64,
}

impl LiquidityEvent {
    pub fn delta_of(&self, token: &TokenId) -> f64 {
        self.deltas.iter().filter(|(t, _)| t == token).map(|(_, d)| *d).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.deltas.iter().any(|(_, d)| *d > 0.0);
        let negative = self.deltas.iter().any(|(_, d)| *d < 0.0);
        if positive && negative {
            return Err(Error::invalid("liquidity deltas mix deposits and withdrawals"));
        }
        if self.deltas.iter().any(|(_, d)| !d.is_finite()) || !self.lp_token_delta.is_finite() {
            return Err(Error::invalid("liquidity deltas must be finite"));
        }
        if (positive && self.lp_token_delta < 0.0) || (negative && self.lp_token_delta > 0.0) {
            return Err(Error::invalid("lp_token_delta sign does not match the token deltas"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSample {
    pub ts: Timestamp,
    pub token: TokenId,
    pub usd_price: f64,
}

pub type Point = (Timestamp, f64);

/// A named scalar series for one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric_name: String,
    pub pool_id: String,
    pub points: Vec<Point>,
}

impl MetricSeries {
    /// Builds a series, rejecting non-increasing timestamps.
    pub fn new(metric_name: impl Into<String>, pool_id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let metric_name = metric_name.into();
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid(format!(
                "series {metric_name}: timestamps not strictly increasing at {}",
                w[1].0
            )));
        }
        Ok(MetricSeries {
            metric_name,
            pool_id: pool_id.into(),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = Timestamp> + '_ {
        self.points.iter().map(|p| p.0)
    }

    fn with_points(&self, points: Vec<Point>) -> MetricSeries {
        MetricSeries {
            metric_name: self.metric_name.clone(),
            pool_id: self.pool_id.clone(),
            points,
        }
    }

    /// Points with `from <= ts <= to`.
    pub fn slice(&self, from: Timestamp, to: Timestamp) -> MetricSeries {
        self.with_points(
            self.points
                .iter()
                .copied()
                .filter(|(t, _)| *t >= from && *t <= to)
                .collect(),
        )
    }
}

/// How points falling into the same bucket are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Flows: empty buckets are zero.
    Sum,
    /// Levels: empty buckets carry the previous value forward.
    Last,
    Mean,
}

/// Bucket width plus an optional explicit span to cover.
///
/// Buckets are anchored to multiples of `period` since the epoch and labelled
/// by their closing time: a point at `t` lands in the bucket closing at
/// `ceil(t / period) * period`, with `t = 0` belonging to the first bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucketing {
    pub period: u64,
    pub span: Option<(Timestamp, Timestamp)>,
}

impl Bucketing {
    pub fn spanning(period: u64, first: Timestamp, last: Timestamp) -> Self {
        Bucketing {
            period,
            span: Some((first, last)),
        }
    }

    pub fn label(&self, ts: Timestamp) -> Timestamp {
        Timestamp(bucket_index(ts, self.period) * self.period)
    }
}

impl From<u64> for Bucketing {
    fn from(period: u64) -> Self {
        Bucketing { period, span: None }
    }
}

fn bucket_index(ts: Timestamp, period: u64) -> u64 {
    ts.0.div_ceil(period).max(1)
}

/// Default aggregation period (hourly).
pub const DEFAULT_PERIOD: u64 = 3600;

/// Combines sorted `(ts, value)` points into one value per bucket.
///
/// The output covers every bucket from the first to the last point (or the
/// explicit span). Empty input yields an empty output unless a span is given
/// in `Sum` mode, in which case the span is zero-filled.
pub fn aggregate(points: &[Point], bucketing: impl Into<Bucketing>, mode: AggregationMode) -> Result<Vec<Point>> {
    let bucketing = bucketing.into();
    let period = bucketing.period;
    if period == 0 {
        return Err(Error::invalid("aggregation period must be positive"));
    }
    if let Some(w) = points.windows(2).find(|w| w[1].0 < w[0].0) {
        return Err(Error::invalid(format!("points not sorted at timestamp {}", w[1].0)));
    }
    let (first, last) = match (bucketing.span, points.first(), points.last()) {
        (Some(span), _, _) => (bucket_index(span.0, period), bucket_index(span.1, period)),
        (None, Some(a), Some(b)) => (bucket_index(a.0, period), bucket_index(b.0, period)),
        _ => return Ok(Vec::new()),
    };
    if last < first {
        return Ok(Vec::new());
    }

    let n_buckets = (last - first + 1) as usize;
    let mut sums = vec![0.0; n_buckets];
    let mut counts = vec![0u32; n_buckets];
    let mut lasts: Vec<Option<f64>> = vec![None; n_buckets];
    for &(ts, v) in points {
        let idx = bucket_index(ts, period);
        if idx < first || idx > last {
            continue;
        }
        let k = (idx - first) as usize;
        sums[k] += v;
        counts[k] += 1;
        lasts[k] = Some(v);
    }

    let label = |k: usize| Timestamp((first + k as u64) * period);
    let out = match mode {
        AggregationMode::Sum => (0..n_buckets).map(|k| (label(k), sums[k])).collect(),
        AggregationMode::Last | AggregationMode::Mean => {
            let value_at = |k: usize| -> Option<f64> {
                match mode {
                    AggregationMode::Last => lasts[k],
                    _ if counts[k] > 0 => Some(sums[k] / f64::from(counts[k])),
                    _ => None,
                }
            };
            let Some(first_value) = (0..n_buckets).find_map(value_at) else {
                return Ok(Vec::new());
            };
            // leading empty buckets take the first observed value
            let mut carry = first_value;
            (0..n_buckets)
                .map(|k| {
                    if let Some(v) = value_at(k) {
                        carry = v;
                    }
                    (label(k), carry)
                })
                .collect()
        }
    };
    Ok(out)
}

/// `ln(v[k+1] / v[k])` for consecutive points, stamped at the later point.
pub fn log_diff(series: &MetricSeries) -> Result<MetricSeries> {
    if let Some((ts, v)) = series.points.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::domain(format!(
            "log_diff of {}: non-positive value {v} at {ts}",
            series.metric_name
        )));
    }
    let points = series
        .points
        .windows(2)
        .map(|w| (w[1].0, (w[1].1 / w[0].1).ln()))
        .collect();
    Ok(series.with_points(points))
}

/// First differences `v[k+1] - v[k]`, stamped at the later point.
pub fn diff(series: &MetricSeries) -> MetricSeries {
    let points = series.points.windows(2).map(|w| (w[1].0, w[1].1 - w[0].1)).collect();
    series.with_points(points)
}

/// Mean and standard deviation fitted on a training slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation (divisor `N`) of the series values.
pub fn fit_stats(series: &MetricSeries) -> Result<FitStats> {
    if series.is_empty() {
        return Err(Error::invalid(format!(
            "cannot fit statistics on empty series {}",
            series.metric_name
        )));
    }
    let n = series.len() as f64;
    let mean = series.values().sum::<f64>() / n;
    let var = series.values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(FitStats { mean, std: var.sqrt() })
}

pub fn standardize(series: &MetricSeries, ref_mean: f64, ref_std: f64) -> Result<MetricSeries> {
    if !(ref_std > 0.0) || !ref_std.is_finite() || !ref_mean.is_finite() {
        return Err(Error::domain(format!(
            "standardize requires finite mean and positive std, got ({ref_mean}, {ref_std})"
        )));
    }
    let points = series
        .points
        .iter()
        .map(|&(t, v)| (t, (v - ref_mean) / ref_std))
        .collect();
    Ok(series.with_points(points))
}

pub fn destandardize(series: &MetricSeries, ref_mean: f64, ref_std: f64) -> MetricSeries {
    let points = series
        .points
        .iter()
        .map(|&(t, v)| (t, v * ref_std + ref_mean))
        .collect();
    series.with_points(points)
}
