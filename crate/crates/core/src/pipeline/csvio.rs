//! CSV schemas with fixed headers, line-numbered parsing and writers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bocd::{Changepoint, TracePoint};
use crate::error::{Error, Result};
use crate::model::{LiquidityEvent, MetricSeries, PriceSample, Timestamp, TokenId, TradeEvent};
use crate::simulator::ReserveSnapshot;

pub const TRADES_HEADER: [&str; 7] = [
    "ts",
    "pool_id",
    "trader",
    "token_in",
    "amount_in",
    "token_out",
    "amount_out",
];
pub const LIQUIDITY_HEADER: [&str; 6] = ["ts", "pool_id", "provider", "token", "delta", "lp_token_delta"];
pub const RESERVES_HEADER: [&str; 5] = ["ts", "pool_id", "token", "balance", "lp_supply"];
pub const PRICES_HEADER: [&str; 3] = ["ts", "token", "usd_price"];
pub const SERIES_HEADER: [&str; 2] = ["ts", "value"];
pub const CHANGEPOINTS_HEADER: [&str; 4] = ["ts", "step", "run_length", "probability"];
pub const RUNLENGTH_HEADER: [&str; 4] = ["ts", "step", "run_length", "probability"];
pub const LABELS_HEADER: [&str; 3] = ["ts", "pool_id", "deviation"];
pub const SCORES_HEADER: [&str; 8] = ["pool", "metric", "F", "P", "R", "alpha", "beta", "kappa"];
pub const LEAD_HEADER: [&str; 5] = ["pool", "metric", "crossing_ts", "changepoint_ts", "lead_seconds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRow {
    pub ts: u64,
    pub pool_id: String,
    pub trader: String,
    pub token_in: String,
    pub amount_in: f64,
    pub token_out: String,
    pub amount_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityRow {
    pub ts: u64,
    pub pool_id: String,
    pub provider: String,
    pub token: String,
    pub delta: f64,
    pub lp_token_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveRow {
    pub ts: u64,
    pub pool_id: String,
    pub token: String,
    pub balance: f64,
    pub lp_supply: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub ts: u64,
    pub token: String,
    pub usd_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub ts: u64,
    pub pool_id: String,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub pool: String,
    pub metric: String,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadRow {
    pub pool: String,
    pub metric: String,
    pub crossing_ts: u64,
    pub changepoint_ts: Option<u64>,
    pub lead_seconds: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    ts: u64,
    value: f64,
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// Reads every row, checking the header exactly. Returns `(line, row)` pairs.
pub fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<(u64, T)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Row {
                file: file_label(path),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let found = reader.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Row {
            file: file_label(path),
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Row {
            file: file_label(path),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: T = record.deserialize(None).map_err(|e| Error::Row {
            file: file_label(path),
            line,
            message: e.to_string(),
        })?;
        out.push((line, row));
    }
    Ok(out)
}

/// Writes a header followed by the rows; an empty slice gives a header-only file.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{}: {other:?}", file_label(path))),
        })?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn row_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Row {
        file: file_label(path),
        line,
        message: message.into(),
    }
}

/// Stable-sorts rows by timestamp after checking no row is more than
/// `tolerance` seconds older than the latest row before it.
pub fn sort_with_tolerance<T>(
    path: &Path,
    rows: &mut [(u64, T)],
    ts: impl Fn(&T) -> u64,
    tolerance: u64,
) -> Result<()> {
    let mut latest = 0u64;
    for (line, row) in rows.iter() {
        let t = ts(row);
        if t + tolerance < latest {
            return Err(row_error(
                path,
                *line,
                format!("timestamp {t} is out of order by more than {tolerance} s"),
            ));
        }
        latest = latest.max(t);
    }
    rows.sort_by_key(|(_, r)| ts(r));
    Ok(())
}

pub fn token(path: &Path, line: u64, symbol: &str) -> Result<TokenId> {
    TokenId::new(symbol).map_err(|e| row_error(path, line, e.to_string()))
}

pub fn trade_from_row(path: &Path, line: u64, r: TradeRow) -> Result<TradeEvent> {
    let t = TradeEvent {
        ts: Timestamp(r.ts),
        trader: r.trader,
        token_in: token(path, line, &r.token_in)?,
        amount_in: r.amount_in,
        token_out: token(path, line, &r.token_out)?,
        amount_out: r.amount_out,
    };
    t.validate().map_err(|e| row_error(path, line, e.to_string()))?;
    Ok(t)
}

pub fn trade_rows(pool_id: &str, trades: &[TradeEvent]) -> Vec<TradeRow> {
    trades
        .iter()
        .map(|t| TradeRow {
            ts: t.ts.0,
            pool_id: pool_id.to_string(),
            trader: t.trader.clone(),
            token_in: t.token_in.symbol.clone(),
            amount_in: t.amount_in,
            token_out: t.token_out.symbol.clone(),
            amount_out: t.amount_out,
        })
        .collect()
}

pub fn liquidity_rows(pool_id: &str, events: &[LiquidityEvent]) -> Vec<LiquidityRow> {
    events
        .iter()
        .flat_map(|e| {
            e.deltas.iter().map(move |(tok, d)| LiquidityRow {
                ts: e.ts.0,
                pool_id: pool_id.to_string(),
                provider: e.provider.clone(),
                token: tok.symbol.clone(),
                delta: *d,
                lp_token_delta: e.lp_token_delta,
            })
        })
        .collect()
}

/// Groups consecutive legs sharing `(ts, provider, lp_token_delta)` into events.
pub fn liquidity_from_rows(path: &Path, rows: Vec<(u64, LiquidityRow)>) -> Result<Vec<LiquidityEvent>> {
    let mut out: Vec<LiquidityEvent> = Vec::new();
    let mut first_line = Vec::new();
    for (line, r) in rows {
        let tok = token(path, line, &r.token)?;
        match out.last_mut() {
            Some(e)
                if e.ts.0 == r.ts
                    && e.provider == r.provider
                    && e.lp_token_delta == r.lp_token_delta
                    && !e.deltas.iter().any(|(t, _)| *t == tok) =>
            {
                e.deltas.push((tok, r.delta));
            }
            _ => {
                out.push(LiquidityEvent {
                    ts: Timestamp(r.ts),
                    provider: r.provider,
                    deltas: vec![(tok, r.delta)],
                    lp_token_delta: r.lp_token_delta,
                });
                first_line.push(line);
            }
        }
    }
    for (e, line) in out.iter().zip(first_line) {
        e.validate().map_err(|err| row_error(path, line, err.to_string()))?;
    }
    Ok(out)
}

pub fn reserve_rows(pool_id: &str, tokens: &[TokenId], snaps: &[ReserveSnapshot]) -> Vec<ReserveRow> {
    snaps
        .iter()
        .flat_map(|s| {
            tokens.iter().zip(&s.balances).map(move |(t, b)| ReserveRow {
                ts: s.ts.0,
                pool_id: pool_id.to_string(),
                token: t.symbol.clone(),
                balance: *b,
                lp_supply: s.lp_supply,
            })
        })
        .collect()
}

/// Assembles per-timestamp snapshots; every snapshot must list every pool token once.
pub fn reserves_from_rows(
    path: &Path,
    tokens: &[String],
    rows: Vec<(u64, ReserveRow)>,
) -> Result<Vec<ReserveSnapshot>> {
    let mut by_ts: BTreeMap<u64, (u64, Vec<Option<f64>>, f64)> = BTreeMap::new();
    for (line, r) in rows {
        let k = tokens
            .iter()
            .position(|t| *t == r.token)
            .ok_or_else(|| row_error(path, line, format!("token {} is not in pool {}", r.token, r.pool_id)))?;
        if !(r.balance >= 0.0) || !r.balance.is_finite() {
            return Err(row_error(
                path,
                line,
                format!("balance {} must be non-negative", r.balance),
            ));
        }
        if !(r.lp_supply > 0.0) || !r.lp_supply.is_finite() {
            return Err(row_error(
                path,
                line,
                format!("lp_supply {} must be positive", r.lp_supply),
            ));
        }
        let entry = by_ts
            .entry(r.ts)
            .or_insert_with(|| (line, vec![None; tokens.len()], r.lp_supply));
        if entry.1[k].replace(r.balance).is_some() {
            return Err(row_error(
                path,
                line,
                format!("duplicate balance for {} at {}", r.token, r.ts),
            ));
        }
        if entry.2 != r.lp_supply {
            return Err(row_error(
                path,
                line,
                format!("lp_supply differs within snapshot at {}", r.ts),
            ));
        }
    }
    by_ts
        .into_iter()
        .map(|(ts, (line, balances, lp_supply))| {
            let balances = balances
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| row_error(path, line, format!("snapshot at {ts} is missing a token balance")))?;
            Ok(ReserveSnapshot {
                ts: Timestamp(ts),
                balances,
                lp_supply,
            })
        })
        .collect()
}

pub fn price_rows(prices: &[PriceSample]) -> Vec<PriceRow> {
    prices
        .iter()
        .map(|p| PriceRow {
            ts: p.ts.0,
            token: p.token.symbol.clone(),
            usd_price: p.usd_price,
        })
        .collect()
}

pub fn price_from_row(path: &Path, line: u64, r: PriceRow) -> Result<PriceSample> {
    if !(r.usd_price > 0.0) || !r.usd_price.is_finite() {
        return Err(row_error(
            path,
            line,
            format!("usd_price {} must be positive", r.usd_price),
        ));
    }
    Ok(PriceSample {
        ts: Timestamp(r.ts),
        token: token(path, line, &r.token)?,
        usd_price: r.usd_price,
    })
}

pub fn write_series(path: &Path, series: &MetricSeries) -> Result<()> {
    let rows: Vec<SeriesRow> = series
        .points
        .iter()
        .map(|&(t, v)| SeriesRow { ts: t.0, value: v })
        .collect();
    write_rows(path, &SERIES_HEADER, &rows)
}

pub fn read_series(path: &Path, metric_name: &str, pool_id: &str) -> Result<MetricSeries> {
    let rows: Vec<(u64, SeriesRow)> = read_rows(path, &SERIES_HEADER)?;
    let mut points = Vec::with_capacity(rows.len());
    let mut prev: Option<u64> = None;
    for (line, r) in rows {
        if prev.is_some_and(|p| r.ts <= p) {
            return Err(row_error(
                path,
                line,
                format!(
                    "series timestamps must increase (found {} after {})",
                    r.ts,
                    prev.unwrap()
                ),
            ));
        }
        if !r.value.is_finite() {
            return Err(row_error(path, line, "non-finite value"));
        }
        prev = Some(r.ts);
        points.push((Timestamp(r.ts), r.value));
    }
    MetricSeries::new(metric_name, pool_id, points)
}

#[derive(Serialize)]
struct CpRow {
    ts: u64,
    step: u64,
    run_length: usize,
    probability: f64,
}

pub fn write_changepoints(path: &Path, cps: &[Changepoint]) -> Result<()> {
    let rows: Vec<CpRow> = cps
        .iter()
        .map(|c| CpRow {
            ts: c.ts.0,
            step: c.step,
            run_length: c.map_run_length,
            probability: c.probability,
        })
        .collect();
    write_rows(path, &CHANGEPOINTS_HEADER, &rows)
}

pub fn write_runlength(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let rows: Vec<CpRow> = trace
        .iter()
        .map(|c| CpRow {
            ts: c.ts.0,
            step: c.step,
            run_length: c.run_length,
            probability: c.probability,
        })
        .collect();
    write_rows(path, &RUNLENGTH_HEADER, &rows)
}

#[derive(Deserialize)]
struct CpIn {
    ts: u64,
    #[allow(dead_code)]
    step: u64,
    #[allow(dead_code)]
    run_length: usize,
    #[allow(dead_code)]
    probability: f64,
}

/// Changepoint timestamps from a changepoints.csv.
pub fn read_changepoint_times(path: &Path) -> Result<Vec<Timestamp>> {
    let rows: Vec<(u64, CpIn)> = read_rows(path, &CHANGEPOINTS_HEADER)?;
    Ok(rows.into_iter().map(|(_, r)| Timestamp(r.ts)).collect())
}
