//! File formats, ingestion and the end-to-end stages behind the `depeg` command.

mod config;
pub mod csvio;
mod manifest;
mod stages;

use std::collections::BTreeMap;
use std::path::Path;

pub use config::{read_json, write_json};
pub use config::{PipelineConfig, PoolRegistryEntry, PriceSourceMap, PROVIDERS};
pub use manifest::{digest_file, verify_manifest, RunManifest, TOOL_VERSION};
pub use stages::*;

use crate::error::{Error, Result};
use crate::model::{LiquidityEvent, PriceSample, TokenId, TradeEvent};
use crate::simulator::{ReserveSnapshot, ScenarioConfig, ScenarioOutput};
use csvio::*;

pub const TRADES_FILE: &str = "trades.csv";
pub const LIQUIDITY_FILE: &str = "liquidity.csv";
pub const RESERVES_FILE: &str = "reserves.csv";
pub const PRICES_FILE: &str = "prices.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SCENARIO_FILE: &str = "scenario.json";

/// Event streams of one registered pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolData {
    pub entry: PoolRegistryEntry,
    pub tokens: Vec<TokenId>,
    pub trades: Vec<TradeEvent>,
    pub liquidity: Vec<LiquidityEvent>,
    pub reserves: Vec<ReserveSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pools: Vec<PoolData>,
    pub prices: Vec<PriceSample>,
}

impl Dataset {
    pub fn pool(&self, pool_id: &str) -> Result<&PoolData> {
        self.pools
            .iter()
            .find(|p| p.entry.pool_id == pool_id)
            .ok_or_else(|| Error::invalid(format!("unknown pool_id {pool_id}")))
    }

    /// The in-memory equivalent of writing a scenario and ingesting it back.
    pub fn from_scenario(out: &ScenarioOutput, scenario: &ScenarioConfig) -> Dataset {
        Dataset {
            pools: vec![PoolData {
                entry: scenario_registry(scenario),
                tokens: out.tokens.clone(),
                trades: out.trades.clone(),
                liquidity: out.liquidity.clone(),
                reserves: out.reserves.clone(),
            }],
            prices: out.prices.clone(),
        }
    }
}

/// Registry entry for a simulated pool; the first depegging token is tracked.
pub fn scenario_registry(scenario: &ScenarioConfig) -> PoolRegistryEntry {
    PoolRegistryEntry {
        pool_id: scenario.pool.pool_id.clone(),
        name: scenario.pool.pool_id.clone(),
        address: None,
        tokens: scenario.pool.tokens.clone(),
        amp: scenario.pool.amp,
        fee: scenario.pool.fee,
        tracked_token: Some(
            scenario
                .depeg_events
                .first()
                .map_or_else(|| scenario.pool.tokens[0].clone(), |e| e.token.clone()),
        ),
    }
}

/// Pipeline configuration for a simulated pool, every price read from prices.csv.
pub fn scenario_pipeline_config(scenario: &ScenarioConfig) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(vec![scenario_registry(scenario)]);
    cfg.period = scenario.period;
    cfg.token_exchange_map = PriceSourceMap(
        scenario
            .pool
            .tokens
            .iter()
            .map(|t| (t.clone(), ("file".to_string(), PRICES_FILE.to_string())))
            .collect(),
    );
    cfg
}

/// Writes the four event CSVs plus truth.json, scenario.json and config.json.
/// Returns the paths written, in a fixed order.
pub fn write_scenario(out: &ScenarioOutput, scenario: &ScenarioConfig, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pool = &out.pool_id;
    let paths: Vec<_> = [
        TRADES_FILE,
        LIQUIDITY_FILE,
        RESERVES_FILE,
        PRICES_FILE,
        TRUTH_FILE,
        SCENARIO_FILE,
        CONFIG_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    write_rows(&paths[0], &TRADES_HEADER, &trade_rows(pool, &out.trades))?;
    write_rows(&paths[1], &LIQUIDITY_HEADER, &liquidity_rows(pool, &out.liquidity))?;
    write_rows(
        &paths[2],
        &RESERVES_HEADER,
        &reserve_rows(pool, &out.tokens, &out.reserves),
    )?;
    write_rows(&paths[3], &PRICES_HEADER, &price_rows(&out.prices))?;
    write_json(&paths[4], &out.truth)?;
    write_json(&paths[5], scenario)?;
    scenario_pipeline_config(scenario).save(&paths[6])?;
    Ok(paths)
}

fn check_pool(path: &Path, line: u64, pool_id: &str, index: &BTreeMap<&str, usize>) -> Result<usize> {
    index.get(pool_id).copied().ok_or_else(|| Error::Row {
        file: path.display().to_string(),
        line,
        message: format!("unknown pool_id {pool_id}"),
    })
}

fn check_pool_token(path: &Path, line: u64, pool: &PoolData, token: &TokenId) -> Result<()> {
    if pool.tokens.contains(token) {
        Ok(())
    } else {
        Err(Error::Row {
            file: path.display().to_string(),
            line,
            message: format!("token {} is not in pool {}", token.symbol, pool.entry.pool_id),
        })
    }
}

/// Reads trades, liquidity, reserves and prices CSVs from `dir`.
///
/// liquidity.csv may be absent. Rows may be out of order by at most one
/// aggregation period; they are stable-sorted by timestamp.
pub fn ingest(dir: &Path, cfg: &PipelineConfig) -> Result<Dataset> {
    cfg.validate()?;
    let tol = cfg.period;
    let mut pools = cfg
        .pools
        .iter()
        .map(|e| {
            Ok(PoolData {
                tokens: e.token_ids()?,
                entry: e.clone(),
                trades: Vec::new(),
                liquidity: Vec::new(),
                reserves: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index: BTreeMap<&str, usize> = cfg
        .pools
        .iter()
        .enumerate()
        .map(|(i, p)| (p.pool_id.as_str(), i))
        .collect();

    let path = dir.join(TRADES_FILE);
    let mut rows: Vec<(u64, TradeRow)> = read_rows(&path, &TRADES_HEADER)?;
    sort_with_tolerance(&path, &mut rows, |r| r.ts, tol)?;
    for (line, r) in rows {
        let k = check_pool(&path, line, &r.pool_id, &index)?;
        let t = trade_from_row(&path, line, r)?;
        check_pool_token(&path, line, &pools[k], &t.token_in)?;
        check_pool_token(&path, line, &pools[k], &t.token_out)?;
        pools[k].trades.push(t);
    }

    let path = dir.join(LIQUIDITY_FILE);
    if path.exists() {
        let mut rows: Vec<(u64, LiquidityRow)> = read_rows(&path, &LIQUIDITY_HEADER)?;
        sort_with_tolerance(&path, &mut rows, |r| r.ts, tol)?;
        let mut per_pool: Vec<Vec<(u64, LiquidityRow)>> = vec![Vec::new(); pools.len()];
        for (line, r) in rows {
            let k = check_pool(&path, line, &r.pool_id, &index)?;
            check_pool_token(&path, line, &pools[k], &token(&path, line, &r.token)?)?;
            per_pool[k].push((line, r));
        }
        for (pool, rows) in pools.iter_mut().zip(per_pool) {
            pool.liquidity = liquidity_from_rows(&path, rows)?;
        }
    }

    let path = dir.join(RESERVES_FILE);
    let mut rows: Vec<(u64, ReserveRow)> = read_rows(&path, &RESERVES_HEADER)?;
    sort_with_tolerance(&path, &mut rows, |r| r.ts, tol)?;
    let mut per_pool: Vec<Vec<(u64, ReserveRow)>> = vec![Vec::new(); pools.len()];
    for (line, r) in rows {
        let k = check_pool(&path, line, &r.pool_id, &index)?;
        per_pool[k].push((line, r));
    }
    for (pool, rows) in pools.iter_mut().zip(per_pool) {
        pool.reserves = reserves_from_rows(&path, &pool.entry.tokens, rows)?;
    }

    let path = dir.join(PRICES_FILE);
    let mut rows: Vec<(u64, PriceRow)> = read_rows(&path, &PRICES_HEADER)?;
    sort_with_tolerance(&path, &mut rows, |r| r.ts, tol)?;
    let prices = rows
        .into_iter()
        .map(|(line, r)| price_from_row(&path, line, r))
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset { pools, prices })
}

/// Ground truth written next to a simulated dataset.
pub fn read_truth(path: &Path) -> Result<crate::simulator::Truth> {
    read_json(path)
}

/// Reads and validates a scenario description.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let s: ScenarioConfig = read_json(path)?;
    s.validate()?;
    Ok(s)
}

/// Runs a scenario and writes its files into `dir`.
pub fn run_scenario_files(scenario: &ScenarioConfig, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let out = crate::simulator::run_scenario(scenario)?;
    write_scenario(&out, scenario, dir)
}
