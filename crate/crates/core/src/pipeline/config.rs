//! JSON configuration: pool registry, price sources and stage settings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bocd::DetectorConfig;
use crate::error::{Error, Result};
use crate::evaluation::{GridSpace, ScoringConfig};
use crate::metrics::MetricConfig;
use crate::model::{normalize_address, Timestamp, TokenId, DEFAULT_PERIOD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRegistryEntry {
    pub pool_id: String,
    #[serde(default)]
    pub name: String,
    /// 40 hex characters; synthetic pools may leave it out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    pub tokens: Vec<String>,
    pub amp: f64,
    pub fee: f64,
    /// Token whose flows, sharks and PIN are reported; the first token if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_token: Option<String>,
}

impl PoolRegistryEntry {
    pub fn token_ids(&self) -> Result<Vec<TokenId>> {
        self.tokens.iter().map(TokenId::new).collect()
    }

    pub fn tracked(&self) -> Result<TokenId> {
        TokenId::new(self.tracked_token.as_deref().unwrap_or(&self.tokens[0]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_id.is_empty() {
            return Err(Error::invalid("pool_id must be non-empty"));
        }
        if self.tokens.len() < 2 {
            return Err(Error::invalid(format!(
                "pool {} needs at least two tokens",
                self.pool_id
            )));
        }
        let unique: BTreeSet<&String> = self.tokens.iter().collect();
        if unique.len() != self.tokens.len() {
            return Err(Error::invalid(format!("pool {} lists a token twice", self.pool_id)));
        }
        if let Some(a) = &self.address {
            normalize_address(a)?;
        }
        if let Some(t) = &self.tracked_token {
            if !self.tokens.contains(t) {
                return Err(Error::invalid(format!(
                    "tracked token {t} is not in pool {}",
                    self.pool_id
                )));
            }
        }
        crate::stableswap::PoolState::new(vec![1.0; self.tokens.len()], self.amp, self.fee, 0.0)?;
        self.token_ids()?;
        Ok(())
    }
}

pub const PROVIDERS: [&str; 3] = ["ccxt", "chainlink", "file"];

/// Token symbol → `[provider, locator]`, as in a `token_exchange_map` listing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceSourceMap(pub BTreeMap<String, (String, String)>);

impl PriceSourceMap {
    pub fn validate(&self) -> Result<()> {
        for (token, (provider, _)) in &self.0 {
            if !PROVIDERS.contains(&provider.as_str()) {
                return Err(Error::invalid(format!(
                    "token {token}: unknown price provider {provider:?} (expected one of {PROVIDERS:?})"
                )));
            }
        }
        Ok(())
    }

    /// Error for a token without samples in prices.csv.
    pub fn missing(&self, token: &str) -> Error {
        match self.0.get(token) {
            Some((provider, _)) if provider != "file" => Error::Offline {
                token: token.to_string(),
                provider: provider.clone(),
            },
            _ => Error::MissingPrice(token.to_string()),
        }
    }
}

fn default_period() -> u64 {
    DEFAULT_PERIOD
}

fn default_price_threshold() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pools: Vec<PoolRegistryEntry>,
    #[serde(default)]
    pub token_exchange_map: PriceSourceMap,
    /// Aggregation period, seconds.
    #[serde(default = "default_period")]
    pub period: u64,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub grid: GridSpace,
    /// Price level whose downward crossings anchor the lead-time report.
    #[serde(default = "default_price_threshold")]
    pub price_threshold: f64,
    /// Last timestamp of the slice used to fit standardisation and tune.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_until: Option<Timestamp>,
}

impl PipelineConfig {
    pub fn new(pools: Vec<PoolRegistryEntry>) -> Self {
        PipelineConfig {
            pools,
            token_exchange_map: PriceSourceMap::default(),
            period: DEFAULT_PERIOD,
            metrics: MetricConfig::default(),
            detector: DetectorConfig::default(),
            scoring: ScoringConfig::default(),
            grid: GridSpace::default(),
            price_threshold: default_price_threshold(),
            train_until: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::invalid("period must be positive"));
        }
        let mut seen = BTreeSet::new();
        for p in &self.pools {
            p.validate()?;
            if !seen.insert(&p.pool_id) {
                return Err(Error::invalid(format!("duplicate pool_id {}", p.pool_id)));
            }
        }
        self.token_exchange_map.validate()?;
        self.metrics.validate()?;
        self.detector.validate()?;
        self.scoring.validate()?;
        Ok(())
    }

    pub fn pool(&self, pool_id: &str) -> Result<&PoolRegistryEntry> {
        self.pools
            .iter()
            .find(|p| p.pool_id == pool_id)
            .ok_or_else(|| Error::invalid(format!("unknown pool_id {pool_id}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
