//! Seeded synthetic StableSwap markets with planted depegs.
//!
//! Every random draw comes from ChaCha8 seeded with the scenario seed, with a
//! separate stream per purpose, so outputs are identical across platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LiquidityEvent, MetricSeries, PriceSample, Timestamp, TokenId, TradeEvent};
use crate::stableswap::{self, PoolState};

pub const RNG_NAME: &str = "chacha8";

// stream ids; price walks use PRICE_STREAM + token index
const PRICE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 1000;
const LP_STREAM: u64 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub pool_id: String,
    pub tokens: Vec<String>,
    pub balances: Vec<f64>,
    pub amp: f64,
    pub fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepegEvent {
    pub token: String,
    /// Seconds after the scenario start.
    pub start: u64,
    pub target: f64,
    /// Seconds for the log-linear move from peg to target.
    pub ramp: u64,
    /// Seconds spent at the target before a ramp of equal length back to peg.
    #[serde(default)]
    pub recovery: Option<u64>,
}

fn default_informed_fraction() -> f64 {
    0.005
}
fn default_noise_prob() -> f64 {
    0.5
}
fn default_noise_size() -> f64 {
    1e-4
}
fn default_lp_prob() -> f64 {
    0.02
}
fn default_lp_size() -> f64 {
    0.01
}
fn default_period() -> u64 {
    3600
}
fn default_start() -> u64 {
    1_640_995_200
}
fn default_rng() -> String {
    RNG_NAME.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: u64,
    pub step: u64,
    pub pool: PoolSpec,
    pub peg_prices: BTreeMap<String, f64>,
    #[serde(default)]
    pub depeg_events: Vec<DepegEvent>,
    /// Per-step σ of the log external price.
    pub noise_vol: f64,
    /// Minimum relative gap between pool and external price before arbitrage.
    pub arb_threshold: f64,
    pub n_noise_traders: usize,
    pub n_informed: usize,
    pub informed_lead: u64,
    /// Share of the depegging token's pool balance sold per step by all informed traders together.
    #[serde(default = "default_informed_fraction")]
    pub informed_fraction: f64,
    /// Chance that a noise trader trades in a given step.
    #[serde(default = "default_noise_prob")]
    pub noise_trade_prob: f64,
    /// Mean noise trade as a share of the sold token's balance.
    #[serde(default = "default_noise_size")]
    pub noise_trade_size: f64,
    #[serde(default = "default_lp_prob")]
    pub lp_event_prob: f64,
    /// Largest LP deposit or withdrawal as a share of the pool.
    #[serde(default = "default_lp_size")]
    pub lp_event_size: f64,
    /// Reserve snapshot interval, seconds.
    #[serde(default = "default_period")]
    pub period: u64,
    #[serde(default = "default_start")]
    pub start_ts: u64,
    #[serde(default = "default_rng")]
    pub rng: String,
}

impl ScenarioConfig {
    /// Balanced USDC/DAI pool over `days`, one optional depeg of USDC.
    pub fn two_pool(seed: u64, days: u64, depeg: Option<DepegEvent>) -> Self {
        ScenarioConfig {
            seed,
            duration: days * 86_400,
            step: 300,
            pool: PoolSpec {
                pool_id: "usdc-dai".into(),
                tokens: vec!["USDC".into(), "DAI".into()],
                balances: vec![10_000_000.0, 10_000_000.0],
                amp: 100.0,
                fee: 0.0004,
            },
            peg_prices: [("USDC".to_string(), 1.0), ("DAI".to_string(), 1.0)].into(),
            depeg_events: depeg.into_iter().collect(),
            noise_vol: 2e-5,
            arb_threshold: 0.001,
            n_noise_traders: 20,
            n_informed: 3,
            informed_lead: 6 * 3600,
            informed_fraction: default_informed_fraction(),
            noise_trade_prob: default_noise_prob(),
            noise_trade_size: default_noise_size(),
            lp_event_prob: default_lp_prob(),
            lp_event_size: default_lp_size(),
            period: default_period(),
            start_ts: default_start(),
            rng: default_rng(),
        }
    }

    pub fn token_ids(&self) -> Result<Vec<TokenId>> {
        self.pool.tokens.iter().map(TokenId::new).collect()
    }

    fn token_index(&self, symbol: &str) -> Result<usize> {
        self.pool
            .tokens
            .iter()
            .position(|t| t == symbol)
            .ok_or_else(|| Error::invalid(format!("token {symbol} is not in pool {}", self.pool.pool_id)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rng != RNG_NAME {
            return Err(Error::invalid(format!(
                "unsupported rng {:?}; only {RNG_NAME:?}",
                self.rng
            )));
        }
        if self.step == 0 || !self.duration.is_multiple_of(self.step) {
            return Err(Error::invalid("step must be positive and divide duration"));
        }
        if self.period == 0 || !self.period.is_multiple_of(self.step) {
            return Err(Error::invalid("snapshot period must be a positive multiple of step"));
        }
        if self.pool.tokens.len() != self.pool.balances.len() {
            return Err(Error::invalid("pool tokens and balances differ in length"));
        }
        PoolState::new(self.pool.balances.clone(), self.pool.amp, self.pool.fee, 0.0)?;
        self.token_ids()?;
        for t in &self.pool.tokens {
            match self.peg_prices.get(t) {
                Some(p) if *p > 0.0 && p.is_finite() => {}
                _ => return Err(Error::invalid(format!("missing or non-positive peg price for {t}"))),
            }
        }
        for e in &self.depeg_events {
            self.token_index(&e.token)?;
            if e.ramp == 0 {
                return Err(Error::invalid("depeg ramp must be positive"));
            }
            if !(e.target > 0.0) || !e.target.is_finite() {
                return Err(Error::invalid(format!(
                    "depeg target must be positive, got {}",
                    e.target
                )));
            }
        }
        let fractions = [
            ("noise_vol", self.noise_vol),
            ("arb_threshold", self.arb_threshold),
            ("informed_fraction", self.informed_fraction),
            ("noise_trade_size", self.noise_trade_size),
            ("lp_event_size", self.lp_event_size),
        ];
        for (name, v) in fractions {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("noise_trade_prob", self.noise_trade_prob),
            ("lp_event_prob", self.lp_event_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.informed_fraction >= 1.0 || self.lp_event_size >= 1.0 {
            return Err(Error::invalid("informed_fraction and lp_event_size must be below 1"));
        }
        Ok(())
    }

    fn n_steps(&self) -> u64 {
        self.duration / self.step
    }
}

/// Multiplier on the peg from the event schedule at `offset` seconds.
fn depeg_factor(events: &[&DepegEvent], peg: f64, offset: u64) -> f64 {
    let mut log_factor = 0.0;
    for e in events {
        let full = (e.target / peg).ln();
        let ramp_end = e.start + e.ramp;
        let frac = if offset <= e.start {
            0.0
        } else if offset < ramp_end {
            (offset - e.start) as f64 / e.ramp as f64
        } else {
            match e.recovery {
                None => 1.0,
                Some(hold) => {
                    let back = ramp_end + hold;
                    if offset <= back {
                        1.0
                    } else if offset < back + e.ramp {
                        1.0 - (offset - back) as f64 / e.ramp as f64
                    } else {
                        0.0
                    }
                }
            }
        };
        log_factor += frac * full;
    }
    log_factor.exp()
}

/// External USD price of `token` at every step, including the start.
///
/// A geometric random walk around the peg, multiplied by any depeg ramps.
/// Once a ramp completes the level is exactly the target (times the walk).
pub fn external_price_path(cfg: &ScenarioConfig, token: &str) -> Result<MetricSeries> {
    cfg.validate()?;
    let idx = cfg.token_index(token)?;
    let peg = cfg.peg_prices[token];
    let events: Vec<&DepegEvent> = cfg.depeg_events.iter().filter(|e| e.token == token).collect();
    let mut rng = stream(cfg.seed, PRICE_STREAM + idx as u64);
    let mut walk = 0.0f64;
    let mut points = Vec::with_capacity(cfg.n_steps() as usize + 1);
    for k in 0..=cfg.n_steps() {
        if k > 0 && cfg.noise_vol > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            walk += cfg.noise_vol * z;
        }
        let offset = k * cfg.step;
        let level = match events.as_slice() {
            [e] if e.recovery.is_none() && offset >= e.start + e.ramp => e.target,
            _ => peg * depeg_factor(&events, peg, offset),
        };
        points.push((Timestamp(cfg.start_ts + offset), level * walk.exp()));
    }
    MetricSeries::new(format!("price.{token}"), cfg.pool.pool_id.clone(), points)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveSnapshot {
    pub ts: Timestamp,
    pub balances: Vec<f64>,
    pub lp_supply: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub token: String,
    pub start_ts: Timestamp,
    pub ramp_end_ts: Timestamp,
    pub target: f64,
    pub recovery_start_ts: Option<Timestamp>,
    pub informed_from_ts: Timestamp,
}

/// Ground truth written alongside a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub pool_id: String,
    pub seed: u64,
    pub rng: String,
    pub events: Vec<TruthEvent>,
    pub truncated: bool,
    /// External price per token at every step.
    pub external_prices: BTreeMap<String, Vec<(Timestamp, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub pool_id: String,
    pub tokens: Vec<TokenId>,
    pub amp: f64,
    pub fee: f64,
    pub initial: PoolState,
    pub trades: Vec<TradeEvent>,
    pub liquidity: Vec<LiquidityEvent>,
    pub reserves: Vec<ReserveSnapshot>,
    pub prices: Vec<PriceSample>,
    pub truth: Truth,
    pub final_state: PoolState,
}

struct Market<'a> {
    cfg: &'a ScenarioConfig,
    tokens: Vec<TokenId>,
    state: PoolState,
    initial: Vec<f64>,
    trades: Vec<TradeEvent>,
    liquidity: Vec<LiquidityEvent>,
}

impl Market<'_> {
    fn swap(&mut self, ts: Timestamp, trader: String, i: usize, j: usize, dx: f64) -> Result<()> {
        if !(dx > 0.0) {
            return Ok(());
        }
        let (next, dy) = stableswap::apply_swap(&self.state, i, j, dx)?;
        if !(dy > 0.0) {
            return Ok(());
        }
        self.state = next;
        self.trades.push(TradeEvent {
            ts,
            trader,
            token_in: self.tokens[i].clone(),
            amount_in: dx,
            token_out: self.tokens[j].clone(),
            amount_out: dy,
        });
        Ok(())
    }

    fn drained(&self) -> bool {
        self.state
            .balances
            .iter()
            .zip(&self.initial)
            .any(|(b, b0)| *b < 1e-3 * b0)
    }

    /// Sells the token the pool overprices relative to the external market
    /// until the post-fee marginal price meets the external ratio.
    fn arbitrage(&mut self, ts: Timestamp, ext: &[f64]) -> Result<()> {
        let n = self.state.n();
        for _ in 0..n.saturating_sub(1) {
            let d = stableswap::compute_d(&self.state)?.d;
            let fee_keep = 1.0 - self.state.fee;
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    // units of j the pool pays per unit of i, against the market rate
                    let gap = stableswap::spot_price_with_d(&self.state, d, i, j) * fee_keep / (ext[i] / ext[j]);
                    if gap > 1.0 + self.cfg.arb_threshold && best.is_none_or(|b| gap > b.2) {
                        best = Some((i, j, gap));
                    }
                }
            }
            let Some((i, j, _)) = best else {
                return Ok(());
            };
            let target = ext[i] / ext[j] / fee_keep;
            let dx = self.arb_size(d, i, j, target);
            if dx > 0.0 {
                self.swap(ts, "arb-0".into(), i, j, dx)?;
            }
        }
        Ok(())
    }

    fn arb_size(&self, d: f64, i: usize, j: usize, target: f64) -> f64 {
        let spot_after = |dx: f64| -> Option<f64> {
            let mut probe = self.state.clone();
            probe.balances[i] += dx;
            // y on the current invariant, then the closed-form spot price
            let y = stableswap::solve_balance_at(&probe.balances, probe.amp, j, d)?;
            probe.balances[j] = y;
            Some(stableswap::spot_price_with_d(&probe, d, i, j))
        };
        let mut hi = 0.01 * self.state.balances[i];
        let cap = 100.0 * self.state.balances.iter().sum::<f64>();
        while spot_after(hi).is_some_and(|p| p > target) {
            hi *= 2.0;
            if hi > cap {
                return 0.0;
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if spot_after(mid).is_some_and(|p| p > target) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn provide(&mut self, ts: Timestamp, provider: String, fraction: f64) {
        let deltas: Vec<(TokenId, f64)> = self
            .tokens
            .iter()
            .zip(&self.state.balances)
            .map(|(t, b)| (t.clone(), fraction * b))
            .collect();
        let lp_delta = fraction * self.state.lp_supply;
        for (b, (_, d)) in self.state.balances.iter_mut().zip(&deltas) {
            *b += d;
        }
        self.state.lp_supply += lp_delta;
        self.liquidity.push(LiquidityEvent {
            ts,
            provider,
            deltas,
            lp_token_delta: lp_delta,
        });
    }
}

/// Runs the agent loop. Per step: informed sellers, arbitrage against the
/// external prices, noise traders, then an occasional LP event. Reserves are
/// snapshotted at the start and after every `period`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let tokens = cfg.token_ids()?;
    let n = tokens.len();
    let paths = cfg
        .pool
        .tokens
        .iter()
        .map(|t| external_price_path(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let initial = PoolState::fresh(cfg.pool.balances.clone(), cfg.pool.amp, cfg.pool.fee)?;
    let event_index: Vec<(usize, &DepegEvent)> = cfg
        .depeg_events
        .iter()
        .map(|e| cfg.token_index(&e.token).map(|k| (k, e)))
        .collect::<Result<_>>()?;

    let mut market = Market {
        cfg,
        tokens: tokens.clone(),
        state: initial.clone(),
        initial: cfg.pool.balances.clone(),
        trades: Vec::new(),
        liquidity: Vec::new(),
    };
    let mut noise_rng = stream(cfg.seed, NOISE_STREAM);
    let mut lp_rng = stream(cfg.seed, LP_STREAM);
    let mut reserves = vec![ReserveSnapshot {
        ts: Timestamp(cfg.start_ts),
        balances: initial.balances.clone(),
        lp_supply: initial.lp_supply,
    }];
    let mut prices = Vec::with_capacity(paths.len() * (cfg.n_steps() as usize + 1));
    let mut truncated = false;
    let mut last_step = 0;

    for k in 0..=cfg.n_steps() {
        let offset = k * cfg.step;
        let ts = Timestamp(cfg.start_ts + offset);
        let ext: Vec<f64> = paths.iter().map(|p| p.points[k as usize].1).collect();
        for (tok, p) in tokens.iter().zip(&ext) {
            prices.push(PriceSample {
                ts,
                token: tok.clone(),
                usd_price: *p,
            });
        }
        last_step = k;
        if k == 0 {
            continue;
        }

        let outcome = (|| -> Result<()> {
            for &(kt, e) in &event_index {
                if cfg.n_informed > 0 && offset + cfg.informed_lead >= e.start + cfg.step && offset < e.start + cfg.step
                {
                    let partner = (0..n)
                        .filter(|&j| j != kt)
                        .max_by(|&a, &b| market.state.balances[a].total_cmp(&market.state.balances[b]))
                        .expect("pool has two tokens");
                    let each = cfg.informed_fraction * market.state.balances[kt] / cfg.n_informed as f64;
                    for m in 0..cfg.n_informed {
                        market.swap(ts, format!("informed-{m}"), kt, partner, each)?;
                    }
                }
            }
            market.arbitrage(ts, &ext)?;
            for m in 0..cfg.n_noise_traders {
                if noise_rng.random::<f64>() >= cfg.noise_trade_prob {
                    continue;
                }
                let i = noise_rng.random_range(0..n);
                let j = (i + noise_rng.random_range(1..n)) % n;
                let size = cfg.noise_trade_size * 2.0 * noise_rng.random::<f64>() * market.state.balances[i];
                market.swap(ts, format!("noise-{m:02}"), i, j, size)?;
            }
            if cfg.lp_event_size > 0.0 && lp_rng.random::<f64>() < cfg.lp_event_prob {
                let provider = format!("lp-{}", lp_rng.random_range(0..4));
                let size = cfg.lp_event_size * lp_rng.random::<f64>();
                let sign = if lp_rng.random::<bool>() { 1.0 } else { -1.0 };
                if size > 0.0 {
                    market.provide(ts, provider, sign * size);
                }
            }
            Ok(())
        })();
        match outcome {
            Ok(()) if !market.drained() => {}
            Ok(()) | Err(Error::InfeasibleSwap(_)) => {
                truncated = true;
            }
            Err(e) => return Err(e),
        }
        if offset.is_multiple_of(cfg.period) || truncated {
            reserves.push(ReserveSnapshot {
                ts,
                balances: market.state.balances.clone(),
                lp_supply: market.state.lp_supply,
            });
        }
        if truncated {
            break;
        }
    }

    let external_prices = cfg
        .pool
        .tokens
        .iter()
        .zip(&paths)
        .map(|(t, p)| (t.clone(), p.points[..=last_step as usize].to_vec()))
        .collect();
    prices.retain(|p| p.ts.0 <= cfg.start_ts + last_step * cfg.step);
    let truth = Truth {
        pool_id: cfg.pool.pool_id.clone(),
        seed: cfg.seed,
        rng: cfg.rng.clone(),
        events: cfg
            .depeg_events
            .iter()
            .map(|e| TruthEvent {
                token: e.token.clone(),
                start_ts: Timestamp(cfg.start_ts + e.start),
                ramp_end_ts: Timestamp(cfg.start_ts + e.start + e.ramp),
                target: e.target,
                recovery_start_ts: e.recovery.map(|h| Timestamp(cfg.start_ts + e.start + e.ramp + h)),
                informed_from_ts: Timestamp((cfg.start_ts + e.start).saturating_sub(cfg.informed_lead)),
            })
            .collect(),
        truncated,
        external_prices,
    };
    Ok(ScenarioOutput {
        pool_id: cfg.pool.pool_id.clone(),
        tokens,
        amp: cfg.pool.amp,
        fee: cfg.pool.fee,
        initial,
        trades: market.trades,
        liquidity: market.liquidity,
        reserves,
        prices,
        truth,
        final_state: market.state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlippageRow {
    pub amp: f64,
    pub marginal_price: f64,
}

/// Marginal price of selling the abundant token at an `imbalance`:1 ratio, per A.
///
/// Token 0 holds `imbalance` times the mean balance of the pool; the others hold the mean.
pub fn slippage_experiment(pool: &PoolState, a_values: &[f64], imbalance: f64) -> Result<Vec<SlippageRow>> {
    if !(imbalance >= 1.0) || !imbalance.is_finite() {
        return Err(Error::invalid(format!("imbalance must be at least 1, got {imbalance}")));
    }
    let base = pool.balances.iter().sum::<f64>() / pool.n() as f64;
    let mut balances = vec![base; pool.n()];
    balances[0] = imbalance * base;
    a_values
        .iter()
        .map(|&amp| {
            let state = PoolState::new(balances.clone(), amp, 0.0, pool.lp_supply)?;
            Ok(SlippageRow {
                amp,
                marginal_price: stableswap::marginal_price(&state, 0, 1)?,
            })
        })
        .collect()
}
