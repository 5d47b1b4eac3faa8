//! StableSwap invariant mathematics in binary floating point.
//!
//! The canonical invariant for `n` balances `x_i`, amplification `A` and
//! invariant constant `D` is
//!
//! ```text
//! A n^n Σx_i + D = A D n^n + D^{n+1} / (n^n Π x_i)
//! ```
//!
//! Residuals are reported in token units: the invariant's value at `D`
//! divided by its derivative with respect to `D`, i.e. the distance of `D`
//! from the exact root to first order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

pub const MAX_FEE: f64 = 0.01;
const MAX_NEWTON_ITERATIONS: usize = 255;
const D_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub balances: Vec<f64>,
    pub amp: f64,
    /// Fraction of the swap output retained by the pool.
    pub fee: f64,
    pub lp_supply: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSolution {
    pub d: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl PoolState {
    pub fn new(balances: Vec<f64>, amp: f64, fee: f64, lp_supply: f64) -> Result<Self> {
        let state = PoolState {
            balances,
            amp,
            fee,
            lp_supply,
        };
        state.validate()?;
        Ok(state)
    }

    /// A pool whose LP supply equals its invariant, so the virtual price is 1.
    pub fn fresh(balances: Vec<f64>, amp: f64, fee: f64) -> Result<Self> {
        let mut state = PoolState::new(balances, amp, fee, 0.0)?;
        state.lp_supply = compute_d(&state)?.d;
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.balances.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.balances.len() < 2 {
            return Err(Error::invalid("a pool needs at least two balances"));
        }
        if let Some(b) = self.balances.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid(format!(
                "balance {b} is not a finite non-negative amount"
            )));
        }
        if !(self.amp > 0.0) || !self.amp.is_finite() {
            return Err(Error::invalid(format!(
                "amplification must be positive, got {}",
                self.amp
            )));
        }
        if !(0.0..=MAX_FEE).contains(&self.fee) {
            return Err(Error::invalid(format!("fee {} outside [0, {MAX_FEE}]", self.fee)));
        }
        if !(self.lp_supply >= 0.0) || !self.lp_supply.is_finite() {
            return Err(Error::invalid(format!(
                "lp_supply {} must be non-negative",
                self.lp_supply
            )));
        }
        Ok(())
    }

    fn ann(&self) -> f64 {
        self.amp * (self.n() as f64).powi(self.n() as i32)
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        if i == j {
            return Err(Error::invalid(format!("swap indices must differ, got {i} twice")));
        }
        if i >= self.n() || j >= self.n() {
            return Err(Error::invalid(format!(
                "token index out of range for a {}-token pool",
                self.n()
            )));
        }
        Ok(())
    }
}

/// `D^{n+1} / (n^n Π x_i)`, evaluated as a running product to avoid overflow.
fn d_product(balances: &[f64], d: f64) -> f64 {
    let n = balances.len() as f64;
    balances.iter().fold(d, |acc, x| acc * d / (n * x))
}

fn invariant_value(balances: &[f64], ann: f64, d: f64) -> f64 {
    let sum: f64 = balances.iter().sum();
    ann * (sum - d) + d - d_product(balances, d)
}

fn invariant_slope(balances: &[f64], ann: f64, d: f64) -> f64 {
    let n = balances.len() as f64;
    1.0 - ann - (n + 1.0) * d_product(balances, d) / d
}

/// First-order distance (token units) between `d` and the invariant's root for
/// the given balances.
pub fn invariant_residual(state: &PoolState, d: f64) -> f64 {
    let ann = state.ann();
    (invariant_value(&state.balances, ann, d) / invariant_slope(&state.balances, ann, d)).abs()
}

/// Solves the invariant for `D`.
///
/// Newton from `D₀ = Σx`; if Newton leaves the bracket `[n·(Πx)^{1/n}, Σx]` or
/// fails to settle, bisection on that bracket takes over.
pub fn compute_d(state: &PoolState) -> Result<InvariantSolution> {
    state.validate()?;
    if let Some(pos) = state.balances.iter().position(|b| *b <= 0.0) {
        return Err(Error::domain(format!("balance {pos} is zero; D is undefined")));
    }
    let balances = &state.balances;
    let n = balances.len() as f64;
    let ann = state.ann();
    let sum: f64 = balances.iter().sum();
    let geo = (balances.iter().map(|x| x.ln()).sum::<f64>() / n).exp();
    let lo = n * geo * (1.0 - 1e-12);
    let hi = sum;

    let mut d = sum;
    for iteration in 1..=MAX_NEWTON_ITERATIONS {
        let dp = d_product(balances, d);
        if ann * (sum - d) + d - dp == 0.0 {
            return Ok(InvariantSolution {
                d,
                iterations: iteration - 1,
                residual: 0.0,
            });
        }
        let next = (ann * sum + n * dp) * d / ((ann - 1.0) * d + (n + 1.0) * dp);
        if !next.is_finite() || next < lo || next > hi * (1.0 + 1e-12) {
            break;
        }
        let delta = (next - d).abs();
        d = next;
        if delta < D_TOLERANCE * d {
            return Ok(InvariantSolution {
                d,
                iterations: iteration,
                residual: invariant_residual(state, d),
            });
        }
    }
    bisect_d(state, lo, hi)
}

fn bisect_d(state: &PoolState, mut lo: f64, mut hi: f64) -> Result<InvariantSolution> {
    let ann = state.ann();
    let f = |d: f64| invariant_value(&state.balances, ann, d);
    // f is non-negative at the lower end and non-positive at the upper end
    let mut iterations = 0;
    while iterations < 400 && hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let d = 0.5 * (lo + hi);
    let residual = invariant_residual(state, d);
    if !(residual < D_TOLERANCE * d) {
        return Err(Error::NoConvergence {
            solver: "compute_d",
            iterations: MAX_NEWTON_ITERATIONS + iterations,
            residual,
        });
    }
    Ok(InvariantSolution {
        d,
        iterations: MAX_NEWTON_ITERATIONS + iterations,
        residual,
    })
}

/// Balance of token `j` that keeps the invariant at `d` given all other balances.
fn solve_balance(balances: &[f64], ann: f64, j: usize, d: f64) -> f64 {
    let n = balances.len() as f64;
    let mut others_sum = 0.0;
    let mut c = d;
    for (k, x) in balances.iter().enumerate() {
        if k != j {
            others_sum += x;
            c *= d / (n * x);
        }
    }
    c *= d / (n * ann);
    let b = others_sum + d / ann - d;
    // y² + b·y − c = 0, positive root, cancellation-free form
    let disc = (b * b + 4.0 * c).sqrt();
    let y = if b >= 0.0 {
        2.0 * c / (b + disc)
    } else {
        0.5 * (disc - b)
    };
    y - (y * y + b * y - c) / (2.0 * y + b)
}

/// Balance of token `j` that keeps the invariant at `d`, if positive.
pub(crate) fn solve_balance_at(balances: &[f64], amp: f64, j: usize, d: f64) -> Option<f64> {
    let n = balances.len();
    let y = solve_balance(balances, amp * (n as f64).powi(n as i32), j, d);
    (y > 0.0 && y.is_finite()).then_some(y)
}

/// Raw (pre-fee) output for a signed input `dx` with a known invariant.
fn raw_output(state: &PoolState, d: f64, i: usize, j: usize, dx: f64) -> Result<f64> {
    let mut balances = state.balances.clone();
    balances[i] += dx;
    if !(balances[i] > 0.0) {
        return Err(Error::InfeasibleSwap(format!(
            "input balance of token {i} would not stay positive"
        )));
    }
    let y = solve_balance(&balances, state.ann(), j, d);
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::InfeasibleSwap(format!(
            "selling {dx} of token {i} drains token {j}"
        )));
    }
    Ok(state.balances[j] - y)
}

pub(crate) fn get_dy_with_d(state: &PoolState, d: f64, i: usize, j: usize, dx: f64) -> Result<f64> {
    state.check_index(i, j)?;
    if !(dx >= 0.0) || !dx.is_finite() {
        return Err(Error::invalid(format!("swap input must be non-negative, got {dx}")));
    }
    if dx == 0.0 {
        return Ok(0.0);
    }
    let raw = raw_output(state, d, i, j, dx)?.max(0.0);
    Ok(raw * (1.0 - state.fee))
}

/// Output of token `j` received for selling `dx` of token `i`, after fees.
pub fn get_dy(state: &PoolState, i: usize, j: usize, dx: f64) -> Result<f64> {
    state.check_index(i, j)?;
    if dx == 0.0 {
        return Ok(0.0);
    }
    let d = compute_d(state)?.d;
    get_dy_with_d(state, d, i, j, dx)
}

/// Executes a swap on a copy of `state`, returning the new state and the output
/// amount. The fee stays in the pool.
pub fn apply_swap(state: &PoolState, i: usize, j: usize, dx: f64) -> Result<(PoolState, f64)> {
    let dy = get_dy(state, i, j, dx)?;
    let mut next = state.clone();
    next.balances[i] += dx;
    next.balances[j] -= dy;
    Ok((next, dy))
}

pub fn virtual_price(state: &PoolState) -> Result<f64> {
    if !(state.lp_supply > 0.0) {
        return Err(Error::domain("virtual price needs a positive LP supply"));
    }
    Ok(compute_d(state)?.d / state.lp_supply)
}

/// Market value of one LP token: `⟨x, p⟩ / lp_supply`.
pub fn lp_share_price(state: &PoolState, tokens: &[TokenId], prices: &HashMap<TokenId, f64>) -> Result<f64> {
    if tokens.len() != state.n() {
        return Err(Error::invalid(format!(
            "{} token ids for a {}-token pool",
            tokens.len(),
            state.n()
        )));
    }
    let mut px = Vec::with_capacity(tokens.len());
    for t in tokens {
        px.push(*prices.get(t).ok_or_else(|| Error::MissingPrice(t.symbol.clone()))?);
    }
    share_price_from(&state.balances, &px, state.lp_supply)
}

pub fn share_price_from(balances: &[f64], prices: &[f64], lp_supply: f64) -> Result<f64> {
    if !(lp_supply > 0.0) {
        return Err(Error::domain("LP share price needs a positive LP supply"));
    }
    let value: f64 = balances.iter().zip(prices).map(|(x, p)| x * p).sum();
    Ok(value / lp_supply)
}

/// Leverage parameter `χ = A Πx_i / (D/n)^n`.
pub fn leverage_chi(state: &PoolState) -> Result<f64> {
    let d = compute_d(state)?.d;
    let n = state.n() as f64;
    Ok(state.balances.iter().fold(state.amp, |acc, x| acc * x * n / d))
}

/// Units of token `j` per unit of token `i` for an infinitesimal swap at zero
/// fee, by central finite difference with step `1e-6·x_i`.
pub fn marginal_price(state: &PoolState, i: usize, j: usize) -> Result<f64> {
    state.check_index(i, j)?;
    let d = compute_d(state)?.d;
    let h = 1e-6 * state.balances[i];
    let up = raw_output(state, d, i, j, h)?;
    let down = raw_output(state, d, i, j, -h)?;
    Ok((up - down) / (2.0 * h))
}

/// Closed-form marginal price from implicit differentiation of the invariant,
/// `(Ann + D_P/x_i) / (Ann + D_P/x_j)` at a known `D`.
pub fn spot_price_with_d(state: &PoolState, d: f64, i: usize, j: usize) -> f64 {
    let ann = state.ann();
    let dp = d_product(&state.balances, d);
    (ann + dp / state.balances[i]) / (ann + dp / state.balances[j])
}
