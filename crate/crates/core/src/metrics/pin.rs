//! Probability of informed trading: mixture likelihood, multi-start MLE and a rolling estimate.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Bucketing, MetricSeries, Timestamp, TokenId, TradeEvent};

use super::PIN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinParams {
    pub alpha: f64,
    pub theta: f64,
    pub eps_i: f64,
    pub eps_b: f64,
    pub eps_s: f64,
}

impl PinParams {
    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let rate = |v: f64| v >= 0.0 && v.is_finite();
        unit(self.alpha) && unit(self.theta) && rate(self.eps_i) && rate(self.eps_b) && rate(self.eps_s)
    }
}

/// `α·ε_i / (ε_b + ε_s + α·ε_i)`.
pub fn pin_value(p: &PinParams) -> f64 {
    let informed = p.alpha * p.eps_i;
    if informed == 0.0 {
        return 0.0;
    }
    informed / (p.eps_b + p.eps_s + informed)
}

/// Buy and sell counts in one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinBucket {
    pub buys: u64,
    pub sells: u64,
}

/// Counts trades buying (`token_out`) and selling (`token_in`) the token per bucket.
pub fn pin_buckets(
    trades: &[TradeEvent],
    token: &TokenId,
    bucket: impl Into<Bucketing>,
) -> Result<Vec<(Timestamp, PinBucket)>> {
    let bucketing = bucket.into();
    let mut sorted: Vec<&TradeEvent> = trades.iter().collect();
    sorted.sort_by_key(|t| t.ts);
    let buys: Vec<_> = sorted
        .iter()
        .map(|t| (t.ts, if &t.token_out == token { 1.0 } else { 0.0 }))
        .collect();
    let sells: Vec<_> = sorted
        .iter()
        .map(|t| (t.ts, if &t.token_in == token { 1.0 } else { 0.0 }))
        .collect();
    let b = crate::model::aggregate(&buys, bucketing, crate::model::AggregationMode::Sum)?;
    let s = crate::model::aggregate(&sells, bucketing, crate::model::AggregationMode::Sum)?;
    Ok(b.into_iter()
        .zip(s)
        .map(|((ts, nb), (_, ns))| {
            (
                ts,
                PinBucket {
                    buys: nb as u64,
                    sells: ns as u64,
                },
            )
        })
        .collect())
}

fn ln_poisson(k: u64, ln_k_fact: f64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * rate.ln() - rate - ln_k_fact
}

fn ln_weight(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

struct Prepared {
    counts: Vec<(u64, f64, u64, f64)>,
}

impl Prepared {
    fn new(buckets: &[PinBucket]) -> Self {
        let lf = ln_factorial;
        Prepared {
            counts: buckets
                .iter()
                .map(|b| (b.buys, lf(b.buys), b.sells, lf(b.sells)))
                .collect(),
        }
    }

    fn log_likelihood(&self, p: &PinParams) -> f64 {
        if !p.is_valid() {
            return f64::NEG_INFINITY;
        }
        let w_buy = ln_weight(p.alpha * (1.0 - p.theta));
        let w_sell = ln_weight(p.alpha * p.theta);
        let w_none = ln_weight(1.0 - p.alpha);
        self.counts
            .iter()
            .map(|&(b, lfb, s, lfs)| {
                let base_b = ln_poisson(b, lfb, p.eps_b);
                let base_s = ln_poisson(s, lfs, p.eps_s);
                log_sum_exp3(
                    w_buy + ln_poisson(b, lfb, p.eps_i + p.eps_b) + base_s,
                    w_sell + base_b + ln_poisson(s, lfs, p.eps_i + p.eps_s),
                    w_none + base_b + base_s,
                )
            })
            .sum()
    }
}

/// Log-likelihood of the bucket counts under the three-branch mixture.
///
/// Branch weights are `α(1−θ)` (informed buying), `αθ` (informed selling)
/// and `1−α` (no event). Invalid parameters give `−∞`.
pub fn pin_likelihood(buckets: &[PinBucket], params: &PinParams) -> f64 {
    Prepared::new(buckets).log_likelihood(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinEstimate {
    pub params: PinParams,
    pub pin: f64,
    pub log_likelihood: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn to_params(z: &[f64; 5]) -> PinParams {
    PinParams {
        alpha: logistic(z[0]),
        theta: logistic(z[1]),
        eps_i: z[2].exp(),
        eps_b: z[3].exp(),
        eps_s: z[4].exp(),
    }
}

fn to_unconstrained(p: &PinParams) -> [f64; 5] {
    [logit(p.alpha), logit(p.theta), p.eps_i.ln(), p.eps_b.ln(), p.eps_s.ln()]
}

const NM_TOL: f64 = 1e-8;
const NM_MAX_ITER: usize = 4000;

/// Minimises `f` from `x0`; returns the best vertex and its value.
fn nelder_mead(f: impl Fn(&[f64; 5]) -> f64, x0: [f64; 5], step: f64) -> ([f64; 5], f64) {
    let mut simplex: Vec<([f64; 5], f64)> = Vec::with_capacity(6);
    simplex.push((x0, f(&x0)));
    for d in 0..5 {
        let mut x = x0;
        x[d] += step;
        simplex.push((x, f(&x)));
    }
    let order = |s: &mut Vec<([f64; 5], f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let combine =
        |a: &[f64; 5], b: &[f64; 5], t: f64| -> [f64; 5] { std::array::from_fn(|k| a[k] + t * (b[k] - a[k])) };

    for _ in 0..NM_MAX_ITER {
        order(&mut simplex);
        if (simplex[5].1 - simplex[0].1).abs() < NM_TOL {
            break;
        }
        let centroid: [f64; 5] = std::array::from_fn(|k| simplex[..5].iter().map(|v| v.0[k]).sum::<f64>() / 5.0);
        let worst = simplex[5];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            simplex[5] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[4].1 {
            simplex[5] = (reflected, fr);
        } else {
            let (target, ft) = if fr < worst.1 { (reflected, fr) } else { worst };
            let contracted = combine(&centroid, &target, 0.5);
            let fc = f(&contracted);
            if fc < ft {
                simplex[5] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    v.0 = combine(&best, &v.0, 0.5);
                    v.1 = f(&v.0);
                }
            }
        }
    }
    order(&mut simplex);
    simplex[0]
}

fn starts(buckets: &[PinBucket]) -> Vec<PinParams> {
    let n = buckets.len() as f64;
    let mean_b = buckets.iter().map(|b| b.buys as f64).sum::<f64>() / n;
    let mean_s = buckets.iter().map(|b| b.sells as f64).sum::<f64>() / n;
    let floor = |v: f64| v.max(0.5);
    let mut out = Vec::with_capacity(8);
    for alpha in [0.1, 0.5] {
        for theta in [0.1, 0.5] {
            // all excess activity informed, or a split of the mean rate
            let excess = (mean_b - mean_s).abs().max(1.0) / alpha;
            out.push(PinParams {
                alpha,
                theta,
                eps_i: floor(excess),
                eps_b: floor(mean_b.min(mean_s)),
                eps_s: floor(mean_b.min(mean_s)),
            });
            let half = 0.5 * (mean_b + mean_s);
            out.push(PinParams {
                alpha,
                theta,
                eps_i: floor(0.5 * half),
                eps_b: floor(mean_b),
                eps_s: floor(mean_s),
            });
        }
    }
    out
}

/// Maximum-likelihood PIN from at least two buckets, via multi-start simplex search.
pub fn estimate_pin(buckets: &[PinBucket]) -> Result<PinEstimate> {
    if buckets.len() < 2 {
        return Err(Error::invalid("PIN estimation needs at least two buckets"));
    }
    let prepared = Prepared::new(buckets);
    let objective = |z: &[f64; 5]| {
        let ll = prepared.log_likelihood(&to_params(z));
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let mut best: Option<([f64; 5], f64)> = None;
    for start in starts(buckets) {
        let z0 = to_unconstrained(&start);
        if !objective(&z0).is_finite() {
            continue;
        }
        let (z, v) = nelder_mead(objective, z0, 0.5);
        // one restart from the optimum guards against a collapsed simplex
        let (z, v) = {
            let (z2, v2) = nelder_mead(objective, z, 0.1);
            if v2 < v {
                (z2, v2)
            } else {
                (z, v)
            }
        };
        if v.is_finite() && best.is_none_or(|b| v < b.1) {
            best = Some((z, v));
        }
    }
    let Some((z, v)) = best else {
        return Err(Error::NoConvergence {
            solver: "PIN maximum likelihood",
            iterations: NM_MAX_ITER,
            residual: f64::INFINITY,
        });
    };
    let params = to_params(&z);
    Ok(PinEstimate {
        params,
        pin: pin_value(&params),
        log_likelihood: -v,
    })
}

/// PIN estimated over each trailing window of `window` buckets.
pub fn rolling_pin(buckets: &[(Timestamp, PinBucket)], window: usize, exec: Execution) -> Result<MetricSeries> {
    if window < 2 {
        return Err(Error::invalid("PIN window must cover at least two buckets"));
    }
    if buckets.len() < window {
        return MetricSeries::new(PIN, "", Vec::new());
    }
    let counts: Vec<PinBucket> = buckets.iter().map(|b| b.1).collect();
    let estimates = exec.map_range(window - 1..buckets.len(), |end| {
        estimate_pin(&counts[end + 1 - window..=end]).map(|e| (buckets[end].0, e.pin))
    });
    MetricSeries::new(PIN, "", estimates.into_iter().collect::<Result<Vec<_>>>()?)
}
