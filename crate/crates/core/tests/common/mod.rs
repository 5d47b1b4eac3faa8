//! Shared oracles and fixtures for integration tests.
#![allow(dead_code)]

use depeg_core::bocd::{NGParams, PredictiveScale};
use depeg_core::model::{MetricSeries, Timestamp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, StudentsT};

/// Batch Normal-Gamma posterior after observing `xs`.
pub fn batch_posterior(prior: &NGParams, xs: &[f64]) -> NGParams {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return *prior;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let kappa = prior.kappa + n;
    NGParams {
        mu: (prior.kappa * prior.mu + n * mean) / kappa,
        kappa,
        alpha: prior.alpha + n / 2.0,
        beta: prior.beta + 0.5 * ss + prior.kappa * n * (mean - prior.mu).powi(2) / (2.0 * kappa),
    }
}

pub fn batch_predictive(prior: &NGParams, history: &[f64], x: f64, scale: PredictiveScale) -> f64 {
    let p = batch_posterior(prior, history);
    let s2 = match scale {
        PredictiveScale::PosteriorPredictive => p.beta * (p.kappa + 1.0) / (p.alpha * p.kappa),
        PredictiveScale::MeanMarginal => p.beta / (p.alpha * p.kappa),
    };
    StudentsT::new(p.mu, s2.sqrt(), 2.0 * p.alpha).unwrap().pdf(x)
}

/// Run-length posterior by enumerating every changepoint path.
///
/// Returns `post[r]` for `r` in `0..=xs.len()`.
pub fn brute_force_posterior(xs: &[f64], prior: &NGParams, lambda: f64, scale: PredictiveScale) -> Vec<f64> {
    let t_max = xs.len();
    let h = 1.0 / lambda;
    let mut post = vec![0.0; t_max + 1];
    // bit t of `mask` set means the run restarted after observing x_t
    for mask in 0u32..(1 << t_max) {
        let mut run = 0usize;
        let mut weight = 1.0;
        for t in 0..t_max {
            let history = &xs[t - run..t];
            weight *= batch_predictive(prior, history, xs[t], scale);
            if mask & (1 << t) != 0 {
                weight *= h;
                run = 0;
            } else {
                weight *= 1.0 - h;
                run += 1;
            }
        }
        post[run] += weight;
    }
    let total: f64 = post.iter().sum();
    post.iter().map(|p| p / total).collect()
}

pub fn series(values: &[f64]) -> MetricSeries {
    MetricSeries::new(
        "x",
        "synthetic",
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| (Timestamp(k as u64), v))
            .collect(),
    )
    .unwrap()
}

/// `n0` draws from N(0,1) followed by `n1` draws from N(shift,1).
pub fn mean_shift(seed: u64, n0: usize, n1: usize, shift: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n0 + n1)
        .map(|k| normal.sample(&mut rng) + if k >= n0 { shift } else { 0.0 })
        .collect()
}

/// Buckets drawn from the Poisson mixture with parameters `p`.
pub fn pin_mixture(p: &depeg_core::metrics::PinParams, n: usize, seed: u64) -> Vec<depeg_core::metrics::PinBucket> {
    use rand::Rng;
    use rand_distr::Poisson;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rate: f64, rng: &mut ChaCha8Rng| -> u64 {
        if rate == 0.0 {
            0
        } else {
            Poisson::new(rate).unwrap().sample(rng) as u64
        }
    };
    (0..n)
        .map(|_| {
            let event = rng.random::<f64>() < p.alpha;
            let sell_news = rng.random::<f64>() < p.theta;
            let (rb, rs) = match (event, sell_news) {
                (false, _) => (p.eps_b, p.eps_s),
                (true, false) => (p.eps_i + p.eps_b, p.eps_s),
                (true, true) => (p.eps_b, p.eps_i + p.eps_s),
            };
            depeg_core::metrics::PinBucket {
                buys: draw(rb, &mut rng),
                sells: draw(rs, &mut rng),
            }
        })
        .collect()
}
