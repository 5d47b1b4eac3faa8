//! Online Bayesian changepoint detection with a constant hazard and a
//! Student-t predictive under a Normal-Gamma prior.
//!
//! The detector keeps `log P(r_t | x_{1:t})` for every surviving run length
//! together with the Normal-Gamma posterior of that run. Each observation
//! grows every run by one (weighted by `1 − H`) and collects the changepoint
//! mass `H · Σ_r P(r) π_r(x)` into `r = 0`. The most probable run length
//! `γ_t` is tracked and a changepoint is emitted at step `t` whenever
//! `γ_t ≠ γ_{t−1} + 1`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{MetricSeries, Timestamp};

/// Version of the persisted detector document. Bump on any change that would
/// alter subsequent output.
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl NGParams {
    pub fn new(mu: f64, alpha: f64, beta: f64, kappa: f64) -> Result<Self> {
        let p = NGParams { mu, alpha, beta, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.mu.is_finite() || !positive(self.alpha) || !positive(self.beta) || !positive(self.kappa) {
            return Err(Error::invalid(format!(
                "Normal-Gamma parameters need finite mu and positive alpha, beta, kappa: {self:?}"
            )));
        }
        Ok(())
    }

    /// Degrees of freedom `ν = 2α`.
    pub fn dof(&self) -> f64 {
        2.0 * self.alpha
    }

    /// Scale `σ² = β / (ακ)`.
    pub fn sigma2(&self) -> f64 {
        self.beta / (self.alpha * self.kappa)
    }
}

/// Scale convention for the Student-t predictive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveScale {
    /// `σ² = β/(ακ)`: the scale of the marginal posterior over the mean.
    MeanMarginal,
    /// `σ² = β(κ+1)/(ακ)`: the posterior predictive of the next observation.
    PosteriorPredictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub hazard_lambda: f64,
    pub prior: NGParams,
    /// Hypotheses whose posterior falls below this are folded into `r = 0`.
    /// Zero disables pruning.
    pub prob_floor: f64,
    pub max_run_length: usize,
    pub predictive_scale: PredictiveScale,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hazard_lambda: 100.0,
            prior: NGParams {
                mu: 0.0,
                alpha: 1.0,
                beta: 1.0,
                kappa: 1.0,
            },
            prob_floor: 1e-12,
            max_run_length: 5000,
            predictive_scale: PredictiveScale::PosteriorPredictive,
        }
    }
}

impl DetectorConfig {
    pub fn with_prior(self, prior: NGParams) -> Self {
        DetectorConfig { prior, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hazard_lambda > 1.0) || !self.hazard_lambda.is_finite() {
            return Err(Error::invalid(format!(
                "hazard_lambda must exceed 1, got {}",
                self.hazard_lambda
            )));
        }
        if !(0.0..1e-6).contains(&self.prob_floor) {
            return Err(Error::invalid(format!(
                "prob_floor must lie in [0, 1e-6), got {}",
                self.prob_floor
            )));
        }
        if self.max_run_length == 0 {
            return Err(Error::invalid("max_run_length must be positive"));
        }
        self.prior.validate()
    }
}

/// Constant hazard `H = 1/λ`.
pub fn hazard(cfg: &DetectorConfig) -> f64 {
    1.0 / cfg.hazard_lambda
}

fn predictive_scale2(p: &NGParams, scale: PredictiveScale) -> f64 {
    match scale {
        PredictiveScale::MeanMarginal => p.sigma2(),
        PredictiveScale::PosteriorPredictive => p.beta * (p.kappa + 1.0) / (p.alpha * p.kappa),
    }
}

/// `lnΓ(α + ½) − lnΓ(α)`, the shape-dependent part of the log density.
fn shape_term(alpha: f64) -> f64 {
    ln_gamma(alpha + 0.5) - ln_gamma(alpha)
}

fn logpdf_with_shape(x: f64, p: &NGParams, scale: PredictiveScale, shape: f64) -> f64 {
    let nu = p.dof();
    let s2 = predictive_scale2(p, scale);
    let z2 = (x - p.mu).powi(2) / (nu * s2);
    shape - 0.5 * (nu * std::f64::consts::PI * s2).ln() - (p.alpha + 0.5) * z2.ln_1p()
}

/// Log density of a Student-t with `ν = 2α`, location `μ` and the scale
/// selected by `scale`.
pub fn student_t_logpdf(x: f64, p: &NGParams, scale: PredictiveScale) -> f64 {
    logpdf_with_shape(x, p, scale, shape_term(p.alpha))
}

/// Conjugate Normal-Gamma update with one observation.
pub fn ng_update(p: &NGParams, x: f64) -> NGParams {
    let k1 = p.kappa + 1.0;
    NGParams {
        mu: (p.kappa * p.mu + x) / k1,
        kappa: k1,
        alpha: p.alpha + 0.5,
        beta: p.beta + p.kappa * (x - p.mu).powi(2) / (2.0 * k1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub run_length: usize,
    /// `log P(r_t = run_length | x_{1:t})`.
    pub log_prob: f64,
    pub params: NGParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLengthState {
    pub t: u64,
    /// Sorted by ascending run length.
    pub hypotheses: Vec<Hypothesis>,
    /// `log P(x_{1:t})`; the joint is `log_prob + log_evidence`.
    pub log_evidence: f64,
    pub prev_gamma: usize,
}

impl RunLengthState {
    pub fn new(prior: NGParams) -> Self {
        RunLengthState {
            t: 0,
            hypotheses: vec![Hypothesis {
                run_length: 0,
                log_prob: 0.0,
                params: prior,
            }],
            log_evidence: 0.0,
            prev_gamma: 0,
        }
    }

    /// `(run_length, probability)` pairs.
    pub fn posterior(&self) -> Vec<(usize, f64)> {
        self.hypotheses
            .iter()
            .map(|h| (h.run_length, h.log_prob.exp()))
            .collect()
    }

    /// Most probable run length and its probability; ties go to the shorter run.
    pub fn map_run_length(&self) -> (usize, f64) {
        let mut best = &self.hypotheses[0];
        for h in &self.hypotheses[1..] {
            if h.log_prob > best.log_prob {
                best = h;
            }
        }
        (best.run_length, best.log_prob.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Changepoint {
    pub ts: Timestamp,
    pub step: u64,
    pub map_run_length: usize,
    pub probability: f64,
}

/// One row of the MAP run-length trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub ts: Timestamp,
    pub step: u64,
    pub run_length: usize,
    pub probability: f64,
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Persisted detector: configuration plus run-length state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSnapshot {
    pub version: u32,
    pub config: DetectorConfig,
    pub state: RunLengthState,
}

/// A single-stream detector.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    state: RunLengthState,
    // shape_term by run length; every run of length r has the same alpha bits
    shape_cache: Vec<f64>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Detector {
            state: RunLengthState::new(cfg.prior),
            cfg,
            shape_cache: Vec::new(),
        })
    }

    pub fn from_snapshot(snapshot: DetectorSnapshot) -> Result<Self> {
        if snapshot.version != STATE_VERSION {
            return Err(Error::StateVersion {
                found: snapshot.version,
                expected: STATE_VERSION,
            });
        }
        snapshot.config.validate()?;
        if snapshot.state.hypotheses.is_empty() {
            return Err(Error::invalid("detector state has no hypotheses"));
        }
        Ok(Detector {
            cfg: snapshot.config,
            state: snapshot.state,
            shape_cache: Vec::new(),
        })
    }

    pub fn snapshot(&self) -> DetectorSnapshot {
        DetectorSnapshot {
            version: STATE_VERSION,
            config: self.cfg,
            state: self.state.clone(),
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn state(&self) -> &RunLengthState {
        &self.state
    }

    fn shape(&mut self, h: &Hypothesis) -> f64 {
        let r = h.run_length;
        while self.shape_cache.len() <= r {
            self.shape_cache.push(f64::NAN);
        }
        if self.shape_cache[r].is_nan() {
            self.shape_cache[r] = shape_term(h.params.alpha);
        }
        self.shape_cache[r]
    }

    /// Consumes one observation. Returns the changepoint emitted at this step, if any.
    pub fn step(&mut self, ts: Timestamp, x: f64) -> Result<Option<Changepoint>> {
        if !x.is_finite() {
            return Err(Error::domain(format!("non-finite observation {x} at {ts}")));
        }
        let h = hazard(&self.cfg);
        let (log_h, log_survive) = (h.ln(), (-h).ln_1p());
        let scale = self.cfg.predictive_scale;

        let old = std::mem::take(&mut self.state.hypotheses);
        let mut weighted = Vec::with_capacity(old.len());
        for hyp in &old {
            let shape = self.shape(hyp);
            weighted.push(hyp.log_prob + logpdf_with_shape(x, &hyp.params, scale, shape));
        }

        let mut next = Vec::with_capacity(old.len() + 1);
        next.push(Hypothesis {
            run_length: 0,
            log_prob: logsumexp(weighted.iter().copied()) + log_h,
            params: self.cfg.prior,
        });
        for (hyp, w) in old.iter().zip(&weighted) {
            next.push(Hypothesis {
                run_length: hyp.run_length + 1,
                log_prob: w + log_survive,
                params: ng_update(&hyp.params, x),
            });
        }

        let log_norm = logsumexp(next.iter().map(|h| h.log_prob));
        if !log_norm.is_finite() {
            return Err(Error::NoConvergence {
                solver: "bocd normalisation",
                iterations: self.state.t as usize + 1,
                residual: log_norm,
            });
        }
        for hyp in &mut next {
            hyp.log_prob -= log_norm;
        }
        self.state.log_evidence += log_norm;
        self.prune(&mut next);
        self.state.hypotheses = next;
        self.state.t += 1;

        let (gamma, probability) = self.state.map_run_length();
        let emitted = gamma != self.state.prev_gamma + 1;
        self.state.prev_gamma = gamma;
        Ok(emitted.then_some(Changepoint {
            ts,
            step: self.state.t,
            map_run_length: gamma,
            probability,
        }))
    }

    fn prune(&self, hyps: &mut Vec<Hypothesis>) {
        let floor = self.cfg.prob_floor;
        let log_floor = if floor > 0.0 { floor.ln() } else { f64::NEG_INFINITY };
        let cap = self.cfg.max_run_length;
        let mut folded = f64::NEG_INFINITY;
        hyps.retain(|h| {
            let keep = h.run_length == 0 || (h.log_prob >= log_floor && h.run_length <= cap);
            if !keep {
                folded = log_add(folded, h.log_prob);
            }
            keep
        });
        if folded > f64::NEG_INFINITY {
            hyps[0].log_prob = log_add(hyps[0].log_prob, folded);
        }
    }

    /// Runs the detector over every point of `series`.
    pub fn run(&mut self, series: &MetricSeries) -> Result<Detection> {
        let mut out = Detection::default();
        for &(ts, x) in &series.points {
            if let Some(cp) = self.step(ts, x)? {
                out.changepoints.push(cp);
            }
            let (run_length, probability) = self.state.map_run_length();
            out.trace.push(TracePoint {
                ts,
                step: self.state.t,
                run_length,
                probability,
            });
        }
        Ok(out)
    }
}

/// Functional single step: returns the successor state and any emission.
pub fn step(
    state: &RunLengthState,
    ts: Timestamp,
    x: f64,
    cfg: &DetectorConfig,
) -> Result<(RunLengthState, Option<Changepoint>)> {
    let mut det = Detector::from_snapshot(DetectorSnapshot {
        version: STATE_VERSION,
        config: *cfg,
        state: state.clone(),
    })?;
    let cp = det.step(ts, x)?;
    Ok((det.state, cp))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub changepoints: Vec<Changepoint>,
    pub trace: Vec<TracePoint>,
}

/// Runs a fresh detector over the whole series.
pub fn detect_series(series: &MetricSeries, cfg: &DetectorConfig) -> Result<Detection> {
    Detector::new(*cfg)?.run(series)
}
