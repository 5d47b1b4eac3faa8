//! Depeg labelling, leading-indicator scoring and BOCD hyperparameter search.

use serde::{Deserialize, Serialize};

use crate::bocd::{detect_series, DetectorConfig, NGParams};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{MetricSeries, Timestamp};

/// Default leading margin: 48 hours.
pub const DEFAULT_MARGIN: u64 = 48 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepegLabel {
    pub ts: Timestamp,
    /// `(virtual − share) / virtual`.
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Maximum lead `M` in seconds.
    pub margin_m: u64,
    pub f_beta: f64,
    pub depeg_threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            margin_m: DEFAULT_MARGIN,
            f_beta: 1.0,
            depeg_threshold: 0.05,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin_m == 0 {
            return Err(Error::invalid("margin_m must be positive"));
        }
        if !(self.f_beta > 0.0) || !self.f_beta.is_finite() {
            return Err(Error::invalid(format!("f_beta must be positive, got {}", self.f_beta)));
        }
        Ok(())
    }
}

/// Labels every timestamp where the LP share price sits at least
/// `depeg_threshold` below the virtual price.
pub fn label_depegs(
    share_prices: &MetricSeries,
    virtual_prices: &MetricSeries,
    cfg: &ScoringConfig,
) -> Result<Vec<DepegLabel>> {
    if share_prices.len() != virtual_prices.len()
        || share_prices
            .timestamps()
            .zip(virtual_prices.timestamps())
            .any(|(a, b)| a != b)
    {
        return Err(Error::invalid(
            "share-price and virtual-price series are not aligned on timestamps",
        ));
    }
    Ok(share_prices
        .points
        .iter()
        .zip(&virtual_prices.points)
        .filter_map(|(&(ts, sp), &(_, vp))| {
            let deviation = (vp - sp) / vp;
            (deviation >= cfg.depeg_threshold).then_some(DepegLabel { ts, deviation })
        })
        .collect())
}

/// Collapses runs of labels at consecutive series positions to their first timestamp.
pub fn first_crossings(labels: &[DepegLabel], series: &MetricSeries) -> Vec<Timestamp> {
    let mut out = Vec::new();
    let mut prev_index: Option<usize> = None;
    for label in labels {
        let Ok(idx) = series.points.binary_search_by_key(&label.ts, |p| p.0) else {
            continue;
        };
        if prev_index.is_none_or(|p| idx != p + 1) {
            out.push(label.ts);
        }
        prev_index = Some(idx);
    }
    out
}

/// Timestamps where the series moves from `>= level` to `< level`.
pub fn price_threshold_crossings(prices: &MetricSeries, level: f64) -> Vec<Timestamp> {
    prices
        .points
        .windows(2)
        .filter(|w| w[0].1 >= level && w[1].1 < level)
        .map(|w| w[1].0)
        .collect()
}

/// A label matched to a leading prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub label: Timestamp,
    pub prediction: Timestamp,
    /// Lead `τ − x` in seconds.
    pub lead: u64,
    /// `lead / M`.
    pub weight: f64,
}

/// Matches each label to the earliest unmatched prediction `x` with
/// `0 ≤ τ − x ≤ M`. Inputs need not be sorted.
pub fn match_true_positives(labels: &[Timestamp], predictions: &[Timestamp], margin: u64) -> Vec<Match> {
    let mut labels = labels.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let mut preds = predictions.to_vec();
    preds.sort_unstable();
    preds.dedup();
    let mut used = vec![false; preds.len()];
    let mut out = Vec::new();
    for tau in labels {
        let earliest = tau.0.saturating_sub(margin);
        let start = preds.partition_point(|x| x.0 < earliest);
        let found = (start..preds.len())
            .take_while(|&k| preds[k] <= tau)
            .find(|&k| !used[k]);
        if let Some(k) = found {
            used[k] = true;
            let lead = tau.0 - preds[k].0;
            out.push(Match {
                label: tau,
                prediction: preds[k],
                lead,
                weight: lead as f64 / margin as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub weighted_recall: f64,
    pub lf_score: f64,
    pub matches: Vec<Match>,
    pub false_positives: Vec<Timestamp>,
    pub config: ScoringConfig,
}

/// Precision, lead-weighted recall and the leading F-score.
///
/// With `m` matches of total lead `L` seconds, `P = m/|X|`, `R = L/(M|T|)` and
/// `F = (1+β²)·m·L / (β²·m·M|T| + L·|X|)`, which is `(1+β²)PR/(β²P+R)`
/// evaluated from integer counts so golden values come out exactly.
pub fn lf_score(labels: &[Timestamp], predictions: &[Timestamp], cfg: &ScoringConfig) -> ScoreReport {
    let matches = match_true_positives(labels, predictions, cfg.margin_m);
    let mut preds = predictions.to_vec();
    preds.sort_unstable();
    preds.dedup();
    let mut n_labels = labels.to_vec();
    n_labels.sort_unstable();
    n_labels.dedup();
    let (n_x, n_t) = (preds.len() as f64, n_labels.len() as f64);

    let m = matches.len() as f64;
    let total_lead: u64 = matches.iter().map(|mt| mt.lead).sum();
    let lead = total_lead as f64;
    let span = cfg.margin_m as f64 * n_t;

    let precision = if preds.is_empty() { 0.0 } else { m / n_x };
    let weighted_recall = if n_labels.is_empty() { 0.0 } else { lead / span };
    let b2 = cfg.f_beta * cfg.f_beta;
    let lf = if precision == 0.0 || weighted_recall == 0.0 {
        0.0
    } else {
        (1.0 + b2) * (m * lead) / (b2 * m * span + lead * n_x)
    };

    let matched: Vec<Timestamp> = matches.iter().map(|mt| mt.prediction).collect();
    let false_positives = preds.into_iter().filter(|p| !matched.contains(p)).collect();
    ScoreReport {
        precision,
        weighted_recall,
        lf_score: lf,
        matches,
        false_positives,
        config: *cfg,
    }
}

/// Exponent grid `base^i` for `i` in an inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpace {
    pub exponent_range: (i32, i32),
    pub base: f64,
}

impl Default for GridSpace {
    fn default() -> Self {
        GridSpace {
            exponent_range: (-5, 4),
            base: 10.0,
        }
    }
}

/// One grid point and its exponents `(i, j, k)` for `(α, β, κ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub exponents: (i32, i32, i32),
    pub params: NGParams,
}

fn power(base: f64, exp: i32) -> f64 {
    // reciprocal of a positive power rounds once, so 10^-5 == 1e-5 exactly
    if exp >= 0 {
        base.powi(exp)
    } else {
        1.0 / base.powi(-exp)
    }
}

/// All `(α, β, κ) = (base^i, base^j, base^k)` with `μ = 0`, ordered
/// lexicographically by `(i, j, k)`.
pub fn grid_points(space: &GridSpace) -> Result<Vec<GridPoint>> {
    let (lo, hi) = space.exponent_range;
    if lo > hi {
        return Err(Error::invalid(format!("empty exponent range [{lo}, {hi}]")));
    }
    if !(space.base > 0.0) || !space.base.is_finite() {
        return Err(Error::invalid(format!(
            "grid base must be positive, got {}",
            space.base
        )));
    }
    let mut out = Vec::new();
    for i in lo..=hi {
        for j in lo..=hi {
            for k in lo..=hi {
                out.push(GridPoint {
                    exponents: (i, j, k),
                    params: NGParams::new(0.0, power(space.base, i), power(space.base, j), power(space.base, k))?,
                });
            }
        }
    }
    Ok(out)
}

pub fn grid_configs(space: &GridSpace) -> Result<Vec<NGParams>> {
    Ok(grid_points(space)?.into_iter().map(|g| g.params).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: GridPoint,
    pub report: ScoreReport,
    /// Every configuration scored zero; `best` is only the tie-break minimum.
    pub all_zero: bool,
    pub evaluated: usize,
}

/// Grid-searches the detector prior on a training series, maximising the
/// leading F-score. Ties prefer higher precision, then the earliest grid point.
pub fn tune(
    train_series: &MetricSeries,
    labels: &[Timestamp],
    space: &GridSpace,
    scoring_cfg: &ScoringConfig,
    detector_cfg_base: &DetectorConfig,
    exec: Execution,
) -> Result<TuneResult> {
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    scoring_cfg.validate()?;
    let grid = grid_points(space)?;
    let scored: Vec<Result<ScoreReport>> = exec.map(&grid, |g| {
        let cfg = detector_cfg_base.with_prior(g.params);
        let detection = detect_series(train_series, &cfg)?;
        let preds: Vec<Timestamp> = detection.changepoints.iter().map(|c| c.ts).collect();
        Ok(lf_score(labels, &preds, scoring_cfg))
    });

    let mut best: Option<(usize, ScoreReport)> = None;
    for (idx, report) in scored.into_iter().enumerate() {
        let report = report?;
        let better = match &best {
            None => true,
            Some((_, b)) => {
                report.lf_score > b.lf_score || (report.lf_score == b.lf_score && report.precision > b.precision)
            }
        };
        if better {
            best = Some((idx, report));
        }
    }
    let (idx, report) = best.expect("grid is non-empty");
    Ok(TuneResult {
        best: grid[idx],
        all_zero: report.lf_score == 0.0,
        report,
        evaluated: grid.len(),
    })
}
