//! One-sided sign-flip cluster permutation test over chance-centered AUC
//! time series.
//!
//! Each run's series is centered at 0.5; the null flips whole runs. Pointwise
//! p-values of every series (observed and null draws alike) are ranks within
//! the pooled set of `n_perm + 1` series, so the observed p is
//! `(1 + #{null ≥ obs}) / (1 + n_perm)`. Clusters are maximal runs of
//! `p ≤ cluster_threshold_p` lasting strictly longer than `min_cluster_ms`,
//! scored by mass (sum of the centered mean) and corrected by the null
//! distribution of the per-draw maximum mass.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const MAX_ENUMERATION_RUNS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("need at least 1 timepoint")]
    NoTimepoints,
    #[error("non-finite AUC at run {run}, timepoint {timepoint}")]
    NonFinite { run: usize, timepoint: usize },
    #[error("n_perm must be >= {min}, got {got}")]
    TooFewPermutations { min: usize, got: usize },
    #[error("{0} runs exceeds the enumeration limit of {MAX_ENUMERATION_RUNS}")]
    TooManyRuns(usize),
    #[error("invalid cluster config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_perm: usize,
    pub alpha: f64,
    pub cluster_threshold_p: f64,
    pub min_cluster_ms: f64,
    pub rng_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_perm: 1000,
            alpha: 0.05,
            cluster_threshold_p: 0.01,
            min_cluster_ms: 40.0,
            rng_seed: 0,
        }
    }
}

impl ClusterConfig {
    /// Full validation for user-facing configs (`n_perm ≥ 100`).
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.n_perm < 100 {
            return Err(ClusterError::TooFewPermutations { min: 100, got: self.n_perm });
        }
        self.validate_thresholds()
    }

    fn validate_thresholds(&self) -> Result<(), ClusterError> {
        for (name, v) in [("alpha", self.alpha), ("cluster_threshold_p", self.cluster_threshold_p)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ClusterError::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if !(self.min_cluster_ms >= 0.0 && self.min_cluster_ms.is_finite()) {
            return Err(ClusterError::Config(format!(
                "min_cluster_ms must be >= 0, got {}",
                self.min_cluster_ms
            )));
        }
        Ok(())
    }
}

/// Regular timepoint grid: `t_i = start_ms + i · step_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_ms: f64,
    pub step_ms: f64,
}

impl TimeGrid {
    pub fn time(&self, i: usize) -> f64 {
        self.start_ms + i as f64 * self.step_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Time of the first timepoint.
    pub start_ms: f64,
    /// Exclusive end: time of the last timepoint plus one step.
    pub end_ms: f64,
    pub start_index: usize,
    /// Exclusive.
    pub end_index: usize,
    pub mass: f64,
    pub p_cluster: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub timepoints_ms: Vec<f64>,
    /// Mean over runs of the centered AUC.
    pub observed: Vec<f64>,
    pub pointwise_p: Vec<f64>,
    pub clusters: Vec<Cluster>,
    /// Indices into `clusters` with `p_cluster ≤ alpha`.
    pub significant: Vec<usize>,
    pub n_null: usize,
    pub exact: bool,
}

impl ClusterResult {
    pub fn significant_clusters(&self) -> impl Iterator<Item = &Cluster> {
        self.significant.iter().map(move |&i| &self.clusters[i])
    }

    /// Timepoint indices covered by significant clusters, ascending.
    pub fn significant_timepoints(&self) -> Vec<usize> {
        self.significant_clusters()
            .flat_map(|c| c.start_index..c.end_index)
            .collect()
    }
}

/// Runs sorted lexicographically and centered, so the outcome does not
/// depend on the order in which runs are supplied.
fn canonical_centered(auc: ArrayView2<f64>) -> Result<Array2<f64>, ClusterError> {
    let (runs, t) = auc.dim();
    if runs < 2 {
        return Err(ClusterError::TooFewRuns(runs));
    }
    if t == 0 {
        return Err(ClusterError::NoTimepoints);
    }
    if let Some(((run, timepoint), _)) = auc.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ClusterError::NonFinite { run, timepoint });
    }
    let mut order: Vec<usize> = (0..runs).collect();
    order.sort_by(|&a, &b| {
        auc.row(a)
            .iter()
            .zip(auc.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(auc.select(Axis(0), &order).mapv(|v| v - 0.5))
}

fn signed_mean(centered: &Array2<f64>, signs: impl Fn(usize) -> bool) -> Vec<f64> {
    let runs = centered.nrows();
    let mut out = vec![0.0; centered.ncols()];
    for r in 0..runs {
        let s = if signs(r) { 1.0 } else { -1.0 };
        for (o, v) in out.iter_mut().zip(centered.row(r)) {
            *o += s * v;
        }
    }
    out.iter_mut().for_each(|o| *o /= runs as f64);
    out
}

/// Candidate clusters as `(start, end_exclusive, mass)`.
fn find_clusters(stat: &[f64], p: &[f64], grid: TimeGrid, cfg: &ClusterConfig) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < p.len() {
        if p[i] <= cfg.cluster_threshold_p {
            let start = i;
            while i < p.len() && p[i] <= cfg.cluster_threshold_p {
                i += 1;
            }
            let duration = (i - start) as f64 * grid.step_ms;
            if duration > cfg.min_cluster_ms + 1e-9 {
                out.push((start, i, stat[start..i].iter().sum()));
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Pooled-rank p-values: `#{series in pool with value ≥ v} / pool size`.
struct PooledP {
    sorted: Vec<Vec<f64>>,
}

impl PooledP {
    fn new(observed: &[f64], null: &[Vec<f64>]) -> Self {
        let t = observed.len();
        let sorted = (0..t)
            .into_par_iter()
            .map(|j| {
                let mut col: Vec<f64> = null.iter().map(|s| s[j]).collect();
                col.push(observed[j]);
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Self { sorted }
    }

    fn p(&self, series: &[f64]) -> Vec<f64> {
        series
            .iter()
            .zip(&self.sorted)
            .map(|(v, col)| {
                let below = col.partition_point(|x| x < v);
                (col.len() - below) as f64 / col.len() as f64
            })
            .collect()
    }
}

fn run_test(
    centered: &Array2<f64>,
    null: Vec<Vec<f64>>,
    grid: TimeGrid,
    cfg: &ClusterConfig,
    exact: bool,
) -> ClusterResult {
    let observed = signed_mean(centered, |_| true);
    let pool = PooledP::new(&observed, &null);
    let pointwise_p = pool.p(&observed);
    let found = find_clusters(&observed, &pointwise_p, grid, cfg);

    let null_max: Vec<f64> = null
        .par_iter()
        .map(|s| {
            let p = pool.p(s);
            find_clusters(s, &p, grid, cfg)
                .into_iter()
                .map(|c| c.2)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let denom = (1 + null.len()) as f64;
    let clusters: Vec<Cluster> = found
        .into_iter()
        .map(|(start, end, mass)| {
            let hits = null_max.iter().filter(|&&m| m >= mass).count();
            Cluster {
                start_ms: grid.time(start),
                end_ms: grid.time(end),
                start_index: start,
                end_index: end,
                mass,
                p_cluster: (1 + hits) as f64 / denom,
            }
        })
        .collect();
    let significant = clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.p_cluster <= cfg.alpha)
        .map(|(i, _)| i)
        .collect();

    ClusterResult {
        timepoints_ms: (0..observed.len()).map(|i| grid.time(i)).collect(),
        observed,
        pointwise_p,
        clusters,
        significant,
        n_null: null.len(),
        exact,
    }
}

/// Sampled sign-flip test with `cfg.n_perm` draws. Draw `k` uses its own
/// stream derived from `(rng_seed, k)`.
pub fn cluster_test(auc_per_run: ArrayView2<f64>, grid: TimeGrid, cfg: &ClusterConfig) -> Result<ClusterResult, ClusterError> {
    if cfg.n_perm < 1 {
        return Err(ClusterError::TooFewPermutations { min: 1, got: cfg.n_perm });
    }
    cfg.validate_thresholds()?;
    let centered = canonical_centered(auc_per_run)?;
    let runs = centered.nrows();
    let null: Vec<Vec<f64>> = (0..cfg.n_perm)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::rng_from(cfg.rng_seed, &[0xc1, k as u64]);
            let signs: Vec<bool> = (0..runs).map(|_| r.gen()).collect();
            signed_mean(&centered, |i| signs[i])
        })
        .collect();
    Ok(run_test(&centered, null, grid, cfg, false))
}

/// Exact variant over all `2^runs` sign patterns (identity included), so
/// pointwise p is `(1 + #{pattern ≥ obs}) / (1 + 2^runs)`.
pub fn enumerate_null(auc_per_run: ArrayView2<f64>, grid: TimeGrid, cfg: &ClusterConfig) -> Result<ClusterResult, ClusterError> {
    cfg.validate_thresholds()?;
    let runs = auc_per_run.nrows();
    if runs > MAX_ENUMERATION_RUNS {
        return Err(ClusterError::TooManyRuns(runs));
    }
    let centered = canonical_centered(auc_per_run)?;
    let null: Vec<Vec<f64>> = (0..1u64 << runs)
        .into_par_iter()
        .map(|pattern| signed_mean(&centered, |i| pattern >> i & 1 == 1))
        .collect();
    Ok(run_test(&centered, null, grid, cfg, true))
}
