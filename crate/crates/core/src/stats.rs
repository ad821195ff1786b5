//! Metrics and resampling statistics: Mann–Whitney AUC, percentile bootstrap
//! CIs, permutation tests, Spearman correlation and Welch t-tests with
//! Bonferroni correction.
//!
//! Every randomized routine takes an explicit seed and all p-values use the
//! plus-one convention, so none is ever exactly zero.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("both classes must be present (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("undefined (zero variance)")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error("degenerate group {0}: needs n >= 2 and non-zero pooled variance")]
    DegenerateGroup(usize),
    #[error("comparison ({0}, {1}) refers to a missing group")]
    BadComparison(usize, usize),
    #[error("instance too large for exhaustive enumeration ({0} arrangements)")]
    TooLarge(u128),
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(StatsError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank ((i+1) + j) / 2
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn auc_unchecked(scores: &[f64], labels: &[bool], positives: usize, negatives: usize) -> f64 {
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (positives * (positives + 1)) as f64 / 2.0;
    u / (positives * negatives) as f64
}

/// `(#{pos > neg} + ½ #{ties}) / (n_pos · n_neg)`, via the rank-sum identity.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, StatsError> {
    let (p, n) = check_binary(scores, labels)?;
    Ok(auc_unchecked(scores, labels, p, n))
}

/// Nearest-rank percentile of sorted values, `q` in (0, 1].
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Percentile bootstrap 95% interval of the AUC over resampled (score, label) pairs.
pub fn bootstrap_ci(scores: &[f64], labels: &[bool], n_boot: usize, seed: u64) -> Result<(f64, f64), StatsError> {
    bootstrap_ci_level(scores, labels, n_boot, 0.95, seed)
}

pub fn bootstrap_ci_level(
    scores: &[f64],
    labels: &[bool],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    check_binary(scores, labels)?;
    if n_boot == 0 {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let n = scores.len();
    let mut r = rng::rng_from(seed, &[0xb007]);
    let mut s = vec![0.0; n];
    let mut l = vec![false; n];
    let mut values = Vec::with_capacity(n_boot);
    while values.len() < n_boot {
        for i in 0..n {
            let k = r.gen_range(0..n);
            s[i] = scores[k];
            l[i] = labels[k];
        }
        let p = l.iter().filter(|&&v| v).count();
        if p == 0 || p == n {
            continue; // single-class draw: redraw
        }
        values.push(auc_unchecked(&s, &l, p, n - p));
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((nearest_rank(&values, tail), nearest_rank(&values, 1.0 - tail)))
}

/// One-sided permutation p-value of the AUC against chance (label shuffling).
pub fn perm_test_vs_chance(scores: &[f64], labels: &[bool], n_perm: usize, seed: u64) -> Result<f64, StatsError> {
    let (p, n) = check_binary(scores, labels)?;
    let observed = auc_unchecked(scores, labels, p, n);
    let mut r = rng::rng_from(seed, &[0x9e3]);
    let mut shuffled = labels.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        shuffled.shuffle(&mut r);
        if auc_unchecked(scores, &shuffled, p, n) >= observed {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact permutation p-value: the fraction of all distinct label
/// arrangements whose AUC reaches the observed one.
pub fn perm_test_vs_chance_exact(scores: &[f64], labels: &[bool]) -> Result<f64, StatsError> {
    let (p, n) = check_binary(scores, labels)?;
    let total = binomial(p + n, p);
    if total > 5_000_000 {
        return Err(StatsError::TooLarge(total));
    }
    let observed = auc_unchecked(scores, labels, p, n);
    let len = p + n;
    let mut hits = 0u128;
    let mut arrangement = vec![false; len];
    // iterate over p-subsets via combination indices
    let mut comb: Vec<usize> = (0..p).collect();
    loop {
        arrangement.iter_mut().for_each(|v| *v = false);
        for &c in &comb {
            arrangement[c] = true;
        }
        if auc_unchecked(scores, &arrangement, p, n) >= observed {
            hits += 1;
        }
        // next combination
        let mut i = p;
        loop {
            if i == 0 {
                return Ok(hits as f64 / total as f64);
            }
            i -= 1;
            if comb[i] != i + len - p {
                break;
            }
        }
        comb[i] += 1;
        for j in i + 1..p {
            comb[j] = comb[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucWithCi {
    pub auc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_vs_chance: f64,
    pub n_boot: usize,
    pub n_perm: usize,
}

impl AucWithCi {
    /// `**` for p ≤ 0.001, `*` for p < 0.05.
    pub fn stars(&self) -> &'static str {
        if self.p_vs_chance <= 0.001 {
            "**"
        } else if self.p_vs_chance < 0.05 {
            "*"
        } else {
            ""
        }
    }
}

/// AUC with its bootstrap interval and permutation p-value. The interval is
/// widened to include the point estimate when the percentile interval misses it.
pub fn auc_with_ci(
    scores: &[f64],
    labels: &[bool],
    n_boot: usize,
    n_perm: usize,
    seed: u64,
) -> Result<AucWithCi, StatsError> {
    let a = auc(scores, labels)?;
    let (lo, hi) = bootstrap_ci(scores, labels, n_boot, rng::derive_seed(seed, &[1]))?;
    let p = perm_test_vs_chance(scores, labels, n_perm, rng::derive_seed(seed, &[2]))?;
    Ok(AucWithCi {
        auc: a,
        ci_lo: lo.min(a),
        ci_hi: hi.max(a),
        p_vs_chance: p,
        n_boot,
        n_perm,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman ρ and a two-sided permutation p-value against zero correlation.
pub fn spearman_perm_test(x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Result<(f64, f64), StatsError> {
    let rho = spearman(x, y)?;
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let mut r = rng::rng_from(seed, &[0x5e4]);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        ry.shuffle(&mut r);
        if pearson(&rx, &ry)?.abs() >= rho.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok((rho, (1 + hits) as f64 / (1 + n_perm) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationComparison {
    pub rho_1: f64,
    pub rho_2: f64,
    pub delta: f64,
    pub p: f64,
    pub n_perm: usize,
}

/// Two-sided paired permutation test of `ρ(pred, q1) − ρ(pred, q2)`: each
/// subject's two scores are swapped with probability ½.
pub fn perm_compare_correlations(
    pred: &[f64],
    q1: &[f64],
    q2: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<CorrelationComparison, StatsError> {
    if q1.len() != pred.len() || q2.len() != pred.len() {
        return Err(StatsError::LengthMismatch(pred.len(), q1.len().min(q2.len())));
    }
    let rho_1 = spearman(pred, q1)?;
    let rho_2 = spearman(pred, q2)?;
    let delta = rho_1 - rho_2;
    let mut r = rng::rng_from(seed, &[0xc0]);
    let mut a = q1.to_vec();
    let mut b = q2.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        for i in 0..pred.len() {
            if r.gen::<bool>() {
                a[i] = q2[i];
                b[i] = q1[i];
            } else {
                a[i] = q1[i];
                b[i] = q2[i];
            }
        }
        let d = spearman(pred, &a)? - spearman(pred, &b)?;
        if d.abs() >= delta.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok(CorrelationComparison {
        rho_1,
        rho_2,
        delta,
        p: (1 + hits) as f64 / (1 + n_perm) as f64,
        n_perm,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's t statistic and Welch–Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return None;
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Some((t, df))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub a: usize,
    pub b: usize,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adj: f64,
    pub significant: bool,
}

/// Two-sided Welch t-tests for each pair, Bonferroni-adjusted over the
/// number of comparisons; significant at adjusted p < 0.05.
pub fn ttest_bonferroni(groups: &[Vec<f64>], comparisons: &[(usize, usize)]) -> Result<Vec<TTestResult>, StatsError> {
    let m = comparisons.len() as f64;
    comparisons
        .iter()
        .map(|&(ia, ib)| {
            let a = groups.get(ia).ok_or(StatsError::BadComparison(ia, ib))?;
            let b = groups.get(ib).ok_or(StatsError::BadComparison(ia, ib))?;
            if a.len() < 2 {
                return Err(StatsError::DegenerateGroup(ia));
            }
            if b.len() < 2 {
                return Err(StatsError::DegenerateGroup(ib));
            }
            let (t, df) = welch_t(a, b).ok_or(StatsError::DegenerateGroup(ia))?;
            let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::DegenerateGroup(ia))?;
            let p_raw = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
            let p_adj = (p_raw * m).min(1.0);
            Ok(TTestResult {
                a: ia,
                b: ib,
                t,
                df,
                p_raw,
                p_adj,
                significant: p_adj < 0.05,
            })
        })
        .collect()
}
