//! Time-resolved between-group decoding with leave-one-subject-out CV.
//!
//! At each timepoint the channel vector of every subject's ERP is one sample.
//! Held-out scores of all folds are pooled into one AUC per seed.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grouping::{ErpSeries, GroupingError};
use crate::logreg::{self, FitConfig, FitError};
use crate::rng;
use crate::stats::{self, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum MvpaError {
    #[error("{0} ERPs and {1} labels")]
    LabelCount(usize, usize),
    #[error("need at least 2 subjects per class, got {positives} positive and {negatives} negative")]
    TooFewSubjects { positives: usize, negatives: usize },
    #[error("ERP of subject {0} has a different shape or time axis")]
    ShapeMismatch(String),
    #[error("no seeds given")]
    NoSeeds,
    #[error("significant window is empty")]
    EmptyWindow,
    #[error("timepoint index {0} outside the decoded range")]
    OutOfRange(usize),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub fit: FitConfig,
    /// Balance each training fold by duplicating random minority subjects.
    pub oversample_minority: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            oversample_minority: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingTimeSeries {
    pub timepoints_ms: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `[seeds × timepoints]`
    pub auc_per_seed: Array2<f64>,
    pub mean_auc: Vec<f64>,
    /// `[channels × timepoints]`: fold×seed models with a non-zero weight.
    pub support_counts: Array2<u32>,
    pub n_models: Vec<u32>,
}

impl DecodingTimeSeries {
    pub fn step_ms(&self) -> f64 {
        match self.timepoints_ms.as_slice() {
            [a, b, ..] => b - a,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImportanceMap {
    pub proportion: Vec<f64>,
    pub cluster_window_ms: (f64, f64),
}

impl ChannelImportanceMap {
    /// Channel indices by decreasing proportion; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.proportion.len()).collect();
        idx.sort_by(|&a, &b| self.proportion[b].total_cmp(&self.proportion[a]));
        idx
    }
}

fn check_inputs(erps: &[ErpSeries], labels: &[bool]) -> Result<(), MvpaError> {
    if erps.len() != labels.len() {
        return Err(MvpaError::LabelCount(erps.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives < 2 || negatives < 2 {
        return Err(MvpaError::TooFewSubjects { positives, negatives });
    }
    let first = &erps[0];
    for e in erps {
        if e.data.dim() != first.data.dim()
            || e.sample_rate_hz != first.sample_rate_hz
            || e.epoch_start_ms != first.epoch_start_ms
        {
            return Err(MvpaError::ShapeMismatch(e.subject_id.clone()));
        }
    }
    Ok(())
}

/// Held-out score of every sample under LOSO, plus the support of each fold's
/// model. Fold streams derive from `(seed, subject id)`.
pub fn loso_scores(
    x: ArrayView2<f64>,
    labels: &[bool],
    ids: &[&str],
    seed: u64,
    cfg: &DecodeConfig,
) -> Result<(Vec<f64>, Vec<Vec<bool>>), MvpaError> {
    let n = x.nrows();
    let mut scores = Vec::with_capacity(n);
    let mut supports = Vec::with_capacity(n);
    for held in 0..n {
        let fold_seed = rng::derive_seed(seed, &[rng::hash_str(ids[held])]);
        let mut train: Vec<usize> = (0..n).filter(|&i| i != held).collect();
        if cfg.oversample_minority {
            let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let mut r = rng::rng_from(fold_seed, &[0x05a]);
            train = logreg::oversample_indices(&y, &mut r).into_iter().map(|k| train[k]).collect();
        }
        let xt = x.select(Axis(0), &train);
        let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        assert!(
            yt.iter().any(|&v| v) && yt.iter().any(|&v| !v),
            "LOSO training fold lost a class"
        );
        let fit_cfg = FitConfig {
            rng_seed: fold_seed,
            ..cfg.fit.clone()
        };
        let model = logreg::fit(xt.view(), &yt, &fit_cfg)?;
        scores.push(model.decision_function(x.slice(ndarray::s![held..held + 1, ..]))?[0]);
        supports.push(model.nonzero_support());
    }
    Ok((scores, supports))
}

/// Per-timepoint LOSO decoding for every seed.
pub fn decode_timecourse(
    erps: &[ErpSeries],
    labels: &[bool],
    seeds: &[u64],
    cfg: &DecodeConfig,
) -> Result<DecodingTimeSeries, MvpaError> {
    check_inputs(erps, labels)?;
    if seeds.is_empty() {
        return Err(MvpaError::NoSeeds);
    }
    if seeds.len() > 1 && !cfg.oversample_minority && cfg.fit.init_jitter == 0.0 {
        log::warn!("oversampling and init jitter are both off: all {} seeds give identical runs", seeds.len());
    }
    let (n_ch, n_t) = erps[0].data.dim();
    let ids: Vec<&str> = erps.iter().map(|e| e.subject_id.as_str()).collect();

    let units: Vec<(usize, usize)> = (0..n_t).flat_map(|t| (0..seeds.len()).map(move |s| (t, s))).collect();
    let results = units
        .par_iter()
        .map(|&(t, s)| {
            let x = Array2::from_shape_fn((erps.len(), n_ch), |(i, c)| erps[i].data[[c, t]]);
            let (scores, supports) = loso_scores(x.view(), labels, &ids, seeds[s], cfg)?;
            Ok((stats::auc(&scores, labels)?, supports))
        })
        .collect::<Result<Vec<_>, MvpaError>>()?;

    let mut auc_per_seed = Array2::zeros((seeds.len(), n_t));
    let mut support_counts = Array2::<u32>::zeros((n_ch, n_t));
    let mut n_models = vec![0u32; n_t];
    for (&(t, s), (auc, supports)) in units.iter().zip(results) {
        auc_per_seed[[s, t]] = auc;
        n_models[t] += supports.len() as u32;
        for sup in supports {
            for (c, on) in sup.into_iter().enumerate() {
                support_counts[[c, t]] += u32::from(on);
            }
        }
    }
    let mean_auc = auc_per_seed.mean_axis(Axis(0)).expect("seeds non-empty").to_vec();
    Ok(DecodingTimeSeries {
        timepoints_ms: erps[0].times_ms(),
        seeds: seeds.to_vec(),
        auc_per_seed,
        mean_auc,
        support_counts,
        n_models,
    })
}

/// Fraction of significant timepoints at which a majority of the fitted
/// models gave the channel a non-zero weight.
pub fn channel_importance(dts: &DecodingTimeSeries, significant: &[usize]) -> Result<ChannelImportanceMap, MvpaError> {
    if significant.is_empty() {
        return Err(MvpaError::EmptyWindow);
    }
    let n_t = dts.timepoints_ms.len();
    if let Some(&t) = significant.iter().find(|&&t| t >= n_t) {
        return Err(MvpaError::OutOfRange(t));
    }
    let proportion = dts
        .support_counts
        .axis_iter(Axis(0))
        .map(|row| {
            let selected = significant
                .iter()
                .filter(|&&t| dts.n_models[t] > 0 && f64::from(row[t]) / f64::from(dts.n_models[t]) > 0.5)
                .count();
            selected as f64 / significant.len() as f64
        })
        .collect();
    let lo = *significant.iter().min().expect("non-empty");
    let hi = *significant.iter().max().expect("non-empty");
    Ok(ChannelImportanceMap {
        proportion,
        cluster_window_ms: (dts.timepoints_ms[lo], dts.timepoints_ms[hi] + dts.step_ms()),
    })
}

/// One restricted-input decoding condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCondition {
    pub axis: String,
    pub label: String,
    /// `[lo, hi)` ms; `None` keeps the full epoch.
    pub time_ms: Option<(f64, f64)>,
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub condition: String,
    pub auc: f64,
    pub auc_per_seed: Vec<f64>,
}

/// Conditions `(-epoch_start, X)` for each `X` on all channels, then the full
/// epoch for each named channel set.
pub fn ablation_conditions(
    epoch_start_ms: f64,
    n_channels: usize,
    time_ends_ms: &[f64],
    regions: &[(String, Vec<usize>)],
) -> Vec<AblationCondition> {
    let all: Vec<usize> = (0..n_channels).collect();
    let mut out: Vec<AblationCondition> = time_ends_ms
        .iter()
        .map(|&x| AblationCondition {
            axis: "time".into(),
            label: format!("{epoch_start_ms}..{x}"),
            time_ms: Some((epoch_start_ms, x)),
            channels: all.clone(),
        })
        .collect();
    out.extend(regions.iter().map(|(name, ch)| AblationCondition {
        axis: "region".into(),
        label: name.clone(),
        time_ms: None,
        channels: ch.clone(),
    }));
    out
}

/// Whole-window LOSO decoding: each subject's restricted ERP is flattened to
/// one feature vector. Returns the AUC per seed.
pub fn decode_window(
    erps: &[ErpSeries],
    labels: &[bool],
    seeds: &[u64],
    cfg: &DecodeConfig,
) -> Result<Vec<f64>, MvpaError> {
    check_inputs(erps, labels)?;
    if seeds.is_empty() {
        return Err(MvpaError::NoSeeds);
    }
    let d = erps[0].data.len();
    let flat: Vec<f64> = erps.iter().flat_map(|e| e.data.iter().copied()).collect();
    let x = Array2::from_shape_vec((erps.len(), d), flat).expect("equal ERP shapes");
    let ids: Vec<&str> = erps.iter().map(|e| e.subject_id.as_str()).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let (scores, _) = loso_scores(x.view(), labels, &ids, seed, cfg)?;
            Ok(stats::auc(&scores, labels)?)
        })
        .collect()
}

/// Mean whole-window AUC for every condition.
pub fn ablation_grid(
    erps: &[ErpSeries],
    labels: &[bool],
    conditions: &[AblationCondition],
    seeds: &[u64],
    cfg: &DecodeConfig,
) -> Result<Vec<AblationRow>, MvpaError> {
    conditions
        .iter()
        .map(|c| {
            let restricted = erps
                .iter()
                .map(|e| e.restrict(c.time_ms, &c.channels))
                .collect::<Result<Vec<_>, _>>()?;
            let per_seed = decode_window(&restricted, labels, seeds, cfg)?;
            Ok(AblationRow {
                axis: c.axis.clone(),
                condition: c.label.clone(),
                auc: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                auc_per_seed: per_seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn erp(id: &str, data: Array2<f64>) -> ErpSeries {
        ErpSeries {
            subject_id: id.into(),
            data,
            n_trials_averaged: 1,
            grouping: "all".into(),
            sample_rate_hz: 100.0,
            epoch_start_ms: -200.0,
        }
    }

    /// `n` subjects per class, `c` channels, `t` timepoints; class-1 subjects
    /// get `offset` on channel 1 at timepoints in `effect`.
    fn cohort(n: usize, c: usize, t: usize, effect: std::ops::Range<usize>, offset: f64, seed: u64) -> (Vec<ErpSeries>, Vec<bool>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut erps = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let pos = i >= n;
            let data = Array2::from_shape_fn((c, t), |(ch, tp)| {
                let shift = if pos && ch == 1 && effect.contains(&tp) { offset } else { 0.0 };
                noise.sample(&mut r) + shift
            });
            erps.push(erp(&format!("s{i:02}"), data));
            labels.push(pos);
        }
        (erps, labels)
    }

    #[test]
    fn large_offset_is_decoded_only_inside_window() {
        let (erps, labels) = cohort(10, 4, 12, 5..8, 8.0, 1);
        let dts = decode_timecourse(&erps, &labels, &[0, 1, 2], &DecodeConfig::default()).unwrap();
        for t in 0..12 {
            if (5..8).contains(&t) {
                assert!(dts.mean_auc[t] > 0.95, "t={t}: {}", dts.mean_auc[t]);
            }
        }
        let outside: f64 = (0..12).filter(|t| !(5..8).contains(t)).map(|t| dts.mean_auc[t]).sum::<f64>() / 9.0;
        assert!((outside - 0.5).abs() <= 0.1, "{outside}");
        assert!(dts.auc_per_seed.iter().all(|a| (0.0..=1.0).contains(a)));
        assert!(dts.n_models.iter().all(|&m| m == 60));
        assert!(dts.support_counts.iter().all(|&s| s <= 60));
    }

    #[test]
    fn single_timepoint_auc_matches_pairwise_oracle() {
        let (erps, labels) = cohort(2, 2, 1, 0..1, 1.0, 4);
        let dts = decode_timecourse(&erps, &labels, &[7], &DecodeConfig::default()).unwrap();
        let x = Array2::from_shape_fn((4, 2), |(i, c)| erps[i].data[[c, 0]]);
        let ids: Vec<&str> = erps.iter().map(|e| e.subject_id.as_str()).collect();
        let (scores, _) = loso_scores(x.view(), &labels, &ids, 7, &DecodeConfig::default()).unwrap();
        let mut num = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if labels[i] && !labels[j] {
                    num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert_eq!(dts.mean_auc[0], num / 4.0);
    }

    #[test]
    fn importance_examples() {
        let (erps, labels) = cohort(10, 5, 6, 0..6, 6.0, 2);
        let dts = decode_timecourse(&erps, &labels, &[0, 1], &DecodeConfig::default()).unwrap();
        let imp = channel_importance(&dts, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(imp.ranking()[0], 1);
        assert_eq!(imp.proportion[1], 1.0);
        assert_eq!(imp.cluster_window_ms, (-200.0, -140.0));
        assert!(imp.proportion.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(channel_importance(&dts, &[]), Err(MvpaError::EmptyWindow));
        assert_eq!(channel_importance(&dts, &[6]), Err(MvpaError::OutOfRange(6)));

        let mut never = dts.clone();
        never.support_counts.fill(0);
        assert!(channel_importance(&never, &[2]).unwrap().proportion.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn label_swap() {
        // retraining on swapped labels negates the scores, so the AUC is unchanged;
        // re-scoring fixed held-out scores against swapped labels gives 1 - a
        let (erps, labels) = cohort(6, 3, 5, 1..3, 1.5, 9);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let cfg = DecodeConfig::default();
        let a = decode_timecourse(&erps, &labels, &[0, 1], &cfg).unwrap();
        let b = decode_timecourse(&erps, &flipped, &[0, 1], &cfg).unwrap();
        for (x, y) in a.auc_per_seed.iter().zip(b.auc_per_seed.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let x = Array2::from_shape_fn((12, 3), |(i, c)| erps[i].data[[c, 2]]);
        let ids: Vec<&str> = erps.iter().map(|e| e.subject_id.as_str()).collect();
        let (scores, _) = loso_scores(x.view(), &labels, &ids, 0, &cfg).unwrap();
        let auc = stats::auc(&scores, &labels).unwrap();
        assert_eq!(auc, a.auc_per_seed[[0, 2]]);
        assert_eq!(stats::auc(&scores, &flipped).unwrap(), 1.0 - auc);
    }

    #[test]
    fn errors() {
        let (erps, labels) = cohort(1, 2, 3, 0..1, 1.0, 1);
        assert!(matches!(
            decode_timecourse(&erps, &labels, &[0], &DecodeConfig::default()),
            Err(MvpaError::TooFewSubjects { .. })
        ));
        let (erps, labels) = cohort(2, 2, 3, 0..1, 1.0, 1);
        assert_eq!(decode_timecourse(&erps, &labels, &[], &DecodeConfig::default()), Err(MvpaError::NoSeeds));
        assert!(matches!(
            decode_timecourse(&erps, &labels[..3], &[0], &DecodeConfig::default()),
            Err(MvpaError::LabelCount(4, 3))
        ));
    }

    #[test]
    fn ablation_time_and_region() {
        let (erps, labels) = cohort(20, 4, 12, 7..10, 3.0, 3);
        // timepoints at 100 Hz from -200 ms: effect at -130..-100 ms
        let regions = vec![("no_effect".to_string(), vec![0, 2, 3]), ("effect".to_string(), vec![1])];
        let conds = ablation_conditions(-200.0, 4, &[-150.0, -80.0], &regions);
        assert_eq!(conds.len(), 4);
        let rows = ablation_grid(&erps, &labels, &conds, &[0, 1], &DecodeConfig::default()).unwrap();
        assert!((rows[0].auc - 0.5).abs() <= 0.1, "{}", rows[0].auc);
        assert!(rows[1].auc > 0.9, "{}", rows[1].auc);
        assert!((rows[2].auc - 0.5).abs() <= 0.1, "{}", rows[2].auc);
        assert!(rows[3].auc > 0.9);
    }

    #[test]
    fn deterministic() {
        let (erps, labels) = cohort(5, 3, 4, 1..2, 2.0, 5);
        let cfg = DecodeConfig::default();
        assert_eq!(
            decode_timecourse(&erps, &labels, &[3, 4], &cfg).unwrap(),
            decode_timecourse(&erps, &labels, &[3, 4], &cfg).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn positive_rescaling_keeps_auc(seed in any::<u64>(), exp in -3i32..4, shift in -5.0f64..5.0) {
            let (erps, labels) = cohort(5, 3, 3, 0..3, 1.0, seed);
            let scale = 2f64.powi(exp);
            let scaled: Vec<ErpSeries> = erps.iter().map(|e| ErpSeries { data: e.data.mapv(|v| v * scale + shift), ..e.clone() }).collect();
            let cfg = DecodeConfig::default();
            let a = decode_timecourse(&erps, &labels, &[1], &cfg).unwrap();
            let b = decode_timecourse(&scaled, &labels, &[1], &cfg).unwrap();
            for (x, y) in a.mean_auc.iter().zip(&b.mean_auc) {
                prop_assert!((x - y).abs() < 1e-12, "{} vs {}", x, y);
            }
        }

        #[test]
        fn supports_bounded(seed in any::<u64>()) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let n_seeds = r.gen_range(1..4);
            let (erps, labels) = cohort(3, 2, 2, 0..1, 1.0, seed);
            let seeds: Vec<u64> = (0..n_seeds).collect();
            let dts = decode_timecourse(&erps, &labels, &seeds, &DecodeConfig::default()).unwrap();
            for t in 0..2 {
                prop_assert_eq!(dts.n_models[t], 6 * n_seeds as u32);
                for c in 0..2 {
                    prop_assert!(dts.support_counts[[c, t]] <= dts.n_models[t]);
                }
            }
        }
    }
}
