//! Trial selection by stimulus/response condition, per-subject ERPs and
//! contrasts between opposing trial groups.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{EpochedTrial, Polarity, Response, SubjectRecord};
use crate::prep::{self, PrepError};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("subject {subject_id}: no trials match {spec}")]
    EmptySelection { subject_id: String, spec: String },
    #[error("invalid grouping: {0}")]
    InvalidSpec(String),
    #[error("cannot average an empty trial list")]
    NoTrials,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("subject {0} has no responded trials")]
    NoResponses(String),
    #[error(transparent)]
    Prep(#[from] PrepError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SentenceSentiment,
    LastWordValence,
    ResponseType,
    ResponseTime,
    All,
    RandomSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingSpec {
    pub category: Category,
    pub side: Side,
    /// Fraction of responded trials in each response-time group.
    #[serde(default = "default_rt_fraction")]
    pub rt_fraction: f64,
    /// Seed for `random_split`.
    #[serde(default)]
    pub rng_seed: u64,
    /// Polarity picked by a `single` selection on sentiment/valence (default neutral).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Polarity>,
}

fn default_rt_fraction() -> f64 {
    0.25
}

impl GroupingSpec {
    pub fn new(category: Category, side: Side) -> Self {
        Self {
            category,
            side,
            rt_fraction: default_rt_fraction(),
            rng_seed: 0,
            level: None,
        }
    }

    pub fn all() -> Self {
        Self::new(Category::All, Side::Single)
    }

    pub fn single(category: Category, level: Polarity) -> Self {
        Self {
            level: Some(level),
            ..Self::new(category, Side::Single)
        }
    }

    pub fn with_side(&self, side: Side) -> Self {
        Self { side, ..self.clone() }
    }

    /// Short stable label, e.g. `sentence_sentiment:a`.
    pub fn label(&self) -> String {
        let cat = serde_json::to_value(self.category)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        match (self.side, self.level) {
            (Side::A, _) => format!("{cat}:a"),
            (Side::B, _) => format!("{cat}:b"),
            (Side::Single, Some(l)) => format!("{cat}:{l}"),
            (Side::Single, None) => cat,
        }
    }

    pub fn validate(&self) -> Result<(), GroupingError> {
        if !(self.rt_fraction > 0.0 && self.rt_fraction <= 0.5) {
            return Err(GroupingError::InvalidSpec(format!(
                "rt_fraction must be in (0, 0.5], got {}",
                self.rt_fraction
            )));
        }
        match (self.category, self.side) {
            (Category::ResponseType | Category::ResponseTime | Category::RandomSplit, Side::Single) => {
                Err(GroupingError::InvalidSpec(format!(
                    "{} requires side a or b",
                    self.label()
                )))
            }
            _ => Ok(()),
        }
    }
}

fn empty(subject: &SubjectRecord, spec: &GroupingSpec) -> GroupingError {
    GroupingError::EmptySelection {
        subject_id: subject.subject_id.clone(),
        spec: spec.label(),
    }
}

/// Indices of the trials of `subject` selected by `spec`, in storage order.
pub fn select_indices(subject: &SubjectRecord, spec: &GroupingSpec) -> Result<Vec<usize>, GroupingError> {
    spec.validate()?;
    let trials = &subject.trials;
    let by_polarity = |get: fn(&EpochedTrial) -> Polarity| -> Vec<usize> {
        let want = match spec.side {
            Side::A => Polarity::Positive,
            Side::B => Polarity::Negative,
            Side::Single => spec.level.unwrap_or(Polarity::Neutral),
        };
        (0..trials.len()).filter(|&i| get(&trials[i]) == want).collect()
    };

    let idx = match spec.category {
        Category::All => (0..trials.len()).collect(),
        Category::SentenceSentiment => by_polarity(|t| t.meta.sentiment),
        Category::LastWordValence => by_polarity(|t| t.meta.last_word_valence),
        Category::ResponseType => {
            let want = if spec.side == Side::A { Response::Agree } else { Response::Disagree };
            (0..trials.len()).filter(|&i| trials[i].meta.response == want).collect()
        }
        Category::ResponseTime => {
            let mut responded: Vec<(f64, usize)> = trials
                .iter()
                .enumerate()
                .filter_map(|(i, t)| match (t.meta.responded(), t.meta.response_time_ms) {
                    (true, Some(rt)) => Some((rt, i)),
                    _ => None,
                })
                .collect();
            let n = responded.len();
            // ceil(fraction * n), capped so both sides stay disjoint
            let take = ((spec.rt_fraction * n as f64).ceil() as usize).min(n / 2);
            if spec.side == Side::A {
                responded.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            } else {
                responded.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            let mut idx: Vec<usize> = responded.into_iter().take(take).map(|(_, i)| i).collect();
            idx.sort_unstable();
            idx
        }
        Category::RandomSplit => {
            let mut order: Vec<usize> = (0..trials.len()).collect();
            let mut r = rng::rng_from(spec.rng_seed, &[rng::hash_str(&subject.subject_id)]);
            order.shuffle(&mut r);
            let half = trials.len() / 2;
            let mut idx = if spec.side == Side::A {
                order[..half].to_vec()
            } else {
                order[half..].to_vec()
            };
            idx.sort_unstable();
            idx
        }
    };
    if idx.is_empty() {
        return Err(empty(subject, spec));
    }
    Ok(idx)
}

pub fn select_trials<'a>(
    subject: &'a SubjectRecord,
    spec: &GroupingSpec,
) -> Result<Vec<&'a EpochedTrial>, GroupingError> {
    Ok(select_indices(subject, spec)?
        .into_iter()
        .map(|i| &subject.trials[i])
        .collect())
}

/// Per-subject averaged response `[channels × timepoints]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpSeries {
    pub subject_id: String,
    pub data: Array2<f64>,
    pub n_trials_averaged: usize,
    pub grouping: String,
    pub sample_rate_hz: f64,
    pub epoch_start_ms: f64,
}

impl ErpSeries {
    pub fn n_timepoints(&self) -> usize {
        self.data.ncols()
    }

    pub fn times_ms(&self) -> Vec<f64> {
        let period = 1000.0 / self.sample_rate_hz;
        (0..self.n_timepoints())
            .map(|i| self.epoch_start_ms + i as f64 * period)
            .collect()
    }

    /// Window-average onto the MVPA timepoint grid.
    pub fn window_average(&self, window_ms: f64, stride_ms: Option<f64>) -> Result<ErpSeries, GroupingError> {
        let width = prep::window_samples(window_ms, self.sample_rate_hz)?;
        let stride = match stride_ms {
            Some(s) => prep::window_samples(s, self.sample_rate_hz)?,
            None => width,
        };
        Ok(ErpSeries {
            data: prep::window_mean(self.data.view(), width, stride),
            sample_rate_hz: self.sample_rate_hz / stride as f64,
            ..self.clone()
        })
    }

    /// Restrict to samples in `[lo, hi)` ms and the given channel indices.
    pub fn restrict(&self, time_ms: Option<(f64, f64)>, channels: &[usize]) -> Result<ErpSeries, GroupingError> {
        let range = match time_ms {
            Some((lo, hi)) => prep::sample_range(self.epoch_start_ms, self.sample_rate_hz, self.n_timepoints(), lo, hi),
            None => 0..self.n_timepoints(),
        };
        if range.is_empty() || channels.is_empty() {
            return Err(PrepError::EmptySelection(format!("time {time_ms:?}, {} channels", channels.len())).into());
        }
        let data = self
            .data
            .slice(ndarray::s![.., range.clone()])
            .select(ndarray::Axis(0), channels);
        Ok(ErpSeries {
            data,
            epoch_start_ms: self.epoch_start_ms + range.start as f64 * 1000.0 / self.sample_rate_hz,
            ..self.clone()
        })
    }
}

/// Elementwise mean over trials.
pub fn compute_erp(
    subject_id: &str,
    trials: &[&EpochedTrial],
    grouping: &str,
) -> Result<ErpSeries, GroupingError> {
    let first = trials.first().ok_or(GroupingError::NoTrials)?;
    let dim = first.data.dim();
    let mut acc = Array2::<f64>::zeros(dim);
    for t in trials {
        if t.data.dim() != dim || t.sample_rate_hz != first.sample_rate_hz || t.epoch_start_ms != first.epoch_start_ms {
            return Err(GroupingError::ShapeMismatch(format!(
                "trial {:?} vs {:?}",
                t.data.dim(),
                dim
            )));
        }
        acc += &t.data;
    }
    acc /= trials.len() as f64;
    Ok(ErpSeries {
        subject_id: subject_id.to_string(),
        data: acc,
        n_trials_averaged: trials.len(),
        grouping: grouping.to_string(),
        sample_rate_hz: first.sample_rate_hz,
        epoch_start_ms: first.epoch_start_ms,
    })
}

/// `erp_a - erp_b` for the same subject.
pub fn contrast(erp_a: &ErpSeries, erp_b: &ErpSeries) -> Result<ErpSeries, GroupingError> {
    if erp_a.subject_id != erp_b.subject_id {
        return Err(GroupingError::ShapeMismatch(format!(
            "subjects differ: {} vs {}",
            erp_a.subject_id, erp_b.subject_id
        )));
    }
    if erp_a.data.dim() != erp_b.data.dim()
        || erp_a.sample_rate_hz != erp_b.sample_rate_hz
        || erp_a.epoch_start_ms != erp_b.epoch_start_ms
    {
        return Err(GroupingError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            erp_a.data.dim(),
            erp_b.data.dim()
        )));
    }
    Ok(ErpSeries {
        subject_id: erp_a.subject_id.clone(),
        data: &erp_a.data - &erp_b.data,
        n_trials_averaged: erp_a.n_trials_averaged.min(erp_b.n_trials_averaged),
        grouping: format!("{}-{}", erp_a.grouping, erp_b.grouping),
        sample_rate_hz: erp_a.sample_rate_hz,
        epoch_start_ms: erp_a.epoch_start_ms,
    })
}

/// Column names of [`behavioral_features`].
pub const BEHAVIOR_FEATURES: [&str; 4] = ["agree_positive", "disagree_positive", "agree_negative", "disagree_negative"];

/// `[agree|pos, disagree|pos, agree|neg, disagree|neg]` as fractions of the
/// subject's responded trials.
pub fn behavioral_features(subject: &SubjectRecord) -> Result<[f64; 4], GroupingError> {
    let mut counts = [0usize; 4];
    let mut responded = 0usize;
    for t in subject.trials.iter().filter(|t| t.meta.responded()) {
        responded += 1;
        let slot = match (t.meta.sentiment, t.meta.response) {
            (Polarity::Positive, Response::Agree) => Some(0),
            (Polarity::Positive, Response::Disagree) => Some(1),
            (Polarity::Negative, Response::Agree) => Some(2),
            (Polarity::Negative, Response::Disagree) => Some(3),
            _ => None,
        };
        if let Some(k) = slot {
            counts[k] += 1;
        }
    }
    if responded == 0 {
        return Err(GroupingError::NoResponses(subject.subject_id.clone()));
    }
    Ok(counts.map(|c| c as f64 / responded as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, Group, TrialMeta};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn trial(sentiment: Polarity, response: Response, rt: Option<f64>, fill: f64) -> EpochedTrial {
        EpochedTrial {
            meta: TrialMeta {
                sentence_id: 0,
                sentiment,
                last_word_valence: sentiment,
                response,
                response_time_ms: rt,
            },
            data: Array2::from_elem((2, 4), fill),
            sample_rate_hz: 1000.0,
            epoch_start_ms: -2.0,
        }
    }

    fn subject(trials: Vec<EpochedTrial>) -> SubjectRecord {
        SubjectRecord {
            subject_id: "s01".into(),
            group: Group::D,
            gender: Gender::Male,
            questionnaires: BTreeMap::new(),
            trials,
        }
    }

    fn rt_subject(rts: &[f64]) -> SubjectRecord {
        subject(
            rts.iter()
                .map(|&rt| trial(Polarity::Positive, Response::Agree, Some(rt), rt))
                .collect(),
        )
    }

    #[test]
    fn slow_group_takes_top_quarter() {
        let s = rt_subject(&[500.0, 900.0, 450.0, 1200.0, 700.0, 650.0, 800.0, 300.0]);
        let spec = GroupingSpec::new(Category::ResponseTime, Side::A);
        assert_eq!(select_indices(&s, &spec).unwrap(), vec![1, 3]);
        assert_eq!(select_indices(&s, &spec.with_side(Side::B)).unwrap(), vec![2, 7]);
    }

    #[test]
    fn rt_ties_break_by_trial_order() {
        let s = rt_subject(&[700.0, 700.0, 700.0, 100.0]);
        let spec = GroupingSpec::new(Category::ResponseTime, Side::A);
        assert_eq!(select_indices(&s, &spec).unwrap(), vec![0]);
    }

    #[test]
    fn all_and_random_split() {
        let s = rt_subject(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(select_indices(&s, &GroupingSpec::all()).unwrap().len(), 7);
        let mut spec = GroupingSpec::new(Category::RandomSplit, Side::A);
        spec.rng_seed = 11;
        let a = select_indices(&s, &spec).unwrap();
        assert_eq!(a, select_indices(&s, &spec).unwrap());
        let b = select_indices(&s, &spec.with_side(Side::B)).unwrap();
        assert_eq!(a.len() + b.len(), 7);
        assert!(a.iter().all(|i| !b.contains(i)));
    }

    #[test]
    fn sentiment_sides_and_neutral_single() {
        let s = subject(vec![
            trial(Polarity::Positive, Response::Agree, Some(1.0), 0.0),
            trial(Polarity::Negative, Response::Agree, Some(1.0), 0.0),
            trial(Polarity::Neutral, Response::None, None, 0.0),
        ]);
        let spec = GroupingSpec::new(Category::SentenceSentiment, Side::A);
        assert_eq!(select_indices(&s, &spec).unwrap(), vec![0]);
        assert_eq!(select_indices(&s, &spec.with_side(Side::B)).unwrap(), vec![1]);
        assert_eq!(
            select_indices(&s, &GroupingSpec::new(Category::SentenceSentiment, Side::Single)).unwrap(),
            vec![2]
        );
        let rt = GroupingSpec::new(Category::ResponseType, Side::B);
        assert!(matches!(select_indices(&s, &rt), Err(GroupingError::EmptySelection { .. })));
        assert!(select_indices(&s, &GroupingSpec::new(Category::ResponseType, Side::Single)).is_err());
    }

    #[test]
    fn erp_examples() {
        let t = trial(Polarity::Positive, Response::Agree, Some(1.0), 2.5);
        let e = compute_erp("s", &[&t], "x").unwrap();
        assert_eq!(e.data, t.data);
        let mut neg = t.clone();
        neg.data.mapv_inplace(|v| -v);
        let z = compute_erp("s", &[&t, &neg], "x").unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
        assert_eq!(compute_erp("s", &[], "x"), Err(GroupingError::NoTrials));
        let mut odd = t.clone();
        odd.data = Array2::zeros((3, 4));
        assert!(matches!(compute_erp("s", &[&t, &odd], "x"), Err(GroupingError::ShapeMismatch(_))));
    }

    fn kahan_mean(vals: impl Iterator<Item = f64>, n: usize) -> f64 {
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for v in vals {
            let y = v - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum / n as f64
    }

    #[test]
    fn erp_matches_compensated_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials: Vec<EpochedTrial> = (0..20)
            .map(|_| {
                let mut t = trial(Polarity::Neutral, Response::None, None, 0.0);
                t.data.mapv_inplace(|_| rng.gen_range(-100.0..100.0));
                t
            })
            .collect();
        let refs: Vec<&EpochedTrial> = trials.iter().collect();
        let e = compute_erp("s", &refs, "all").unwrap();
        for ((c, s), v) in e.data.indexed_iter() {
            let oracle = kahan_mean(trials.iter().map(|t| t.data[[c, s]]), 20);
            assert!((v - oracle).abs() < 1e-12);
        }
        assert_eq!(e.n_trials_averaged, 20);
    }

    #[test]
    fn contrast_properties() {
        let a = compute_erp("s", &[&trial(Polarity::Positive, Response::Agree, Some(1.0), 3.0)], "a").unwrap();
        let b = compute_erp("s", &[&trial(Polarity::Positive, Response::Agree, Some(1.0), 1.0)], "b").unwrap();
        assert!(contrast(&a, &a).unwrap().data.iter().all(|&v| v == 0.0));
        let ab = contrast(&a, &b).unwrap();
        let ba = contrast(&b, &a).unwrap();
        assert_eq!(ab.data, ba.data.mapv(|v| -v));
        assert_eq!(ab.grouping, "a-b");
        let mut other = b.clone();
        other.subject_id = "t".into();
        assert!(contrast(&a, &other).is_err());
    }

    #[test]
    fn behavioral_feature_examples() {
        let mut trials = Vec::new();
        for _ in 0..10 {
            trials.push(trial(Polarity::Positive, Response::Agree, Some(1.0), 0.0));
            trials.push(trial(Polarity::Negative, Response::Agree, Some(1.0), 0.0));
        }
        assert_eq!(behavioral_features(&subject(trials)).unwrap(), [0.5, 0.0, 0.5, 0.0]);
        let silent = subject(vec![trial(Polarity::Positive, Response::None, None, 0.0)]);
        assert!(matches!(behavioral_features(&silent), Err(GroupingError::NoResponses(_))));
    }

    #[test]
    fn erp_window_average_and_restrict() {
        let mut t = trial(Polarity::Neutral, Response::None, None, 0.0);
        t.data = Array2::from_shape_vec((2, 4), vec![1.0, 3.0, 5.0, 7.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        let e = compute_erp("s", &[&t], "all").unwrap();
        let w = e.window_average(2.0, None).unwrap();
        assert_eq!(w.data, Array2::from_shape_vec((2, 2), vec![2.0, 6.0, 0.0, 2.0]).unwrap());
        assert_eq!(w.times_ms(), vec![-2.0, 0.0]);
        let r = e.restrict(Some((0.0, 2.0)), &[1]).unwrap();
        assert_eq!(r.data, Array2::from_shape_vec((1, 2), vec![2.0, 2.0]).unwrap());
        assert_eq!(r.epoch_start_ms, 0.0);
    }

    proptest! {
        #[test]
        fn sides_are_disjoint(rts in proptest::collection::vec(0.0f64..2000.0, 1..40), frac in 0.05f64..0.5, seed in 0u64..100) {
            let s = rt_subject(&rts);
            for cat in [Category::ResponseTime, Category::RandomSplit] {
                let mut spec = GroupingSpec::new(cat, Side::A);
                spec.rt_fraction = frac;
                spec.rng_seed = seed;
                let a = select_indices(&s, &spec).unwrap_or_default();
                let b = select_indices(&s, &spec.with_side(Side::B)).unwrap_or_default();
                prop_assert!(a.iter().all(|i| !b.contains(i)));
            }
        }

        #[test]
        fn rt_selection_ignores_storage_order(mut rts in proptest::collection::vec(0u32..5000, 4..30), seed in 0u64..1000) {
            // distinct values: only ties depend on order
            rts.sort_unstable();
            rts.dedup();
            prop_assume!(rts.len() >= 4);
            let vals: Vec<f64> = rts.iter().map(|&v| f64::from(v)).collect();
            let mut shuffled = vals.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let spec = GroupingSpec::new(Category::ResponseTime, Side::A);
            let pick = |v: &[f64]| {
                let s = rt_subject(v);
                let mut out: Vec<f64> = select_indices(&s, &spec).unwrap().into_iter().map(|i| v[i]).collect();
                out.sort_by(f64::total_cmp);
                out
            };
            prop_assert_eq!(pick(&vals), pick(&shuffled));
        }

        #[test]
        fn erp_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trials: Vec<EpochedTrial> = (0..6).map(|_| {
                let mut t = trial(Polarity::Neutral, Response::None, None, 0.0);
                t.data.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
                t
            }).collect();
            let mut refs: Vec<&EpochedTrial> = trials.iter().collect();
            let a = compute_erp("s", &refs, "x").unwrap();
            refs.shuffle(&mut rng);
            let b = compute_erp("s", &refs, "x").unwrap();
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
