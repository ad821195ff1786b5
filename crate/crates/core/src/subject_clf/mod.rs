//! Bootstrapped subject-level classification.
//!
//! Each subject contributes `n_boot` inputs, each the mean of
//! `trials_per_boot` trials drawn with replacement (or the difference of two
//! such means for a contrast). A fold's classifier is trained on the
//! bootstraps of its training subjects; a test subject's probability is the
//! fraction of its own bootstraps predicted positive. The positive class is
//! always the depressed side of the split.

pub mod mlp;
pub mod tables;

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, EpochedTrial, Gender, Group, Response, SubjectRecord};
use crate::grouping::{self, GroupingError, GroupingSpec};
use crate::logreg::{self, FitConfig, FitError, LogRegModel};
use crate::mvpa::{self, DecodeConfig, MvpaError};
use crate::pipeline::{self, ClassSplit, Excluded, PipelineError, TrialType};
use crate::prep::{self, PrepConfig, PrepError};
use crate::rng::{self, Rng};
use crate::stats::{self, AucWithCi, StatsError, TTestResult};

pub use mlp::{Mlp, MlpConfig};

#[derive(Debug, Error)]
pub enum ClfError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bootstrap an empty trial list")]
    NoTrials,
    #[error("fold {fold}: training subjects cover a single class")]
    SingleClassFold { fold: usize },
    #[error("fraction {fraction} leaves no {what}")]
    EmptyFraction { fraction: f64, what: &'static str },
    #[error("no subject has the trials this analysis needs")]
    NoUnits,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Mvpa(#[from] MvpaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScheme {
    FiveFoldStratifiedGender,
    Loso,
}

/// What a unit's label means: class membership of the subject, or whether
/// the bootstrapped trials were agreed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabel {
    Group,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub trials_per_boot: usize,
    pub rng_seed: u64,
    pub cv: CvScheme,
    pub oversample_minority: bool,
    pub target_label: TargetLabel,
    /// Trials are resampled to this rate after baseline normalization.
    pub resample_hz: Option<f64>,
    /// Optional non-overlapping window averaging of each trial before
    /// flattening; shrinks the feature vector.
    pub feature_window_ms: Option<f64>,
    /// Share of training subjects held out to pick among candidate models.
    pub validation_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 200,
            trials_per_boot: 20,
            rng_seed: 0,
            cv: CvScheme::FiveFoldStratifiedGender,
            oversample_minority: true,
            target_label: TargetLabel::Group,
            resample_hz: Some(200.0),
            feature_window_ms: None,
            validation_fraction: 0.2,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), ClfError> {
        let bad = |m: String| Err(ClfError::Config(m));
        if self.n_boot == 0 {
            return bad("n_boot must be at least 1".into());
        }
        if self.trials_per_boot == 0 {
            return bad("trials_per_boot must be at least 1".into());
        }
        if let Some(r) = self.resample_hz {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("resample_hz must be positive, got {r}"));
            }
        }
        if let Some(w) = self.feature_window_ms {
            if !(w.is_finite() && w > 0.0) {
                return bad(format!("feature_window_ms must be positive, got {w}"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

fn default_lambdas() -> Vec<f64> {
    vec![FitConfig::default().lambda]
}

fn default_init_seeds() -> Vec<u64> {
    vec![0]
}

/// Classifier family and its candidate grid. Every candidate is fitted on
/// the inner training split; the best by validation AUC is refitted on the
/// whole fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    SparseLogreg {
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
        #[serde(default)]
        fit: FitConfig,
    },
    #[serde(rename = "mlp_1hidden")]
    Mlp1Hidden {
        #[serde(default = "default_init_seeds")]
        init_seeds: Vec<u64>,
        #[serde(default)]
        mlp: MlpConfig,
    },
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::SparseLogreg {
            lambdas: default_lambdas(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Candidate {
    Lambda(f64),
    InitSeed(u64),
}

impl Candidate {
    fn describe(&self) -> String {
        match self {
            Candidate::Lambda(l) => format!("lambda={l}"),
            Candidate::InitSeed(s) => format!("init_seed={s}"),
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<(), ClfError> {
        match self {
            ClassifierSpec::SparseLogreg { lambdas, fit } => {
                if lambdas.is_empty() {
                    return Err(ClfError::Config("classifier.lambdas is empty".into()));
                }
                for &l in lambdas {
                    FitConfig { lambda: l, ..fit.clone() }.validate()?;
                }
            }
            ClassifierSpec::Mlp1Hidden { init_seeds, mlp } => {
                if init_seeds.is_empty() {
                    return Err(ClfError::Config("classifier.init_seeds is empty".into()));
                }
                mlp.validate().map_err(|m| ClfError::Config(format!("classifier.{m}")))?;
            }
        }
        Ok(())
    }

    fn candidates(&self) -> Vec<Candidate> {
        match self {
            ClassifierSpec::SparseLogreg { lambdas, .. } => lambdas.iter().map(|&l| Candidate::Lambda(l)).collect(),
            ClassifierSpec::Mlp1Hidden { init_seeds, .. } => init_seeds.iter().map(|&s| Candidate::InitSeed(s)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Model {
    Logreg(LogRegModel),
    Mlp(Mlp),
}

impl Model {
    /// Number of rows predicted positive (decision value > 0).
    fn count_positive(&self, x: ArrayView2<f64>) -> Result<usize, ClfError> {
        let d = match self {
            Model::Logreg(m) => m.decision_function(x)?,
            Model::Mlp(m) => m.decision_function(x),
        };
        Ok(d.iter().filter(|&&v| v > 0.0).count())
    }
}

/// Probability of the positive class for one classified unit: a subject, or
/// a (subject, response) pair when the target is the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProbability {
    pub subject_id: String,
    pub group: Group,
    pub label: bool,
    pub n_positive: usize,
    pub n_boot_used: usize,
    pub p_positive_class: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train_units: usize,
    pub n_test_units: usize,
    pub selected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub probabilities: Vec<SubjectProbability>,
    pub auc: f64,
    pub folds: Vec<FoldSummary>,
    pub excluded: Vec<Excluded>,
}

impl ClassificationResult {
    pub fn scores(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| p.p_positive_class).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.probabilities.iter().map(|p| p.label).collect()
    }

    pub fn auc_with_ci(&self, inference: &InferenceConfig, seed: u64) -> Result<AucWithCi, ClfError> {
        Ok(stats::auc_with_ci(&self.scores(), &self.labels(), inference.n_boot, inference.n_perm, seed)?)
    }
}

/// Resampling settings for the AUC confidence interval and permutation p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub n_boot: usize,
    pub n_perm: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { n_boot: 1000, n_perm: 1000 }
    }
}

// Bootstrap stream tags per (subject, role).
const STREAM_SINGLE: u64 = 0;
const STREAM_SIDE_A: u64 = 1;
const STREAM_SIDE_B: u64 = 2;
const STREAM_AGREE: u64 = 3;
const STREAM_DISAGREE: u64 = 4;

fn draw_bootstraps(trials: &[Vec<f64>], n_boot: usize, per_boot: usize, r: &mut Rng) -> Array2<f64> {
    let d = trials[0].len();
    let mut out = Array2::zeros((n_boot, d));
    let inv = 1.0 / per_boot as f64;
    for mut row in out.rows_mut() {
        let acc = row.as_slice_mut().expect("standard layout");
        for _ in 0..per_boot {
            let t = &trials[r.gen_range(0..trials.len())];
            acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    out
}

/// `n_boot` means of `trials_per_boot` trials drawn with replacement. The
/// draws depend only on `(rng_seed, subject_id)`.
pub fn bootstrap_trials(
    trials: &[&EpochedTrial],
    subject_id: &str,
    cfg: &BootstrapConfig,
) -> Result<Vec<Array2<f64>>, ClfError> {
    cfg.validate()?;
    let first = trials.first().ok_or(ClfError::NoTrials)?;
    let shape = first.data.raw_dim();
    if let Some(t) = trials.iter().find(|t| t.data.raw_dim() != shape) {
        return Err(GroupingError::ShapeMismatch(format!(
            "trial of shape {:?} among trials of shape {:?}",
            t.data.dim(),
            first.data.dim()
        ))
        .into());
    }
    let flat: Vec<Vec<f64>> = trials.iter().map(|t| t.data.iter().copied().collect()).collect();
    let mut r = rng::rng_from(cfg.rng_seed, &[rng::hash_str(subject_id), STREAM_SINGLE]);
    let boots = draw_bootstraps(&flat, cfg.n_boot, cfg.trials_per_boot, &mut r);
    Ok(boots
        .rows()
        .into_iter()
        .map(|row| Array2::from_shape_vec(shape, row.to_vec()).expect("same element count"))
        .collect())
}

/// One classified unit: its bootstraps as feature rows.
struct Unit {
    id: String,
    subject: usize,
    group: Group,
    label: bool,
    x: Array2<f64>,
}

struct SubjectInfo {
    gender: Gender,
    class: bool,
}

/// Data-budget restriction applied while building units.
#[derive(Debug, Clone, Copy)]
struct TrialBudget {
    fraction: f64,
}

fn subset_indices(idx: Vec<usize>, budget: Option<TrialBudget>, seed: u64, subject_id: &str, stream: u64) -> Result<Vec<usize>, ClfError> {
    let Some(TrialBudget { fraction }) = budget else {
        return Ok(idx);
    };
    let k = (fraction * idx.len() as f64).round() as usize;
    if k == 0 {
        return Err(ClfError::EmptyFraction { fraction, what: "trials" });
    }
    // one fixed order per subject and stream, so smaller budgets nest in larger ones
    let mut order = idx;
    let mut r = rng::rng_from(seed, &[rng::hash_str(subject_id), 0x7a1, stream]);
    order.shuffle(&mut r);
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

fn trial_vectors(subject: &SubjectRecord, idx: &[usize], prep_cfg: &PrepConfig, cfg: &BootstrapConfig) -> Result<Vec<Vec<f64>>, ClfError> {
    let prep_cfg = PrepConfig {
        target_rate_hz: cfg.resample_hz,
        ..prep_cfg.clone()
    };
    idx.iter()
        .map(|&i| {
            let mut t = pipeline::preprocess(&subject.trials[i], &prep_cfg)?;
            if let Some(w) = cfg.feature_window_ms {
                t = prep::window_average(&t, w)?;
            }
            Ok(t.data.iter().copied().collect())
        })
        .collect()
}

fn unit_from(
    subject: &SubjectRecord,
    spec_idx: Vec<usize>,
    stream: u64,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
    budget: Option<TrialBudget>,
) -> Result<Array2<f64>, ClfError> {
    let idx = subset_indices(spec_idx, budget, cfg.rng_seed, &subject.subject_id, stream)?;
    let vecs = trial_vectors(subject, &idx, prep_cfg, cfg)?;
    let mut r = rng::rng_from(cfg.rng_seed, &[rng::hash_str(&subject.subject_id), stream]);
    Ok(draw_bootstraps(&vecs, cfg.n_boot, cfg.trials_per_boot, &mut r))
}

enum Built {
    Units(Vec<(String, bool, Array2<f64>)>),
    Excluded(Vec<Excluded>),
}

fn subject_units(
    subject: &SubjectRecord,
    class: bool,
    tt: &TrialType,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
    budget: Option<TrialBudget>,
) -> Result<Built, ClfError> {
    let excluded = |e: GroupingError| {
        log::info!("excluding {}: {e}", subject.subject_id);
        Built::Excluded(vec![Excluded {
            subject_id: subject.subject_id.clone(),
            reason: e.to_string(),
        }])
    };
    let select = |spec: &GroupingSpec| grouping::select_indices(subject, spec);
    match cfg.target_label {
        TargetLabel::Group => {
            let (a, b) = tt.specs();
            let ia = match select(&a) {
                Ok(i) => i,
                Err(e @ GroupingError::EmptySelection { .. }) => return Ok(excluded(e)),
                Err(e) => return Err(e.into()),
            };
            let x = match b {
                None => unit_from(subject, ia, STREAM_SINGLE, prep_cfg, cfg, budget)?,
                Some(b) => {
                    let ib = match select(&b) {
                        Ok(i) => i,
                        Err(e @ GroupingError::EmptySelection { .. }) => return Ok(excluded(e)),
                        Err(e) => return Err(e.into()),
                    };
                    let xa = unit_from(subject, ia, STREAM_SIDE_A, prep_cfg, cfg, budget)?;
                    xa - unit_from(subject, ib, STREAM_SIDE_B, prep_cfg, cfg, budget)?
                }
            };
            Ok(Built::Units(vec![(subject.subject_id.clone(), class, x)]))
        }
        TargetLabel::Response => {
            let TrialType::Single(spec) = tt else {
                return Err(ClfError::Config("target_label = response needs a single trial type".into()));
            };
            let idx = match select(spec) {
                Ok(i) => i,
                Err(e @ GroupingError::EmptySelection { .. }) => return Ok(excluded(e)),
                Err(e) => return Err(e.into()),
            };
            let mut units = Vec::new();
            let mut skipped = Vec::new();
            for (resp, stream, name) in [
                (Response::Agree, STREAM_AGREE, "agree"),
                (Response::Disagree, STREAM_DISAGREE, "disagree"),
            ] {
                let part: Vec<usize> = idx.iter().copied().filter(|&i| subject.trials[i].meta.response == resp).collect();
                let id = format!("{}:{name}", subject.subject_id);
                if part.is_empty() {
                    log::info!("excluding {id}: no {name} trials");
                    skipped.push(Excluded {
                        subject_id: id,
                        reason: format!("no {name} trials in {}", spec.label()),
                    });
                    continue;
                }
                let x = unit_from(subject, part, stream, prep_cfg, cfg, budget)?;
                units.push((id, resp == Response::Agree, x));
            }
            if units.is_empty() {
                Ok(Built::Excluded(skipped))
            } else {
                if !skipped.is_empty() {
                    // a subject with one response side still contributes that unit
                    log::info!("{}: {} response unit(s) skipped", subject.subject_id, skipped.len());
                }
                Ok(Built::Units(units))
            }
        }
    }
}

struct UnitSet {
    subjects: Vec<SubjectInfo>,
    units: Vec<Unit>,
    excluded: Vec<Excluded>,
}

fn build_units(
    members: &[(&SubjectRecord, bool)],
    tt: &TrialType,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
    budget: Option<TrialBudget>,
) -> Result<UnitSet, ClfError> {
    let built: Vec<Result<Built, ClfError>> = members
        .par_iter()
        .map(|(s, class)| subject_units(s, *class, tt, prep_cfg, cfg, budget))
        .collect();
    let mut set = UnitSet {
        subjects: Vec::new(),
        units: Vec::new(),
        excluded: Vec::new(),
    };
    for ((s, class), b) in members.iter().zip(built) {
        match b? {
            Built::Units(us) => {
                let subject = set.subjects.len();
                set.subjects.push(SubjectInfo {
                    gender: s.gender,
                    class: *class,
                });
                for (id, label, x) in us {
                    set.units.push(Unit {
                        id,
                        subject,
                        group: s.group,
                        label,
                        x,
                    });
                }
            }
            Built::Excluded(e) => set.excluded.extend(e),
        }
    }
    if !set.excluded.is_empty() {
        log::info!("{} unit(s) excluded for missing trials", set.excluded.len());
    }
    if set.units.is_empty() {
        return Err(ClfError::NoUnits);
    }
    Ok(set)
}

/// Fold index per subject. Subjects are stratified by (gender, class) and
/// dealt round-robin with one running counter, so every fold's count of each
/// gender differs from every other fold's by at most one.
pub fn assign_folds(strata: &[(Gender, bool)], k: usize, seed: u64) -> Vec<usize> {
    let k = k.clamp(1, strata.len().max(1));
    let mut by: BTreeMap<(Gender, bool), Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        by.entry(*s).or_default().push(i);
    }
    let mut r = rng::rng_from(seed, &[0xf01d]);
    let mut fold = vec![0; strata.len()];
    let mut counter = 0;
    for members in by.values_mut() {
        members.shuffle(&mut r);
        for &i in members.iter() {
            fold[i] = counter % k;
            counter += 1;
        }
    }
    fold
}

fn fold_assignment(subjects: &[SubjectInfo], cv: CvScheme, seed: u64) -> (Vec<usize>, usize) {
    match cv {
        CvScheme::Loso => ((0..subjects.len()).collect(), subjects.len()),
        CvScheme::FiveFoldStratifiedGender => {
            let strata: Vec<(Gender, bool)> = subjects.iter().map(|s| (s.gender, s.class)).collect();
            let folds = assign_folds(&strata, 5, seed);
            let k = folds.iter().max().map_or(1, |m| m + 1);
            (folds, k)
        }
    }
}

fn fit_candidate(units: &[&Unit], cand: Candidate, clf: &ClassifierSpec, cfg: &BootstrapConfig, seed: u64) -> Result<Model, ClfError> {
    let views: Vec<ArrayView2<f64>> = units.iter().map(|u| u.x.view()).collect();
    let mut x = concatenate(Axis(0), &views).map_err(|e| ClfError::Config(format!("inconsistent feature sizes: {e}")))?;
    let mut y: Vec<bool> = units.iter().flat_map(|u| std::iter::repeat(u.label).take(u.x.nrows())).collect();
    if cfg.oversample_minority {
        let idx = logreg::oversample_indices(&y, &mut rng::rng_from(seed, &[0x05a]));
        if idx.len() > y.len() {
            x = x.select(Axis(0), &idx);
            y = idx.iter().map(|&i| y[i]).collect();
        }
    }
    match (clf, cand) {
        (ClassifierSpec::SparseLogreg { fit, .. }, Candidate::Lambda(lambda)) => {
            let fc = FitConfig {
                lambda,
                rng_seed: seed,
                ..fit.clone()
            };
            Ok(Model::Logreg(logreg::fit(x.view(), &y, &fc)?))
        }
        (ClassifierSpec::Mlp1Hidden { mlp, .. }, Candidate::InitSeed(s)) => {
            Ok(Model::Mlp(Mlp::train(x.view(), &y, mlp, rng::derive_seed(seed, &[s]))))
        }
        _ => unreachable!("candidate kinds come from the same spec"),
    }
}

/// Subject-level split of `train` into inner-train and validation units,
/// stratified by class.
fn validation_split<'a>(train: &[&'a Unit], subjects: &[SubjectInfo], fraction: f64, seed: u64) -> (Vec<&'a Unit>, Vec<&'a Unit>) {
    let mut ids: Vec<usize> = train.iter().map(|u| u.subject).collect();
    ids.dedup();
    let mut r = rng::rng_from(seed, &[0x1a1]);
    let mut val = Vec::new();
    for class in [false, true] {
        let mut c: Vec<usize> = ids.iter().copied().filter(|&s| subjects[s].class == class).collect();
        if c.len() < 2 {
            continue;
        }
        c.shuffle(&mut r);
        let k = ((fraction * c.len() as f64).round() as usize).clamp(1, c.len() - 1);
        val.extend_from_slice(&c[..k]);
    }
    train.iter().partition(|u| !val.contains(&u.subject))
}

fn unit_probabilities(model: &Model, units: &[&Unit]) -> Result<Vec<f64>, ClfError> {
    units
        .iter()
        .map(|u| Ok(model.count_positive(u.x.view())? as f64 / u.x.nrows() as f64))
        .collect()
}

/// Picks the candidate with the best validation AUC (first on ties) and
/// refits it on all of `train`.
fn select_and_fit(
    train: &[&Unit],
    subjects: &[SubjectInfo],
    clf: &ClassifierSpec,
    cfg: &BootstrapConfig,
    seed: u64,
) -> Result<(Model, Candidate), ClfError> {
    let cands = clf.candidates();
    let mut best = cands[0];
    if cands.len() > 1 {
        let (inner, val) = validation_split(train, subjects, cfg.validation_fraction, seed);
        let inner_ok = inner.iter().any(|u| u.label) && inner.iter().any(|u| !u.label);
        if inner_ok && !val.is_empty() {
            let labels: Vec<bool> = val.iter().map(|u| u.label).collect();
            let mut best_auc = f64::NEG_INFINITY;
            for &c in &cands {
                let m = fit_candidate(&inner, c, clf, cfg, seed)?;
                match stats::auc(&unit_probabilities(&m, &val)?, &labels) {
                    Ok(a) if a > best_auc => {
                        best_auc = a;
                        best = c;
                    }
                    Ok(_) => {}
                    Err(e) => {
                        log::warn!("validation AUC undefined ({e}); keeping the first candidate");
                        break;
                    }
                }
            }
        } else {
            log::warn!("too few training subjects for a validation split; keeping the first candidate");
        }
    }
    Ok((fit_candidate(train, best, clf, cfg, seed)?, best))
}

fn has_both(units: &[&Unit]) -> bool {
    units.iter().any(|u| u.label) && units.iter().any(|u| !u.label)
}

/// Cross-validated positive counts for `test`, a unit set aligned with
/// `train` (same subjects and units, possibly different bootstraps).
fn cross_validate(
    train: &UnitSet,
    test: &UnitSet,
    clf: &ClassifierSpec,
    cfg: &BootstrapConfig,
) -> Result<(Vec<usize>, Vec<FoldSummary>), ClfError> {
    let (folds, k) = fold_assignment(&train.subjects, cfg.cv, cfg.rng_seed);
    let per_fold: Vec<Result<(Vec<(usize, usize)>, FoldSummary), ClfError>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let tr: Vec<&Unit> = train.units.iter().filter(|u| folds[u.subject] != f).collect();
            let te: Vec<usize> = (0..test.units.len()).filter(|&i| folds[test.units[i].subject] == f).collect();
            if !has_both(&tr) {
                return Err(ClfError::SingleClassFold { fold: f });
            }
            let seed = rng::derive_seed(cfg.rng_seed, &[0xf0, f as u64]);
            let (model, chosen) = select_and_fit(&tr, &train.subjects, clf, cfg, seed)?;
            let counts = te
                .iter()
                .map(|&i| Ok((i, model.count_positive(test.units[i].x.view())?)))
                .collect::<Result<Vec<_>, ClfError>>()?;
            Ok((
                counts,
                FoldSummary {
                    fold: f,
                    n_train_units: tr.len(),
                    n_test_units: te.len(),
                    selected: chosen.describe(),
                },
            ))
        })
        .collect();
    let mut counts = vec![0; test.units.len()];
    let mut summaries = Vec::with_capacity(k);
    for r in per_fold {
        let (c, s) = r?;
        for (i, n) in c {
            counts[i] = n;
        }
        summaries.push(s);
    }
    Ok((counts, summaries))
}

fn probabilities(units: &[Unit], counts: &[usize]) -> Vec<SubjectProbability> {
    units
        .iter()
        .zip(counts)
        .map(|(u, &n)| SubjectProbability {
            subject_id: u.id.clone(),
            group: u.group,
            label: u.label,
            n_positive: n,
            n_boot_used: u.x.nrows(),
            p_positive_class: n as f64 / u.x.nrows() as f64,
        })
        .collect()
}

fn check_inputs(tt: &TrialType, split: &ClassSplit, clf: &ClassifierSpec, cfg: &BootstrapConfig) -> Result<(), ClfError> {
    cfg.validate()?;
    clf.validate()?;
    split.validate()?;
    tt.validate()?;
    Ok(())
}

fn classify_members(
    members: &[(&SubjectRecord, bool)],
    tt: &TrialType,
    clf: &ClassifierSpec,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
    train_budget: Option<TrialBudget>,
    test_budget: Option<TrialBudget>,
) -> Result<ClassificationResult, ClfError> {
    let train = build_units(members, tt, prep_cfg, cfg, train_budget)?;
    let test_alt = match test_budget {
        Some(_) if test_budget.map(|b| b.fraction) != train_budget.map(|b| b.fraction) => {
            let t = build_units(members, tt, prep_cfg, cfg, test_budget)?;
            if t.units.len() != train.units.len() {
                return Err(ClfError::Config("trial budget changed the set of classified units".into()));
            }
            Some(t)
        }
        _ => None,
    };
    let test = test_alt.as_ref().unwrap_or(&train);
    let (counts, folds) = cross_validate(&train, test, clf, cfg)?;
    let probabilities = probabilities(&test.units, &counts);
    let scores: Vec<f64> = probabilities.iter().map(|p| p.p_positive_class).collect();
    let labels: Vec<bool> = probabilities.iter().map(|p| p.label).collect();
    let auc = stats::auc(&scores, &labels)?;
    Ok(ClassificationResult {
        probabilities,
        auc,
        folds,
        excluded: train.excluded,
    })
}

/// Cross-validated bootstrapped classification of the subjects in `split`.
pub fn run_subject_classification(
    ds: &Dataset,
    tt: &TrialType,
    split: &ClassSplit,
    clf: &ClassifierSpec,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
) -> Result<ClassificationResult, ClfError> {
    check_inputs(tt, split, clf, cfg)?;
    classify_members(&split.members(ds), tt, clf, prep_cfg, cfg, None, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub train_split: String,
    /// Groups in report order; t-test indices refer to this list.
    pub groups: Vec<Group>,
    pub mean_p: Vec<f64>,
    pub n_per_group: Vec<usize>,
    /// Out-of-fold probabilities for training subjects, full-model
    /// probabilities for held-out subjects.
    pub probabilities: Vec<SubjectProbability>,
    pub training_auc: f64,
    pub ttests: Vec<TTestResult>,
    /// Why `ttests` is empty, when it is.
    pub ttest_error: Option<String>,
    pub excluded: Vec<Excluded>,
}

/// Trains on `train` and scores the held-out groups with a model fitted on
/// all training subjects. Training subjects keep their cross-validated
/// probabilities so that every group is scored out of sample.
pub fn transfer_eval(
    ds: &Dataset,
    tt: &TrialType,
    train: &ClassSplit,
    held_out: &[Group],
    clf: &ClassifierSpec,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
) -> Result<TransferReport, ClfError> {
    check_inputs(tt, train, clf, cfg)?;
    if held_out.is_empty() {
        return Err(ClfError::Config("no held-out group".into()));
    }
    if held_out.iter().any(|g| train.label_of(*g).is_some()) {
        return Err(ClfError::Config(format!("held-out groups overlap {}", train.label())));
    }
    if cfg.target_label != TargetLabel::Group {
        return Err(ClfError::Config("transfer evaluation predicts group membership only".into()));
    }
    let members = train.members(ds);
    let cv = classify_members(&members, tt, clf, prep_cfg, cfg, None, None)?;

    let set = build_units(&members, tt, prep_cfg, cfg, None)?;
    let all: Vec<&Unit> = set.units.iter().collect();
    let (model, _) = select_and_fit(&all, &set.subjects, clf, cfg, rng::derive_seed(cfg.rng_seed, &[0x7a]))?;
    let held: Vec<(&SubjectRecord, bool)> = ds
        .subjects
        .iter()
        .filter(|s| held_out.contains(&s.group))
        .map(|s| (s, true))
        .collect();
    let held_set = build_units(&held, tt, prep_cfg, cfg, None)?;
    let refs: Vec<&Unit> = held_set.units.iter().collect();
    let counts = refs
        .iter()
        .map(|u| model.count_positive(u.x.view()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut probs = cv.probabilities.clone();
    probs.extend(probabilities(&held_set.units, &counts));

    let groups: Vec<Group> = Group::ALL
        .into_iter()
        .filter(|g| probs.iter().any(|p| p.group == *g))
        .collect();
    let per_group: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| probs.iter().filter(|p| p.group == *g).map(|p| p.p_positive_class).collect())
        .collect();
    let mean_p = per_group.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let pairs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|a| (a + 1..groups.len()).map(move |b| (a, b)))
        .collect();
    // perfectly separated groups have zero variance; report that instead of failing
    let (ttests, ttest_error) = match stats::ttest_bonferroni(&per_group, &pairs) {
        Ok(t) => (t, None),
        Err(e @ StatsError::DegenerateGroup(_)) => {
            log::warn!("t-tests skipped: {e}");
            (Vec::new(), Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut excluded = cv.excluded;
    excluded.extend(held_set.excluded);
    Ok(TransferReport {
        train_split: train.label(),
        n_per_group: per_group.iter().map(Vec::len).collect(),
        groups,
        mean_p,
        probabilities: probs,
        training_auc: cv.auc,
        ttests,
        ttest_error,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetAxis {
    TrialsTrainTest,
    TrialsTestOnly,
    DepressedSubjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub axis: BudgetAxis,
    pub fraction: f64,
    pub auc: f64,
    pub n_units: usize,
}

/// Reruns the classification with a fraction of the trials or of the
/// positive-class subjects. Subsets are seeded and nested: a smaller
/// fraction keeps a subset of what a larger one keeps, and 1.0 is the
/// unrestricted run.
pub fn budget_ablation(
    ds: &Dataset,
    tt: &TrialType,
    split: &ClassSplit,
    clf: &ClassifierSpec,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
    axis: BudgetAxis,
    fractions: &[f64],
) -> Result<Vec<BudgetRow>, ClfError> {
    check_inputs(tt, split, clf, cfg)?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(ClfError::Config(format!("fractions must be in (0, 1], got {f}")));
    }
    let members = split.members(ds);
    fractions
        .iter()
        .map(|&fraction| {
            let budget = (fraction < 1.0).then_some(TrialBudget { fraction });
            let res = match axis {
                BudgetAxis::TrialsTrainTest => classify_members(&members, tt, clf, prep_cfg, cfg, budget, budget)?,
                BudgetAxis::TrialsTestOnly => classify_members(&members, tt, clf, prep_cfg, cfg, None, budget)?,
                BudgetAxis::DepressedSubjects => {
                    let kept = keep_positive_fraction(&members, fraction, cfg.rng_seed)?;
                    classify_members(&kept, tt, clf, prep_cfg, cfg, None, None)?
                }
            };
            Ok(BudgetRow {
                axis,
                fraction,
                auc: res.auc,
                n_units: res.probabilities.len(),
            })
        })
        .collect()
}

fn keep_positive_fraction<'a>(
    members: &[(&'a SubjectRecord, bool)],
    fraction: f64,
    seed: u64,
) -> Result<Vec<(&'a SubjectRecord, bool)>, ClfError> {
    let mut pos: Vec<usize> = (0..members.len()).filter(|&i| members[i].1).collect();
    let k = (fraction * pos.len() as f64).round() as usize;
    if k == 0 {
        return Err(ClfError::EmptyFraction {
            fraction,
            what: "positive-class subjects",
        });
    }
    pos.shuffle(&mut rng::rng_from(seed, &[0xdeb]));
    pos.truncate(k);
    Ok(members
        .iter()
        .enumerate()
        .filter(|(i, (_, label))| !label || pos.contains(i))
        .map(|(_, m)| *m)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NbAxis {
    /// Bootstraps generated per subject.
    NBoot,
    /// Trials averaged per bootstrap.
    TrialsPerBoot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbRow {
    pub axis: NbAxis,
    pub value: usize,
    pub condition: String,
    pub auc: AucWithCi,
}

/// AUC with CI for every (value, condition) pair, varying `n_boot` or
/// `trials_per_boot` and keeping the rest of `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn nb_ablation(
    ds: &Dataset,
    conditions: &[(String, TrialType)],
    split: &ClassSplit,
    clf: &ClassifierSpec,
    prep_cfg: &PrepConfig,
    cfg: &BootstrapConfig,
    inference: &InferenceConfig,
    axis: NbAxis,
    values: &[usize],
) -> Result<Vec<NbRow>, ClfError> {
    let mut rows = Vec::with_capacity(values.len() * conditions.len());
    for &value in values {
        let c = match axis {
            NbAxis::NBoot => BootstrapConfig { n_boot: value, ..cfg.clone() },
            NbAxis::TrialsPerBoot => BootstrapConfig {
                trials_per_boot: value,
                ..cfg.clone()
            },
        };
        for (name, tt) in conditions {
            let res = run_subject_classification(ds, tt, split, clf, prep_cfg, &c)?;
            let seed = rng::derive_seed(cfg.rng_seed, &[0xc1, rng::hash_str(name), value as u64]);
            rows.push(NbRow {
                axis,
                value,
                condition: name.clone(),
                auc: res.auc_with_ci(inference, seed)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralResult {
    pub subject_ids: Vec<String>,
    pub labels: Vec<bool>,
    /// Held-out positive-class probabilities.
    pub scores: Vec<f64>,
    pub auc: f64,
    /// Fitted on every included subject.
    pub model: LogRegModel,
    pub excluded: Vec<Excluded>,
}

/// Sparse logistic regression on the four response-profile fractions of
/// each subject, evaluated with leave-one-subject-out CV.
pub fn behavioral_baseline(ds: &Dataset, split: &ClassSplit, cfg: &DecodeConfig, seed: u64) -> Result<BehavioralResult, ClfError> {
    split.validate()?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (s, label) in split.members(ds) {
        match grouping::behavioral_features(s) {
            Ok(f) => {
                ids.push(s.subject_id.clone());
                labels.push(label);
                rows.extend_from_slice(&f);
            }
            Err(e @ GroupingError::NoResponses(_)) => excluded.push(Excluded {
                subject_id: s.subject_id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let x = Array2::from_shape_vec((ids.len(), 4), rows).expect("four features per subject");
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let (margins, _) = mvpa::loso_scores(x.view(), &labels, &id_refs, seed, cfg)?;
    let scores: Vec<f64> = margins.iter().map(|&m| logreg::sigmoid(m)).collect();
    let auc = stats::auc(&scores, &labels)?;
    let fc = FitConfig {
        rng_seed: seed,
        ..cfg.fit.clone()
    };
    let model = logreg::fit(x.view(), &labels, &fc)?;
    Ok(BehavioralResult {
        subject_ids: ids,
        labels,
        scores,
        auc,
        model,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub threshold: f64,
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Sensitivity and specificity when `p >= threshold` is called positive.
pub fn confusion_at_threshold(probs: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion, ClfError> {
    if probs.len() != labels.len() {
        return Err(StatsError::LengthMismatch(probs.len(), labels.len()).into());
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (&p, &l) in probs.iter().zip(labels) {
        match (l, p >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(StatsError::SingleClass {
            positives: tp + fn_,
            negatives: tn + fp,
        }
        .into());
    }
    Ok(Confusion {
        threshold,
        tp,
        fn_,
        tn,
        fp,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
    })
}

#[cfg(test)]
mod tests;
