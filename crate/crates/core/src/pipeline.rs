//! Glue from a dataset to the decoding inputs: trial selection, per-trial
//! preprocessing, subject ERPs and class labels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterConfig, ClusterError, ClusterResult, TimeGrid};
use crate::dataset::{Dataset, EpochedTrial, Group, SubjectRecord};
use crate::grouping::{self, ErpSeries, GroupingError, GroupingSpec, Side};
use crate::mvpa::{self, ChannelImportanceMap, DecodeConfig, DecodingTimeSeries, MvpaError};
use crate::prep::{self, PrepConfig, PrepError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Mvpa(#[from] MvpaError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("invalid class split: {0}")]
    Split(String),
}

/// A single trial group, or the difference between the two sides of a
/// category (`a − b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum TrialType {
    Single(GroupingSpec),
    Contrast(GroupingSpec),
}

impl TrialType {
    pub fn label(&self) -> String {
        match self {
            TrialType::Single(s) => s.label(),
            TrialType::Contrast(s) => format!("{}:contrast", s.with_side(Side::Single).label()),
        }
    }

    /// The side-a spec and, for contrasts, the side-b spec.
    pub fn specs(&self) -> (GroupingSpec, Option<GroupingSpec>) {
        match self {
            TrialType::Single(s) => (s.clone(), None),
            TrialType::Contrast(s) => (s.with_side(Side::A), Some(s.with_side(Side::B))),
        }
    }

    pub fn validate(&self) -> Result<(), GroupingError> {
        let (a, b) = self.specs();
        a.validate()?;
        if let Some(b) = b {
            b.validate()?;
        }
        Ok(())
    }
}

/// Binary class assignment; the positive class is the depressed side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSplit {
    pub negative: Vec<Group>,
    pub positive: Vec<Group>,
}

impl ClassSplit {
    pub fn new(negative: &[Group], positive: &[Group]) -> Self {
        Self {
            negative: negative.to_vec(),
            positive: positive.to_vec(),
        }
    }

    pub fn c_vs_ds() -> Self {
        Self::new(&[Group::C], &[Group::D, Group::S])
    }

    pub fn d_vs_s() -> Self {
        Self::new(&[Group::D], &[Group::S])
    }

    pub fn c_vs_d() -> Self {
        Self::new(&[Group::C], &[Group::D])
    }

    /// `C vs DS` style label.
    pub fn label(&self) -> String {
        let join = |g: &[Group]| g.iter().map(|g| g.label()).collect::<String>();
        format!("{} vs {}", join(&self.negative), join(&self.positive))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.negative.is_empty() || self.positive.is_empty() {
            return Err(PipelineError::Split("both classes need at least one group".into()));
        }
        if self.negative.iter().any(|g| self.positive.contains(g)) {
            return Err(PipelineError::Split(format!("{} uses a group on both sides", self.label())));
        }
        Ok(())
    }

    pub fn label_of(&self, g: Group) -> Option<bool> {
        if self.positive.contains(&g) {
            Some(true)
        } else if self.negative.contains(&g) {
            Some(false)
        } else {
            None
        }
    }

    /// Subjects of either class with their labels, in dataset order.
    pub fn members<'a>(&self, ds: &'a Dataset) -> Vec<(&'a SubjectRecord, bool)> {
        ds.subjects
            .iter()
            .filter_map(|s| self.label_of(s.group).map(|l| (s, l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErpSet {
    pub erps: Vec<ErpSeries>,
    pub labels: Vec<bool>,
    pub excluded: Vec<Excluded>,
}

/// Baseline z-score and optional resampling of one trial.
pub fn preprocess(trial: &EpochedTrial, cfg: &PrepConfig) -> Result<EpochedTrial, PrepError> {
    let z = prep::baseline_zscore(trial, cfg)?;
    match cfg.target_rate_hz {
        Some(rate) if rate != z.sample_rate_hz => prep::resample(&z, rate),
        _ => Ok(z),
    }
}

fn erp_for(subject: &SubjectRecord, spec: &GroupingSpec, cfg: &PrepConfig) -> Result<ErpSeries, PipelineError> {
    let trials = grouping::select_trials(subject, spec)?
        .into_iter()
        .map(|t| preprocess(t, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&EpochedTrial> = trials.iter().collect();
    Ok(grouping::compute_erp(&subject.subject_id, &refs, &spec.label())?)
}

/// Full-resolution (not window-averaged) ERP of one subject for a trial type.
pub fn subject_erp(subject: &SubjectRecord, tt: &TrialType, cfg: &PrepConfig) -> Result<ErpSeries, PipelineError> {
    let (a, b) = tt.specs();
    let ea = erp_for(subject, &a, cfg)?;
    match b {
        None => Ok(ea),
        Some(b) => Ok(grouping::contrast(&ea, &erp_for(subject, &b, cfg)?)?),
    }
}

/// Window-averaged ERPs of every subject in `split`. Subjects without
/// matching trials are listed in `excluded` instead of failing the run.
pub fn build_erps(ds: &Dataset, tt: &TrialType, split: &ClassSplit, cfg: &PrepConfig) -> Result<ErpSet, PipelineError> {
    split.validate()?;
    tt.validate()?;
    let members = split.members(ds);
    let results: Vec<Result<ErpSeries, PipelineError>> = members
        .par_iter()
        .map(|(s, _)| {
            let erp = subject_erp(s, tt, cfg)?;
            Ok(erp.window_average(cfg.mvpa_window_ms, cfg.mvpa_stride_ms)?)
        })
        .collect();
    let mut set = ErpSet {
        erps: Vec::new(),
        labels: Vec::new(),
        excluded: Vec::new(),
    };
    for ((s, label), r) in members.into_iter().zip(results) {
        match r {
            Ok(e) => {
                set.erps.push(e);
                set.labels.push(label);
            }
            Err(PipelineError::Grouping(e @ GroupingError::EmptySelection { .. })) => {
                log::info!("excluding {}: {e}", s.subject_id);
                set.excluded.push(Excluded {
                    subject_id: s.subject_id.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeReport {
    pub decoding: DecodingTimeSeries,
    pub cluster: ClusterResult,
    /// Importance over the significant timepoints; `None` when nothing is significant.
    pub importance: Option<ChannelImportanceMap>,
    pub excluded: Vec<Excluded>,
}

/// Decoding time course, cluster test over the per-seed AUC series and the
/// channel importance map of the significant timepoints.
pub fn decode_and_test(
    set: &ErpSet,
    seeds: &[u64],
    decode: &DecodeConfig,
    cluster_cfg: &ClusterConfig,
) -> Result<DecodeReport, PipelineError> {
    let dts = mvpa::decode_timecourse(&set.erps, &set.labels, seeds, decode)?;
    let grid = TimeGrid {
        start_ms: dts.timepoints_ms[0],
        step_ms: dts.step_ms().max(f64::MIN_POSITIVE),
    };
    let cl = if seeds.len() >= 2 {
        cluster::cluster_test(dts.auc_per_seed.view(), grid, cluster_cfg)?
    } else {
        return Err(ClusterError::TooFewRuns(seeds.len()).into());
    };
    let sig = cl.significant_timepoints();
    let importance = if sig.is_empty() {
        None
    } else {
        Some(mvpa::channel_importance(&dts, &sig)?)
    };
    Ok(DecodeReport {
        decoding: dts,
        cluster: cl,
        importance,
        excluded: set.excluded.clone(),
    })
}
