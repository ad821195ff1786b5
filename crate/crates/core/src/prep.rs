//! Per-trial preprocessing: baseline z-scoring, block-mean resampling,
//! MVPA window averaging, and time/channel restriction.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChannelLayout, EpochedTrial, Region};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PrepError {
    #[error("baseline window [{0}, {1}) ms is not inside the epoch [{2}, {3}) ms")]
    BaselineOutsideEpoch(f64, f64, f64, f64),
    #[error("baseline window holds {0} sample(s); at least 2 required")]
    BaselineTooShort(usize),
    #[error("decimation ratio {0} is not a positive integer")]
    NonIntegerRatio(f64),
    #[error("window of {window_ms} ms is shorter than one sample period ({period_ms} ms)")]
    WindowTooShort { window_ms: f64, period_ms: f64 },
    #[error("selection is empty: {0}")]
    EmptySelection(String),
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub baseline_window_ms: (f64, f64),
    pub target_rate_hz: Option<f64>,
    pub mvpa_window_ms: f64,
    /// Stride between MVPA windows; `None` means stride = width (non-overlapping).
    pub mvpa_stride_ms: Option<f64>,
    pub std_floor: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            baseline_window_ms: (-200.0, 0.0),
            target_rate_hz: None,
            mvpa_window_ms: 10.0,
            mvpa_stride_ms: None,
            std_floor: 1e-10,
        }
    }
}

/// Indices of samples with `lo <= t < hi` on the grid `t_i = start + i * period`.
pub fn sample_range(
    epoch_start_ms: f64,
    sample_rate_hz: f64,
    n_samples: usize,
    lo_ms: f64,
    hi_ms: f64,
) -> Range<usize> {
    let period = 1000.0 / sample_rate_hz;
    let first = ((lo_ms - epoch_start_ms) / period - TIME_EPS).ceil().max(0.0) as usize;
    let end = ((hi_ms - epoch_start_ms) / period - TIME_EPS).ceil().max(0.0) as usize;
    first.min(n_samples)..end.min(n_samples)
}

/// Z-score each channel against its own baseline mean and population std.
pub fn baseline_zscore(trial: &EpochedTrial, cfg: &PrepConfig) -> Result<EpochedTrial, PrepError> {
    let (lo, hi) = cfg.baseline_window_ms;
    let epoch_end = trial.time_ms(trial.n_samples());
    if lo < trial.epoch_start_ms - TIME_EPS || hi > epoch_end + TIME_EPS || lo >= hi {
        return Err(PrepError::BaselineOutsideEpoch(lo, hi, trial.epoch_start_ms, epoch_end));
    }
    let range = sample_range(
        trial.epoch_start_ms,
        trial.sample_rate_hz,
        trial.n_samples(),
        lo,
        hi,
    );
    if range.len() < 2 {
        return Err(PrepError::BaselineTooShort(range.len()));
    }
    let mut data = trial.data.clone();
    let nb = range.len() as f64;
    for mut row in data.axis_iter_mut(Axis(0)) {
        let base = row.slice(s![range.clone()]);
        let m0 = base.sum() / nb;
        // second pass removes the rounding residual of the first
        let mean = m0 + base.iter().map(|v| v - m0).sum::<f64>() / nb;
        let var = base.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nb;
        let sd = var.sqrt();
        let sd = if sd < cfg.std_floor { 1.0 } else { sd };
        row.mapv_inplace(|v| (v - mean) / sd);
    }
    Ok(EpochedTrial {
        meta: trial.meta.clone(),
        data,
        sample_rate_hz: trial.sample_rate_hz,
        epoch_start_ms: trial.epoch_start_ms,
    })
}

/// Mean over windows of `width` samples taken every `stride` samples; a
/// trailing partial window is dropped.
pub fn window_mean(data: ArrayView2<f64>, width: usize, stride: usize) -> Array2<f64> {
    assert!(width >= 1 && stride >= 1);
    let n = data.ncols();
    let n_out = if n >= width { (n - width) / stride + 1 } else { 0 };
    let mut out = Array2::zeros((data.nrows(), n_out));
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let start = j * stride;
        let block = data.slice(s![.., start..start + width]);
        col.assign(&block.sum_axis(Axis(1)));
        col /= width as f64;
    }
    out
}

/// Non-overlapping block means of `k` samples.
pub fn block_mean(data: ArrayView2<f64>, k: usize) -> Array2<f64> {
    window_mean(data, k, k)
}

fn integer_ratio(ratio: f64) -> Result<usize, PrepError> {
    let k = ratio.round();
    if !ratio.is_finite() || k < 1.0 || (ratio - k).abs() > 1e-9 * k {
        return Err(PrepError::NonIntegerRatio(ratio));
    }
    Ok(k as usize)
}

/// Decimate by an integer factor `k = rate / target` using block means.
pub fn resample(trial: &EpochedTrial, target_rate_hz: f64) -> Result<EpochedTrial, PrepError> {
    let k = integer_ratio(trial.sample_rate_hz / target_rate_hz)?;
    Ok(decimate(trial, k))
}

pub fn decimate(trial: &EpochedTrial, k: usize) -> EpochedTrial {
    EpochedTrial {
        meta: trial.meta.clone(),
        data: block_mean(trial.data.view(), k),
        sample_rate_hz: trial.sample_rate_hz / k as f64,
        epoch_start_ms: trial.epoch_start_ms,
    }
}

/// Samples spanned by `window_ms` at `rate`, rounded to the nearest integer.
pub fn window_samples(window_ms: f64, sample_rate_hz: f64) -> Result<usize, PrepError> {
    let period_ms = 1000.0 / sample_rate_hz;
    if !(window_ms + TIME_EPS >= period_ms) {
        return Err(PrepError::WindowTooShort { window_ms, period_ms });
    }
    Ok((window_ms * sample_rate_hz / 1000.0).round() as usize)
}

/// Average consecutive non-overlapping windows of `window_ms`.
pub fn window_average(trial: &EpochedTrial, window_ms: f64) -> Result<EpochedTrial, PrepError> {
    let k = window_samples(window_ms, trial.sample_rate_hz)?;
    Ok(decimate(trial, k))
}

/// Windowed averaging with an explicit stride; the output grid has period `stride_ms`.
pub fn window_average_strided(
    trial: &EpochedTrial,
    window_ms: f64,
    stride_ms: f64,
) -> Result<EpochedTrial, PrepError> {
    let width = window_samples(window_ms, trial.sample_rate_hz)?;
    let stride = window_samples(stride_ms, trial.sample_rate_hz)?;
    Ok(EpochedTrial {
        meta: trial.meta.clone(),
        data: window_mean(trial.data.view(), width, stride),
        sample_rate_hz: trial.sample_rate_hz / stride as f64,
        epoch_start_ms: trial.epoch_start_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ChannelSelection {
    #[default]
    All,
    Names(Vec<String>),
    Regions(Vec<Region>),
}

/// Resolve a selection to layout indices, in layout order.
pub fn resolve_channels(
    layout: &ChannelLayout,
    selection: &ChannelSelection,
) -> Result<Vec<usize>, PrepError> {
    let idx = match selection {
        ChannelSelection::All => (0..layout.len()).collect(),
        ChannelSelection::Names(names) => {
            let mut idx = names
                .iter()
                .map(|n| layout.index_of(n).ok_or_else(|| PrepError::UnknownChannel(n.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            idx.sort_unstable();
            idx.dedup();
            idx
        }
        ChannelSelection::Regions(regions) => layout.indices_in(regions),
    };
    if idx.is_empty() {
        return Err(PrepError::EmptySelection(format!("no channels for {selection:?}")));
    }
    Ok(idx)
}

/// Keep samples with `start <= t < end` (when a window is given) and the
/// listed channels, in the order given.
pub fn restrict(
    trial: &EpochedTrial,
    time_ms: Option<(f64, f64)>,
    channels: &[usize],
) -> Result<EpochedTrial, PrepError> {
    let range = match time_ms {
        Some((lo, hi)) => sample_range(
            trial.epoch_start_ms,
            trial.sample_rate_hz,
            trial.n_samples(),
            lo,
            hi,
        ),
        None => 0..trial.n_samples(),
    };
    if range.is_empty() {
        return Err(PrepError::EmptySelection(format!(
            "time window {time_ms:?} holds no samples"
        )));
    }
    if channels.is_empty() {
        return Err(PrepError::EmptySelection("no channels".into()));
    }
    let sub = trial.data.slice(s![.., range.clone()]);
    let data = sub.select(Axis(0), channels);
    Ok(EpochedTrial {
        meta: trial.meta.clone(),
        data,
        sample_rate_hz: trial.sample_rate_hz,
        epoch_start_ms: trial.time_ms(range.start),
    })
}
