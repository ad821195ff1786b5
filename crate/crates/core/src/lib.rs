//! Trial-level EEG decoding and subject-level classification with resampling
//! statistics.

pub mod dataset;
pub mod grouping;
pub mod logreg;
pub mod prep;
pub mod rng;
pub mod stats;
pub mod cluster;
pub mod mvpa;
pub mod synth;
pub mod pipeline;
pub mod subject_clf;
pub mod cli;

pub use ndarray;
