//! Dataset schema: channel layout, epoched trials, subjects.
//!
//! In memory and on disk, trial data is laid out `[channels][samples]` per
//! trial (and `[trials][channels][samples]` per subject file). The
//! conventional `trials × time × channels` tensor is the transpose of each
//! trial matrix; channel-major rows keep every channel's time course
//! contiguous, and `data.column(t)` yields the spatial pattern at sample `t`.

mod io;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_dataset, read_dataset, save_dataset, DatasetWriter, Manifest, ManifestSubject, MANIFEST_FILE};
pub use validate::{validate, Violation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: std::path::PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported manifest version {0} (expected 1)")]
    Version(u32),
    #[error(
        "subject {subject_id}: {file} holds {found} bytes but the declared shape \
         {n_trials}x{n_channels}x{n_samples} float32 requires {expected}"
    )]
    ShapeMismatch {
        subject_id: String,
        file: String,
        n_trials: usize,
        n_channels: usize,
        n_samples: usize,
        expected: u64,
        found: u64,
    },
    #[error(
        "subject {subject_id}: non-finite value at trial {trial}, channel {channel}, \
         sample {sample} (byte offset {offset})"
    )]
    NonFinite {
        subject_id: String,
        trial: usize,
        channel: usize,
        sample: usize,
        offset: u64,
    },
    #[error("subject {subject_id}: {file} line {line}: unknown {field} token '{token}'")]
    UnknownToken {
        subject_id: String,
        file: String,
        line: u64,
        field: &'static str,
        token: String,
    },
    #[error("subject {subject_id}: {file} line {line}: {message}")]
    Meta {
        subject_id: String,
        file: String,
        line: u64,
        message: String,
    },
    #[error("channel layout: {0}")]
    Layout(String),
    #[error("dataset failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

/// Lowercase token conversion shared by the manifest, the meta CSV and the CLI.
pub trait Token: Sized {
    fn as_token(&self) -> &'static str;
    fn from_token(s: &str) -> Option<Self>;
}

macro_rules! token_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $tok:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $( #[serde(rename = $tok)] $variant ),+
        }

        impl Token for $name {
            fn as_token(&self) -> &'static str {
                match self { $( $name::$variant => $tok ),+ }
            }
            fn from_token(s: &str) -> Option<Self> {
                match s { $( $tok => Some($name::$variant), )+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_token())
            }
        }
    };
}

token_enum!(
    /// Scalp region used for channel ablations.
    Region { Anterior => "anterior", Central => "central", Posterior => "posterior" }
);
token_enum!(
    /// Sentence sentiment or last-word valence.
    Polarity { Positive => "positive", Negative => "negative", Neutral => "neutral" }
);
token_enum!(Response { Agree => "agree", Disagree => "disagree", None => "none" });
token_enum!(
    /// Participant group: control, depressed, depressed with suicidal ideation.
    Group { C => "c", D => "d", S => "s" }
);
token_enum!(Gender { Male => "male", Female => "female", Other => "other" });
token_enum!(Questionnaire {
    Phq9Screen => "phq9_screen",
    Phq9Dayof => "phq9_dayof",
    Sis => "sis",
    Gad7 => "gad7",
});

impl Group {
    pub const ALL: [Group; 3] = [Group::C, Group::D, Group::S];

    pub fn label(&self) -> &'static str {
        match self {
            Group::C => "C",
            Group::D => "D",
            Group::S => "S",
        }
    }
}

impl Questionnaire {
    pub const ALL: [Questionnaire; 4] = [
        Questionnaire::Phq9Screen,
        Questionnaire::Phq9Dayof,
        Questionnaire::Sis,
        Questionnaire::Gad7,
    ];
}

/// Default region for a 10-20/10-10 electrode name, by longest matching prefix.
///
/// Fp/AF/F are anterior; FC/FT/C/T/TP/CP central; P/PO/O/I posterior.
pub fn default_region(name: &str) -> Option<Region> {
    const PREFIXES: [(&str, Region); 13] = [
        ("fp", Region::Anterior),
        ("af", Region::Anterior),
        ("fc", Region::Central),
        ("ft", Region::Central),
        ("cp", Region::Central),
        ("tp", Region::Central),
        ("po", Region::Posterior),
        ("f", Region::Anterior),
        ("c", Region::Central),
        ("t", Region::Central),
        ("p", Region::Posterior),
        ("o", Region::Posterior),
        ("i", Region::Posterior),
    ];
    let lower = name.to_ascii_lowercase();
    PREFIXES
        .iter()
        .find(|(p, _)| lower.starts_with(p))
        .map(|(_, r)| *r)
}

/// 64-channel 10-10 montage.
pub const STANDARD_64: [&str; 64] = [
    "Fp1", "AF7", "AF3", "F1", "F3", "F5", "F7", "FT7", "FC5", "FC3", "FC1", "C1", "C3", "C5",
    "T7", "TP7", "CP5", "CP3", "CP1", "P1", "P3", "P5", "P7", "P9", "PO7", "PO3", "O1", "Iz",
    "Oz", "POz", "Pz", "CPz", "Fpz", "Fp2", "AF8", "AF4", "AFz", "Fz", "F2", "F4", "F6", "F8",
    "FT8", "FC6", "FC4", "FC2", "FCz", "Cz", "C2", "C4", "C6", "T8", "TP8", "CP6", "CP4", "CP2",
    "P2", "P4", "P6", "P8", "P10", "PO8", "PO4", "O2",
];

/// 16-channel subset used by the desk-scale presets.
pub const STANDARD_16: [&str; 16] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz", "C4", "T8", "P3", "Pz", "P4",
    "Oz",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLayout {
    names: Vec<String>,
    regions: Vec<Region>,
}

impl ChannelLayout {
    pub fn new(names: Vec<String>, regions: Vec<Region>) -> Result<Self, DatasetError> {
        if names.is_empty() {
            return Err(DatasetError::Layout("at least one channel required".into()));
        }
        if names.len() != regions.len() {
            return Err(DatasetError::Layout(format!(
                "{} names but {} regions",
                names.len(),
                regions.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::Layout(format!("duplicate channel '{n}'")));
            }
        }
        Ok(Self { names, regions })
    }

    /// Build a layout using [`default_region`], with explicit overrides taking precedence.
    pub fn with_regions(
        names: Vec<String>,
        overrides: &BTreeMap<String, Region>,
    ) -> Result<Self, DatasetError> {
        let regions = names
            .iter()
            .map(|n| {
                overrides
                    .get(n)
                    .copied()
                    .or_else(|| default_region(n))
                    .ok_or_else(|| DatasetError::Layout(format!("no region for channel '{n}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(unknown) = overrides.keys().find(|k| !names.contains(k)) {
            return Err(DatasetError::Layout(format!(
                "region given for unknown channel '{unknown}'"
            )));
        }
        Self::new(names, regions)
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, DatasetError> {
        Self::with_regions(
            names.iter().map(|s| s.as_ref().to_string()).collect(),
            &BTreeMap::new(),
        )
    }

    pub fn standard_64() -> Self {
        Self::from_names(&STANDARD_64).expect("built-in montage is valid")
    }

    pub fn standard_16() -> Self {
        Self::from_names(&STANDARD_16).expect("built-in montage is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn region_map(&self) -> BTreeMap<String, Region> {
        self.names
            .iter()
            .cloned()
            .zip(self.regions.iter().copied())
            .collect()
    }

    /// Channel indices (in layout order) belonging to any of `regions`.
    pub fn indices_in(&self, regions: &[Region]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| regions.contains(&self.regions[i]))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> ChannelLayout {
        ChannelLayout {
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            regions: indices.iter().map(|&i| self.regions[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub sentence_id: u32,
    pub sentiment: Polarity,
    pub last_word_valence: Polarity,
    pub response: Response,
    pub response_time_ms: Option<f64>,
}

impl TrialMeta {
    pub fn responded(&self) -> bool {
        self.response != Response::None
    }
}

/// One stimulus presentation, `[channels × samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochedTrial {
    pub meta: TrialMeta,
    pub data: Array2<f64>,
    pub sample_rate_hz: f64,
    /// Time of the first sample relative to stimulus onset.
    pub epoch_start_ms: f64,
}

impl EpochedTrial {
    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / self.sample_rate_hz
    }

    pub fn time_ms(&self, sample: usize) -> f64 {
        self.epoch_start_ms + sample as f64 * self.sample_period_ms()
    }
}

/// Sampling grid shared by every trial of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub sample_rate_hz: f64,
    pub epoch_start_ms: f64,
    pub n_samples: usize,
}

impl Default for EpochTiming {
    /// 1 kHz, `[-200, 900)` ms.
    fn default() -> Self {
        Self {
            sample_rate_hz: 1000.0,
            epoch_start_ms: -200.0,
            n_samples: 1100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub group: Group,
    pub gender: Gender,
    pub questionnaires: BTreeMap<Questionnaire, i64>,
    pub trials: Vec<EpochedTrial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: ChannelLayout,
    pub timing: EpochTiming,
    pub subjects: Vec<SubjectRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn groups_present(&self) -> Vec<Group> {
        let mut g: Vec<Group> = self.subjects.iter().map(|s| s.group).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn n_trials(&self) -> usize {
        self.subjects.iter().map(|s| s.trials.len()).sum()
    }
}
