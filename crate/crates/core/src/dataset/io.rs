//! On-disk format: `manifest.json` plus one raw little-endian float32 file and
//! one CSV metadata file per subject.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    validate, ChannelLayout, Dataset, DatasetError, EpochTiming, EpochedTrial, Gender, Group,
    Polarity, Questionnaire, Region, Response, SubjectRecord, Token, TrialMeta,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const META_HEADER: [&str; 6] = [
    "trial_index",
    "sentence_id",
    "sentiment",
    "last_word_valence",
    "response",
    "response_time_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub sample_rate_hz: f64,
    pub epoch_start_ms: f64,
    pub n_samples: usize,
    pub channels: Vec<String>,
    #[serde(default)]
    pub regions: BTreeMap<String, Region>,
    #[serde(default)]
    pub provenance: String,
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub subject_id: String,
    pub group: Group,
    pub gender: Gender,
    #[serde(default)]
    pub questionnaires: BTreeMap<Questionnaire, i64>,
    pub n_trials: usize,
    pub data_file: String,
    pub meta_file: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Read a dataset, checking only format-level properties (file shapes,
/// finiteness, enum tokens). [`load_dataset`] additionally validates.
pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mpath = manifest_path(path);
    let root = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| DatasetError::Manifest {
        path: mpath.clone(),
        source,
    })?;
    if manifest.version != 1 {
        return Err(DatasetError::Version(manifest.version));
    }
    let layout = ChannelLayout::with_regions(manifest.channels.clone(), &manifest.regions)?;
    let timing = EpochTiming {
        sample_rate_hz: manifest.sample_rate_hz,
        epoch_start_ms: manifest.epoch_start_ms,
        n_samples: manifest.n_samples,
    };

    let subjects = manifest
        .subjects
        .iter()
        .map(|ms| read_subject(&root, ms, layout.len(), &timing))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Dataset {
        layout,
        timing,
        subjects,
        provenance: manifest.provenance,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let ds = read_dataset(path)?;
    let violations = validate(&ds);
    if violations.is_empty() {
        Ok(ds)
    } else {
        Err(DatasetError::Invalid(violations))
    }
}

fn read_subject(
    root: &Path,
    ms: &ManifestSubject,
    n_channels: usize,
    timing: &EpochTiming,
) -> Result<SubjectRecord, DatasetError> {
    let metas = read_meta(root, ms)?;

    let dpath = root.join(&ms.data_file);
    let bytes = fs::read(&dpath).map_err(io_err(&dpath))?;
    let per_trial = n_channels * timing.n_samples;
    let expected = (ms.n_trials * per_trial * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(DatasetError::ShapeMismatch {
            subject_id: ms.subject_id.clone(),
            file: ms.data_file.clone(),
            n_trials: ms.n_trials,
            n_channels,
            n_samples: timing.n_samples,
            expected,
            found: bytes.len() as u64,
        });
    }

    let mut values = Vec::with_capacity(ms.n_trials * per_trial);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            let trial = i / per_trial;
            let within = i % per_trial;
            return Err(DatasetError::NonFinite {
                subject_id: ms.subject_id.clone(),
                trial,
                channel: within / timing.n_samples,
                sample: within % timing.n_samples,
                offset: (i * 4) as u64,
            });
        }
        values.push(f64::from(v));
    }

    let trials = metas
        .into_iter()
        .zip(values.chunks_exact(per_trial.max(1)))
        .map(|(meta, chunk)| EpochedTrial {
            meta,
            data: Array2::from_shape_vec((n_channels, timing.n_samples), chunk.to_vec())
                .expect("chunk length equals channels x samples"),
            sample_rate_hz: timing.sample_rate_hz,
            epoch_start_ms: timing.epoch_start_ms,
        })
        .collect();

    Ok(SubjectRecord {
        subject_id: ms.subject_id.clone(),
        group: ms.group,
        gender: ms.gender,
        questionnaires: ms.questionnaires.clone(),
        trials,
    })
}

fn read_meta(root: &Path, ms: &ManifestSubject) -> Result<Vec<TrialMeta>, DatasetError> {
    let mpath = root.join(&ms.meta_file);
    let file = fs::File::open(&mpath).map_err(io_err(&mpath))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let meta_err = |line: u64, message: String| DatasetError::Meta {
        subject_id: ms.subject_id.clone(),
        file: ms.meta_file.clone(),
        line,
        message,
    };

    let header = reader
        .headers()
        .map_err(|e| meta_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(META_HEADER.iter().copied()) {
        return Err(meta_err(
            1,
            format!("header must be '{}'", META_HEADER.join(",")),
        ));
    }

    let mut out = Vec::with_capacity(ms.n_trials);
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| meta_err(line, e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let token = |k: usize, name: &'static str| DatasetError::UnknownToken {
            subject_id: ms.subject_id.clone(),
            file: ms.meta_file.clone(),
            line,
            field: name,
            token: field(k).to_string(),
        };

        let idx: usize = field(0)
            .parse()
            .map_err(|_| meta_err(line, format!("bad trial_index '{}'", field(0))))?;
        if idx != i {
            return Err(meta_err(line, format!("trial_index {idx} out of order, expected {i}")));
        }
        let sentence_id = field(1)
            .parse()
            .map_err(|_| meta_err(line, format!("bad sentence_id '{}'", field(1))))?;
        let sentiment = Polarity::from_token(field(2)).ok_or_else(|| token(2, "sentiment"))?;
        let last_word_valence =
            Polarity::from_token(field(3)).ok_or_else(|| token(3, "last_word_valence"))?;
        let response = Response::from_token(field(4)).ok_or_else(|| token(4, "response"))?;
        let response_time_ms = match field(5) {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| meta_err(line, format!("bad response_time_ms '{s}'")))?,
            ),
        };
        out.push(TrialMeta {
            sentence_id,
            sentiment,
            last_word_valence,
            response,
            response_time_ms,
        });
    }
    if out.len() != ms.n_trials {
        return Err(meta_err(
            out.len() as u64 + 1,
            format!("{} rows, manifest declares {} trials", out.len(), ms.n_trials),
        ));
    }
    Ok(out)
}

fn file_stem(index: usize, subject_id: &str) -> String {
    let clean: String = subject_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}")
}

/// Write `ds` under directory `path`. Samples are stored as float32, so the
/// round trip is bit-exact for every value representable in single precision
/// (all loaded and synthesized data).
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(path)?;
    for s in &ds.subjects {
        w.write_subject(s)?;
    }
    w.finish(&ds.layout, &ds.timing, &ds.provenance)
}

/// Incremental writer: subjects are flushed one at a time and the manifest
/// is written last, so datasets larger than memory can be produced.
pub struct DatasetWriter {
    root: PathBuf,
    subjects: Vec<ManifestSubject>,
}

impl DatasetWriter {
    pub fn create(path: &Path) -> Result<Self, DatasetError> {
        let subj_dir = path.join("subjects");
        fs::create_dir_all(&subj_dir).map_err(io_err(&subj_dir))?;
        Ok(Self {
            root: path.to_path_buf(),
            subjects: Vec::new(),
        })
    }

    pub fn write_subject(&mut self, s: &SubjectRecord) -> Result<(), DatasetError> {
        let stem = file_stem(self.subjects.len(), &s.subject_id);
        let data_file = format!("subjects/{stem}.f32");
        let meta_file = format!("subjects/{stem}.csv");

        let dpath = self.root.join(&data_file);
        let per_trial = s.trials.first().map_or(0, |t| t.data.len());
        let mut buf = Vec::with_capacity(s.trials.len() * per_trial * 4);
        for t in &s.trials {
            for v in t.data.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        fs::write(&dpath, &buf).map_err(io_err(&dpath))?;
        write_meta(&self.root.join(&meta_file), &s.trials)?;

        self.subjects.push(ManifestSubject {
            subject_id: s.subject_id.clone(),
            group: s.group,
            gender: s.gender,
            questionnaires: s.questionnaires.clone(),
            n_trials: s.trials.len(),
            data_file,
            meta_file,
        });
        Ok(())
    }

    pub fn finish(self, layout: &ChannelLayout, timing: &EpochTiming, provenance: &str) -> Result<(), DatasetError> {
        let manifest = Manifest {
            version: 1,
            sample_rate_hz: timing.sample_rate_hz,
            epoch_start_ms: timing.epoch_start_ms,
            n_samples: timing.n_samples,
            channels: layout.names().to_vec(),
            regions: layout.region_map(),
            provenance: provenance.to_string(),
            subjects: self.subjects,
        };
        let mpath = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&mpath, text).map_err(io_err(&mpath))
    }
}

fn write_meta(path: &Path, trials: &[EpochedTrial]) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str(&META_HEADER.join(","));
    out.push('\n');
    for (i, t) in trials.iter().enumerate() {
        let m = &t.meta;
        let rt = m.response_time_ms.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{i},{},{},{},{},{rt}\n",
            m.sentence_id,
            m.sentiment.as_token(),
            m.last_word_valence.as_token(),
            m.response.as_token()
        ));
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}
