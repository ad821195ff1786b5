use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{Dataset, Response};

/// A single broken invariant. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub subject_id: Option<String>,
    pub trial: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = &self.subject_id {
            write!(f, "subject {s}: ")?;
        }
        if let Some(t) = self.trial {
            write!(f, "trial {t}: ")?;
        }
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub fn validate(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let timing = &ds.timing;

    let dataset_level = |field, message: String| Violation {
        subject_id: None,
        trial: None,
        field,
        message,
    };
    if ds.layout.is_empty() {
        out.push(dataset_level("channels", "layout has no channels".into()));
    }
    if !(timing.sample_rate_hz.is_finite() && timing.sample_rate_hz > 0.0) {
        out.push(dataset_level(
            "sample_rate_hz",
            format!("must be positive, got {}", timing.sample_rate_hz),
        ));
    }
    if !timing.epoch_start_ms.is_finite() {
        out.push(dataset_level("epoch_start_ms", "must be finite".into()));
    }
    if timing.n_samples == 0 {
        out.push(dataset_level("n_samples", "must be at least 1".into()));
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for subject in &ds.subjects {
        let sid = subject.subject_id.as_str();
        let count = seen.entry(sid).or_insert(0);
        *count += 1;
        if *count == 2 {
            out.push(Violation {
                subject_id: Some(sid.to_string()),
                trial: None,
                field: "subject_id",
                message: "duplicated subject_id".into(),
            });
        }

        for (ti, trial) in subject.trials.iter().enumerate() {
            let mut push = |field, message: String| {
                out.push(Violation {
                    subject_id: Some(sid.to_string()),
                    trial: Some(ti),
                    field,
                    message,
                })
            };
            if trial.n_channels() != ds.layout.len() {
                push(
                    "data",
                    format!(
                        "{} channels, layout has {}",
                        trial.n_channels(),
                        ds.layout.len()
                    ),
                );
            }
            if trial.n_samples() != timing.n_samples || trial.n_samples() == 0 {
                push(
                    "data",
                    format!("{} samples, expected {}", trial.n_samples(), timing.n_samples),
                );
            }
            if trial.sample_rate_hz != timing.sample_rate_hz {
                push(
                    "sample_rate_hz",
                    format!("{} differs from {}", trial.sample_rate_hz, timing.sample_rate_hz),
                );
            }
            if trial.epoch_start_ms != timing.epoch_start_ms {
                push(
                    "epoch_start_ms",
                    format!("{} differs from {}", trial.epoch_start_ms, timing.epoch_start_ms),
                );
            }
            if let Some(((c, s), v)) = trial.data.indexed_iter().find(|(_, v)| !v.is_finite()) {
                push(
                    "data",
                    format!("non-finite value {v} at channel {c}, sample {s}"),
                );
            }
            let meta = &trial.meta;
            match (meta.response, meta.response_time_ms) {
                (Response::None, Some(_)) => push(
                    "response_time_ms",
                    "present although response is none".into(),
                ),
                (r, None) if r != Response::None => push(
                    "response_time_ms",
                    format!("absent although response is {r}"),
                ),
                (_, Some(rt)) if !(rt.is_finite() && rt >= 0.0) => push(
                    "response_time_ms",
                    format!("must be a nonnegative real, got {rt}"),
                ),
                _ => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::*;
    use ndarray::Array2;
    use std::collections::BTreeMap;

    fn trial(response: Response, rt: Option<f64>) -> EpochedTrial {
        EpochedTrial {
            meta: TrialMeta {
                sentence_id: 1,
                sentiment: Polarity::Positive,
                last_word_valence: Polarity::Neutral,
                response,
                response_time_ms: rt,
            },
            data: Array2::zeros((2, 5)),
            sample_rate_hz: 100.0,
            epoch_start_ms: -20.0,
        }
    }

    fn dataset(subjects: Vec<SubjectRecord>) -> Dataset {
        Dataset {
            layout: ChannelLayout::from_names(&["Cz", "Pz"]).unwrap(),
            timing: EpochTiming {
                sample_rate_hz: 100.0,
                epoch_start_ms: -20.0,
                n_samples: 5,
            },
            subjects,
            provenance: String::new(),
        }
    }

    fn subject(id: &str, trials: Vec<EpochedTrial>) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            group: Group::C,
            gender: Gender::Female,
            questionnaires: BTreeMap::new(),
            trials,
        }
    }

    #[test]
    fn valid_dataset_has_no_violations() {
        let ds = dataset(vec![
            subject("a", vec![trial(Response::Agree, Some(812.0)), trial(Response::None, None)]),
            subject("b", vec![]),
        ]);
        assert!(validate(&ds).is_empty());
    }

    #[test]
    fn agree_without_rt_is_one_violation() {
        let ds = dataset(vec![subject("a", vec![trial(Response::Agree, None)])]);
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "response_time_ms");
        assert_eq!(v[0].trial, Some(0));
        assert_eq!(v[0].subject_id.as_deref(), Some("a"));
    }

    #[test]
    fn duplicate_subject_is_one_violation() {
        let ds = dataset(vec![subject("a", vec![]), subject("a", vec![])]);
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "subject_id");
    }

    #[test]
    fn shape_and_finiteness_violations_name_trial() {
        let mut bad = trial(Response::Disagree, Some(1.0));
        bad.data[[1, 3]] = f64::NAN;
        let mut short = trial(Response::None, None);
        short.data = Array2::zeros((3, 4));
        let ds = dataset(vec![subject("x", vec![bad, short])]);
        let v = validate(&ds);
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().all(|x| x.subject_id.as_deref() == Some("x")));
        assert_eq!(v[0].trial, Some(0));
        assert_eq!(v[1].trial, Some(1));
    }

    #[test]
    fn validate_is_deterministic() {
        let ds = dataset(vec![subject("a", vec![trial(Response::Agree, None)]), subject("a", vec![])]);
        assert_eq!(validate(&ds), validate(&ds));
    }
}
