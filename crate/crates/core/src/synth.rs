//! Seeded synthetic cohorts with known group effects.
//!
//! Each trial is `background_sigma · pink + noise_sigma · white + Σ bumps`:
//! pink noise has power ∝ f^(−α) with unit expected variance, and each
//! matching [`EffectSpec`] adds a Gaussian bump centered in its window
//! (σ = width / 4) with a per-subject amplitude and per-trial latency jitter.
//!
//! Every subject owns independent streams for noise, effects and metadata,
//! so changing an effect never changes the background of any trial.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    ChannelLayout, Dataset, DatasetError, DatasetWriter, EpochTiming, EpochedTrial, Gender, Group,
    Polarity, Questionnaire, Region, Response, SubjectRecord, TrialMeta,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn config_err(field: impl Into<String>, message: impl Into<String>) -> SynthError {
    SynthError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Which trials an effect applies to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TrialCondition {
    All,
    Sentiment(Polarity),
    LastWordValence(Polarity),
    Response(Response),
}

impl TrialCondition {
    pub fn matches(&self, m: &TrialMeta) -> bool {
        match self {
            TrialCondition::All => true,
            TrialCondition::Sentiment(p) => m.sentiment == *p,
            TrialCondition::LastWordValence(p) => m.last_word_valence == *p,
            TrialCondition::Response(r) => m.response == *r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectSpec {
    pub groups_affected: Vec<Group>,
    pub condition: TrialCondition,
    pub channels: Vec<String>,
    pub window_ms: (f64, f64),
    pub amplitude: f64,
    #[serde(default)]
    pub latency_jitter_ms: f64,
    #[serde(default)]
    pub subject_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorSpec {
    pub agree_prob: BTreeMap<Group, BTreeMap<Polarity, f64>>,
    /// `(μ, σ)` of the natural log of the response time in ms.
    pub rt_lognormal: BTreeMap<Group, (f64, f64)>,
    pub no_response_prob: f64,
    pub questionnaire_means: BTreeMap<Group, BTreeMap<Questionnaire, f64>>,
    pub questionnaire_sd: f64,
    pub female_prob: f64,
}

fn polarity_map(pos: f64, neu: f64, neg: f64) -> BTreeMap<Polarity, f64> {
    BTreeMap::from([(Polarity::Positive, pos), (Polarity::Neutral, neu), (Polarity::Negative, neg)])
}

fn questionnaire_map(phq: f64, gad: f64, sis: f64) -> BTreeMap<Questionnaire, f64> {
    BTreeMap::from([
        (Questionnaire::Phq9Screen, phq),
        (Questionnaire::Phq9Dayof, phq),
        (Questionnaire::Gad7, gad),
        (Questionnaire::Sis, sis),
    ])
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        Self {
            agree_prob: BTreeMap::from([
                (Group::C, polarity_map(0.8, 0.6, 0.2)),
                (Group::D, polarity_map(0.4, 0.5, 0.7)),
                (Group::S, polarity_map(0.3, 0.5, 0.8)),
            ]),
            rt_lognormal: BTreeMap::from([
                (Group::C, (6.7, 0.3)),
                (Group::D, (6.8, 0.35)),
                (Group::S, (6.85, 0.35)),
            ]),
            no_response_prob: 0.02,
            questionnaire_means: BTreeMap::from([
                (Group::C, questionnaire_map(3.0, 3.0, 2.0)),
                (Group::D, questionnaire_map(14.0, 11.0, 4.0)),
                (Group::S, questionnaire_map(18.0, 14.0, 20.0)),
            ]),
            questionnaire_sd: 3.0,
            female_prob: 0.6,
        }
    }
}

impl BehaviorSpec {
    /// Identical behavior for every group.
    pub fn uniform(agree: f64) -> Self {
        let d = Self::default();
        Self {
            agree_prob: Group::ALL.iter().map(|&g| (g, polarity_map(agree, agree, agree))).collect(),
            rt_lognormal: Group::ALL.iter().map(|&g| (g, (6.75, 0.3))).collect(),
            questionnaire_means: Group::ALL
                .iter()
                .map(|&g| (g, d.questionnaire_means[&Group::D].clone()))
                .collect(),
            ..d
        }
    }
}

fn questionnaire_range(q: Questionnaire) -> (i64, i64) {
    match q {
        Questionnaire::Phq9Screen | Questionnaire::Phq9Dayof => (0, 27),
        Questionnaire::Gad7 => (0, 21),
        Questionnaire::Sis => (0, 40),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects_per_group: BTreeMap<Group, usize>,
    pub n_trials: usize,
    pub channels: Vec<String>,
    /// Region overrides for channels outside the default naming rule.
    pub regions: BTreeMap<String, Region>,
    pub sample_rate_hz: f64,
    pub epoch_start_ms: f64,
    pub n_samples: usize,
    pub noise_sigma: f64,
    pub background_sigma: f64,
    pub background_alpha: f64,
    pub effects: Vec<EffectSpec>,
    pub behavior: BehaviorSpec,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::paper_shaped()
    }
}

/// Effect strength of the desk presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snr {
    Null,
    Weak,
    Strong,
    /// Large enough that every subject is classified correctly from
    /// bootstrapped trial averages.
    Separable,
}

impl SynthConfig {
    /// 49/47/50 subjects, 320 trials, 64 channels at 1 kHz over `[-200, 900)` ms.
    /// Effects: a late posterior deflection (544–900 ms) for D and S on all
    /// sentences, and an early anterior deflection (256–657 ms) for D and S on
    /// positive sentences only, visible in the positive − negative contrast.
    pub fn paper_shaped() -> Self {
        let layout = ChannelLayout::standard_64();
        let names = |r: Region| -> Vec<String> {
            layout.indices_in(&[r]).into_iter().map(|i| layout.names()[i].clone()).collect()
        };
        Self {
            n_subjects_per_group: BTreeMap::from([(Group::C, 49), (Group::D, 47), (Group::S, 50)]),
            n_trials: 320,
            channels: layout.names().to_vec(),
            regions: BTreeMap::new(),
            sample_rate_hz: 1000.0,
            epoch_start_ms: -200.0,
            n_samples: 1100,
            noise_sigma: 1.0,
            background_sigma: 1.0,
            background_alpha: 1.0,
            effects: vec![
                EffectSpec {
                    groups_affected: vec![Group::D, Group::S],
                    condition: TrialCondition::All,
                    channels: names(Region::Posterior),
                    window_ms: (544.0, 900.0),
                    amplitude: 0.4,
                    latency_jitter_ms: 20.0,
                    subject_sigma: 0.4,
                },
                EffectSpec {
                    groups_affected: vec![Group::D, Group::S],
                    condition: TrialCondition::Sentiment(Polarity::Positive),
                    channels: names(Region::Anterior),
                    window_ms: (256.0, 657.0),
                    amplitude: 0.4,
                    latency_jitter_ms: 20.0,
                    subject_sigma: 0.4,
                },
            ],
            behavior: BehaviorSpec::default(),
            rng_seed: 0,
        }
    }

    /// 20 subjects per group, 40 trials, the 16-channel montage at 200 Hz.
    /// The effect sits on the posterior channels in 500–700 ms for D and S.
    pub fn desk(snr: Snr) -> Self {
        let layout = ChannelLayout::standard_16();
        let posterior: Vec<String> = layout
            .indices_in(&[Region::Posterior])
            .into_iter()
            .map(|i| layout.names()[i].clone())
            .collect();
        let (amplitude, subject_sigma) = match snr {
            Snr::Null => (0.0, 0.0),
            Snr::Weak => (0.3, 0.15),
            Snr::Strong => (1.0, 0.15),
            Snr::Separable => (2.0, 0.15),
        };
        Self {
            n_subjects_per_group: BTreeMap::from([(Group::C, 20), (Group::D, 20), (Group::S, 20)]),
            n_trials: 40,
            channels: layout.names().to_vec(),
            regions: BTreeMap::new(),
            sample_rate_hz: 200.0,
            epoch_start_ms: -200.0,
            n_samples: 220,
            noise_sigma: 1.0,
            background_sigma: 1.0,
            background_alpha: 1.0,
            effects: vec![EffectSpec {
                groups_affected: vec![Group::D, Group::S],
                condition: TrialCondition::All,
                channels: posterior,
                window_ms: (500.0, 700.0),
                amplitude,
                latency_jitter_ms: 10.0,
                subject_sigma,
            }],
            behavior: BehaviorSpec::default(),
            rng_seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper_shaped()),
            "desk" | "desk-strong" => Some(Self::desk(Snr::Strong)),
            "desk-weak" => Some(Self::desk(Snr::Weak)),
            "desk-null" => Some(Self::desk(Snr::Null)),
            "desk-separable" => Some(Self::desk(Snr::Separable)),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 5] = ["paper", "desk", "desk-weak", "desk-null", "desk-separable"];

    pub fn with_groups(mut self, c: usize, d: usize, s: usize) -> Self {
        self.n_subjects_per_group = BTreeMap::from([(Group::C, c), (Group::D, d), (Group::S, s)]);
        self
    }

    pub fn timing(&self) -> EpochTiming {
        EpochTiming {
            sample_rate_hz: self.sample_rate_hz,
            epoch_start_ms: self.epoch_start_ms,
            n_samples: self.n_samples,
        }
    }

    pub fn layout(&self) -> Result<ChannelLayout, SynthError> {
        ChannelLayout::with_regions(self.channels.clone(), &self.regions)
            .map_err(|e| config_err("channels", e.to_string()))
    }

    pub fn epoch_end_ms(&self) -> f64 {
        self.epoch_start_ms + self.n_samples as f64 * 1000.0 / self.sample_rate_hz
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_trials < 1 {
            return Err(config_err("n_trials", "must be >= 1"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(config_err("sample_rate_hz", "must be > 0"));
        }
        if self.n_samples < 2 {
            return Err(config_err("n_samples", "must be >= 2"));
        }
        if !self.epoch_start_ms.is_finite() {
            return Err(config_err("epoch_start_ms", "must be finite"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(config_err("noise_sigma", format!("must be > 0, got {}", self.noise_sigma)));
        }
        if !(self.background_sigma >= 0.0 && self.background_sigma.is_finite()) {
            return Err(config_err("background_sigma", "must be >= 0"));
        }
        if !(self.background_alpha >= 0.0 && self.background_alpha.is_finite()) {
            return Err(config_err("background_alpha", "must be >= 0"));
        }
        let layout = self.layout()?;
        let end = self.epoch_end_ms();
        for (i, e) in self.effects.iter().enumerate() {
            let field = |f: &str| format!("effects[{i}].{f}");
            let (lo, hi) = e.window_ms;
            if !(lo < hi && lo >= self.epoch_start_ms && hi <= end) {
                return Err(config_err(
                    field("window_ms"),
                    format!("({lo}, {hi}) must lie inside the epoch [{}, {end})", self.epoch_start_ms),
                ));
            }
            if let Some(c) = e.channels.iter().find(|c| layout.index_of(c).is_none()) {
                return Err(config_err(field("channels"), format!("unknown channel '{c}'")));
            }
            if !e.amplitude.is_finite() {
                return Err(config_err(field("amplitude"), "must be finite"));
            }
            if !(e.latency_jitter_ms >= 0.0) {
                return Err(config_err(field("latency_jitter_ms"), "must be >= 0"));
            }
            if !(e.subject_sigma >= 0.0) {
                return Err(config_err(field("subject_sigma"), "must be >= 0"));
            }
        }
        let b = &self.behavior;
        for (&g, &n) in &self.n_subjects_per_group {
            if n == 0 {
                continue;
            }
            let g_tok = g.to_string();
            let probs = b
                .agree_prob
                .get(&g)
                .ok_or_else(|| config_err(format!("behavior.agree_prob.{g_tok}"), "missing"))?;
            for p in [Polarity::Positive, Polarity::Neutral, Polarity::Negative] {
                match probs.get(&p) {
                    Some(v) if (0.0..=1.0).contains(v) => {}
                    _ => {
                        return Err(config_err(
                            format!("behavior.agree_prob.{g_tok}.{p}"),
                            "must be a probability",
                        ))
                    }
                }
            }
            match b.rt_lognormal.get(&g) {
                Some(&(mu, sigma)) if mu.is_finite() && sigma > 0.0 => {}
                _ => return Err(config_err(format!("behavior.rt_lognormal.{g_tok}"), "needs finite mu and sigma > 0")),
            }
        }
        if !(0.0..1.0).contains(&b.no_response_prob) {
            return Err(config_err("behavior.no_response_prob", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&b.female_prob) {
            return Err(config_err("behavior.female_prob", "must be in [0, 1]"));
        }
        if !(b.questionnaire_sd >= 0.0) {
            return Err(config_err("behavior.questionnaire_sd", "must be >= 0"));
        }
        Ok(())
    }

    /// Subject ids and groups in generation order: all C, then D, then S.
    pub fn roster(&self) -> Vec<(String, Group)> {
        let mut out = Vec::new();
        for g in Group::ALL {
            let n = self.n_subjects_per_group.get(&g).copied().unwrap_or(0);
            for i in 0..n {
                out.push((format!("{}{:03}", g.label(), i + 1), g));
            }
        }
        out
    }
}

/// Colored-noise generator for a fixed length: Gaussian spectrum scaled by
/// `f^(−α/2)`, inverse FFT. The real and imaginary parts of one transform
/// are two independent series.
pub struct PinkNoise {
    ifft: Arc<dyn Fft<f64>>,
    gains: Vec<f64>,
}

impl PinkNoise {
    pub fn new(n: usize, alpha: f64) -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        let raw: Vec<f64> = (0..n)
            .map(|k| {
                let f = k.min(n - k) as f64;
                if f == 0.0 {
                    0.0
                } else {
                    f.powf(-alpha / 2.0)
                }
            })
            .collect();
        let mean_sq = raw.iter().map(|g| g * g).sum::<f64>() / n as f64;
        // unit variance per output sample
        let scale = 1.0 / (mean_sq.sqrt() * (n as f64).sqrt());
        let gains = raw.into_iter().map(|g| g * scale).collect();
        Self { ifft, gains }
    }

    /// Two independent unit-variance series.
    pub fn pair(&self, r: &mut rng::Rng) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex<f64>> = self
            .gains
            .iter()
            .map(|&g| {
                let a: f64 = StandardNormal.sample(r);
                let b: f64 = StandardNormal.sample(r);
                Complex::new(g * a, g * b)
            })
            .collect();
        self.ifft.process(&mut buf);
        (buf.iter().map(|c| c.re).collect(), buf.iter().map(|c| c.im).collect())
    }
}

/// Shared stimulus set: minimal pairs `(2k, 2k+1)`; the first of each pair
/// is negative, the second alternates positive and neutral. The last word
/// matches the sentence sentiment with probability 0.75.
pub fn stimulus_set(n_sentences: usize, seed: u64) -> Vec<(Polarity, Polarity)> {
    let mut r = rng::rng_from(seed, &[0x571]);
    (0..n_sentences)
        .map(|sid| {
            let sentiment = if sid % 2 == 0 {
                Polarity::Negative
            } else if (sid / 2) % 2 == 0 {
                Polarity::Positive
            } else {
                Polarity::Neutral
            };
            let valence = if r.gen::<f64>() < 0.75 {
                sentiment
            } else {
                let others: Vec<Polarity> = [Polarity::Positive, Polarity::Neutral, Polarity::Negative]
                    .into_iter()
                    .filter(|p| *p != sentiment)
                    .collect();
                *others.choose(&mut r).expect("two alternatives")
            };
            (sentiment, valence)
        })
        .collect()
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    pink: PinkNoise,
    stimuli: Vec<(Polarity, Polarity)>,
    effect_channels: Vec<Vec<usize>>,
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SynthConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let layout = cfg.layout()?;
        let n_sentences = (cfg.n_trials / 2).max(1);
        Ok(Self {
            cfg,
            pink: PinkNoise::new(cfg.n_samples, cfg.background_alpha),
            stimuli: stimulus_set(n_sentences, cfg.rng_seed),
            effect_channels: cfg
                .effects
                .iter()
                .map(|e| e.channels.iter().map(|c| layout.index_of(c).expect("validated")).collect())
                .collect(),
        })
    }

    fn subject(&self, subject_id: &str, group: Group) -> SubjectRecord {
        let cfg = self.cfg;
        let sid_hash = rng::hash_str(subject_id);
        let mut meta_rng = rng::rng_from(cfg.rng_seed, &[sid_hash, 1]);
        let mut noise_rng = rng::rng_from(cfg.rng_seed, &[sid_hash, 2]);
        let mut effect_rng = rng::rng_from(cfg.rng_seed, &[sid_hash, 3]);
        let b = &cfg.behavior;

        let gender = if meta_rng.gen::<f64>() < b.female_prob { Gender::Female } else { Gender::Male };
        let severity: f64 = StandardNormal.sample(&mut meta_rng);
        let questionnaires = b
            .questionnaire_means
            .get(&group)
            .map(|means| {
                means
                    .iter()
                    .map(|(&q, &mean)| {
                        let e: f64 = StandardNormal.sample(&mut meta_rng);
                        let v = mean + b.questionnaire_sd * (0.8 * severity + 0.6 * e);
                        let (lo, hi) = questionnaire_range(q);
                        (q, (v.round() as i64).clamp(lo, hi))
                    })
                    .collect()
            })
            .unwrap_or_default();

        let n_sentences = self.stimuli.len();
        let mut order: Vec<usize> = (0..cfg.n_trials).map(|i| i % n_sentences).collect();
        order.shuffle(&mut meta_rng);
        let agree = &b.agree_prob[&group];
        let (mu, sigma) = b.rt_lognormal[&group];
        let rt_dist = LogNormal::new(mu, sigma).expect("validated");
        let metas: Vec<TrialMeta> = order
            .iter()
            .map(|&sid| {
                let (sentiment, valence) = self.stimuli[sid];
                let response = if meta_rng.gen::<f64>() < b.no_response_prob {
                    Response::None
                } else if meta_rng.gen::<f64>() < agree[&sentiment] {
                    Response::Agree
                } else {
                    Response::Disagree
                };
                let rt = rt_dist.sample(&mut meta_rng);
                TrialMeta {
                    sentence_id: sid as u32,
                    sentiment,
                    last_word_valence: valence,
                    response,
                    response_time_ms: (response != Response::None).then_some(rt),
                }
            })
            .collect();

        let amplitudes: Vec<f64> = cfg
            .effects
            .iter()
            .map(|e| {
                let z: f64 = StandardNormal.sample(&mut effect_rng);
                e.amplitude + e.subject_sigma * z
            })
            .collect();

        let n_ch = cfg.channels.len();
        let n = cfg.n_samples;
        let period = 1000.0 / cfg.sample_rate_hz;
        let white = Normal::new(0.0, cfg.noise_sigma).expect("validated");
        let trials = metas
            .into_iter()
            .map(|meta| {
                let mut data = Array2::<f64>::zeros((n_ch, n));
                let mut c = 0;
                while c < n_ch {
                    let (a, bb) = self.pink.pair(&mut noise_rng);
                    for (k, series) in [a, bb].into_iter().enumerate() {
                        if c + k < n_ch {
                            let mut row = data.row_mut(c + k);
                            for (v, p) in row.iter_mut().zip(series) {
                                *v = cfg.background_sigma * p;
                            }
                        }
                    }
                    c += 2;
                }
                for v in data.iter_mut() {
                    *v += white.sample(&mut noise_rng);
                }
                for ((e, chans), &amp) in cfg.effects.iter().zip(&self.effect_channels).zip(&amplitudes) {
                    let jitter: f64 = StandardNormal.sample(&mut effect_rng);
                    if !e.groups_affected.contains(&group) || !e.condition.matches(&meta) {
                        continue;
                    }
                    let (lo, hi) = e.window_ms;
                    let center = (lo + hi) / 2.0 + e.latency_jitter_ms * jitter;
                    let width = (hi - lo) / 4.0;
                    for t in 0..n {
                        let time = cfg.epoch_start_ms + t as f64 * period;
                        let bump = amp * (-0.5 * ((time - center) / width).powi(2)).exp();
                        for &ch in chans {
                            data[[ch, t]] += bump;
                        }
                    }
                }
                EpochedTrial {
                    meta,
                    data,
                    sample_rate_hz: cfg.sample_rate_hz,
                    epoch_start_ms: cfg.epoch_start_ms,
                }
            })
            .collect();

        SubjectRecord {
            subject_id: subject_id.to_string(),
            group,
            gender,
            questionnaires,
            trials,
        }
    }
}

fn provenance(cfg: &SynthConfig) -> String {
    format!("synthetic, rng_seed={}", cfg.rng_seed)
}

/// Generate the whole cohort in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    let gen = Generator::new(cfg)?;
    let subjects = cfg
        .roster()
        .par_iter()
        .map(|(id, g)| gen.subject(id, *g))
        .collect();
    Ok(Dataset {
        layout: cfg.layout()?,
        timing: cfg.timing(),
        subjects,
        provenance: provenance(cfg),
    })
}

/// Generate straight to disk one subject at a time; the files equal those
/// of `save_dataset(&generate(cfg)?, path)`.
pub fn generate_to_dir(cfg: &SynthConfig, path: &Path) -> Result<(), SynthError> {
    let gen = Generator::new(cfg)?;
    let mut w = DatasetWriter::create(path)?;
    for (id, g) in cfg.roster() {
        w.write_subject(&gen.subject(&id, g))?;
    }
    w.finish(&cfg.layout()?, &cfg.timing(), &provenance(cfg))?;
    Ok(())
}
