//! Deterministic synthetic corpora for tests and end-to-end runs.
//!
//! Depressed participants speak with a low fundamental (around 120 Hz) and
//! a vocabulary of negative words; controls sit around 250 Hz with neutral
//! words. Both modalities therefore carry the class on their own.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::preprocess::{write_wav_pcm16, Audio, AudioError, TARGET_RATE};
use crate::corpus::{response_txt, response_wav, CorpusKind, Label, Meta, QuestionnaireKind, META_FILE};
use crate::nn::RngState;

pub const DEPRESSED_F0: f64 = 120.0;
pub const CONTROL_F0: f64 = 250.0;
pub const DEPRESSED_SCORE: i64 = 60;
pub const CONTROL_SCORE: i64 = 30;

const NEGATIVE: &[&str] = &[
    "tired", "alone", "sad", "hopeless", "empty", "worthless", "sleepless", "crying", "numb", "afraid", "guilty", "exhausted", "heavy", "lost", "dark", "pain",
];
const NEUTRAL: &[&str] = &[
    "weather", "garden", "coffee", "walked", "friends", "weekend", "music", "work", "book", "morning", "dinner", "travel", "city", "park", "movie", "plans",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Separability {
    Separable,
    /// Pitch jitter of `σ` times half the class gap, and each word taken
    /// from the other class's vocabulary with probability `σ / (1 + σ)`.
    Noisy(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    ThreeResponse,
    Interview { responses: usize },
}

impl SynthKind {
    pub fn corpus_kind(self) -> CorpusKind {
        match self {
            SynthKind::ThreeResponse => CorpusKind::ThreeResponse,
            SynthKind::Interview { .. } => CorpusKind::Interview,
        }
    }

    pub fn responses(self) -> usize {
        match self {
            SynthKind::ThreeResponse => 3,
            SynthKind::Interview { responses } => responses,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_depressed: usize,
    pub n_control: usize,
    pub separability: Separability,
    pub kind: SynthKind,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: AudioError },
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_depressed == 0 || self.n_control == 0 {
            return Err(SynthError::Spec("both class counts must be at least 1".into()));
        }
        if let Separability::Noisy(s) = self.separability {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SynthError::Spec(format!("noise level {s} must be a finite σ ≥ 0")));
            }
        }
        if self.kind.responses() == 0 {
            return Err(SynthError::Spec("interviews need at least one response".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))
    }

    pub fn total(&self) -> usize {
        self.n_depressed + self.n_control
    }

    fn sigma(&self) -> f64 {
        match self.separability {
            Separability::Separable => 0.0,
            Separability::Noisy(s) => s,
        }
    }
}

/// Participant ids with their labels; classes are interleaved by a seeded
/// shuffle so that id order says nothing about the label.
pub fn roster(spec: &SynthSpec) -> Vec<(String, Label)> {
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Depressed, spec.n_depressed)
        .chain(std::iter::repeat_n(Label::NonDepressed, spec.n_control))
        .collect();
    labels.shuffle(&mut RngState::new(spec.seed).derive(&[0]));
    let width = spec.total().to_string().len().max(3);
    labels.into_iter().enumerate().map(|(i, l)| (format!("p{i:0width$}"), l)).collect()
}

/// One response: 0.1 s of silence, a harmonic tone with a little noise,
/// 0.1 s of silence.
fn voice(f0: f64, rng: &mut RngState) -> Vec<f32> {
    let rate = TARGET_RATE as f64;
    let pad = (0.1 * rate) as usize;
    let voiced = (rng.random_range(1.2..2.0) * rate) as usize;
    let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let noise = Normal::new(0.0, 0.01).expect("valid normal");
    let mut out = vec![0.0f32; pad];
    for n in 0..voiced {
        let t = n as f64 / rate;
        let tone: f64 = phases.iter().enumerate().map(|(h, ph)| {
            let h = (h + 1) as f64;
            (std::f64::consts::TAU * h * f0 * t + ph).sin() / h
        })
        .sum();
        out.push((0.2 * tone + noise.sample(rng)) as f32);
    }
    out.extend(std::iter::repeat_n(0.0, pad));
    out
}

fn transcript(label: Label, sigma: f64, rng: &mut RngState) -> String {
    let (own, other) = if label.is_depressed() { (NEGATIVE, NEUTRAL) } else { (NEUTRAL, NEGATIVE) };
    let flip = sigma / (1.0 + sigma);
    let n = rng.random_range(6..=12);
    let words: Vec<&str> = (0..n)
        .map(|_| {
            let vocab = if rng.random_bool(flip) { other } else { own };
            *vocab.choose(rng).expect("non-empty vocabulary")
        })
        .collect();
    words.join(" ")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

fn write_participant(dir: &Path, label: Label, spec: &SynthSpec, rng: &mut RngState) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = Meta {
        questionnaire: QuestionnaireKind::Sds,
        raw_score: if label.is_depressed() { DEPRESSED_SCORE } else { CONTROL_SCORE },
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, json + "\n").map_err(io_err(&meta_path))?;

    let centre = if label.is_depressed() { DEPRESSED_F0 } else { CONTROL_F0 };
    let half_gap = (CONTROL_F0 - DEPRESSED_F0) / 2.0;
    let jitter = Normal::new(0.0, spec.sigma() * half_gap).expect("σ validated");
    let speaker = centre + rng.random_range(-8.0..8.0);
    for k in 1..=spec.kind.responses() {
        let f0 = (speaker + jitter.sample(rng)).clamp(60.0, 400.0);
        let wav = response_wav(dir, k);
        let audio = Audio { samples: voice(f0, rng), sample_rate: TARGET_RATE };
        write_wav_pcm16(&wav, &audio).map_err(|source| SynthError::Wav { path: wav.clone(), source })?;
        let txt = response_txt(dir, k);
        fs::write(&txt, transcript(label, spec.sigma(), rng) + "\n").map_err(io_err(&txt))?;
    }
    Ok(())
}

/// Writes the corpus under `root` and returns the roster.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<Vec<(String, Label)>, SynthError> {
    spec.validate()?;
    fs::create_dir_all(root).map_err(|source| SynthError::Io { path: root.to_path_buf(), source })?;
    let roster = roster(spec);
    let base = RngState::new(spec.seed);
    let results = crate::par::map_indexed(roster.len(), |i| {
        let (id, label) = &roster[i];
        let mut rng = base.derive(&[1, i as u64]);
        write_participant(&root.join(id), *label, spec, &mut rng)
    });
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    Ok(roster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{mel_spectrogram, MelConfig};
    use crate::corpus::load_corpus;

    fn spec(d: usize, c: usize, kind: SynthKind) -> SynthSpec {
        SynthSpec { n_depressed: d, n_control: c, separability: Separability::Separable, kind, seed: 1 }
    }

    fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn minimal_corpus_validates() {
        let dir = tempfile::tempdir().unwrap();
        generate(&spec(1, 1, SynthKind::ThreeResponse), dir.path()).unwrap();
        let corpus = load_corpus(dir.path(), CorpusKind::ThreeResponse).unwrap();
        assert!(corpus.is_valid(), "{:?}", corpus.report);
        assert_eq!(corpus.class_counts().depressed, 1);
        assert_eq!(corpus.class_counts().non_depressed, 1);
    }

    #[test]
    fn interview_corpus_validates() {
        let dir = tempfile::tempdir().unwrap();
        generate(&spec(2, 3, SynthKind::Interview { responses: 12 }), dir.path()).unwrap();
        let corpus = load_corpus(dir.path(), CorpusKind::Interview).unwrap();
        assert!(corpus.is_valid());
        assert!(corpus.participants.iter().all(|p| p.responses.len() == 12));
    }

    #[test]
    fn same_spec_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = SynthSpec { separability: Separability::Noisy(0.3), ..spec(3, 4, SynthKind::ThreeResponse) };
        generate(&s, a.path()).unwrap();
        generate(&s, b.path()).unwrap();
        assert_eq!(tree(a.path()), tree(b.path()));
    }

    #[test]
    fn spec_from_toml() {
        let s = SynthSpec::from_toml("n_depressed = 2\nn_control = 3\nseed = 4\nseparability = { noisy = 0.5 }\nkind = { interview = { responses = 20 } }\n").unwrap();
        assert_eq!(s.separability, Separability::Noisy(0.5));
        assert_eq!(s.kind, SynthKind::Interview { responses: 20 });
        let plain = SynthSpec::from_toml("n_depressed = 1\nn_control = 1\nseed = 0\nseparability = \"separable\"\nkind = \"three-response\"\n").unwrap();
        assert_eq!(plain.kind, SynthKind::ThreeResponse);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(spec(0, 1, SynthKind::ThreeResponse).validate().is_err());
        let noisy = SynthSpec { separability: Separability::Noisy(-1.0), ..spec(1, 1, SynthKind::ThreeResponse) };
        assert!(noisy.validate().is_err());
    }

    #[test]
    fn one_band_threshold_separates_classes() {
        let dir = tempfile::tempdir().unwrap();
        generate(&spec(6, 10, SynthKind::ThreeResponse), dir.path()).unwrap();
        let corpus = load_corpus(dir.path(), CorpusKind::ThreeResponse).unwrap();
        let config = MelConfig::default();
        // mean log-Mel energy per band and participant
        let means: Vec<(Label, Vec<f64>)> = corpus
            .participants
            .iter()
            .map(|p| {
                let mut sum = vec![0.0; config.n_mels];
                let mut frames = 0;
                for r in &p.responses {
                    let spec = mel_spectrogram(&r.audio.samples, &config);
                    for row in spec.frames.rows() {
                        for (s, v) in sum.iter_mut().zip(row) {
                            *s += v;
                        }
                        frames += 1;
                    }
                }
                (p.label, sum.into_iter().map(|s| s / frames as f64).collect())
            })
            .collect();
        let separates = (0..config.n_mels).any(|b| {
            let range = |l: Label| {
                let vals: Vec<f64> = means.iter().filter(|m| m.0 == l).map(|m| m.1[b]).collect();
                (vals.iter().cloned().fold(f64::INFINITY, f64::min), vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            };
            let (dmin, dmax) = range(Label::Depressed);
            let (cmin, cmax) = range(Label::NonDepressed);
            dmax < cmin || cmax < dmin
        });
        assert!(separates);
    }
}
