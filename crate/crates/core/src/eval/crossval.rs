use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::folds::{kfold_split, leak_check, Fold};
use super::metrics::{mean_metrics, ConfusionMatrix, Metrics};
use super::EvalError;
use crate::corpus::{ClassCounts, CorpusKind, Label};
use crate::models::{fusion_examples, predict_audio, predict_text, train, AudioModel, AudioModelConfig, FusionConfig, FusionExample, FusionModel, Prediction, TextModel, TextModelConfig, TrainConfig, TrainOutcome};
use crate::nn::RngState;
use crate::sampling::{select_eval_segment, training_samples, ParticipantFeatures, ResampleSummary, Sample};

/// Which models a run trains. Fusion needs both unimodal encoders, so it
/// trains all three.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Audio,
    Text,
    Fusion,
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            "fusion" => Ok(Modality::Fusion),
            other => Err(format!("unknown modality {other:?} (expected audio, text or fusion)")),
        }
    }
}

impl Modality {
    pub fn wants_text(self) -> bool {
        self != Modality::Audio
    }

    pub fn wants_audio(self) -> bool {
        self != Modality::Text
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Audio,
    Text,
    Fusion,
    Baseline,
}

impl ModelKind {
    pub fn features(self) -> &'static str {
        match self {
            ModelKind::Audio => "Audio",
            ModelKind::Text => "Text",
            ModelKind::Fusion => "Audio + Text",
            ModelKind::Baseline => "None",
        }
    }

    pub fn model_name(self) -> &'static str {
        match self {
            ModelKind::Audio => "GRU (NetVLAD)",
            ModelKind::Text => "BiLSTM + attention",
            ModelKind::Fusion => "Modal-attention fusion",
            ModelKind::Baseline => "Majority class",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalConfig {
    pub k: usize,
    pub seed: u64,
    pub modality: Modality,
    pub text: TextModelConfig,
    pub audio: AudioModelConfig,
    pub train: TrainConfig,
    pub fusion_train: TrainConfig,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig {
            k: 3,
            seed: 0,
            modality: Modality::Fusion,
            text: TextModelConfig::default(),
            audio: AudioModelConfig::default(),
            train: TrainConfig::default(),
            fusion_train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub participant: String,
    pub fold: usize,
    pub model: ModelKind,
    pub truth: Label,
    pub predicted: Label,
    pub p_depressed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub folds: Vec<FoldMetrics>,
    /// Metrics of the summed confusion counts (the headline numbers).
    pub pooled: FoldMetrics,
    /// Unweighted mean of the per-fold metrics.
    pub mean: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train: ClassCounts,
    pub test: Vec<String>,
    pub resample: ResampleSummary,
    pub training: Vec<(ModelKind, TrainOutcome)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub kind: CorpusKind,
    pub config: CrossvalConfig,
    pub participants: ClassCounts,
    pub folds: Vec<FoldSummary>,
    pub models: Vec<ModelReport>,
    pub predictions: Vec<PredictionRecord>,
}

impl CrossvalReport {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == kind)
    }
}

/// Models trained in one fold.
#[derive(Clone, Debug)]
pub struct FoldModels {
    pub text: Option<TextModel>,
    pub audio: Option<AudioModel>,
    pub fusion: Option<FusionModel>,
}

#[derive(Clone, Debug)]
pub struct CrossvalRun {
    pub report: CrossvalReport,
    pub models: Vec<FoldModels>,
}

struct FoldResult {
    summary: FoldSummary,
    models: FoldModels,
    predictions: Vec<PredictionRecord>,
}

fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    RngState::new(seed).derive(path).next_u64()
}

fn run_fold(data: &[ParticipantFeatures], kind: CorpusKind, fold: &Fold, f: usize, config: &CrossvalConfig) -> Result<FoldResult, EvalError> {
    let seed = config.seed;
    let train_set: Vec<&ParticipantFeatures> = fold.train.iter().map(|&i| &data[i]).collect();
    let mut rng = RngState::new(seed).derive(&[1, f as u64]);
    let set = training_samples(&train_set, kind, &mut rng).map_err(|source| EvalError::Sampling { fold: f, source })?;
    let train_labels: BTreeMap<&str, Label> = train_set.iter().map(|p| (p.id.as_str(), p.label)).collect();
    assert!(
        set.samples.iter().all(|s| train_labels.get(s.provenance.participant.as_str()) == Some(&s.label)),
        "training sample outside the split or with a foreign label"
    );
    let eval: Vec<(usize, Sample)> = fold
        .test
        .iter()
        .map(|&i| {
            let mut rng = RngState::new(seed).derive(&[2, i as u64]);
            select_eval_segment(&data[i], kind, &mut rng).map(|s| (i, s))
        })
        .collect::<Result<_, _>>()
        .map_err(|source| EvalError::Sampling { fold: f, source })?;

    let train_err = |model: &'static str| move |source| EvalError::Train { fold: f, model, source };
    let mut training = Vec::new();
    let mut predictions = Vec::new();
    let mut record = |model: ModelKind, i: usize, p: Prediction| {
        predictions.push(PredictionRecord {
            participant: data[i].id.clone(),
            fold: f,
            model,
            truth: data[i].label,
            predicted: p.label,
            p_depressed: p.depressed_probability(),
        });
    };

    let text = if config.modality.wants_text() {
        let mut model = TextModel::new(config.text, &mut RngState::new(seed).derive(&[3, f as u64]));
        let outcome = train(&mut model, &set.samples, &config.train, sub_seed(seed, &[4, f as u64])).map_err(train_err("text"))?;
        training.push((ModelKind::Text, outcome));
        Some(model)
    } else {
        None
    };
    let audio = if config.modality.wants_audio() {
        let mut model = AudioModel::new(config.audio, &mut RngState::new(seed).derive(&[5, f as u64]));
        let outcome = train(&mut model, &set.samples, &config.train, sub_seed(seed, &[6, f as u64])).map_err(train_err("audio"))?;
        training.push((ModelKind::Audio, outcome));
        Some(model)
    } else {
        None
    };

    let eval_samples: Vec<&Sample> = eval.iter().map(|(_, s)| s).collect();
    let text_out: Vec<(Prediction, Vec<f64>)> = match &text {
        Some(m) => predict_text(m, &eval_samples),
        None => Vec::new(),
    };
    let audio_out: Vec<(Prediction, Vec<f64>)> = match &audio {
        Some(m) => predict_audio(m, &eval_samples),
        None => Vec::new(),
    };
    for (j, (i, _)) in eval.iter().enumerate() {
        if let Some((p, _)) = text_out.get(j) {
            record(ModelKind::Text, *i, *p);
        }
        if let Some((p, _)) = audio_out.get(j) {
            record(ModelKind::Audio, *i, *p);
        }
    }

    let fusion = match (&text, &audio) {
        (Some(t), Some(a)) if config.modality == Modality::Fusion => {
            // encoders are frozen: representations are computed once in eval mode
            let refs: Vec<&Sample> = set.samples.iter().collect();
            let examples = fusion_examples(t, a, &refs);
            let fusion_config = FusionConfig { text_dim: t.repr_dim(), audio_dim: a.repr_dim() };
            let mut model = FusionModel::new(fusion_config, &mut RngState::new(seed).derive(&[7, f as u64]));
            let outcome = train(&mut model, &examples, &config.fusion_train, sub_seed(seed, &[8, f as u64])).map_err(train_err("fusion"))?;
            training.push((ModelKind::Fusion, outcome));
            for (j, (i, _)) in eval.iter().enumerate() {
                let example = FusionExample { text: text_out[j].1.clone(), audio: audio_out[j].1.clone(), label: data[*i].label };
                record(ModelKind::Fusion, *i, model.predict(&example));
            }
            Some(model)
        }
        _ => None,
    };

    let train_counts = ClassCounts::from_labels(train_set.iter().map(|p| p.label));
    let majority = if train_counts.depressed > train_counts.non_depressed { Label::Depressed } else { Label::NonDepressed };
    for (i, _) in &eval {
        let p = if majority.is_depressed() { Prediction::from_probs(0.0, 1.0) } else { Prediction::from_probs(1.0, 0.0) };
        record(ModelKind::Baseline, *i, p);
    }

    Ok(FoldResult {
        summary: FoldSummary {
            fold: f,
            train: train_counts,
            test: fold.test.iter().map(|&i| data[i].id.clone()).collect(),
            resample: set.summary,
            training,
        },
        models: FoldModels { text, audio, fusion },
        predictions,
    })
}

/// Per-model reports recomputed from stored predictions.
pub fn model_reports(predictions: &[PredictionRecord], k: usize) -> Vec<ModelReport> {
    let mut kinds: Vec<ModelKind> = predictions.iter().map(|p| p.model).collect();
    kinds.sort();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|model| {
            let folds: Vec<FoldMetrics> = (0..k)
                .map(|fold| {
                    let confusion = ConfusionMatrix::from_pairs(predictions.iter().filter(|p| p.model == model && p.fold == fold).map(|p| (p.truth, p.predicted)));
                    FoldMetrics { fold, confusion, metrics: confusion.metrics() }
                })
                .collect();
            let confusion: ConfusionMatrix = folds.iter().map(|f| f.confusion).sum();
            let mean = mean_metrics(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
            ModelReport {
                model,
                pooled: FoldMetrics { fold: k, confusion, metrics: confusion.metrics() },
                folds,
                mean,
            }
        })
        .collect()
}

/// Stratified k-fold cross-validation. Balancing and augmentation touch
/// only the training split; each test participant contributes exactly one
/// sample. Folds run in parallel and the result depends only on `config`.
pub fn run_crossval(data: &[ParticipantFeatures], kind: CorpusKind, config: &CrossvalConfig) -> Result<CrossvalRun, EvalError> {
    let labels: Vec<Label> = data.iter().map(|p| p.label).collect();
    let ids: Vec<String> = data.iter().map(|p| p.id.clone()).collect();
    let folds = kfold_split(&labels, config.k, config.seed)?;
    leak_check(&folds, &ids)?;
    let results = crate::par::map_indexed(folds.len(), |f| run_fold(data, kind, &folds[f], f, config));
    let mut summaries = Vec::with_capacity(folds.len());
    let mut models = Vec::with_capacity(folds.len());
    let mut predictions = Vec::new();
    for r in results {
        let r = r?;
        summaries.push(r.summary);
        models.push(r.models);
        predictions.extend(r.predictions);
    }
    predictions.sort_by(|a, b| (a.model, &a.participant).cmp(&(b.model, &b.participant)));
    Ok(CrossvalRun {
        report: CrossvalReport {
            kind,
            config: *config,
            participants: ClassCounts::from_labels(labels),
            folds: summaries,
            models: model_reports(&predictions, config.k),
            predictions,
        },
        models,
    })
}
