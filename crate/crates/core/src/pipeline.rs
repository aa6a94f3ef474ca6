//! On-disk stages behind the CLI: featurize, train, crossval, report.
//!
//! Everything is written below the configured output directory:
//!
//! ```text
//! <out>/features/index.json
//! <out>/features/rejections.json
//! <out>/features/<id>/{manifest.json, mel_<k>.mmx, text.mmx}
//! <out>/models/<modality>/{text,audio,fusion}/   checkpoints
//! <out>/crossval/{report.json, report.txt, report.csv}
//! <out>/crossval/fold_<f>/{text,audio,fusion}/  checkpoints
//! <out>/resample_report.json
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{MelConfig, MelExtractor};
use crate::config::PipelineConfig;
use crate::corpus::{count_responses, list_participants, load_participant, CorpusError, CorpusKind, Issue, Label, Loaded, Severity};
use crate::eval::{render_csv, render_table, run_crossval, CrossvalReport, EvalError, FoldModels, Modality, ModelKind};
use crate::models::{fusion_examples, train as train_model, AudioModel, FusionConfig, FusionModel, TextModel, TrainError, TrainOutcome};
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::RngState;
use crate::sampling::{training_samples, ParticipantFeatures, ResampleSummary, Sample, SamplingError};
use crate::text::mmx::{read_embeddings, EmbeddingMatrix, MmxError};
use crate::text::{hash_embed, TEXT_WIDTH};

pub const FEATURES_DIR: &str = "features";
pub const INDEX_FILE: &str = "index.json";
pub const REJECTIONS_FILE: &str = "rejections.json";
pub const PARTICIPANT_MANIFEST: &str = "manifest.json";
pub const PRECOMPUTED_TEXT: &str = "text.mmx";
const FEATURE_VERSION: &str = "moodpipe-features-1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Mmx { path: PathBuf, source: MmxError },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("no features under {0}; run `moodpipe featurize` first")]
    MissingFeatures(PathBuf),
    #[error("participant {participant}: {message}")]
    Features { participant: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("{model} model: {source}")]
    Train { model: &'static str, source: TrainError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no cross-validation report at {0}; run `moodpipe crossval` first")]
    MissingReport(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` unless the file already holds exactly them.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool, PipelineError> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    Ok(true)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<bool, PipelineError> {
    let json = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_if_changed(path, json.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json { path: path.to_path_buf(), message: e.to_string() })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantManifest {
    pub id: String,
    pub label: Label,
    /// 1-based indices of the responses that survived preprocessing.
    pub responses: Vec<usize>,
    pub text_source: TextSource,
    /// SHA-256 over the participant's input files and the feature settings.
    pub input_hash: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextSource {
    Precomputed,
    HashEmbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub kind: CorpusKind,
    pub mel: MelConfig,
    pub participants: Vec<ParticipantManifest>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeSummary {
    pub participants: usize,
    pub up_to_date: usize,
    pub files_written: usize,
    pub rejected: Vec<String>,
    pub issues: Vec<Issue>,
}

pub fn features_dir(out: &Path) -> PathBuf {
    out.join(FEATURES_DIR)
}

pub fn mel_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("mel_{k}.mmx"))
}

fn input_hash(dir: &Path, kind: CorpusKind, mel: &MelConfig) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    h.update(FEATURE_VERSION.as_bytes());
    h.update(serde_json::to_vec(&(kind, mel)).expect("serializable"));
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    for path in files {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

enum Featurized {
    UpToDate(ParticipantManifest),
    Written(ParticipantManifest, usize, Vec<Issue>),
    Rejected(Vec<Issue>),
}

fn featurize_participant(id: &str, src: &Path, dst: &Path, kind: CorpusKind, extractor: &MelExtractor) -> Result<Featurized, PipelineError> {
    let hash = input_hash(src, kind, extractor.config())?;
    if let Ok(old) = read_json::<ParticipantManifest>(&dst.join(PARTICIPANT_MANIFEST)) {
        let complete = dst.join("text.mmx").is_file() && old.responses.iter().all(|&k| mel_file(dst, k).is_file());
        if old.input_hash == hash && complete {
            return Ok(Featurized::UpToDate(old));
        }
    }
    let (participant, issues) = match load_participant(id, src, kind) {
        Loaded::Ok(p, issues) => (p, issues),
        Loaded::Rejected(issues) => return Ok(Featurized::Rejected(issues)),
    };
    let mut written = 0;
    for r in &participant.responses {
        let spec = extractor.extract(&r.audio.samples);
        let m = EmbeddingMatrix::from_f64(&spec.frames).map_err(|e| PipelineError::Features { participant: id.to_string(), message: e.to_string() })?;
        written += usize::from(write_if_changed(&mel_file(dst, r.index), &m.to_bytes())?);
    }
    let precomputed = src.join(PRECOMPUTED_TEXT);
    let (text, source) = if precomputed.is_file() {
        let all = read_embeddings(&precomputed).map_err(|source| PipelineError::Mmx { path: precomputed.clone(), source })?;
        let n = count_responses(src);
        if all.rows() != n {
            return Err(PipelineError::Features {
                participant: id.to_string(),
                message: format!("{} has {} rows for {n} responses", precomputed.display(), all.rows()),
            });
        }
        let rows: Vec<usize> = participant.responses.iter().map(|r| r.index - 1).collect();
        let kept = all.view().select(ndarray::Axis(0), &rows);
        (EmbeddingMatrix::new(kept).map_err(|source| PipelineError::Mmx { path: precomputed.clone(), source })?, TextSource::Precomputed)
    } else {
        let mut rows = ndarray::Array2::zeros((participant.responses.len(), TEXT_WIDTH));
        for (i, r) in participant.responses.iter().enumerate() {
            rows.row_mut(i).assign(&hash_embed(&r.transcript, TEXT_WIDTH));
        }
        let m = EmbeddingMatrix::from_f64(&rows).map_err(|e| PipelineError::Features { participant: id.to_string(), message: e.to_string() })?;
        (m, TextSource::HashEmbed)
    };
    written += usize::from(write_if_changed(&dst.join("text.mmx"), &text.to_bytes())?);
    let manifest = ParticipantManifest {
        id: id.to_string(),
        label: participant.label,
        responses: participant.responses.iter().map(|r| r.index).collect(),
        text_source: source,
        input_hash: hash,
    };
    written += usize::from(write_json(&dst.join(PARTICIPANT_MANIFEST), &manifest)?);
    Ok(Featurized::Written(manifest, written, issues))
}

/// Computes Mel spectrograms and text embeddings for every participant,
/// skipping participants whose inputs hash to the recorded value.
pub fn featurize(config: &PipelineConfig) -> Result<FeaturizeSummary, PipelineError> {
    config.mel.validate().map_err(PipelineError::Config)?;
    let kind = config.corpus.kind;
    let dirs = list_participants(&config.corpus.root)?;
    let out = features_dir(&config.output);
    let extractor = MelExtractor::new(config.mel);
    let results = crate::par::map(&dirs, |(id, dir)| featurize_participant(id, dir, &out.join(id), kind, &extractor));
    let mut summary = FeaturizeSummary { participants: dirs.len(), ..FeaturizeSummary::default() };
    let mut manifests = Vec::new();
    for ((id, _), r) in dirs.iter().zip(results) {
        match r? {
            Featurized::UpToDate(m) => {
                summary.up_to_date += 1;
                manifests.push(m);
            }
            Featurized::Written(m, n, issues) => {
                summary.files_written += n;
                summary.issues.extend(issues);
                manifests.push(m);
            }
            Featurized::Rejected(issues) => {
                summary.rejected.push(id.clone());
                summary.issues.extend(issues);
            }
        }
    }
    let index = FeatureIndex { kind, mel: config.mel, participants: manifests };
    summary.files_written += usize::from(write_json(&out.join(INDEX_FILE), &index)?);
    let rejections: Vec<&Issue> = summary.issues.iter().filter(|i| i.severity == Severity::Error || summary.rejected.contains(&i.participant)).collect();
    summary.files_written += usize::from(write_json(&out.join(REJECTIONS_FILE), &rejections)?);
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub kind: CorpusKind,
    pub mel: MelConfig,
    pub participants: Vec<ParticipantFeatures>,
}

fn load_participant_features(dir: &Path, m: &ParticipantManifest) -> Result<ParticipantFeatures, PipelineError> {
    let mmx = |path: PathBuf| read_embeddings(&path).map_err(|source| PipelineError::Mmx { path, source });
    let audio = m.responses.iter().map(|&k| mmx(mel_file(dir, k)).map(|e| Arc::new(e.to_f64()))).collect::<Result<Vec<_>, _>>()?;
    let text = mmx(dir.join("text.mmx"))?.to_f64();
    if text.nrows() != audio.len() {
        return Err(PipelineError::Features {
            participant: m.id.clone(),
            message: format!("{} text rows for {} audio responses", text.nrows(), audio.len()),
        });
    }
    Ok(ParticipantFeatures { id: m.id.clone(), label: m.label, audio, text })
}

pub fn load_features(out: &Path) -> Result<FeatureSet, PipelineError> {
    let dir = features_dir(out);
    let index_path = dir.join(INDEX_FILE);
    if !index_path.is_file() {
        return Err(PipelineError::MissingFeatures(dir));
    }
    let index: FeatureIndex = read_json(&index_path)?;
    let participants = crate::par::map(&index.participants, |m| load_participant_features(&dir.join(&m.id), m))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureSet { kind: index.kind, mel: index.mel, participants })
}

fn check_features(config: &PipelineConfig, set: &FeatureSet) -> Result<(), PipelineError> {
    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    if set.mel != config.mel {
        return Err(PipelineError::Config("features were computed with different mel settings; rerun `moodpipe featurize`".into()));
    }
    if set.kind != config.corpus.kind {
        return Err(PipelineError::Config(format!("features are for a {:?} corpus but the config says {:?}", set.kind, config.corpus.kind)));
    }
    if set.participants.is_empty() {
        return Err(PipelineError::MissingFeatures(features_dir(&config.output)));
    }
    Ok(())
}

fn save_models(models: &FoldModels, seed: u64, dir: &Path) -> Result<(), PipelineError> {
    if let Some(m) = &models.text {
        checkpoint::save(&m.params, "text", seed, &dir.join("text"))?;
    }
    if let Some(m) = &models.audio {
        checkpoint::save(&m.params, "audio", seed, &dir.join("audio"))?;
    }
    if let Some(m) = &models.fusion {
        checkpoint::save(&m.params, "fusion", seed, &dir.join("fusion"))?;
    }
    Ok(())
}

pub fn crossval_dir(out: &Path) -> PathBuf {
    out.join("crossval")
}

/// Runs cross-validation on the featurized corpus and writes the report
/// (JSON, text table, CSV) and per-fold checkpoints.
pub fn crossval(config: &PipelineConfig) -> Result<CrossvalReport, PipelineError> {
    let set = load_features(&config.output)?;
    check_features(config, &set)?;
    let run = run_crossval(&set.participants, set.kind, &config.crossval)?;
    let dir = crossval_dir(&config.output);
    for (f, models) in run.models.iter().enumerate() {
        save_models(models, config.crossval.seed, &dir.join(format!("fold_{f}")))?;
    }
    write_json(&dir.join("report.json"), &run.report)?;
    write_if_changed(&dir.join("report.txt"), render_table(&run.report).as_bytes())?;
    write_if_changed(&dir.join("report.csv"), render_csv(&run.report).as_bytes())?;
    Ok(run.report)
}

pub fn read_report(out: &Path) -> Result<CrossvalReport, PipelineError> {
    let path = crossval_dir(out).join("report.json");
    if !path.is_file() {
        return Err(PipelineError::MissingReport(path));
    }
    read_json(&path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub modality: Modality,
    pub seed: u64,
    pub resample: ResampleSummary,
    pub training: Vec<(ModelKind, TrainOutcome)>,
}

/// Trains on every featurized participant and writes checkpoints to
/// `<out>/models/<modality>/`.
pub fn train(config: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let set = load_features(&config.output)?;
    check_features(config, &set)?;
    let cv = &config.crossval;
    let seed = cv.seed;
    let refs: Vec<&ParticipantFeatures> = set.participants.iter().collect();
    let samples = training_samples(&refs, set.kind, &mut RngState::new(seed).derive(&[1]))?;
    let train_err = |model: &'static str| move |source| PipelineError::Train { model, source };
    let sub_seed = |path: &[u64]| rand::RngCore::next_u64(&mut RngState::new(seed).derive(path));
    let mut training = Vec::new();
    let text = if cv.modality.wants_text() {
        let mut m = TextModel::new(cv.text, &mut RngState::new(seed).derive(&[3]));
        training.push((ModelKind::Text, train_model(&mut m, &samples.samples, &cv.train, sub_seed(&[4])).map_err(train_err("text"))?));
        Some(m)
    } else {
        None
    };
    let audio = if cv.modality.wants_audio() {
        let mut m = AudioModel::new(cv.audio, &mut RngState::new(seed).derive(&[5]));
        training.push((ModelKind::Audio, train_model(&mut m, &samples.samples, &cv.train, sub_seed(&[6])).map_err(train_err("audio"))?));
        Some(m)
    } else {
        None
    };
    let fusion = match (&text, &audio) {
        (Some(t), Some(a)) if cv.modality == Modality::Fusion => {
            let refs: Vec<&Sample> = samples.samples.iter().collect();
            let examples = fusion_examples(t, a, &refs);
            let mut m = FusionModel::new(FusionConfig { text_dim: t.repr_dim(), audio_dim: a.repr_dim() }, &mut RngState::new(seed).derive(&[7]));
            training.push((ModelKind::Fusion, train_model(&mut m, &examples, &cv.fusion_train, sub_seed(&[8])).map_err(train_err("fusion"))?));
            Some(m)
        }
        _ => None,
    };
    let dir = config.output.join("models").join(serde_json::to_value(cv.modality).expect("serializable").as_str().unwrap_or("model"));
    save_models(&FoldModels { text, audio, fusion }, seed, &dir)?;
    let summary = TrainSummary { modality: cv.modality, seed, resample: samples.summary, training };
    write_json(&dir.join("training.json"), &summary)?;
    Ok(summary)
}

/// Balancing/augmentation summary over the whole featurized corpus.
pub fn resample_report(config: &PipelineConfig) -> Result<ResampleSummary, PipelineError> {
    let set = load_features(&config.output)?;
    let refs: Vec<&ParticipantFeatures> = set.participants.iter().collect();
    let summary = training_samples(&refs, set.kind, &mut RngState::new(config.crossval.seed).derive(&[1]))?.summary;
    write_json(&config.output.join("resample_report.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unchanged_bytes_not_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        assert!(write_if_changed(&p, b"x").unwrap());
        assert!(!write_if_changed(&p, b"x").unwrap());
        assert!(write_if_changed(&p, b"y").unwrap());
    }

    #[test]
    fn missing_features_names_the_step() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_features(dir.path()).unwrap_err();
        assert!(err.to_string().contains("featurize"));
    }

    #[test]
    fn precomputed_text_takes_precedence() {
        use crate::synth::{generate, Separability, SynthKind, SynthSpec};
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let spec = SynthSpec { n_depressed: 1, n_control: 1, separability: Separability::Separable, kind: SynthKind::ThreeResponse, seed: 2 };
        generate(&spec, &corpus).unwrap();
        let fixed = EmbeddingMatrix::new(ndarray::Array2::from_elem((3, TEXT_WIDTH), 0.25f32)).unwrap();
        fs::write(corpus.join("p000").join(PRECOMPUTED_TEXT), fixed.to_bytes()).unwrap();

        let mut config = PipelineConfig::default();
        config.corpus.root = corpus;
        config.output = dir.path().join("out");
        featurize(&config).unwrap();
        let set = load_features(&config.output).unwrap();
        let text = |id: &str| set.participants.iter().find(|p| p.id == id).unwrap().text.clone();
        assert!(text("p000").iter().all(|&v| v == 0.25));
        assert!(text("p001").iter().any(|&v| v != 0.25));
        let index: FeatureIndex = serde_json::from_slice(&fs::read(features_dir(&config.output).join(INDEX_FILE)).unwrap()).unwrap();
        let sources: Vec<TextSource> = index.participants.iter().map(|m| m.text_source).collect();
        assert_eq!(sources, [TextSource::Precomputed, TextSource::HashEmbed]);
    }
}
