//! Interview corpora on disk: layout, labels and validation.
//!
//! ```text
//! <root>/<participant_id>/meta.json          {"questionnaire": "sds"|"phq8", "raw_score": <int>}
//! <root>/<participant_id>/response_<k>.wav   k = 1..n, RIFF PCM
//! <root>/<participant_id>/response_<k>.clean.wav   optional denoised variant (preferred)
//! <root>/<participant_id>/response_<k>.txt   UTF-8 transcript
//! ```

pub mod preprocess;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use preprocess::{preprocess_audio, Audio, AudioError, Rejection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    NonDepressed,
    Depressed,
}

impl Label {
    pub fn is_depressed(self) -> bool {
        self == Label::Depressed
    }

    /// 1.0 for depressed, 0.0 otherwise.
    pub fn target(self) -> f64 {
        if self.is_depressed() {
            1.0
        } else {
            0.0
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Depressed
        } else {
            Label::NonDepressed
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::NonDepressed => "non-depressed",
            Label::Depressed => "depressed",
        })
    }
}

/// SDS index score `raw × 1.25 ≥ 53`, evaluated exactly as `raw ≥ 43`.
pub fn label_from_sds(raw: u32) -> Label {
    // 1.25·raw ≥ 53  ⇔  5·raw ≥ 212  ⇔  raw ≥ 42.4
    if 5 * u64::from(raw) >= 212 {
        Label::Depressed
    } else {
        Label::NonDepressed
    }
}

pub const PHQ8_MAX: i64 = 24;

/// PHQ-8 score `≥ 10` is depressed.
pub fn label_from_phq8(score: i64, participant: &str) -> Result<Label, CorpusError> {
    if !(0..=PHQ8_MAX).contains(&score) {
        return Err(CorpusError::ScoreOutOfRange {
            participant: participant.to_string(),
            score,
            max: PHQ8_MAX,
        });
    }
    Ok(if score >= 10 { Label::Depressed } else { Label::NonDepressed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionnaireKind {
    Sds,
    Phq8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub questionnaire: QuestionnaireKind,
    pub raw_score: i64,
}

impl Meta {
    pub fn label(&self, participant: &str) -> Result<Label, CorpusError> {
        match self.questionnaire {
            QuestionnaireKind::Sds => {
                let raw = u32::try_from(self.raw_score).map_err(|_| CorpusError::ScoreOutOfRange {
                    participant: participant.to_string(),
                    score: self.raw_score,
                    max: i64::from(u32::MAX),
                })?;
                Ok(label_from_sds(raw))
            }
            QuestionnaireKind::Phq8 => label_from_phq8(self.raw_score, participant),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    /// Exactly three responses per participant.
    ThreeResponse,
    /// Free-length interviews, grouped into windows of ten responses.
    Interview,
}

impl std::str::FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "three-response" => Ok(CorpusKind::ThreeResponse),
            "interview" => Ok(CorpusKind::Interview),
            other => Err(format!("unknown corpus kind {other:?} (expected three-response or interview)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    /// 1-based position in the interview.
    pub index: usize,
    pub audio: Audio,
    pub transcript: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Participant {
    pub id: String,
    pub responses: Vec<Response>,
    pub meta: Meta,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub participant: String,
    pub path: PathBuf,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}: {}: {}", self.participant, self.path.display(), self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    /// Ids of participants excluded because of errors.
    pub fn rejected_participants(&self) -> BTreeSet<&str> {
        self.errors().map(|i| i.participant.as_str()).collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}: corpus root does not exist")]
    MissingRoot(PathBuf),
    #[error("{0}: corpus contains no participant directories")]
    Empty(PathBuf),
    #[error("{path}: malformed metadata: {message}")]
    Meta { path: PathBuf, message: String },
    #[error("participant {participant}: score {score} outside 0..={max}")]
    ScoreOutOfRange { participant: String, score: i64, max: i64 },
    #[error("duplicate participant id {id} ({path})")]
    DuplicateId { id: String, path: PathBuf },
    #[error("{path}: missing file")]
    MissingFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub kind: CorpusKind,
    /// Accepted participants, sorted by id.
    pub participants: Vec<Participant>,
    pub report: ValidationReport,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub depressed: usize,
    pub non_depressed: usize,
}

impl ClassCounts {
    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut c = ClassCounts::default();
        for l in labels {
            match l {
                Label::Depressed => c.depressed += 1,
                Label::NonDepressed => c.non_depressed += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.depressed + self.non_depressed
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Depressed => self.depressed,
            Label::NonDepressed => self.non_depressed,
        }
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} depressed / {} non-depressed", self.depressed, self.non_depressed)
    }
}

impl Corpus {
    pub fn class_counts(&self) -> ClassCounts {
        ClassCounts::from_labels(self.participants.iter().map(|p| p.label))
    }

    pub fn get(&self, id: &str) -> Option<&Participant> {
        self.participants.binary_search_by(|p| p.id.as_str().cmp(id)).ok().map(|i| &self.participants[i])
    }

    pub fn is_valid(&self) -> bool {
        self.report.is_valid()
    }
}

pub const META_FILE: &str = "meta.json";

pub fn response_wav(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("response_{k}.wav"))
}

pub fn response_clean_wav(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("response_{k}.clean.wav"))
}

pub fn response_txt(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("response_{k}.txt"))
}

/// Participant directories under `root`, sorted by id.
pub fn list_participants(root: &Path) -> Result<Vec<(String, PathBuf)>, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let io_err = |source| CorpusError::Io { path: root.to_path_buf(), source };
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if entry.file_type().map_err(io_err)?.is_dir() {
            let id = entry.file_name().to_string_lossy().into_owned();
            if !id.starts_with('.') {
                out.push((id, entry.path()));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CorpusError::Empty(root.to_path_buf()));
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<Meta, CorpusError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => CorpusError::MissingFile { path: path.clone() },
        _ => CorpusError::Io { path: path.clone(), source },
    })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Meta { path, message: e.to_string() })
}

/// Number of consecutive `response_<k>.wav` (or `.clean.wav`) files from k = 1.
pub fn count_responses(dir: &Path) -> usize {
    (1..).take_while(|&k| response_wav(dir, k).is_file() || response_clean_wav(dir, k).is_file()).count()
}

/// Labels only, without decoding any audio.
pub fn load_labels(root: &Path) -> Result<Vec<(String, Label)>, CorpusError> {
    list_participants(root)?
        .into_iter()
        .map(|(id, dir)| {
            let label = read_meta(&dir)?.label(&id)?;
            Ok((id, label))
        })
        .collect()
}

/// Outcome of loading one participant directory.
pub enum Loaded {
    Ok(Participant, Vec<Issue>),
    Rejected(Vec<Issue>),
}

fn issue(participant: &str, path: &Path, severity: Severity, message: impl Into<String>) -> Issue {
    Issue {
        participant: participant.to_string(),
        path: path.to_path_buf(),
        severity,
        message: message.into(),
    }
}

pub fn load_participant(id: &str, dir: &Path, kind: CorpusKind) -> Loaded {
    let mut issues = Vec::new();
    let meta = match read_meta(dir).and_then(|m| m.label(id).map(|l| (m, l))) {
        Ok(m) => Some(m),
        Err(e) => {
            issues.push(issue(id, &dir.join(META_FILE), Severity::Error, e.to_string()));
            None
        }
    };
    let n = count_responses(dir);
    if n == 0 {
        issues.push(issue(id, &response_wav(dir, 1), Severity::Error, "no response audio"));
    }
    if kind == CorpusKind::ThreeResponse && n != 3 && n != 0 {
        issues.push(issue(id, dir, Severity::Error, format!("expected exactly 3 responses, found {n}")));
    }
    // a rejected response invalidates a three-response participant but is
    // only dropped from a free-length interview
    let drop_severity = match kind {
        CorpusKind::ThreeResponse => Severity::Error,
        CorpusKind::Interview => Severity::Warning,
    };
    let mut responses = Vec::with_capacity(n);
    for k in 1..=n {
        let clean = response_clean_wav(dir, k);
        let wav = if clean.is_file() { clean } else { response_wav(dir, k) };
        let txt = response_txt(dir, k);
        let transcript = match fs::read_to_string(&txt) {
            Ok(t) if !t.trim().is_empty() => t.trim().to_string(),
            Ok(_) => {
                issues.push(issue(id, &txt, drop_severity, "empty transcript"));
                continue;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                issues.push(issue(id, &txt, Severity::Error, "missing file"));
                continue;
            }
            Err(e) => {
                issues.push(issue(id, &txt, Severity::Error, e.to_string()));
                continue;
            }
        };
        match preprocess::decode_wav(&wav).and_then(|a| preprocess_audio(&a)) {
            Ok(audio) => responses.push(Response { index: k, audio, transcript }),
            Err(AudioError::Rejected(r)) => issues.push(issue(id, &wav, drop_severity, format!("rejected: {r:?}"))),
            Err(e) => issues.push(issue(id, &wav, Severity::Error, e.to_string())),
        }
    }
    if responses.is_empty() && n > 0 && issues.iter().all(|i| i.severity != Severity::Error) {
        issues.push(issue(id, dir, Severity::Error, "no usable responses"));
    }
    match meta {
        Some((meta, label)) if issues.iter().all(|i| i.severity != Severity::Error) => Loaded::Ok(
            Participant {
                id: id.to_string(),
                responses,
                meta,
                label,
            },
            issues,
        ),
        _ => Loaded::Rejected(issues),
    }
}

/// Loads, preprocesses and labels every participant under `root`.
///
/// Participants with errors are left out of `participants` and described
/// in `report`; only an unreadable or empty root is a hard error.
pub fn load_corpus(root: &Path, kind: CorpusKind) -> Result<Corpus, CorpusError> {
    let dirs = list_participants(root)?;
    let loaded = crate::par::map(&dirs, |(id, dir)| load_participant(id, dir, kind));
    let mut participants = Vec::new();
    let mut report = ValidationReport::default();
    for l in loaded {
        match l {
            Loaded::Ok(p, issues) => {
                participants.push(p);
                report.issues.extend(issues);
            }
            Loaded::Rejected(issues) => report.issues.extend(issues),
        }
    }
    Ok(Corpus {
        root: root.to_path_buf(),
        kind,
        participants,
        report,
    })
}

/// Checks id uniqueness and per-kind response counts for an in-memory corpus.
pub fn check_participants(participants: &[Participant], kind: CorpusKind, root: &Path) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for p in participants {
        if !seen.insert(p.id.as_str()) {
            return Err(CorpusError::DuplicateId { id: p.id.clone(), path: root.join(&p.id) });
        }
        if kind == CorpusKind::ThreeResponse && p.responses.len() != 3 {
            return Err(CorpusError::Meta {
                path: root.join(&p.id),
                message: format!("expected 3 responses, found {}", p.responses.len()),
            });
        }
    }
    Ok(())
}
