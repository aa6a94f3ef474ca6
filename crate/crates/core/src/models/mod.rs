//! The three classifiers and their training loop.
//!
//! * [`TextModel`]: 2-layer BiLSTM, attention pooling over time, two FC layers.
//! * [`AudioModel`]: NetVLAD per response, 2-layer GRU over responses, two FC layers.
//! * [`FusionModel`]: modal attention over the `[text | audio]` representations
//!   and one FC layer, trained with a per-modality cross-entropy sum.

pub mod audio;
pub mod fusion;
pub mod text;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::nn::{ParamSet, RngState, Tape, Var};
use crate::sampling::Sample;

pub use audio::{AudioModel, AudioModelConfig};
pub use fusion::{FusionConfig, FusionExample, FusionModel};
pub use text::{TextModel, TextModelConfig};
pub use train::{train, StopReason, TrainConfig, TrainError, TrainOutcome};

/// Class probabilities `[non-depressed, depressed]` and their argmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: [f64; 2],
    pub label: Label,
}

impl Prediction {
    pub fn from_probs(p_non: f64, p_dep: f64) -> Self {
        Prediction {
            probabilities: [p_non, p_dep],
            label: if p_dep > p_non { Label::Depressed } else { Label::NonDepressed },
        }
    }

    pub fn depressed_probability(&self) -> f64 {
        self.probabilities[1]
    }
}

/// Reads an `n×2` probability node into predictions.
pub fn predictions(tape: &Tape<'_>, probs: Var) -> Vec<Prediction> {
    tape.value(probs).rows().into_iter().map(|r| Prediction::from_probs(r[0], r[1])).collect()
}

/// Samples per batched inference call.
pub const PREDICT_CHUNK: usize = 32;

/// Eval-mode text predictions and representations, in input order.
pub fn predict_text(model: &TextModel, samples: &[&Sample]) -> Vec<(Prediction, Vec<f64>)> {
    let chunks: Vec<&[&Sample]> = samples.chunks(PREDICT_CHUNK).collect();
    crate::par::map(&chunks, |c| model.predict_batch(&c.iter().map(|s| &s.text).collect::<Vec<_>>()))
        .into_iter()
        .flatten()
        .collect()
}

/// Eval-mode audio predictions and representations, in input order.
pub fn predict_audio(model: &AudioModel, samples: &[&Sample]) -> Vec<(Prediction, Vec<f64>)> {
    let chunks: Vec<&[&Sample]> = samples.chunks(PREDICT_CHUNK).collect();
    crate::par::map(&chunks, |c| model.predict_batch(&c.iter().map(|s| s.audio.as_slice()).collect::<Vec<_>>()))
        .into_iter()
        .flatten()
        .collect()
}

/// Frozen-encoder representations of `samples` for fusion training.
pub fn fusion_examples(text: &TextModel, audio: &AudioModel, samples: &[&Sample]) -> Vec<FusionExample> {
    predict_text(text, samples)
        .into_iter()
        .zip(predict_audio(audio, samples))
        .zip(samples)
        .map(|(((_, t), (_, a)), s)| FusionExample { text: t, audio: a, label: s.label })
        .collect()
}

/// A model the generic training loop can optimize.
pub trait Trainable: Sync {
    type Example: Sync;

    fn kind(&self) -> &'static str;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Mean loss over `batch`; dropout is active iff `rng` is given.
    fn batch_loss(&self, tape: &mut Tape<'_>, batch: &[&Self::Example], rng: Option<&mut RngState>) -> Var;
}

/// Cross-entropy on the depressed-class column of an `n×2` probability node.
pub(crate) fn depressed_ce(tape: &mut Tape<'_>, probs: Var, labels: &[f64]) -> Var {
    let p = tape.slice_cols(probs, 1, 1);
    tape.cross_entropy(p, labels)
}
