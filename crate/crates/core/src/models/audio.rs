use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{depressed_ce, predictions, Prediction, Trainable};
use crate::audio::NetVlad;
use crate::nn::{dropout, Gru, Linear, Mat, ParamSet, RngState, Tape, Var};
use crate::sampling::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioModelConfig {
    pub mel_bins: usize,
    pub clusters: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl Default for AudioModelConfig {
    fn default() -> Self {
        AudioModelConfig {
            mel_bins: 80,
            clusters: 8,
            embed: 256,
            hidden: 256,
            layers: 2,
            fc_hidden: 256,
            dropout: 0.5,
        }
    }
}

/// NetVLAD embeds each response's Mel spectrogram; a stacked GRU runs over
/// the responses; the top layer's final state is the audio representation,
/// followed by dropout → FC + ReLU → dropout → FC → softmax.
#[derive(Clone, Debug)]
pub struct AudioModel {
    pub config: AudioModelConfig,
    pub params: ParamSet,
    pub netvlad: NetVlad,
    pub gru: Gru,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct AudioForward {
    /// Per-step B×E NetVLAD embeddings.
    pub embeddings: Vec<Var>,
    /// B×H final top-layer state.
    pub repr: Var,
    pub probs: Var,
}

impl AudioModel {
    pub fn new(config: AudioModelConfig, rng: &mut RngState) -> Self {
        let mut params = ParamSet::new();
        let netvlad = NetVlad::new(&mut params, "audio.netvlad", config.mel_bins, config.clusters, config.embed, rng);
        let gru = Gru::new(&mut params, "audio.gru", config.embed, config.hidden, config.layers, config.dropout, rng);
        let fc1 = Linear::new(&mut params, "audio.fc1", config.hidden, config.fc_hidden, rng);
        let fc2 = Linear::new(&mut params, "audio.fc2", config.fc_hidden, 2, rng);
        AudioModel {
            config,
            params,
            netvlad,
            gru,
            fc1,
            fc2,
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.config.hidden
    }

    /// `batch` holds, per sample, one T_i×D spectrogram per response; all
    /// samples must have the same number of responses.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &[&[Arc<Mat>]], mut rng: Option<&mut RngState>) -> AudioForward {
        let steps = batch[0].len();
        assert!(batch.iter().all(|s| s.len() == steps), "audio batch mixes response counts");
        let mut vlads = Vec::with_capacity(steps * batch.len());
        for t in 0..steps {
            for sample in batch {
                let spec = &sample[t];
                assert_eq!(spec.ncols(), self.netvlad.dim, "mel bin count mismatch");
                let x = tape.input(spec.as_ref().clone());
                vlads.push(self.netvlad.vlad(tape, x));
            }
        }
        // one projection for all steps, then one B×E node per step
        let stacked = tape.concat_rows(&vlads);
        let projected = self.netvlad.project(tape, stacked);
        let embeddings: Vec<Var> = (0..steps).map(|t| tape.slice_rows(projected, t * batch.len(), batch.len())).collect();
        let outs = self.gru.forward(tape, &embeddings, rng.as_deref_mut());
        let repr = *outs.last().expect("at least one response");
        let d = dropout(tape, repr, self.config.dropout, rng.as_deref_mut());
        let h = self.fc1.forward(tape, d);
        let h = tape.relu(h);
        let h = dropout(tape, h, self.config.dropout, rng);
        let logits = self.fc2.forward(tape, h);
        let probs = tape.softmax_rows(logits);
        AudioForward { embeddings, repr, probs }
    }

    /// Eval-mode predictions and representations for a batch of samples.
    pub fn predict_batch(&self, batch: &[&[Arc<Mat>]]) -> Vec<(Prediction, Vec<f64>)> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, batch, None);
        let reprs = tape.value(f.repr);
        predictions(&tape, f.probs).into_iter().zip(reprs.rows()).map(|(p, r)| (p, r.to_vec())).collect()
    }

    pub fn predict(&self, specs: &[Arc<Mat>]) -> (Prediction, Vec<f64>) {
        self.predict_batch(&[specs]).remove(0)
    }
}

impl Trainable for AudioModel {
    type Example = Sample;

    fn kind(&self) -> &'static str {
        "audio"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_loss(&self, tape: &mut Tape<'_>, batch: &[&Sample], rng: Option<&mut RngState>) -> Var {
        let specs: Vec<&[Arc<Mat>]> = batch.iter().map(|s| s.audio.as_slice()).collect();
        let labels: Vec<f64> = batch.iter().map(|s| s.label.target()).collect();
        let f = self.forward(tape, &specs, rng);
        depressed_ce(tape, f.probs, &labels)
    }
}
