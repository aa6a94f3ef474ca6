use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{depressed_ce, predictions, Prediction, Trainable};
use crate::corpus::Label;
use crate::nn::{Linear, Mat, ParamId, ParamSet, RngState, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub text_dim: usize,
    pub audio_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { text_dim: 128, audio_dim: 256 }
    }
}

/// Frozen unimodal representations of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionExample {
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub label: Label,
}

/// Modal attention `a = softmax(m)` over the two modalities, then one FC
/// layer on `[a_text·x_text | a_audio·x_audio]`. The FC weight's first
/// `text_dim` rows are the text slice `ω_text`, the rest `ω_audio`.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub params: ParamSet,
    /// 1×2 pre-softmax modal attention `[text, audio]`.
    pub modal_attention: ParamId,
    pub fc: Linear,
}

/// Intermediate nodes shared by the forward pass and the loss.
struct Weighted {
    text: Var,
    audio: Var,
    w_text: Var,
    w_audio: Var,
    bias: Var,
}

impl FusionModel {
    pub fn new(config: FusionConfig, rng: &mut RngState) -> Self {
        let mut params = ParamSet::new();
        let modal_attention = params.add_zeros("fusion.modal_attention", 1, 2);
        let fc = Linear::new(&mut params, "fusion.fc", config.text_dim + config.audio_dim, 2, rng);
        FusionModel {
            config,
            params,
            modal_attention,
            fc,
        }
    }

    /// Softmax-normalized `[a_text, a_audio]`.
    pub fn modal_weights(&self) -> [f64; 2] {
        let m = self.params.value(self.modal_attention);
        let p = crate::nn::softmax_rows(m);
        [p[[0, 0]], p[[0, 1]]]
    }

    fn weighted(&self, tape: &mut Tape<'_>, x_text: Var, x_audio: Var) -> Weighted {
        let (td, ad) = (self.config.text_dim, self.config.audio_dim);
        assert_eq!(tape.dim(x_text).1, td, "text representation width");
        assert_eq!(tape.dim(x_audio).1, ad, "audio representation width");
        let m = tape.param(self.modal_attention);
        let a = tape.softmax_rows(m);
        let a_text = tape.slice_cols(a, 0, 1);
        let a_audio = tape.slice_cols(a, 1, 1);
        let text = tape.mul_scalar(x_text, a_text);
        let audio = tape.mul_scalar(x_audio, a_audio);
        let w = tape.param(self.fc.w);
        let w_text = tape.slice_rows(w, 0, td);
        let w_audio = tape.slice_rows(w, td, ad);
        let bias = tape.param(self.fc.b);
        Weighted { text, audio, w_text, w_audio, bias }
    }

    /// B×2 probabilities from the combined logits.
    pub fn forward(&self, tape: &mut Tape<'_>, x_text: Var, x_audio: Var) -> Var {
        let wt = self.weighted(tape, x_text, x_audio);
        let joined = tape.concat_cols(&[wt.text, wt.audio]);
        let logits = self.fc.forward(tape, joined);
        tape.softmax_rows(logits)
    }

    /// `Σ_m CE(softmax(a_m x_m ω_m + b)_depressed, y)` over text and audio.
    pub fn loss(&self, tape: &mut Tape<'_>, x_text: Var, x_audio: Var, labels: &[f64]) -> Var {
        let wt = self.weighted(tape, x_text, x_audio);
        let mut total = None;
        for (x, w) in [(wt.audio, wt.w_audio), (wt.text, wt.w_text)] {
            let logits = tape.matmul(x, w);
            let logits = tape.add_row(logits, wt.bias);
            let probs = tape.softmax_rows(logits);
            let ce = depressed_ce(tape, probs, labels);
            total = Some(match total {
                None => ce,
                Some(acc) => tape.add(acc, ce),
            });
        }
        total.expect("two modalities")
    }

    fn inputs(tape: &mut Tape<'_>, batch: &[&FusionExample]) -> (Var, Var) {
        let stack = |rows: Vec<&Vec<f64>>| Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j]);
        let xt = tape.input(stack(batch.iter().map(|e| &e.text).collect()));
        let xa = tape.input(stack(batch.iter().map(|e| &e.audio).collect()));
        (xt, xa)
    }

    pub fn predict(&self, example: &FusionExample) -> Prediction {
        let mut tape = Tape::new(&self.params);
        let (xt, xa) = Self::inputs(&mut tape, &[example]);
        let probs = self.forward(&mut tape, xt, xa);
        predictions(&tape, probs)[0]
    }

    /// Combined logits for one example, for inspection.
    pub fn logits(&self, text: &[f64], audio: &[f64]) -> [f64; 2] {
        let mut tape = Tape::new(&self.params);
        let xt = tape.input(Mat::from_shape_vec((1, text.len()), text.to_vec()).expect("row"));
        let xa = tape.input(Mat::from_shape_vec((1, audio.len()), audio.to_vec()).expect("row"));
        let wt = self.weighted(&mut tape, xt, xa);
        let joined = tape.concat_cols(&[wt.text, wt.audio]);
        let l = self.fc.forward(&mut tape, joined);
        [tape.value(l)[[0, 0]], tape.value(l)[[0, 1]]]
    }
}

impl Trainable for FusionModel {
    type Example = FusionExample;

    fn kind(&self) -> &'static str {
        "fusion"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_loss(&self, tape: &mut Tape<'_>, batch: &[&FusionExample], _rng: Option<&mut RngState>) -> Var {
        let labels: Vec<f64> = batch.iter().map(|e| e.label.target()).collect();
        let (xt, xa) = Self::inputs(tape, batch);
        self.loss(tape, xt, xa, &labels)
    }
}
