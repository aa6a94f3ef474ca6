use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{depressed_ce, predictions, Prediction, Trainable};
use crate::nn::{dropout, Bilstm, Linear, Mat, ParamId, ParamSet, RngState, Tape, Var};
use crate::sampling::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextModelConfig {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl Default for TextModelConfig {
    fn default() -> Self {
        TextModelConfig {
            input: 1024,
            hidden: 128,
            layers: 2,
            fc_hidden: 128,
            dropout: 0.5,
        }
    }
}

/// BiLSTM with attention pooling.
///
/// With `O_t = O_f,t + O_b,t` the summed directional outputs, scores are
/// `c_t = tanh(O_t) · w`, weights `α = softmax(c)` and the pooled text
/// representation is `y = Σ_t α_t O_t`. Then dropout → FC + ReLU → dropout
/// → FC → softmax.
#[derive(Clone, Debug)]
pub struct TextModel {
    pub config: TextModelConfig,
    pub params: ParamSet,
    pub bilstm: Bilstm,
    /// H×1 attention vector `w`.
    pub attention: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Intermediate nodes of one text forward pass.
#[derive(Clone, Debug)]
pub struct TextForward {
    /// Summed BiLSTM outputs per step, each B×H.
    pub outputs: Vec<Var>,
    /// B×T attention weights.
    pub alpha: Var,
    /// B×H pooled representation.
    pub repr: Var,
    /// B×2 class probabilities.
    pub probs: Var,
}

impl TextModel {
    pub fn new(config: TextModelConfig, rng: &mut RngState) -> Self {
        let mut params = ParamSet::new();
        let bilstm = Bilstm::new(&mut params, "text.bilstm", config.input, config.hidden, config.layers, config.dropout, rng);
        let attention = params.add_weight("text.attention", config.hidden, 1, config.hidden, rng);
        let fc1 = Linear::new(&mut params, "text.fc1", config.hidden, config.fc_hidden, rng);
        let fc2 = Linear::new(&mut params, "text.fc2", config.fc_hidden, 2, rng);
        TextModel {
            config,
            params,
            bilstm,
            attention,
            fc1,
            fc2,
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.config.hidden
    }

    /// `batch` holds one T×W matrix per sample; all must share T.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &[&Array2<f64>], mut rng: Option<&mut RngState>) -> TextForward {
        let steps = batch[0].nrows();
        assert!(batch.iter().all(|x| x.nrows() == steps), "text batch mixes sequence lengths");
        assert!(batch.iter().all(|x| x.ncols() == self.config.input), "text feature width mismatch");
        let xs: Vec<Var> = (0..steps)
            .map(|t| {
                let rows = Mat::from_shape_fn((batch.len(), self.config.input), |(b, j)| batch[b][[t, j]]);
                tape.input(rows)
            })
            .collect();
        let (of, ob) = self.bilstm.forward(tape, &xs, rng.as_deref_mut());
        let outputs: Vec<Var> = of.iter().zip(&ob).map(|(&f, &b)| tape.add(f, b)).collect();
        let (alpha, repr) = attention_pool(tape, &outputs, self.attention);
        let d = dropout(tape, repr, self.config.dropout, rng.as_deref_mut());
        let h = self.fc1.forward(tape, d);
        let h = tape.relu(h);
        let h = dropout(tape, h, self.config.dropout, rng);
        let logits = self.fc2.forward(tape, h);
        let probs = tape.softmax_rows(logits);
        TextForward { outputs, alpha, repr, probs }
    }

    /// Eval-mode predictions and pooled representations for a batch.
    pub fn predict_batch(&self, batch: &[&Array2<f64>]) -> Vec<(Prediction, Vec<f64>)> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, batch, None);
        let reprs = tape.value(f.repr);
        predictions(&tape, f.probs).into_iter().zip(reprs.rows()).map(|(p, r)| (p, r.to_vec())).collect()
    }

    pub fn predict(&self, x: &Array2<f64>) -> (Prediction, Vec<f64>) {
        self.predict_batch(&[x]).remove(0)
    }
}

/// Attention pooling over per-step `B×H` outputs with an `H×1` score
/// vector. Returns `(α: B×T, y: B×H)`.
pub fn attention_pool(tape: &mut Tape<'_>, outputs: &[Var], w: ParamId) -> (Var, Var) {
    let w = tape.param(w);
    let scores: Vec<Var> = outputs
        .iter()
        .map(|&o| {
            let t = tape.tanh(o);
            tape.matmul(t, w)
        })
        .collect();
    let scores = tape.concat_cols(&scores);
    let alpha = tape.softmax_rows(scores);
    let mut pooled = None;
    for (t, &o) in outputs.iter().enumerate() {
        let a = tape.slice_cols(alpha, t, 1);
        let term = tape.mul_col(o, a);
        pooled = Some(match pooled {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    (alpha, pooled.expect("at least one step"))
}

impl Trainable for TextModel {
    type Example = Sample;

    fn kind(&self) -> &'static str {
        "text"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_loss(&self, tape: &mut Tape<'_>, batch: &[&Sample], rng: Option<&mut RngState>) -> Var {
        let xs: Vec<&Array2<f64>> = batch.iter().map(|s| &s.text).collect();
        let labels: Vec<f64> = batch.iter().map(|s| s.label.target()).collect();
        let f = self.forward(tape, &xs, rng);
        depressed_ce(tape, f.probs, &labels)
    }
}
