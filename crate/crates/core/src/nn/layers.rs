//! Fully connected, dropout, GRU and BiLSTM layers built from tape ops.

use ndarray::Array2;
use rand::Rng;

use super::param::{ParamId, ParamSet};
use super::rng::RngState;
use super::tape::{Tape, Var};

/// `x·W + b` for `x: B×I`, `W: I×O`, `b: 1×O`.
pub fn fc_forward(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Inverted dropout. With `rng == None` (eval mode) this is the identity.
pub fn dropout(tape: &mut Tape<'_>, x: Var, p: f64, rng: Option<&mut RngState>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_simple_fn(tape.dim(x), || if rng.random::<f64>() < p { 0.0 } else { keep });
            tape.mask(x, mask)
        }
        _ => x,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut RngState) -> Self {
        Linear {
            w: params.add_weight(format!("{name}.weight"), input, output, input, rng),
            b: params.add_zeros(format!("{name}.bias"), 1, output),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        fc_forward(tape, x, w, b)
    }
}

/// GRU cell with the reset gate applied to the previous state before the
/// recurrent candidate projection:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// Input weights are packed `[W_z | W_r | W_h]` (I×3H), recurrent weights
/// `[U_z | U_r]` (H×2H) and `U_h` (H×H), bias `1×3H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub w: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut RngState) -> Self {
        GruCell {
            w: params.add_weight(format!("{name}.w"), input, 3 * hidden, input, rng),
            u_zr: params.add_weight(format!("{name}.u_zr"), hidden, 2 * hidden, hidden, rng),
            u_h: params.add_weight(format!("{name}.u_h"), hidden, hidden, hidden, rng),
            b: params.add_zeros(format!("{name}.b"), 1, 3 * hidden),
            input,
            hidden,
        }
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Var {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let xw = fc_forward(tape, x, w, b);
        self.step_projected(tape, xw, h)
    }

    /// One step from a precomputed input projection `x·W + b`.
    pub fn step_projected(&self, tape: &mut Tape<'_>, xw: Var, h: Var) -> Var {
        let hd = self.hidden;
        let (u_zr, u_h) = (tape.param(self.u_zr), tape.param(self.u_h));
        let hu = tape.matmul(h, u_zr);
        let xz = tape.slice_cols(xw, 0, hd);
        let xr = tape.slice_cols(xw, hd, hd);
        let xh = tape.slice_cols(xw, 2 * hd, hd);
        let hz = tape.slice_cols(hu, 0, hd);
        let hr = tape.slice_cols(hu, hd, hd);
        let z_pre = tape.add(xz, hz);
        let z = tape.sigmoid(z_pre);
        let r_pre = tape.add(xr, hr);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let rhu = tape.matmul(rh, u_h);
        let cand_pre = tape.add(xh, rhu);
        let cand = tape.tanh(cand_pre);
        // h + z ⊙ (h̃ − h)
        let diff = tape.sub(cand, h);
        let step = tape.mul(z, diff);
        tape.add(h, step)
    }
}

/// Stacked unidirectional GRU with dropout between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub layers: Vec<GruCell>,
    pub dropout: f64,
}

impl Gru {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, layers: usize, dropout: f64, rng: &mut RngState) -> Self {
        let layers = (0..layers)
            .map(|l| GruCell::new(params, &format!("{name}.l{l}"), if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Gru { layers, dropout }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |c| c.hidden)
    }

    /// Runs the stack over `xs` (one `B×I` node per step) from a zero state;
    /// returns the top layer's outputs per step.
    pub fn forward(&self, tape: &mut Tape<'_>, xs: &[Var], mut rng: Option<&mut RngState>) -> Vec<Var> {
        let batch = tape.dim(xs[0]).0;
        let mut seq = xs.to_vec();
        for (l, cell) in self.layers.iter().enumerate() {
            if l > 0 {
                seq = seq.into_iter().map(|x| dropout(tape, x, self.dropout, rng.as_deref_mut())).collect();
            }
            let mut h = tape.input(Array2::zeros((batch, cell.hidden)));
            let mut out = Vec::with_capacity(seq.len());
            let (w, b) = (tape.param(cell.w), tape.param(cell.b));
            let stacked = tape.concat_rows(&seq);
            let projected = fc_forward(tape, stacked, w, b);
            for t in 0..seq.len() {
                let xw = tape.slice_rows(projected, t * batch, batch);
                h = cell.step_projected(tape, xw, h);
                out.push(h);
            }
            seq = out;
        }
        seq
    }
}

/// LSTM cell, gates packed `[i | f | g | o]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut RngState) -> Self {
        LstmCell {
            w_ih: params.add_weight(format!("{name}.w_ih"), input, 4 * hidden, input, rng),
            w_hh: params.add_weight(format!("{name}.w_hh"), hidden, 4 * hidden, hidden, rng),
            b: params.add_zeros(format!("{name}.b"), 1, 4 * hidden),
            input,
            hidden,
        }
    }

    /// One step; returns `(h', c')`.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let (w_ih, b) = (tape.param(self.w_ih), tape.param(self.b));
        let xw = fc_forward(tape, x, w_ih, b);
        self.step_projected(tape, xw, h, c)
    }

    /// One step from a precomputed input projection `x·W_ih + b`.
    pub fn step_projected(&self, tape: &mut Tape<'_>, xw: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let w_hh = tape.param(self.w_hh);
        let hw = tape.matmul(h, w_hh);
        let gates = tape.add(xw, hw);
        let i_pre = tape.slice_cols(gates, 0, hd);
        let f_pre = tape.slice_cols(gates, hd, hd);
        let g_pre = tape.slice_cols(gates, 2 * hd, hd);
        let o_pre = tape.slice_cols(gates, 3 * hd, hd);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let ct = tape.tanh(c_next);
        let h_next = tape.mul(o, ct);
        (h_next, c_next)
    }

    /// Runs over `xs` from a zero state, in reverse time when `reverse`;
    /// outputs stay aligned with the inputs.
    pub fn run(&self, tape: &mut Tape<'_>, xs: &[Var], reverse: bool) -> Vec<Var> {
        let batch = tape.dim(xs[0]).0;
        let mut h = tape.input(Array2::zeros((batch, self.hidden)));
        let mut c = tape.input(Array2::zeros((batch, self.hidden)));
        let mut out = vec![h; xs.len()];
        // input projections of all steps in one product: W_ih is read once
        let (w_ih, b) = (tape.param(self.w_ih), tape.param(self.b));
        let stacked = tape.concat_rows(xs);
        let projected = fc_forward(tape, stacked, w_ih, b);
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            let xw = tape.slice_rows(projected, t * batch, batch);
            (h, c) = self.step_projected(tape, xw, h, c);
            out[t] = h;
        }
        out
    }
}

/// Stacked bidirectional LSTM. Layers above the first consume
/// `[forward | backward]` outputs of the layer below (width 2H).
#[derive(Clone, Debug, PartialEq)]
pub struct Bilstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub dropout: f64,
}

impl Bilstm {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, layers: usize, dropout: f64, rng: &mut RngState) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let width = if l == 0 { input } else { 2 * hidden };
                (
                    LstmCell::new(params, &format!("{name}.l{l}.fwd"), width, hidden, rng),
                    LstmCell::new(params, &format!("{name}.l{l}.bwd"), width, hidden, rng),
                )
            })
            .collect();
        Bilstm { layers, dropout }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |(f, _)| f.hidden)
    }

    /// Returns the top layer's `(O_f, O_b)`, one `B×H` node per step each.
    pub fn forward(&self, tape: &mut Tape<'_>, xs: &[Var], mut rng: Option<&mut RngState>) -> (Vec<Var>, Vec<Var>) {
        let mut seq = xs.to_vec();
        let mut result = (Vec::new(), Vec::new());
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                seq = seq.into_iter().map(|x| dropout(tape, x, self.dropout, rng.as_deref_mut())).collect();
            }
            let of = fwd.run(tape, &seq, false);
            let ob = bwd.run(tape, &seq, true);
            if l + 1 < self.layers.len() {
                seq = of.iter().zip(&ob).map(|(&f, &b)| tape.concat_cols(&[f, b])).collect();
            }
            result = (of, ob);
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Mat;
    use ndarray::array;

    #[test]
    fn fc_identity_and_zero_input() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Mat::eye(3));
        let b = ps.add("b", array![[0.5, -1.0, 2.0]]);
        let zero_b = ps.add("zb", Mat::zeros((1, 3)));
        let mut tape = Tape::new(&ps);
        let x = tape.input(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let (wv, bv, zv) = (tape.param(w), tape.param(b), tape.param(zero_b));
        let y = fc_forward(&mut tape, x, wv, zv);
        assert_eq!(tape.value(y), tape.value(x));
        let zero = tape.input(Mat::zeros((2, 3)));
        let y = fc_forward(&mut tape, zero, wv, bv);
        assert_eq!(tape.value(y), &array![[0.5, -1.0, 2.0], [0.5, -1.0, 2.0]]);
    }

    #[test]
    fn fc_matches_triple_loop() {
        let mut rng = RngState::new(3);
        let x = crate::nn::param::uniform(2, 3, 1.0, &mut rng);
        let w = crate::nn::param::uniform(3, 2, 1.0, &mut rng);
        let b = crate::nn::param::uniform(1, 2, 1.0, &mut rng);
        let mut expected = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = b[[0, j]];
                for k in 0..3 {
                    acc += x[[i, k]] * w[[k, j]];
                }
                expected[i][j] = acc;
            }
        }
        let mut ps = ParamSet::new();
        let (wi, bi) = (ps.add("w", w), ps.add("b", b));
        let mut tape = Tape::new(&ps);
        let xv = tape.input(x);
        let (wv, bv) = (tape.param(wi), tape.param(bi));
        let y = fc_forward(&mut tape, xv, wv, bv);
        for i in 0..2 {
            for j in 0..2 {
                assert!((tape.value(y)[[i, j]] - expected[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gru_zero_params_half_update() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::new(0);
        let cell = GruCell::new(&mut ps, "g", 3, 4, &mut rng);
        ps.zero_all();
        let mut tape = Tape::new(&ps);
        let x = tape.input(Mat::from_elem((1, 3), 0.7));
        let h = tape.input(Mat::ones((1, 4)));
        let h2 = cell.step(&mut tape, x, h);
        assert!(tape.value(h2).iter().all(|&v| (v - 0.5).abs() < 1e-15));

    }

    #[test]
    fn gru_zero_state_zero_input_stays_zero() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::new(4);
        // random weights, zero biases
        let cell = GruCell::new(&mut ps, "g", 3, 4, &mut rng);
        let mut tape = Tape::new(&ps);
        let x = tape.input(Mat::zeros((1, 3)));
        let h = tape.input(Mat::zeros((1, 4)));
        let out = cell.step(&mut tape, x, h);
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_eval_identity_train_scales() {
        let ps = ParamSet::new();
        let mut tape = Tape::new(&ps);
        let x = tape.input(Mat::ones((100, 100)));
        assert_eq!(dropout(&mut tape, x, 0.5, None), x);
        let mut rng = RngState::new(11);
        let y = dropout(&mut tape, x, 0.5, Some(&mut rng));
        let vals = tape.value(y);
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        // binomial std at n=10⁴ is 0.005
        assert!((zeros - 0.5).abs() < 0.025, "dropped fraction {zeros}");
    }

    #[test]
    fn bilstm_zero_params_zero_output() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::new(1);
        let net = Bilstm::new(&mut ps, "b", 5, 3, 2, 0.5, &mut rng);
        ps.zero_all();
        let mut tape = Tape::new(&ps);
        let xs: Vec<Var> = (0..4).map(|t| tape.input(Mat::from_elem((2, 5), t as f64))).collect();
        let (of, ob) = net.forward(&mut tape, &xs, None);
        for v in of.iter().chain(&ob) {
            assert!(tape.value(*v).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn bilstm_single_step_shared_params() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::new(5);
        let net = Bilstm::new(&mut ps, "b", 4, 3, 1, 0.0, &mut rng);
        let (f, b) = net.layers[0];
        for (src, dst) in [(f.w_ih, b.w_ih), (f.w_hh, b.w_hh), (f.b, b.b)] {
            let v = ps.value(src).clone();
            *ps.value_mut(dst) = v;
        }
        let mut tape = Tape::new(&ps);
        let x = tape.input(crate::nn::param::uniform(2, 4, 1.0, &mut rng));
        let (of, ob) = net.forward(&mut tape, &[x], None);
        assert_eq!(tape.value(of[0]), tape.value(ob[0]));
    }

    #[test]
    fn bilstm_time_reversal_identity() {
        let mut rng = RngState::new(9);
        let mut ps = ParamSet::new();
        let net = Bilstm::new(&mut ps, "b", 4, 3, 1, 0.0, &mut rng);
        let (f, b) = net.layers[0];
        let mut swapped = ps.clone();
        for (x, y) in [(f.w_ih, b.w_ih), (f.w_hh, b.w_hh), (f.b, b.b)] {
            *swapped.value_mut(x) = ps.value(y).clone();
            *swapped.value_mut(y) = ps.value(x).clone();
        }
        let inputs: Vec<Mat> = (0..5).map(|_| crate::nn::param::uniform(2, 4, 1.0, &mut rng)).collect();

        let mut tape = Tape::new(&ps);
        let xs: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
        let (of, ob) = net.forward(&mut tape, &xs, None);

        let mut tape_r = Tape::new(&swapped);
        let xs_r: Vec<Var> = inputs.iter().rev().map(|m| tape_r.input(m.clone())).collect();
        let (of_r, ob_r) = net.forward(&mut tape_r, &xs_r, None);

        let t_max = inputs.len() - 1;
        for t in 0..=t_max {
            let d1 = tape.value(of[t]) - tape_r.value(ob_r[t_max - t]);
            let d2 = tape.value(ob[t]) - tape_r.value(of_r[t_max - t]);
            assert!(d1.iter().chain(d2.iter()).all(|v| v.abs() < 1e-14));
        }
    }
}
