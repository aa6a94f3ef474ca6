//! Tape-based reverse-mode differentiation over dense 2-D matrices.
//!
//! Every value recorded on a [`Tape`] is a row-major `f64` matrix; vectors
//! are `1×n` rows. Parameters are borrowed from a [`ParamSet`] rather than
//! copied, so a tape is cheap to build per mini-batch. Calling
//! [`Tape::backward`] on a `1×1` loss returns one gradient per parameter.

use std::ops::Deref;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::param::{Grads, ParamId, ParamSet};

pub type Mat = Array2<f64>;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Mat),
    Borrowed(&'p Mat),
}

impl Deref for Value<'_> {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Mask(Var, Mat),
    SoftmaxRows(Var),
    NormalizeRows(Var, f64),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SumRows(Var),
    CrossEntropy(Var, Vec<f64>),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
}

/// Probability clamp used by [`Tape::cross_entropy`].
pub const PROB_CLAMP: f64 = 1e-7;

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

fn shape(m: &Mat) -> (usize, usize) {
    m.dim()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        debug_assert!(value.iter().all(|v| !v.is_nan()), "NaN produced on tape");
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-1x1 node");
        m[[0, 0]]
    }

    pub fn dim(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    /// Records a constant. Its gradient is discarded.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    /// Records a parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Borrowed(self.params.value(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch {:?} x {:?}", va.dim(), vb.dim());
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dim(a), self.dim(b), "elementwise mul shape mismatch");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a (n×m) + row (1×m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert!(vr.nrows() == 1 && vr.ncols() == va.ncols(), "add_row shape mismatch");
        let out = va + vr;
        self.push(out, Op::AddRow(a, row))
    }

    /// `a (n×m) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(col));
        assert!(vc.ncols() == 1 && vc.nrows() == va.nrows(), "mul_col shape mismatch");
        let out = va * vc;
        self.push(out, Op::MulCol(a, col))
    }

    /// `a (n×m) · s (1×1)`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.dim(s), (1, 1), "mul_scalar expects a 1x1 scale");
        let k = self.scalar(s);
        let out = self.value(a) * k;
        self.push(out, Op::MulScalar(a, s))
    }

    /// `a · scale + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).mapv(|x| x * scale + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Elementwise product with a constant mask (used by dropout).
    pub fn mask(&mut self, a: Var, mask: Mat) -> Var {
        assert_eq!(self.dim(a), mask.dim(), "mask shape mismatch");
        let out = self.value(a) * &mask;
        self.push(out, Op::Mask(a, mask))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let norm = row.dot(&row).sqrt().max(eps);
            row.mapv_inplace(|x| x / norm);
        }
        self.push(out, Op::NormalizeRows(a, eps))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape size mismatch");
        let flat: Vec<f64> = va.iter().copied().collect();
        let out = Mat::from_shape_vec((rows, cols), flat).expect("reshape");
        self.push(out, Op::Reshape(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows col mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    /// Column sums as a `1×m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a))
    }

    /// Mean binary cross-entropy of an `n×1` column of positive-class
    /// probabilities against 0/1 labels. Probabilities are clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`; the gradient is zero outside that range.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[f64]) -> Var {
        let vp = self.value(probs);
        assert!(vp.ncols() == 1 && vp.nrows() == labels.len(), "cross_entropy shape mismatch");
        let loss = cross_entropy(vp.column(0).iter().copied(), labels);
        self.push(Mat::from_elem((1, 1), loss), Op::CrossEntropy(probs, labels.to_vec()))
    }

    /// Reverse sweep from a `1×1` output; returns gradients for every
    /// parameter that participated.
    pub fn backward(&self, output: Var) -> Grads {
        assert_eq!(self.dim(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Mat::ones((1, 1)));
        let mut out = Grads::zeros_like_none(self.params.len());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &*node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g * self.value(*col);
                    acc(&mut grads, *col, gc);
                    acc(&mut grads, *a, ga);
                }
                Op::MulScalar(a, s) => {
                    let gs = (&g * self.value(*a)).sum();
                    let ga = &g * self.scalar(*s);
                    acc(&mut grads, *s, Mat::from_elem((1, 1), gs));
                    acc(&mut grads, *a, ga);
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g * *scale),
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Mask(a, mask) => acc(&mut grads, *a, g * mask),
                Op::SoftmaxRows(a) => {
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.dot(&yrow);
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::NormalizeRows(a, eps) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for ((mut grow, yrow), xrow) in ga.rows_mut().into_iter().zip(y.rows()).zip(x.rows()) {
                        let norm = xrow.dot(&xrow).sqrt();
                        if norm > *eps {
                            let dot = grow.dot(&yrow);
                            Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = (*g - y * dot) / norm);
                        } else {
                            grow.mapv_inplace(|g| g / eps);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let dim = self.dim(*a);
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut grads, *a, Mat::from_shape_vec(dim, flat).expect("reshape grad"));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.dim(p).1;
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.dim(p).0;
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.dim(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.dim(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let (rows, cols) = self.dim(*a);
                    let ga = g.broadcast((rows, cols)).expect("sum_rows grad").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy(p, labels) => {
                    let gl = g[[0, 0]];
                    let n = labels.len() as f64;
                    let vp = self.value(*p);
                    let mut gp = Mat::zeros(vp.dim());
                    for (i, (&pi, &yi)) in vp.column(0).iter().zip(labels).enumerate() {
                        if pi > PROB_CLAMP && pi < 1.0 - PROB_CLAMP {
                            gp[[i, 0]] = -gl / n * (yi / pi - (1.0 - yi) / (1.0 - pi));
                        }
                    }
                    acc(&mut grads, *p, gp);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean binary cross-entropy with probability clamping.
pub fn cross_entropy(probs: impl IntoIterator<Item = f64>, labels: &[f64]) -> f64 {
    let n = labels.len() as f64;
    let total: f64 = probs
        .into_iter()
        .zip(labels)
        .map(|(p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    -total / n
}
