//! Trainable NetVLAD aggregation of a variable-length frame sequence into
//! one fixed-width embedding.
//!
//! For frames `x_i` (rows of a T×D matrix) and K clusters:
//!
//! ```text
//! a_k(x_i) = softmax_k(w_k · x_i + b_k)
//! V_k      = Σ_i a_k(x_i) (x_i − c_k)
//! V_k     ← V_k / max(‖V_k‖, ε)          (intra-normalization)
//! v        = flatten(V) / max(‖·‖, ε)     (global normalization)
//! e        = v · P                         (P: K·D × E)
//! ```

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::nn::param::uniform;
use crate::nn::{ParamId, ParamSet, RngState, Tape, Var};

pub const NORM_EPS: f64 = 1e-12;
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("NetVLAD expects {expected}-dim frames, got {found}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub found: usize,
}

/// Parameter handles of one NetVLAD layer inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetVlad {
    /// K×D cluster centers `c_k`.
    pub centroids: ParamId,
    /// K×D assignment weights `w_k`.
    pub assignment_weights: ParamId,
    /// 1×K assignment biases.
    pub assignment_bias: ParamId,
    /// (K·D)×E projection.
    pub projection: ParamId,
    pub dim: usize,
    pub clusters: usize,
    pub embed: usize,
}

impl NetVlad {
    /// All blocks start from uniform(−0.1, 0.1).
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, clusters: usize, embed: usize, rng: &mut RngState) -> Self {
        let mut block = |suffix: &str, rows, cols| params.add(format!("{name}.{suffix}"), uniform(rows, cols, INIT_RANGE, rng));
        NetVlad {
            centroids: block("centroids", clusters, dim),
            assignment_weights: block("assign_w", clusters, dim),
            assignment_bias: block("assign_b", 1, clusters),
            projection: block("projection", clusters * dim, embed),
            dim,
            clusters,
            embed,
        }
    }

    pub fn check_dim(&self, found: usize) -> Result<(), DimensionMismatch> {
        if found == self.dim {
            Ok(())
        } else {
            Err(DimensionMismatch { expected: self.dim, found })
        }
    }

    /// Normalized, flattened VLAD descriptor (1×K·D) for frames `x` (T×D).
    pub fn vlad(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let (w, b, c) = (tape.param(self.assignment_weights), tape.param(self.assignment_bias), tape.param(self.centroids));
        let wt = tape.transpose(w);
        let logits = tape.matmul(x, wt);
        let logits = tape.add_row(logits, b);
        let assign = tape.softmax_rows(logits); // T×K
        let assign_t = tape.transpose(assign);
        let weighted = tape.matmul(assign_t, x); // K×D: Σ_i a_k(x_i) x_i
        let mass = tape.sum_rows(assign); // 1×K: Σ_i a_k(x_i)
        let mass = tape.transpose(mass);
        let shift = tape.mul_col(c, mass);
        let residual = tape.sub(weighted, shift);
        let intra = tape.normalize_rows(residual, NORM_EPS);
        let flat = tape.reshape(intra, 1, self.clusters * self.dim);
        tape.normalize_rows(flat, NORM_EPS)
    }

    /// Projects stacked descriptors (B×K·D) to embeddings (B×E).
    pub fn project(&self, tape: &mut Tape<'_>, vlads: Var) -> Var {
        let p = tape.param(self.projection);
        tape.matmul(vlads, p)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let v = self.vlad(tape, x);
        self.project(tape, v)
    }
}

/// Embeds one spectrogram (T×D) with the given parameters.
pub fn netvlad_forward(frames: &Array2<f64>, layer: &NetVlad, params: &ParamSet) -> Result<Array1<f64>, DimensionMismatch> {
    layer.check_dim(frames.ncols())?;
    let mut tape = Tape::new(params);
    let x = tape.input(frames.clone());
    let e = layer.forward(&mut tape, x);
    Ok(tape.value(e).row(0).to_owned())
}
