//! Central finite-difference check of reverse-mode gradients.

use rand::seq::index;

use super::param::ParamSet;
use super::rng::RngState;
use super::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-5;

/// Which coordinates to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `n` randomly chosen coordinates per parameter tensor.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step [`FD_STEP`]. The per-coordinate error is
/// `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`; the maximum is reported.
///
/// `f` must be deterministic: build it with dropout disabled.
pub fn grad_check<F>(params: &ParamSet, f: F, coords: Coords) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>) -> Var,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let out = f(&mut tape);
        tape.backward(out)
    };
    let eval = |ps: &ParamSet| {
        let mut tape = Tape::new(ps);
        let out = f(&mut tape);
        tape.scalar(out)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut picker = match coords {
        Coords::Sample { seed, .. } => Some(RngState::new(seed)),
        Coords::All => None,
    };
    for id in params.ids() {
        let n = params.value(id).len();
        let chosen: Vec<usize> = match (coords, picker.as_mut()) {
            (Coords::Sample { per_tensor, .. }, Some(rng)) if per_tensor < n => index::sample(rng, n, per_tensor).into_vec(),
            _ => (0..n).collect(),
        };
        for flat in chosen {
            let g_ad = analytic.get(id).map_or(0.0, |g| g.as_slice().expect("contiguous grad")[flat]);
            let original = params.value(id).as_slice().expect("contiguous param")[flat];
            work.value_mut(id).as_slice_mut().expect("contiguous param")[flat] = original + FD_STEP;
            let up = eval(&work);
            work.value_mut(id).as_slice_mut().expect("contiguous param")[flat] = original - FD_STEP;
            let down = eval(&work);
            work.value_mut(id).as_slice_mut().expect("contiguous param")[flat] = original;
            let g_fd = (up - down) / (2.0 * FD_STEP);
            let err = (g_ad - g_fd).abs() / 1f64.max(g_ad.abs()).max(g_fd.abs());
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), flat));
            }
        }
    }
    report
}
