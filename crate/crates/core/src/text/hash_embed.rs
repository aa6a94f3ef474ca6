use ndarray::Array1;

use super::mmx::fnv1a;
use crate::nn::rng::splitmix64;

pub const TEXT_WIDTH: usize = 1024;
const NORM_EPS: f64 = 1e-12;

/// Deterministic bag-of-words embedding used when no exported sentence
/// embeddings are available. Each whitespace token maps to a pseudo-random
/// ±1 vector; the token vectors are averaged and L2-normalized.
pub fn hash_embed(transcript: &str, width: usize) -> Array1<f64> {
    let mut acc = Array1::<f64>::zeros(width);
    let mut count = 0usize;
    for token in transcript.split_whitespace() {
        let mut state = fnv1a(token.as_bytes());
        let mut bits = 0u64;
        for (j, slot) in acc.iter_mut().enumerate() {
            if j % 64 == 0 {
                state = splitmix64(state);
                bits = state;
            }
            *slot += if bits & 1 == 1 { 1.0 } else { -1.0 };
            bits >>= 1;
        }
        count += 1;
    }
    if count == 0 {
        return acc;
    }
    acc /= count as f64;
    let norm = acc.dot(&acc).sqrt().max(NORM_EPS);
    acc / norm
}
