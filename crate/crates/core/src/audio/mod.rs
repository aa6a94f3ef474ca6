//! Audio features: log-Mel spectrograms and NetVLAD aggregation.

pub mod mel;
pub mod netvlad;

pub use mel::{mel_spectrogram, MelConfig, MelExtractor, MelSpec};
pub use netvlad::{netvlad_forward, NetVlad};

/// Width of the per-response audio embedding.
pub const AUDIO_EMBED_WIDTH: usize = 256;
