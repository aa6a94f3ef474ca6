//! Multimodal (audio + text) depression screening.
//!
//! The pipeline loads interview corpora ([`corpus`]), turns response audio
//! into log-Mel spectrograms aggregated by NetVLAD ([`audio`]), ingests
//! sentence embeddings ([`text`]), trains a GRU audio classifier, a BiLSTM
//! text classifier with attention pooling and a modal-attention fusion
//! classifier ([`models`]) on the small autodiff toolkit in [`nn`], balances
//! classes ([`sampling`]) and scores everything with stratified k-fold
//! cross-validation ([`eval`]).

pub mod audio;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod models;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod text;
