//! Minimal dense-tensor neural toolkit with reverse-mode gradients.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;

pub use gradcheck::{grad_check, Coords, GradCheckReport};
pub use layers::{dropout, fc_forward, Bilstm, Gru, GruCell, Linear, LstmCell};
pub use optim::{Adam, AdamConfig};
pub use param::{Grads, ParamId, ParamSet};
pub use rng::RngState;
pub use tape::{cross_entropy, softmax_rows, Mat, Tape, Var};
