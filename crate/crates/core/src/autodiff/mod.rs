//! Minimal reverse-mode automatic differentiation: tape, dense layers, Adam.

pub mod adam;
pub mod gradcheck;
pub mod nn;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use nn::{mlp_forward, Activation, Bound, DenseLayer, Init, Mlp, ParamId, ParamRole, ParamSet};
pub use tape::{Gradients, Matrix, Tape, Var};
