//! Reverse-mode differentiation, parameter storage, ReLU networks with
//! dropout masks, and the Adam optimiser.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use mlp::{forward, DropoutMask, Mlp, MlpSpec};
pub use params::{ParamSlice, ParamStore, SliceId};
pub use tape::{Grads, Graph, Mat, Var};
