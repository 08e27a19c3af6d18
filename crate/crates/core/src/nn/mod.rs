//! Minimal differentiable substrate: a parameter store, a reverse-mode tape
//! over vector operations, dense and gated-recurrent layers, distribution
//! math, and the Adam update rule. Everything runs in `f64`.

mod adam;
pub mod dist;
mod kernels;
mod layers;
mod params;
mod tape;

pub use adam::AdamState;
pub use dist::{sigmoid, softmax, softplus, LogNormal};
pub use layers::{dense_forward, DenseLayer, LstmLayer, LstmStack, RecurrentState};
pub use params::{Gradients, ParamId, Parameter, ParameterStore};
pub use tape::{NodeId, Tape};
