//! Dense arithmetic, perceptrons and optimization shared by every learned component.

mod adam;
mod matrix;
mod mlp;
mod params;

pub use adam::AdamState;
pub use matrix::Matrix;
pub(crate) use matrix::axpy;
pub use mlp::{Activation, Dense, Mlp, MlpTrace};
pub use params::{Gradients, Parameters};
