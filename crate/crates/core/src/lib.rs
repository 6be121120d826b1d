pub mod error;
pub mod gnn;
pub mod labels;
pub mod metrics;
pub mod training;
pub mod io;
pub mod nn;
pub mod spatial;

pub use error::{Error, ErrorKind, Result};
