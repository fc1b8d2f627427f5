//! Tensor-train compression of recurrent networks.

pub mod autograd;
pub mod cells;
pub mod checkpoint;
pub mod checks;
pub mod data;
pub mod error;
pub mod evalbench;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod tt;

pub use cells::{Cell, CellKind, DenseCell, FusedTtWeights, RnnState, TtFusedCell, TtPerGateCell};
pub use error::{Error, Result};
pub use tensor::Tensor;
pub use tt::{Truncation, TtMatrix, TtVector};
