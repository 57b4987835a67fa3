//! A small dense-array reverse-mode differentiation engine.
//!
//! Just enough machinery to train edge-convolution point networks on a CPU:
//! 2-D matrix products, row gathers, axis reductions, ReLU, softmax
//! cross-entropy and a masked squared-error loss, plus SGD with momentum.
//!
//! ```
//! use smallnet::{Array, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.param(Array::matrix(1, 2, vec![1.0, -2.0]).unwrap());
//! let y = g.relu(x).unwrap();
//! let loss = g.sum(y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).data(), &[1.0, 0.0]);
//! ```

mod array;
mod error;
pub mod gradcheck;
mod graph;
mod history;
mod optim;
mod params;

pub use array::Array;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use history::{write_history_csv, EpochRecord, HISTORY_HEADER};
pub use optim::{LrSchedule, OptimState};
pub use params::{load_checkpoint, save_checkpoint, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
