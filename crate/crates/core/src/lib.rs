//! Data-parallel training of a recurrent flow-field surrogate.
//!
//! A window of three flattened velocity snapshots is mapped to the next
//! snapshot by an LSTM encoder/decoder. Training runs serially or across
//! worker processes that average gradients with a ring all-reduce, and the
//! harness measures or simulates how training time scales with the process
//! layout.

pub mod batching;
mod bytes;
pub mod collective;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
