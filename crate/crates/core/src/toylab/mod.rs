//! A small transformer trained from scratch on synthetic retrieval data, used
//! to compare context-extension recipes end to end.

pub mod linalg;
pub mod model;

pub use model::{Layout, Logits, TensorInfo, ToyModel, ToyModelConfig};
pub mod corpus;
pub mod train;
pub mod niah;
pub mod checkpoint;
pub mod experiment;
