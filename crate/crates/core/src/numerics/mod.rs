//! Dense tensors, tape autodiff, AdamW and the learning-rate schedule.

pub mod checkpoint;
pub mod init;
mod optim;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, DType};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Param, ParamId, ParamStore};
pub use schedule::{effective_lr, LrSchedule};
pub use tape::{gelu, sigmoid, softplus, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
