//! Core of a two-stream distillation anomaly detector, usable without
//! `std`: tensors with reverse-mode autodiff, pseudo-anomaly
//! synthesis, the teacher/student model with its feature-aggregation head,
//! losses, optimizers, the training step and evaluation metrics.
#![no_std]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod real;
pub mod rng;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Gradients, NodeId, Primitive, Tape, Tensor};
