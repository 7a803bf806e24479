//! Unpaired RGB-to-thermal image translation with cycle-consistent
//! adversarial networks, built on a small define-by-run autodiff engine.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod pool;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
