//! Adaptive loss alignment: a policy-gradient controller that adjusts
//! parametric training losses so that training tracks a chosen evaluation
//! metric on held-out data.

pub mod autodiff;
pub mod cli;
pub mod controller;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod orchestrator;
pub mod tensor;

pub use error::{AlaError, Result};
