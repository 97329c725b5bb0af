//! Delayed SIR epidemic under an ICU cap: frontier curves of the invariant
//! and viable regions, greedy feedback control, and the experiments built on
//! them.

pub mod cli;
pub mod control;
pub mod curves;
pub mod dde;
pub mod error;
pub mod experiments;
pub mod model;
pub mod regions;

pub use error::{Error, Result};
pub use model::{InitialCondition, Params, State};
