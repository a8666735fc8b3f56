//! Device runtime, JSON/HTTP service and command line for haptiforge.
//!
//! The [`runtime`] task is the single writer of [`runtime::DeviceState`].
//! The [`server`] and the [`cli`] session runner only enqueue mutations and
//! read snapshots.

pub mod cli;
pub mod error;
pub mod runtime;
pub mod server;

pub use error::ServiceError;
pub use runtime::{DeviceState, Mutation, RuntimeConfig, RuntimeHandle};
