//! Personalized electro-haptic device design and stimulator simulation.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`geometry`]: palm-plane fit, mesh projection, flattening, finger metrics.
//! - [`layout`]: hand outline, electrode sites, crossing-free trace routing, CAD export.
//! - [`stimulator`]: pulse patterns, multiplexed schedules, sampled waveforms, current model.
//! - [`perception`]: intensity surface over frequency × duty, fit, predict, invert.
//! - [`mapper`]: contact events to stimulus plans.
//! - [`protocol`]: host ↔ device framing with CRC, streaming decoder, simulated device.
//! - [`session`]: randomized rating sessions and amplitude calibration.
//! - [`synthetic`]: generated hands and meshes for tests and demos.

// `!(x > 0.0)` is how the crate rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod layout;
pub mod mapper;
pub mod perception;
pub mod protocol;
pub mod session;
pub mod stimulator;
pub mod synthetic;

/// Any error raised by the crate, with the module error kept intact.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Layout(#[from] layout::LayoutError),
    #[error(transparent)]
    Stimulator(#[from] stimulator::StimError),
    #[error(transparent)]
    Perception(#[from] perception::PerceptionError),
    #[error(transparent)]
    Mapper(#[from] mapper::MapperError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Session(#[from] session::SessionError),
}

impl Error {
    /// Stable error name, e.g. `"AmplitudeExceeded"`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(e) => e.kind(),
            Error::Layout(e) => e.kind(),
            Error::Stimulator(e) => e.kind(),
            Error::Perception(e) => e.kind(),
            Error::Mapper(e) => e.kind(),
            Error::Protocol(e) => e.kind(),
            Error::Session(e) => e.kind(),
        }
    }
}
