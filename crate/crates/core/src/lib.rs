//! Exposure-decoupled modulo imaging from spike streams.
//!
//! The pipeline runs synthetic irradiance through an integrate-and-fire
//! spike sensor ([`spike_sim`]), encodes sliding windows of spike frames into
//! wrapped N-bit images ([`encoder`]), and recovers HDR frames with a
//! least-absolute-remainder gradient / Poisson unwrapper ([`unwrap`]).
//! [`metrics`] scores reconstructions and accounts for output bandwidth;
//! [`io`] holds the binary containers.

pub mod dct;
pub mod encoder;
pub mod error;
pub mod io;
pub mod lar;
pub mod metrics;
pub mod par;
pub mod scene;
pub mod spike_sim;
pub mod types;
pub mod unwrap;

pub use error::{Error, Result};
pub use par::Exec;
pub use types::{
    EncoderConfig, HdrImage, ModuloFrame, ModuloSequence, QuerySpec, ResetMode, SensorConfig,
    SpikeStream, Validate,
};
