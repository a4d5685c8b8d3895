//! Throughput and delay of ARQ, HARQ and coded ARQ over Gilbert-Elliott channels with
//! lossy feedback, by matrix signal flow graphs and by slot-level simulation.

pub mod channel;
pub mod cli;
pub mod error;
pub mod msfg;
pub mod polyval;
pub mod protocols;
pub mod sim;

pub use channel::{build_composite, build_half_channel, CompositeChannel, HalfChannel};
pub use error::{Error, Result};
pub use protocols::{Metrics, ProtocolParams, Scheme};
