//! Energy minimization for a two-user RIS-assisted downlink with rate
//! splitting and a cooperative device-to-device relay.

pub mod ao;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod phase;
pub mod rates;
pub mod sca;
pub mod schemes;

pub use crsma_conic::C64;
pub use error::{Error, Result};
