//! Link-level model of a full-duplex mmWave base station that serves a
//! downlink user with hybrid analog/digital beamforming while sensing radar
//! targets from the echoes of its own OFDM transmission.
//!
//! The crate is organized bottom-up:
//!
//! - [`array`]: ULA steering vectors, DFT codebooks, block-diagonal analog beamformers
//! - [`channels`]: scenarios, radar echo, Rician self-interference and DL channels
//! - [`transceiver`]: precoding, full-duplex reception with A/D cancellation, DL rate
//! - [`sensing`]: sample covariance, MUSIC, delay/Doppler likelihood search
//! - [`optimizer`]: joint beam selection, SI cancellation and digital precoding

pub mod array;
pub mod channels;
pub mod error;
pub mod linalg;
pub mod ofdm;
pub mod optimizer;
pub mod rng;
pub mod sensing;
pub mod transceiver;
pub mod units;

pub use error::{Error, Result};
