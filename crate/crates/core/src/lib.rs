//! One-bit linearly precoded massive MIMO downlinks.
//!
//! The crate simulates the transmit chain `y = H·q(P·s) + n` for precoders of
//! the form `P = V f(D)ᵀ Uᴴ`, predicts per-user symbol error probability from
//! the large-system scalar model `T̄s·s + T̄g·g + n`, and provides the
//! Householder-dice machinery used to check that prediction.

pub mod asymptotics;
pub mod channel;
pub mod equivalence;
pub mod error;
pub mod montecarlo;
pub mod numerics;
pub mod precoding;
pub mod stats;

pub use error::{Error, Result};
