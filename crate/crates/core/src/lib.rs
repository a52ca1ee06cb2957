//! Link-level simulator for an OFDM uplink under mobile jamming.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`] - OFDM structural matrices, pulses, symbol streams.
//! * [`channel`] - doubly-selective channel matrices and block generation.
//! * [`detector`] - widely-linear MMSE pre-detection with ordered SIC.
//! * [`cyclo`] - conjugate cyclic correlation matrices and the cycle scan.
//! * [`doppler`] - permutation least squares for the Doppler sets.
//! * [`delay_gain`] - delay search, gain least squares, sign resolution.
//! * [`harness`] - scenarios, Monte Carlo driver, metrics, CSV output.

pub mod channel;
pub mod cyclo;
pub mod delay_gain;
pub mod detector;
pub mod doppler;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod signal;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Dense complex matrix used throughout.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
