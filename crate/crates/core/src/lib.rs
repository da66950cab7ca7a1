//! Joint phase-noise estimation and data detection for MIMO links whose
//! transmit and receive oscillators each follow a Wiener phase process.
//!
//! Receivers:
//!
//! * `spa-map`: forward/backward Tikhonov message recursions ([`spa`]).
//! * `gauss-map`, `euc-map`, `vb-map`: extended Kalman smoother followed by a
//!   per-symbol detector ([`smoother`], [`detectors`]).
//! * `genie-spa-map`: SPA-MAP with every symbol treated as a pilot.
//!
//! [`harness`] runs seeded Monte Carlo sweeps for uncoded and LDPC-coded
//! transmission; [`oracle`] holds the brute-force references used by the
//! self-checks.

pub mod channel;
pub mod circmath;
pub mod coding;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod smoother;
pub mod spa;

pub use error::{Error, Result};
pub use num_complex::Complex64;
