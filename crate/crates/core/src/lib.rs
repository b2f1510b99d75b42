//! Topological resilience monitoring for adaptive neural OFDM receivers.
//!
//! The crate is organised bottom-up:
//!
//! - [`persistence`]: Vietoris–Rips persistence (H0/H1), diagram utilities.
//! - [`exponents`]: power-law tail fits of persistence lifetimes.
//! - [`manifold`]: PCA, Gaussian kernels, kNN graphs, Ollivier–Ricci
//!   curvature and discrete optimal transport.
//! - [`channel`]: tapped-delay-line fading, the mixture shift model and the
//!   OFDM link.
//! - [`receiver`]: the neural demodulator and its online adaptation.
//! - [`tri`]: the resilience index itself, its calibration and the monitor.
//! - [`detectors`]: threshold alarms and warning-lead accounting.

pub mod channel;
pub mod detectors;
pub mod error;
pub mod exponents;
pub mod manifold;
pub mod persistence;
pub mod receiver;
pub mod tri;

pub use error::{Error, Result};
