//! Truncated Fock-space simulation of conditional non-Gaussian state
//! preparation, with displacement matrices built by truncation-aware
//! matrix exponentiation.

pub mod circuit;
pub mod dispmat;
pub mod error;
pub mod expm;
pub mod fock;
pub mod metrics;
pub mod sweep;
pub mod tame;
