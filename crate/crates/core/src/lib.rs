//! A desk-scale coherent optical link laboratory.
//!
//! The crate simulates a dual-polarization 16QAM transmission over an
//! amplified single-mode fiber link (split-step Fourier solution of the
//! nonlinear Schrödinger equation), runs a classical coherent receiver
//! (dispersion compensation, digital backpropagation, blind phase search),
//! and trains neural equalizers (an encoder-only Transformer and a fully
//! connected baseline) on top of a small reverse-mode autodiff engine.
//!
//! Internal quantities are SI throughout (s, m, W, Hz). Engineering units
//! (km, dBm, ps/nm/km) appear only in [`bench::config`] and
//! [`channel::EngineeringFiber`].

pub mod bench;
pub mod channel;
pub mod dataset;
pub mod dsp;
mod error;
pub mod fft;
pub mod metrics;
pub mod nn;
pub mod txrx;

pub use error::{Error, Result};

/// Complex sample type used for every field and symbol.
pub type C64 = num_complex::Complex64;

/// Derives an independent sub-seed for stream `stream` of `master`
/// (SplitMix64 finalizer over the pair).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
