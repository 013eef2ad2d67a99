//! A desk-scale laboratory for layer-wise noise stability regularization.
//!
//! The crate provides, bottom to top:
//!
//! - [`tensor`] / [`tape`] / [`findiff`]: dense `f64` tensors, recorded-forward
//!   reverse-mode differentiation, and a finite-difference oracle.
//! - [`encoder`]: a toy transformer encoder with per-layer tap points and a
//!   bit-exact binary snapshot format.
//! - [`regularizers`]: the layer-wise noise stability penalty plus the L²-SP,
//!   Mixout, and noise-only comparison regularizers.
//! - [`probe`]: norm-scaled noise injection at one layer and per-layer
//!   attenuation curves.
//! - [`theory`]: Monte-Carlo estimation of the noise-stability functional and
//!   its first/second-order (Jacobian/Hessian) expansion terms.
//! - [`harness`]: synthetic tasks, metrics, the regularized training loop,
//!   multi-seed sweeps, subsampling studies, and persistence. The `lnsr`
//!   binary drives all of it from a TOML config.

pub mod encoder;
pub mod findiff;
pub mod harness;
pub mod probe;
pub mod regularizers;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod theory;

pub use tensor::{TensorMap, TensorValue};
