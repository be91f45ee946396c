//! Self-supervised mmWave MISO beamforming with a data-mixture theory toolkit.
//!
//! * [`channel`] — narrowband geometric ULA channels drawn from scene families.
//! * [`dataset`] — materialization, mixing, splitting and the `CHNL` dump format.
//! * [`beamnet`] — the beamforming network, its exact gradients and SGD training.
//! * [`baselines`] — MRT and DFT-codebook reference beamformers.
//! * [`theory`] — expected input Hessians, the mixture loss curve `C(q)` and scaling fits.
//! * [`experiments`] — config-driven runs reproducing the robustness and mixture studies.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod beamnet;
mod binio;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod rng;
pub mod theory;

pub use binio::write_atomic;
pub use error::{Error, Result};
