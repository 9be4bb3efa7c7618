//! Emergency-vehicle siren detection and localization from an eight-channel
//! microphone array.
//!
//! The crate covers the whole offline pipeline: synthetic scene generation
//! ([`scene_sim`]), automatic labeling ([`autolabel`]), band-pass and
//! spectral features ([`dsp`]), the dual-stream multi-task network
//! ([`model`]), training ([`train`]) and distance-binned evaluation
//! ([`eval`]).

pub mod autolabel;
pub mod config;
pub mod dsp;
mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod scene_sim;
pub mod train;

pub use error::{Error, Result};
