//! Synthetic acoustic scenes: a siren-carrying emergency vehicle and an ego
//! vehicle with an eight-capsule microphone array, both moving in a free
//! field.
//!
//! Sessions are pure functions of their [`SceneConfig`]: the same config and
//! seed always produce bit-identical audio and tracks.

mod geometry;
pub mod io;
mod noise;
mod propagate;
mod scenario;
mod siren;
mod trajectory;

pub use geometry::MicArrayGeometry;
pub use noise::{ambient_noise, NoiseMix};
pub use propagate::{propagate, TimedSignal};
pub use scenario::{generate_session, mix_scene, MixedScene, Scenario, SceneConfig, SessionData};
pub use siren::{synth_siren_segment, synth_siren_waveform, SirenKind, SirenProfile};
pub use trajectory::{wrap_angle, Pose, Trajectory, MAX_SPEED};

/// Fixed sample rate of every session, in Hz.
pub const SAMPLE_RATE: u32 = 48_000;
/// Speed of sound at 20 °C, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Distance floor for spherical spreading, in metres.
pub const R_MIN: f64 = 1.0;
/// Number of audio channels (two devices with four capsules each).
pub const N_CHANNELS: usize = 8;
