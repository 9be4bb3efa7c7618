//! Band-pass filtering and spectral features.

mod dump;
mod features;
mod filter;
mod mel;

pub use dump::{read_tensor, write_tensor, Tensor32};
pub use features::{FeatureExtractor, FeatureParams, SpectralFeatures};
pub use filter::{bandpass, Biquad, Butterworth, FilterDesign, FilterSpec};
pub use mel::{dct2_ortho, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, mfcc, MelExtractor, MelParams};
