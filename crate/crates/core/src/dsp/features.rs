use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::filter::{Butterworth, FilterSpec};
use super::mel::{mfcc, MelExtractor, MelParams};
use crate::autolabel::{LabeledWindow, WindowAudio};
use crate::error::{Error, Result};
use crate::scene_sim::{N_CHANNELS, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub filter: FilterSpec,
    pub mel: MelParams,
    pub n_mfcc: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            filter: FilterSpec::default(),
            mel: MelParams::default(),
            n_mfcc: 13,
        }
    }
}

impl FeatureParams {
    /// Features per frame and channel: MFCCs followed by log-mel bands.
    pub fn feature_dim(&self) -> usize {
        self.n_mfcc + self.mel.n_mels
    }
}

/// Per-channel log-mel and MFCC matrices, each `n_frames x bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures {
    pub log_mel: Vec<Array2<f64>>,
    pub mfcc: Vec<Array2<f64>>,
    pub frame_len: usize,
    pub hop: usize,
}

impl SpectralFeatures {
    pub fn n_channels(&self) -> usize {
        self.log_mel.len()
    }

    pub fn n_frames(&self) -> usize {
        self.log_mel.first().map_or(0, |m| m.nrows())
    }

    /// Stacks all channels into a `(channels * (n_mfcc + n_mels)) x n_frames`
    /// matrix: row `c * dim + j` holds MFCC `j` (or log-mel band
    /// `j - n_mfcc`) of channel `c` across frames.
    pub fn stacked(&self) -> Array2<f64> {
        let n_mfcc = self.mfcc.first().map_or(0, |m| m.ncols());
        let n_mels = self.log_mel.first().map_or(0, |m| m.ncols());
        let dim = n_mfcc + n_mels;
        let frames = self.n_frames();
        let mut out = Array2::zeros((self.n_channels() * dim, frames));
        for c in 0..self.n_channels() {
            for t in 0..frames {
                for j in 0..n_mfcc {
                    out[[c * dim + j, t]] = self.mfcc[c][[t, j]];
                }
                for j in 0..n_mels {
                    out[[c * dim + n_mfcc + j, t]] = self.log_mel[c][[t, j]];
                }
            }
        }
        out
    }
}

/// Band-pass plus spectral feature front end shared by training and
/// inference.
#[derive(Debug)]
pub struct FeatureExtractor {
    params: FeatureParams,
    filter: Butterworth,
    mel: MelExtractor,
}

impl FeatureExtractor {
    pub fn new(params: FeatureParams) -> Result<Self> {
        let sr = SAMPLE_RATE as f64;
        if params.n_mfcc == 0 || params.n_mfcc > params.mel.n_mels {
            return Err(Error::invalid("n_mfcc must be in 1..=n_mels"));
        }
        Ok(FeatureExtractor {
            params,
            filter: Butterworth::bandpass(&params.filter, sr)?,
            mel: MelExtractor::new(params.mel, sr)?,
        })
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    /// Band-passes every channel independently from a zero state.
    pub fn filter_audio(&self, audio: &WindowAudio) -> Result<Vec<Vec<f64>>> {
        if audio.n_channels() != N_CHANNELS {
            return Err(Error::invalid(format!(
                "expected {N_CHANNELS} channels, got {}",
                audio.n_channels()
            )));
        }
        audio
            .channels()
            .map(|ch| {
                if ch.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("window contains non-finite samples"));
                }
                Ok(self.filter.apply(ch))
            })
            .collect()
    }

    pub fn spectral(&self, filtered: &[Vec<f64>]) -> Result<SpectralFeatures> {
        let mut log_mel = Vec::with_capacity(filtered.len());
        let mut mf = Vec::with_capacity(filtered.len());
        for ch in filtered {
            let lm = self.mel.log_mel(ch)?;
            mf.push(mfcc(&lm, self.params.n_mfcc)?);
            log_mel.push(lm);
        }
        Ok(SpectralFeatures {
            log_mel,
            mfcc: mf,
            frame_len: self.params.mel.frame_len,
            hop: self.params.mel.hop,
        })
    }

    /// Filtered waveform and spectral features of one window.
    pub fn featurize(&self, audio: &WindowAudio) -> Result<(Vec<Vec<f64>>, SpectralFeatures)> {
        let filtered = self.filter_audio(audio)?;
        let feats = self.spectral(&filtered)?;
        Ok((filtered, feats))
    }

    pub fn featurize_window(&self, window: &LabeledWindow) -> Result<(Vec<Vec<f64>>, SpectralFeatures)> {
        self.featurize(&window.audio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(channels: Vec<Vec<f32>>) -> LabeledWindow {
        LabeledWindow {
            audio: WindowAudio::from_channels(channels),
            t_end: 1.5,
            source: None,
            session_tag: "t".into(),
        }
    }

    #[test]
    fn zero_window() {
        let fx = FeatureExtractor::new(FeatureParams::default()).unwrap();
        let (wave, feats) = fx.featurize_window(&window(vec![vec![0.0; 24000]; 8])).unwrap();
        assert!(wave.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(feats.n_frames(), 48);
        let floor = (1e-10f64).ln();
        assert!(feats.log_mel.iter().all(|m| m.iter().all(|&v| v == floor)));
        assert_eq!(feats.stacked().dim(), (8 * 53, 48));
    }

    #[test]
    fn channels_are_independent() {
        let fx = FeatureExtractor::new(FeatureParams::default()).unwrap();
        let mut chans = vec![vec![0.0f32; 24000]; 8];
        chans[0] = (0..24000)
            .map(|i| (0.3 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 48000.0).sin()) as f32)
            .collect();
        let w = window(chans);
        let (_, a) = fx.featurize_window(&w).unwrap();
        let (_, b) = fx.featurize_window(&w).unwrap();
        assert_eq!(a, b);
        let (_, silent) = fx.featurize_window(&window(vec![vec![0.0; 24000]; 8])).unwrap();
        assert_ne!(a.log_mel[0], silent.log_mel[0]);
        for c in 1..8 {
            assert_eq!(a.log_mel[c], silent.log_mel[c]);
            assert_eq!(a.mfcc[c], silent.mfcc[c]);
        }
    }

    #[test]
    fn rejects_wrong_channel_count_and_nan() {
        let fx = FeatureExtractor::new(FeatureParams::default()).unwrap();
        assert!(fx.featurize_window(&window(vec![vec![0.0; 24000]; 4])).is_err());
        let mut chans = vec![vec![0.0f32; 24000]; 8];
        chans[3][7] = f32::NAN;
        assert!(fx.featurize_window(&window(chans)).is_err());
    }
}
