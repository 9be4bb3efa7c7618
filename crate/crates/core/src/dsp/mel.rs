use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelParams {
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Added to mel energies before the natural log.
    pub log_floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            frame_len: 1200,
            hop: 480,
            n_fft: 2048,
            n_mels: 40,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelParams {
    pub fn validate(&self, sr: f64) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 || self.n_mels == 0 {
            return Err(Error::invalid("frame_len, hop and n_mels must be positive"));
        }
        if self.n_fft < self.frame_len {
            return Err(Error::invalid("n_fft must be at least frame_len"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sr / 2.0) {
            return Err(Error::invalid("mel band needs 0 <= fmin < fmax <= sr/2"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log_floor must be positive"));
        }
        Ok(())
    }

    /// Number of frames for `n` input samples (0 if shorter than a frame).
    pub fn n_frames(&self, n: usize) -> usize {
        if n < self.frame_len {
            0
        } else {
            1 + (n - self.frame_len) / self.hop
        }
    }
}

/// Triangular mel filterbank, `n_mels x (n_fft / 2 + 1)`, peak weight 1.
pub fn mel_filterbank(p: &MelParams, sr: f64) -> Array2<f64> {
    let n_bins = p.n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(p.fmin), hz_to_mel(p.fmax));
    let edges: Vec<f64> = (0..p.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (p.n_mels + 1) as f64))
        .collect();
    Array2::from_shape_fn((p.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * sr / p.n_fft as f64;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let up = (f - l) / (c - l);
        let down = (r - f) / (r - c);
        up.min(down).max(0.0)
    })
}

/// Framed power spectrum through a mel filterbank, then `ln(x + floor)`.
pub struct MelExtractor {
    params: MelParams,
    window: Vec<f64>,
    bank: Array2<f64>,
    /// Nonzero bin range of each filter.
    support: Vec<(usize, usize)>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("params", &self.params).finish()
    }
}

impl MelExtractor {
    pub fn new(params: MelParams, sr: f64) -> Result<Self> {
        params.validate(sr)?;
        let n = params.frame_len;
        // periodic Hann
        let window = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let bank = mel_filterbank(&params, sr);
        let support = bank
            .rows()
            .into_iter()
            .map(|row| {
                let lo = row.iter().position(|&w| w != 0.0).unwrap_or(0);
                let hi = row.iter().rposition(|&w| w != 0.0).map_or(lo, |i| i + 1);
                (lo, hi)
            })
            .collect();
        Ok(MelExtractor {
            params,
            window,
            bank,
            support,
            fft: FftPlanner::new().plan_fft_forward(params.n_fft),
        })
    }

    pub fn params(&self) -> &MelParams {
        &self.params
    }

    /// `n_frames x n_mels` log-mel matrix.
    pub fn log_mel(&self, signal: &[f64]) -> Result<Array2<f64>> {
        let p = &self.params;
        if signal.len() < p.frame_len {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than one frame ({})",
                signal.len(),
                p.frame_len
            )));
        }
        let frames = p.n_frames(signal.len());
        let n_bins = p.n_fft / 2 + 1;
        let mut out = Array2::zeros((frames, p.n_mels));
        let mut buf = vec![Complex64::new(0.0, 0.0); p.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        for f in 0..frames {
            let start = f * p.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < p.frame_len {
                    Complex64::new(signal[start + i] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (pw, b) in power.iter_mut().zip(&buf) {
                *pw = b.norm_sqr();
            }
            for (m, &(lo, hi)) in self.support.iter().enumerate() {
                let row = self.bank.row(m);
                let e: f64 = (lo..hi).map(|k| row[k] * power[k]).sum();
                out[[f, m]] = (e + p.log_floor).ln();
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper building a one-off extractor.
pub fn log_mel(signal: &[f64], sr: f64, params: &MelParams) -> Result<Array2<f64>> {
    MelExtractor::new(*params, sr)?.log_mel(signal)
}

/// Orthonormal DCT-II of `x`, computed with one complex FFT of the same
/// length (even/odd reordering followed by a quarter-sample twiddle).
pub fn dct2_ortho(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    dct2_with(&*FftPlanner::new().plan_fft_forward(x.len()), x)
}

fn dct2_with(fft: &dyn Fft<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        v[i] = Complex64::new(x[2 * i], 0.0);
    }
    for i in 0..n / 2 {
        v[n - 1 - i] = Complex64::new(x[2 * i + 1], 0.0);
    }
    fft.process(&mut v);
    let (s0, s) = ((1.0 / n as f64).sqrt(), (2.0 / n as f64).sqrt());
    v.iter()
        .enumerate()
        .map(|(k, vk)| {
            let tw = Complex64::from_polar(1.0, -PI * k as f64 / (2 * n) as f64);
            (tw * vk).re * if k == 0 { s0 } else { s }
        })
        .collect()
}

/// MFCCs: orthonormal DCT-II of each log-mel frame, first `n_coeffs` kept.
pub fn mfcc(log_mel: &Array2<f64>, n_coeffs: usize) -> Result<Array2<f64>> {
    let (frames, n_mels) = log_mel.dim();
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(Error::invalid(format!("n_coeffs {n_coeffs} must be in 1..={n_mels}")));
    }
    let fft = FftPlanner::new().plan_fft_forward(n_mels);
    let mut out = Array2::zeros((frames, n_coeffs));
    for (f, row) in log_mel.rows().into_iter().enumerate() {
        let c = dct2_with(&*fft, &row.to_vec());
        for k in 0..n_coeffs {
            out[[f, k]] = c[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: f64 = 48000.0;

    fn naive_dct(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                s * x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
            })
            .collect()
    }

    fn naive_idct(c: &[f64]) -> Vec<f64> {
        let n = c.len() as f64;
        (0..c.len())
            .map(|i| {
                c.iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                        s * v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn frame_count() {
        let p = MelParams::default();
        assert_eq!(p.n_frames(24000), 48);
        let m = log_mel(&vec![0.0; 24000], SR, &p).unwrap();
        assert_eq!(m.dim(), (48, 40));
    }

    #[test]
    fn silence_hits_floor() {
        let m = log_mel(&vec![0.0; 4800], SR, &MelParams::default()).unwrap();
        assert!(m.iter().all(|&v| v == (1e-10f64).ln()));
    }

    #[test]
    fn too_short_rejected() {
        assert!(log_mel(&[0.0; 100], SR, &MelParams::default()).is_err());
    }

    #[test]
    fn constant_input_has_only_dc() {
        let c = dct2_ortho(&[2.5; 40]);
        assert!((c[0] - 2.5 * 40f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_matches_naive_and_inverts() {
        for n in [1usize, 2, 7, 13, 40] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 - 8.3).collect();
            let fast = dct2_ortho(&x);
            let slow = naive_dct(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
            let back = naive_idct(&fast);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mfcc_shape_checks() {
        let m = Array2::zeros((3, 40));
        assert_eq!(mfcc(&m, 13).unwrap().dim(), (3, 13));
        assert!(mfcc(&m, 41).is_err());
        assert!(mfcc(&m, 0).is_err());
    }

    #[test]
    fn filterbank_peaks_at_centres() {
        let p = MelParams::default();
        let bank = mel_filterbank(&p, SR);
        assert_eq!(bank.dim(), (40, 1025));
        assert!(bank.iter().all(|&w| (0.0..=1.0).contains(&w)));
        // every band receives some weight at this resolution
        assert!(bank.rows().into_iter().all(|r| r.sum() > 0.0));
    }
}
