use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::Biquad;

/// Relative power of the ambient noise components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMix {
    pub white: f64,
    pub wind: f64,
    pub traffic: f64,
}

impl Default for NoiseMix {
    fn default() -> Self {
        NoiseMix {
            white: 0.1,
            wind: 0.6,
            traffic: 0.3,
        }
    }
}

const WIND_CUTOFF_HZ: f64 = 300.0;
const TRAFFIC_BAND_HZ: (f64, f64) = (200.0, 2500.0);
const BURST_RATE_HZ: f64 = 0.6;

fn normalize_power(x: &mut [f64], target: f64) {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if p > 0.0 {
        let g = (target / p).sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Independent per-channel ambient noise: white noise, gusty low-frequency
/// wind below 300 Hz, and band-limited traffic bursts. Each channel's total
/// power is `mix.white + mix.wind + mix.traffic`.
pub fn ambient_noise(channels: usize, len: usize, sr: f64, mix: &NoiseMix, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|_| {
            let mut white = gaussian(rng, len);
            normalize_power(&mut white, mix.white);

            let mut wind = gaussian(rng, len);
            let mut lp = Biquad::lowpass(WIND_CUTOFF_HZ, std::f64::consts::FRAC_1_SQRT_2, sr);
            lp.process_in_place(&mut wind);
            let gust_rate = rng.gen_range(0.15..0.5);
            let gust_phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for (i, v) in wind.iter_mut().enumerate() {
                let t = i as f64 / sr;
                *v *= 1.0 + 0.6 * (std::f64::consts::TAU * gust_rate * t + gust_phase).sin();
            }
            normalize_power(&mut wind, mix.wind);

            let mut traffic = gaussian(rng, len);
            let center = (TRAFFIC_BAND_HZ.0 * TRAFFIC_BAND_HZ.1).sqrt();
            let q = center / (TRAFFIC_BAND_HZ.1 - TRAFFIC_BAND_HZ.0);
            let mut bp = Biquad::bandpass(center, q, sr);
            bp.process_in_place(&mut traffic);
            let mut envelope = vec![0.05; len];
            let duration = len as f64 / sr;
            let n_bursts = (duration * BURST_RATE_HZ).ceil() as usize;
            for _ in 0..n_bursts {
                let start = rng.gen_range(-0.5..duration);
                let width = rng.gen_range(0.3..1.5);
                let gain = rng.gen_range(0.3..1.0);
                let a = ((start.max(0.0)) * sr) as usize;
                let b = (((start + width) * sr) as usize).min(len);
                for (i, e) in envelope.iter_mut().enumerate().take(b).skip(a) {
                    let u = (i as f64 / sr - start) / width;
                    *e += gain * (std::f64::consts::PI * u).sin().powi(2);
                }
            }
            traffic.iter_mut().zip(&envelope).for_each(|(v, e)| *v *= e);
            normalize_power(&mut traffic, mix.traffic);

            white
                .iter()
                .zip(&wind)
                .zip(&traffic)
                .map(|((a, b), c)| a + b + c)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn channels_are_independent_and_deterministic() {
        let mix = NoiseMix::default();
        let a = ambient_noise(2, 48000, 48000.0, &mix, &mut ChaCha8Rng::seed_from_u64(3));
        let b = ambient_noise(2, 48000, 48000.0, &mix, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        let corr: f64 = a[0].iter().zip(&a[1]).map(|(x, y)| x * y).sum::<f64>() / 48000.0;
        assert!(corr.abs() < 0.05, "{corr}");
        let p: f64 = a[0].iter().map(|v| v * v).sum::<f64>() / 48000.0;
        // components are normalized individually; cross terms are small
        assert!((p - 1.0).abs() < 0.1, "{p}");
    }
}
