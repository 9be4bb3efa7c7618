use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SirenKind {
    /// Slow sinusoidal sweep between `f_lo` and `f_hi`.
    Wail,
    /// Fast rising sawtooth sweep.
    Yelp,
    /// Alternating two-tone pattern.
    HiLo,
    /// Steady tone at `f_lo`.
    ConstantTone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirenProfile {
    pub kind: SirenKind,
    pub f_lo: f64,
    pub f_hi: f64,
    pub sweep_period: f64,
    pub amplitude: f64,
}

impl SirenProfile {
    pub fn wail(f_lo: f64, f_hi: f64, sweep_period: f64) -> Self {
        SirenProfile {
            kind: SirenKind::Wail,
            f_lo,
            f_hi,
            sweep_period,
            amplitude: 0.8,
        }
    }

    pub fn tone(freq: f64) -> Self {
        SirenProfile {
            kind: SirenKind::ConstantTone,
            f_lo: freq,
            f_hi: freq,
            sweep_period: 1.0,
            amplitude: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_lo > 0.0 && self.f_lo <= self.f_hi && self.f_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "siren needs 0 < f_lo <= f_hi, got f_lo={} f_hi={}",
                self.f_lo, self.f_hi
            )));
        }
        if !(self.sweep_period > 0.0 && self.sweep_period.is_finite()) {
            return Err(Error::invalid("siren sweep_period must be positive"));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::invalid("siren amplitude must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Instantaneous frequency in Hz at time `t`.
    pub fn frequency_at(&self, t: f64) -> f64 {
        let (lo, hi, period) = (self.f_lo, self.f_hi, self.sweep_period);
        match self.kind {
            SirenKind::Wail => {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                mid - half * (2.0 * PI * t / period).cos()
            }
            SirenKind::Yelp => lo + (hi - lo) * (t / period).rem_euclid(1.0),
            SirenKind::HiLo => {
                if (t / period).rem_euclid(1.0) < 0.5 {
                    lo
                } else {
                    hi
                }
            }
            SirenKind::ConstantTone => lo,
        }
    }

    /// Phase in radians: the exact integral of `2 pi frequency_at` from 0.
    pub fn phase_at(&self, t: f64) -> f64 {
        let (lo, hi, period) = (self.f_lo, self.f_hi, self.sweep_period);
        let cycles = match self.kind {
            SirenKind::Wail => {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let w = 2.0 * PI / period;
                mid * t - half * (w * t).sin() / w
            }
            SirenKind::Yelp => {
                let k = (t / period).floor();
                let frac = t / period - k;
                lo * t + (hi - lo) * period * (0.5 * k + 0.5 * frac * frac)
            }
            SirenKind::HiLo => {
                let k = (t / period).floor();
                let r = t - k * period;
                let half = 0.5 * period;
                let in_lo = k * half + r.min(half);
                let in_hi = k * half + (r - half).max(0.0);
                lo * in_lo + hi * in_hi
            }
            SirenKind::ConstantTone => lo * t,
        };
        2.0 * PI * cycles
    }
}

/// Synthesizes `duration` seconds of the siren starting at `t = 0`.
pub fn synth_siren_waveform(profile: &SirenProfile, duration: f64, sr: f64) -> Result<Vec<f64>> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::invalid("duration must be finite and non-negative"));
    }
    let n = (duration * sr).round() as usize;
    synth_siren_segment(profile, 0.0, n, sr)
}

/// Synthesizes `n` samples of the siren starting at time `t0`.
pub fn synth_siren_segment(profile: &SirenProfile, t0: f64, n: usize, sr: f64) -> Result<Vec<f64>> {
    profile.validate()?;
    if !(sr > 0.0 && sr.is_finite()) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    Ok((0..n)
        .map(|i| profile.amplitude * profile.phase_at(t0 + i as f64 / sr).sin())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles() -> Vec<SirenProfile> {
        let mut v = vec![SirenProfile::wail(600.0, 1500.0, 2.0), SirenProfile::tone(1000.0)];
        for kind in [SirenKind::Yelp, SirenKind::HiLo] {
            v.push(SirenProfile {
                kind,
                f_lo: 700.0,
                f_hi: 1600.0,
                sweep_period: 0.3,
                amplitude: 0.5,
            });
        }
        v
    }

    #[test]
    fn zero_duration_is_empty() {
        assert!(synth_siren_waveform(&SirenProfile::tone(1000.0), 0.0, 48000.0).unwrap().is_empty());
    }

    #[test]
    fn rejects_inverted_band() {
        let p = SirenProfile::wail(1500.0, 600.0, 2.0);
        assert!(synth_siren_waveform(&p, 1.0, 48000.0).is_err());
    }

    #[test]
    fn phase_derivative_matches_frequency() {
        for p in profiles() {
            for i in 0..200 {
                let t = 0.0137 * i as f64 + 0.001;
                let h = 1e-6;
                let numeric = (p.phase_at(t + h) - p.phase_at(t - h)) / (2.0 * h) / (2.0 * PI);
                let f = p.frequency_at(t);
                // skip the hi-lo / yelp discontinuities
                if (p.frequency_at(t + h) - p.frequency_at(t - h)).abs() > 1.0 {
                    continue;
                }
                assert!((numeric - f).abs() < 1e-3, "{:?} t={t}: {numeric} vs {f}", p.kind);
                assert!(f >= p.f_lo - 1e-9 && f <= p.f_hi + 1e-9);
            }
        }
    }

    #[test]
    fn phase_is_continuous() {
        for p in profiles() {
            let mut prev = p.phase_at(0.0);
            for i in 1..20000 {
                let t = i as f64 / 48000.0;
                let ph = p.phase_at(t);
                let step = ph - prev;
                assert!(step > 0.0 && step <= 2.0 * PI * p.f_hi / 48000.0 + 1e-9);
                prev = ph;
            }
        }
    }
}
