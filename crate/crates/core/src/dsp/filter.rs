use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Second-order IIR section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(b: [f64; 3], a: [f64; 2]) -> Self {
        Biquad { b, a, s1: 0.0, s2: 0.0 }
    }

    fn from_rbj(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad::new([b[0] / a[0], b[1] / a[0], b[2] / a[0]], [a[1] / a[0], a[2] / a[0]])
    }

    /// Audio-EQ-cookbook low-pass.
    pub fn lowpass(cutoff: f64, q: f64, sr: f64) -> Self {
        let w = 2.0 * PI * cutoff / sr;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        Biquad::from_rbj(
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            [1.0 + alpha, -2.0 * cos, 1.0 - alpha],
        )
    }

    /// Audio-EQ-cookbook band-pass with 0 dB peak gain.
    pub fn bandpass(center: f64, q: f64, sr: f64) -> Self {
        let w = 2.0 * PI * center / sr;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        Biquad::from_rbj([alpha, 0.0, -alpha], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    #[inline]
    pub fn tick(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn process_in_place(&mut self, x: &mut [f64]) {
        for v in x {
            *v = self.tick(*v);
        }
    }

    /// Complex frequency response at normalized angular frequency `w`.
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterDesign {
    ButterworthIir,
}

/// Band-pass specification. `order` is the order of the low-pass prototype;
/// the resulting band-pass has `2 * order` poles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub lo: f64,
    pub hi: f64,
    pub order: usize,
    pub design: FilterDesign,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            lo: 500.0,
            hi: 1800.0,
            order: 4,
            design: FilterDesign::ButterworthIir,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sr: f64) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < sr / 2.0) {
            return Err(Error::invalid(format!(
                "band-pass edges must satisfy 0 < lo < hi < sr/2, got {}..{} at {sr} Hz",
                self.lo, self.hi
            )));
        }
        if !(1..=12).contains(&self.order) {
            return Err(Error::invalid(format!("filter order {} outside 1..=12", self.order)));
        }
        Ok(())
    }
}

/// Butterworth band-pass as a cascade of biquads, designed by the
/// low-pass-to-band-pass transform of the analog prototype followed by a
/// prewarped bilinear transform. Gain is unity at the band centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn bandpass(spec: &FilterSpec, sr: f64) -> Result<Self> {
        spec.validate(sr)?;
        let n = spec.order;
        let fs2 = 2.0 * sr;
        let w1 = fs2 * (PI * spec.lo / sr).tan();
        let w2 = fs2 * (PI * spec.hi / sr).tan();
        let w0 = (w1 * w2).sqrt();
        let bw = w2 - w1;

        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let p = Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64);
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            for s in [half + root, half - root] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }

        let mut complex: Vec<Complex64> = poles.iter().copied().filter(|z| z.im > 1e-12).collect();
        let mut real: Vec<f64> = poles.iter().filter(|z| z.im.abs() <= 1e-12).map(|z| z.re).collect();
        complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        real.sort_by(f64::total_cmp);

        let mut sections: Vec<Biquad> = complex
            .iter()
            .map(|z| Biquad::new([1.0, 0.0, -1.0], [-2.0 * z.re, z.norm_sqr()]))
            .collect();
        for pair in real.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad::new([1.0, 0.0, -1.0], [-(r1 + r2), r1 * r2]));
        }
        if sections.len() != n {
            return Err(Error::invalid("band-pass design produced an unexpected pole layout"));
        }

        let wc = 2.0 * (w0 / fs2).atan();
        let mut filt = Butterworth { sections };
        let g = filt.response(wc).norm();
        for v in filt.sections[0].b.iter_mut() {
            *v /= g;
        }
        Ok(filt)
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn response(&self, w: f64) -> Complex64 {
        self.sections.iter().map(|s| s.response(w)).product()
    }

    /// Filters `x` from a zero initial state.
    pub fn apply<T: Copy + Into<f64>>(&self, x: &[T]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|&v| v.into()).collect();
        for s in &self.sections {
            let mut s = *s;
            s.reset();
            s.process_in_place(&mut out);
        }
        out
    }
}

/// Causal band-pass of a mono signal.
pub fn bandpass(signal: &[f64], spec: &FilterSpec, sr: f64) -> Result<Vec<f64>> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal contains non-finite samples"));
    }
    match spec.design {
        FilterDesign::ButterworthIir => Ok(Butterworth::bandpass(spec, sr)?.apply(signal)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: f64 = 48000.0;

    fn sine(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / SR).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Steady-state gain in dB, skipping the first 0.2 s of transient.
    fn gain_db(f: f64) -> f64 {
        let x = sine(f, 48000);
        let y = bandpass(&x, &FilterSpec::default(), SR).unwrap();
        let skip = 9600;
        20.0 * (rms(&y[skip..]) / rms(&x[skip..])).log10()
    }

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass(&[0.0; 1000], &FilterSpec::default(), SR).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn passband_and_stopband() {
        assert!(gain_db(1000.0).abs() < 1.0, "{}", gain_db(1000.0));
        assert!(gain_db(100.0) <= -30.0, "{}", gain_db(100.0));
        assert!(gain_db(5000.0) <= -30.0, "{}", gain_db(5000.0));
    }

    #[test]
    fn edges_are_half_power() {
        let f = Butterworth::bandpass(&FilterSpec::default(), SR).unwrap();
        for edge in [500.0, 1800.0] {
            let g = f.response(2.0 * PI * edge / SR).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{edge}: {g}");
        }
        assert_eq!(f.sections().len(), 4);
        // all poles inside the unit circle
        assert!(f.sections().iter().all(|s| s.a[1] < 1.0));
    }

    #[test]
    fn odd_order_designs() {
        let spec = FilterSpec { order: 3, ..FilterSpec::default() };
        let f = Butterworth::bandpass(&spec, SR).unwrap();
        assert_eq!(f.sections().len(), 3);
        let g = f.response(2.0 * PI * 500.0 / SR).norm();
        assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bandpass(&[f64::NAN], &FilterSpec::default(), SR).is_err());
        let spec = FilterSpec { lo: 2000.0, hi: 1000.0, ..FilterSpec::default() };
        assert!(bandpass(&[0.0], &spec, SR).is_err());
        let spec = FilterSpec { hi: 30000.0, ..FilterSpec::default() };
        assert!(bandpass(&[0.0], &spec, SR).is_err());
    }

    proptest::proptest! {
        #[test]
        fn linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = FilterSpec::default();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = bandpass(&mix, &spec, SR).unwrap();
            let fx = bandpass(&x, &spec, SR).unwrap();
            let fy = bandpass(&y, &spec, SR).unwrap();
            for i in 0..2000 {
                proptest::prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
            }
        }
    }
}
