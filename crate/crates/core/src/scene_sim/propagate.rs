use super::trajectory::Trajectory;
use super::R_MIN;
use crate::error::{Error, Result};

/// A mono signal sampled uniformly from time `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSignal {
    pub t0: f64,
    pub sr: f64,
    pub samples: Vec<f64>,
}

impl TimedSignal {
    /// Linearly interpolated value at time `t`; zero outside the recorded span.
    pub fn value_at(&self, t: f64) -> f64 {
        let pos = (t - self.t0) * self.sr;
        if pos < 0.0 || self.samples.is_empty() {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.samples.len() {
            return if i + 1 == self.samples.len() && pos == i as f64 {
                self.samples[i]
            } else {
                0.0
            };
        }
        let u = pos - i as f64;
        self.samples[i] + u * (self.samples[i + 1] - self.samples[i])
    }
}

const MAX_ITERS: usize = 32;
const TOL: f64 = 1e-12;

/// Free-field propagation from a moving point source to a moving receiver.
///
/// For every output sample at reception time `t` the emission time `tau`
/// solves `c (t - tau) = |receiver(t) - source(tau)|` (retarded time). The
/// received value is `source(tau) / max(r, R_MIN)` with `r = c (t - tau)`.
/// The source is read by linear interpolation, so the time-varying delay acts
/// as a fractional-delay resampler and the Doppler shift follows from its
/// derivative.
pub fn propagate(
    source: &TimedSignal,
    source_traj: &Trajectory,
    receiver: &Trajectory,
    out_t0: f64,
    out_len: usize,
    c: f64,
) -> Result<Vec<f64>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("speed of sound must be positive"));
    }
    if out_len == 0 {
        return Ok(Vec::new());
    }
    let sr = source.sr;
    let out_t1 = out_t0 + (out_len - 1) as f64 / sr;
    if !receiver.covers(out_t0, out_t1) {
        return Err(Error::invalid(format!(
            "receiver trajectory {:?} does not cover output span [{out_t0}, {out_t1}]",
            receiver.span()
        )));
    }
    let (src_a, src_b) = source_traj.span();
    let mut out = Vec::with_capacity(out_len);
    let mut tau = f64::NAN;
    for i in 0..out_len {
        let t = out_t0 + i as f64 / sr;
        let (mx, my) = receiver.position_clamped(t);
        let mut guess = if tau.is_nan() { t } else { tau + 1.0 / sr };
        let mut converged = false;
        for _ in 0..MAX_ITERS {
            let (sx, sy) = source_traj.position_clamped(guess.clamp(src_a, src_b));
            let next = t - (mx - sx).hypot(my - sy) / c;
            let done = (next - guess).abs() < TOL;
            guess = next;
            if done {
                converged = true;
                break;
            }
        }
        if !converged || guess < src_a || guess > src_b {
            return Err(Error::invalid(format!(
                "source trajectory {:?} does not cover emission time {guess:.4} for reception at {t:.4}",
                source_traj.span()
            )));
        }
        tau = guess;
        let r = c * (t - tau);
        out.push(source.value_at(tau) / r.max(R_MIN));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::Pose;

    #[test]
    fn static_source_pure_delay() {
        let sr = 48000.0;
        let samples: Vec<f64> = (0..96000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let src = TimedSignal { t0: -1.0, sr, samples: samples.clone() };
        let st = Trajectory::stationary(343.0, 0.0, 0.0, -2.0, 2.0).unwrap();
        let rx = Trajectory::stationary(0.0, 0.0, 0.0, -2.0, 2.0).unwrap();
        let out = propagate(&src, &st, &rx, 0.0, 1000, 343.0).unwrap();
        // emission at t - 1 s, i.e. source index i exactly
        for (i, v) in out.iter().enumerate() {
            assert!((v - samples[i] / 343.0).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn rejects_short_coverage() {
        let src = TimedSignal { t0: 0.0, sr: 48000.0, samples: vec![0.0; 10] };
        let st = Trajectory::stationary(343.0, 0.0, 0.0, 0.0, 2.0).unwrap();
        let rx = Trajectory::stationary(0.0, 0.0, 0.0, 0.0, 2.0).unwrap();
        // emission time would be -1 s, before the source track starts
        assert!(propagate(&src, &st, &rx, 0.0, 10, 343.0).is_err());
        // receiver does not cover the output
        assert!(propagate(&src, &st, &rx, 1.5, 48000, 343.0).is_err());
    }

    #[test]
    fn moving_source_converges() {
        let src = TimedSignal { t0: -2.0, sr: 48000.0, samples: vec![1.0; 48000 * 4] };
        let st = Trajectory::new(vec![Pose::new(-2.0, 100.0, 0.0, 0.0), Pose::new(2.0, 20.0, 0.0, 0.0)]).unwrap();
        let rx = Trajectory::stationary(0.0, 0.0, 0.0, -2.0, 2.0).unwrap();
        let out = propagate(&src, &st, &rx, 0.0, 480, 343.0).unwrap();
        // amplitude 1/r grows as the source approaches
        assert!(out.windows(2).all(|w| w[1] >= w[0]));
    }
}
