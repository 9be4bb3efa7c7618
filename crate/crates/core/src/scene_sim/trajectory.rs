use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the speed implied by consecutive poses, in m/s.
pub const MAX_SPEED: f64 = 40.0;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// A timestamped planar pose in the world frame. `heading` is measured from
/// the +x axis, counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(t: f64, x: f64, y: f64, heading: f64) -> Self {
        Pose {
            t,
            x,
            y,
            heading: wrap_angle(heading),
        }
    }
}

/// Time-ordered sequence of poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<Pose>,
}

impl Trajectory {
    /// Builds a trajectory, checking that timestamps strictly increase and
    /// that no segment implies a speed above [`MAX_SPEED`].
    pub fn new(samples: Vec<Pose>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trajectory must contain at least one pose"));
        }
        for p in &samples {
            if !(p.t.is_finite() && p.x.is_finite() && p.y.is_finite() && p.heading.is_finite()) {
                return Err(Error::invalid("trajectory contains non-finite values"));
            }
        }
        for w in samples.windows(2) {
            let dt = w[1].t - w[0].t;
            if dt <= 0.0 {
                return Err(Error::invalid(format!(
                    "trajectory timestamps must strictly increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
            let speed = (w[1].x - w[0].x).hypot(w[1].y - w[0].y) / dt;
            // slack covers 6-decimal rounding in pose logs
            if speed > MAX_SPEED + 1e-3 {
                return Err(Error::invalid(format!(
                    "implied speed {speed:.2} m/s at t={} exceeds {MAX_SPEED} m/s",
                    w[0].t
                )));
            }
        }
        let samples = samples
            .into_iter()
            .map(|p| Pose::new(p.t, p.x, p.y, p.heading))
            .collect();
        Ok(Trajectory { samples })
    }

    /// A motionless object at `(x, y)` over `[t0, t1]`.
    pub fn stationary(x: f64, y: f64, heading: f64, t0: f64, t1: f64) -> Result<Self> {
        Trajectory::new(vec![Pose::new(t0, x, y, heading), Pose::new(t1, x, y, heading)])
    }

    pub fn poses(&self) -> &[Pose] {
        &self.samples
    }

    /// First and last timestamp.
    pub fn span(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        let (a, b) = self.span();
        t0 >= a && t1 <= b
    }

    /// Pose at time `t`; see [`crate::autolabel::interpolate_pose`].
    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        crate::autolabel::interpolate_pose(self, t)
    }

    /// Interpolated position with `t` clamped to the span. Used on hot paths
    /// where coverage has already been checked.
    pub(crate) fn position_clamped(&self, t: f64) -> (f64, f64) {
        let s = &self.samples;
        let (a, b) = self.span();
        if t <= a {
            return (s[0].x, s[0].y);
        }
        if t >= b {
            let p = s[s.len() - 1];
            return (p.x, p.y);
        }
        let hi = s.partition_point(|p| p.t <= t);
        let (p0, p1) = (s[hi - 1], s[hi]);
        let u = (t - p0.t) / (p1.t - p0.t);
        (p0.x + u * (p1.x - p0.x), p0.y + u * (p1.y - p0.y))
    }

    /// Applies `f` to every pose, keeping timestamps.
    pub(crate) fn map_poses(&self, f: impl Fn(&Pose) -> Pose) -> Result<Self> {
        Trajectory::new(self.samples.iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-0.25) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tracks() {
        assert!(Trajectory::new(vec![]).is_err());
        let dup = vec![Pose::new(0.0, 0.0, 0.0, 0.0), Pose::new(0.0, 1.0, 0.0, 0.0)];
        assert!(Trajectory::new(dup).is_err());
        let fast = vec![Pose::new(0.0, 0.0, 0.0, 0.0), Pose::new(1.0, 50.0, 0.0, 0.0)];
        assert!(Trajectory::new(fast).is_err());
    }

    #[test]
    fn clamped_position_interpolates() {
        let tr = Trajectory::new(vec![Pose::new(0.0, 0.0, 0.0, 0.0), Pose::new(2.0, 20.0, 4.0, 0.0)]).unwrap();
        assert_eq!(tr.position_clamped(1.0), (10.0, 2.0));
        assert_eq!(tr.position_clamped(-5.0), (0.0, 0.0));
        assert_eq!(tr.position_clamped(9.0), (20.0, 4.0));
    }
}
