//! Turns simulated sessions into labeled training windows.
//!
//! Labels come from the vehicle tracks at the end of each window: the EV's
//! bearing relative to the ego heading (0 ahead, positive to the left) and
//! its range. Positives beyond the distance cutoff are dropped.

mod balance;
pub mod io;
mod split;
mod window;

pub use balance::{balance_directions, BalanceParams};
pub use split::{
    assign_sessions, split_by_session, split_by_session_stratified, DatasetSplit, SessionAssignment, SplitRatio,
};
pub use window::{window_dataset, window_starts, LabeledWindow, SourceLocation, WindowAudio, WindowParams};

use crate::error::{Error, Result};
use crate::scene_sim::{wrap_angle, Pose, Trajectory};

/// Pose at time `t`: the stored pose on an exact timestamp match, otherwise
/// linear interpolation of position and shortest-arc interpolation of
/// heading between the two neighbouring samples. No extrapolation.
pub fn interpolate_pose(track: &Trajectory, t: f64) -> Result<Pose> {
    let s = track.poses();
    let (a, b) = track.span();
    if !(t >= a && t <= b) {
        return Err(Error::invalid(format!("time {t} outside track span [{a}, {b}]")));
    }
    let hi = s.partition_point(|p| p.t < t);
    if s[hi].t == t {
        return Ok(s[hi]);
    }
    let (p0, p1) = (s[hi - 1], s[hi]);
    let u = (t - p0.t) / (p1.t - p0.t);
    // shortest arc: interpolate the unit vectors, then renormalize via atan2
    let (s0, c0) = p0.heading.sin_cos();
    let (s1, c1) = p1.heading.sin_cos();
    let (sy, cx) = (s0 + u * (s1 - s0), c0 + u * (c1 - c0));
    let heading = if sy == 0.0 && cx == 0.0 {
        // exactly opposite headings at the midpoint: keep the earlier one
        p0.heading
    } else {
        sy.atan2(cx)
    };
    Ok(Pose::new(
        t,
        p0.x + u * (p1.x - p0.x),
        p0.y + u * (p1.y - p0.y),
        heading,
    ))
}

/// Bearing and range of `ev` as seen from `ego`. The angle is measured from
/// the ego heading, counterclockwise (left) positive, in `(-pi, pi]`.
/// Coincident positions give `(0, 0)`.
pub fn relative_angle_distance(ego: &Pose, ev: &Pose) -> (f64, f64) {
    let (dx, dy) = (ev.x - ego.x, ev.y - ego.y);
    let distance = dx.hypot(dy);
    if distance == 0.0 {
        return (0.0, 0.0);
    }
    (wrap_angle(dy.atan2(dx) - ego.heading), distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn track(poses: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory::new(poses.iter().map(|&(t, x, h)| Pose::new(t, x, 0.0, h)).collect()).unwrap()
    }

    #[test]
    fn exact_hit_and_midpoint() {
        let tr = track(&[(0.0, 0.0, 0.0), (1.0, 10.0, 0.0), (2.0, 12.0, 0.5)]);
        assert_eq!(interpolate_pose(&tr, 1.0).unwrap(), tr.poses()[1]);
        assert_eq!(interpolate_pose(&tr, 0.5).unwrap().x, 5.0);
        assert!(interpolate_pose(&tr, 2.5).is_err());
        assert!(interpolate_pose(&tr, -0.1).is_err());
    }

    #[test]
    fn heading_takes_shortest_arc() {
        let tr = track(&[(0.0, 0.0, 170f64.to_radians()), (1.0, 1.0, (-170f64).to_radians())]);
        let h = interpolate_pose(&tr, 0.5).unwrap().heading;
        // oracle: normalized average of the two unit vectors points at 180 deg
        let (a, b) = (170f64.to_radians(), (-170f64).to_radians());
        let oracle = (a.sin() + b.sin()).atan2(a.cos() + b.cos());
        assert!((wrap_angle(h - oracle)).abs() < 1e-12);
        assert!((h.abs() - PI).abs() < 1e-12, "{h}");
    }

    #[test]
    fn relative_geometry_cases() {
        let ego = Pose::new(0.0, 0.0, 0.0, FRAC_PI_2);
        let (th, d) = relative_angle_distance(&ego, &Pose::new(0.0, 0.0, 10.0, 0.0));
        assert!(th.abs() < 1e-15 && (d - 10.0).abs() < 1e-15);
        let (th, d) = relative_angle_distance(&ego, &Pose::new(0.0, -5.0, 5.0, 0.0));
        assert!((th - FRAC_PI_4).abs() < 1e-15 && (d - 50f64.sqrt()).abs() < 1e-12);
        let (th, d) = relative_angle_distance(&ego, &Pose::new(0.0, 5.0, 0.0, 0.0));
        assert!((th + FRAC_PI_2).abs() < 1e-15 && (d - 5.0).abs() < 1e-15);
        assert_eq!(relative_angle_distance(&ego, &ego), (0.0, 0.0));
    }

    #[test]
    fn bearing_round_trip() {
        for i in 0..360 {
            let heading = -3.0 + 0.017 * i as f64;
            let beta = wrap_angle(0.31 * i as f64);
            let ego = Pose::new(0.0, 3.0, -2.0, heading);
            let ev = Pose::new(0.0, 3.0 + 25.0 * (heading + beta).cos(), -2.0 + 25.0 * (heading + beta).sin(), 0.0);
            let (th, d) = relative_angle_distance(&ego, &ev);
            assert!(wrap_angle(th - beta).abs() < 1e-12);
            assert!((d - 25.0).abs() < 1e-12);
        }
    }
}
