use serde::{Deserialize, Serialize};

use super::trajectory::{Pose, Trajectory};
use super::N_CHANNELS;
use crate::error::{Error, Result};

/// Two four-capsule microphone devices mounted on the ego vehicle.
///
/// Offsets are in the ego body frame: +x forward, +y left, metres from the
/// vehicle reference point. Channel `4 * d + k` is capsule `k` of device `d`,
/// with capsules ordered front, back, left, right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicArrayGeometry {
    pub device_offsets: [[f64; 2]; 2],
    pub capsule_offsets: [[f64; 2]; 4],
    pub ego_length: f64,
    pub ego_width: f64,
}

impl Default for MicArrayGeometry {
    fn default() -> Self {
        let c = 0.05;
        MicArrayGeometry {
            device_offsets: [[-2.0, 0.5], [-2.0, -0.5]],
            capsule_offsets: [[c, 0.0], [-c, 0.0], [0.0, c], [0.0, -c]],
            ego_length: 5.0,
            ego_width: 2.0,
        }
    }
}

impl MicArrayGeometry {
    /// Body-frame position of every channel.
    pub fn channel_offsets(&self) -> [[f64; 2]; N_CHANNELS] {
        let mut out = [[0.0; 2]; N_CHANNELS];
        for (d, dev) in self.device_offsets.iter().enumerate() {
            for (k, cap) in self.capsule_offsets.iter().enumerate() {
                out[4 * d + k] = [dev[0] + cap[0], dev[1] + cap[1]];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let offs = self.channel_offsets();
        for i in 0..N_CHANNELS {
            if !offs[i].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("mic offsets must be finite"));
            }
            for j in 0..i {
                if (offs[i][0] - offs[j][0]).hypot(offs[i][1] - offs[j][1]) < 1e-6 {
                    return Err(Error::invalid(format!("capsules {j} and {i} coincide")));
                }
            }
        }
        if !(self.ego_length > 0.0 && self.ego_width > 0.0) {
            return Err(Error::invalid("ego dimensions must be positive"));
        }
        Ok(())
    }

    /// World-frame track of one capsule given the ego track.
    pub fn capsule_track(&self, ego: &Trajectory, channel: usize) -> Result<Trajectory> {
        if channel >= N_CHANNELS {
            return Err(Error::invalid(format!("channel {channel} out of range")));
        }
        let [ox, oy] = self.channel_offsets()[channel];
        ego.map_poses(|p| {
            let (s, c) = p.heading.sin_cos();
            Pose::new(p.t, p.x + c * ox - s * oy, p.y + s * ox + c * oy, p.heading)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let g = MicArrayGeometry::default();
        g.validate().unwrap();
        let o = g.channel_offsets();
        assert_eq!(o[0], [-1.95, 0.5]);
        assert_eq!(o[7], [-2.0, -0.55]);
    }

    #[test]
    fn capsule_track_rotates_with_heading() {
        let g = MicArrayGeometry::default();
        let ego = Trajectory::stationary(10.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 1.0).unwrap();
        // heading +y: body +x maps to world +y, body +y to world -x
        let p = g.capsule_track(&ego, 0).unwrap().poses()[0];
        assert!((p.x - (10.0 - 0.5)).abs() < 1e-12);
        assert!((p.y - (-1.95)).abs() < 1e-12);
    }
}
