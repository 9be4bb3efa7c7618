use serde::{Deserialize, Serialize};

use super::data::Target;
use crate::error::{Error, Result};
use crate::model::{normalize_angle_pair, sigmoid, OutputGrad, RawOutput};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub siren: f64,
    pub angle: f64,
    pub distance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            siren: 10.0,
            angle: 10.0,
            distance: 0.008,
        }
    }
}

impl LossWeights {
    pub fn new(siren: f64, angle: f64, distance: f64) -> Self {
        LossWeights { siren, angle, distance }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.siren, self.angle, self.distance];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Unweighted per-task loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub siren: f64,
    pub angle: f64,
    pub distance: f64,
}

impl LossParts {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.siren * self.siren + w.angle * self.angle + w.distance * self.distance
    }

    pub(crate) fn add(&mut self, o: &LossParts) {
        self.siren += o.siren;
        self.angle += o.angle;
        self.distance += o.distance;
    }

    pub(crate) fn scaled(&self, k: f64) -> LossParts {
        LossParts {
            siren: self.siren * k,
            angle: self.angle * k,
            distance: self.distance * k,
        }
    }
}

/// Binary cross-entropy with the clamp applied before the log.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Weighted multi-task loss of one window and its gradient with respect to
/// the raw head outputs.
///
/// `loss = w_s * BCE + m * (w_a * ((s - sin t)^2 + (c - cos t)^2) + w_d * (d - dist)^2)`
/// with `m = 0` for negatives. With `normalized_angle` the angle residuals
/// use the unit-normalized pair instead of the raw outputs.
///
/// The logit gradient is `w_s * (p - y)`, the gradient of the unclamped
/// BCE; the two agree wherever the clamp is inactive.
pub fn multitask_loss(out: &RawOutput, t: &Target, w: &LossWeights, normalized_angle: bool) -> (f64, LossParts, OutputGrad) {
    let p = sigmoid(out.logit);
    let mut parts = LossParts {
        siren: bce(p, t.is_siren),
        ..LossParts::default()
    };
    let mut g = OutputGrad {
        logit: w.siren * (p - if t.is_siren { 1.0 } else { 0.0 }),
        ..OutputGrad::default()
    };
    if t.is_siren {
        let (ts, tc) = t.theta.sin_cos();
        if normalized_angle {
            let (s, c, degenerate) = normalize_angle_pair(out.sin_raw, out.cos_raw);
            let (rs, rc) = (s - ts, c - tc);
            parts.angle = rs * rs + rc * rc;
            if !degenerate {
                // d(s, c)/d(raw) = (I - u u^T) / r
                let r = out.sin_raw.hypot(out.cos_raw);
                let (gs, gc) = (2.0 * w.angle * rs, 2.0 * w.angle * rc);
                let dot = gs * s + gc * c;
                g.sin = (gs - dot * s) / r;
                g.cos = (gc - dot * c) / r;
            }
        } else {
            let (rs, rc) = (out.sin_raw - ts, out.cos_raw - tc);
            parts.angle = rs * rs + rc * rc;
            g.sin = 2.0 * w.angle * rs;
            g.cos = 2.0 * w.angle * rc;
        }
        let rd = out.distance - t.distance;
        parts.distance = rd * rd;
        g.distance = 2.0 * w.distance * rd;
    }
    (parts.weighted(w), parts, g)
}
