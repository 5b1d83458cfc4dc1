use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::belief::PursuerBelief;
use crate::geom::{idx, EvaderState};

pub const N_FEATURES: usize = 14;

/// Frame for the relative evader features.
///
/// `Raw` keeps world-frame differences `x_E − μ_x`, `y_E − μ_y`. It matches
/// training data only when the pursuer mean heading is zero.
/// `PursuerAligned` rotates the relative position and the position
/// covariance by `−μ_ψ`, so the features describe the same problem whatever
/// the world orientation. Both coincide when `μ_ψ = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFrame {
    Raw,
    #[default]
    PursuerAligned,
}

/// Network input, in the order
/// `[μ_a, μ_R, μ_v, σ²_x, σ²_y, σ_xy, σ²_ψ, σ²_a, σ²_R, σ²_v, Δx, Δy, Δψ, v_E]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

impl FeatureVector {
    pub fn build(b: &PursuerBelief, e: &EvaderState, frame: FeatureFrame) -> Self {
        let m = &b.mean;
        let dx = e.position.x - m[idx::X];
        let dy = e.position.y - m[idx::Y];
        let [[sxx, sxy], [_, syy]] = b.cov_pos;
        let (rx, ry, cxx, cyy, cxy) = match frame {
            FeatureFrame::Raw => (dx, dy, sxx, syy, sxy),
            FeatureFrame::PursuerAligned => {
                let (s, c) = m[idx::HEADING].sin_cos();
                (
                    c * dx + s * dy,
                    -s * dx + c * dy,
                    c * c * sxx + 2.0 * c * s * sxy + s * s * syy,
                    s * s * sxx - 2.0 * c * s * sxy + c * c * syy,
                    c * s * (syy - sxx) + (c * c - s * s) * sxy,
                )
            }
        };
        Self([
            m[idx::TURN_RADIUS],
            m[idx::RANGE],
            m[idx::SPEED],
            cxx,
            cyy,
            cxy,
            b.var_psi,
            b.var_a,
            b.var_r,
            b.var_v,
            rx,
            ry,
            wrap_angle(e.heading - m[idx::HEADING]),
            e.speed,
        ])
    }

    /// Derivatives of the features with respect to the evader's
    /// `[x, y, ψ]`. Only rows 10, 11 and 12 are nonzero.
    pub fn evader_jacobian(b: &PursuerBelief, frame: FeatureFrame) -> [[f64; 3]; N_FEATURES] {
        let mut j = [[0.0; 3]; N_FEATURES];
        match frame {
            FeatureFrame::Raw => {
                j[10][0] = 1.0;
                j[11][1] = 1.0;
            }
            FeatureFrame::PursuerAligned => {
                let (s, c) = b.mean[idx::HEADING].sin_cos();
                j[10] = [c, s, 0.0];
                j[11] = [-s, c, 0.0];
            }
        }
        j[12][2] = 1.0;
        j
    }

    pub fn as_array(&self) -> &[f64; N_FEATURES] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}
