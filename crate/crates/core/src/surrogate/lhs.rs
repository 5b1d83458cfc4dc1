use serde::{Deserialize, Serialize};

use crate::belief::{PursuerBelief, RngStream};
use crate::error::{Error, Result};
use crate::geom::{EvaderState, Vec2};

use super::features::{FeatureFrame, FeatureVector, N_FEATURES};

/// Sampling box for training configurations.
///
/// The position covariance is sampled through its correlation coefficient
/// `ρ = σ_xy / (σ_x σ_y)` so every draw is positive semidefinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParameterRanges {
    pub turn_radius: [f64; 2],
    pub range: [f64; 2],
    pub pursuer_speed: [f64; 2],
    pub var_x: [f64; 2],
    pub var_y: [f64; 2],
    pub corr_xy: [f64; 2],
    pub var_psi: [f64; 2],
    pub var_a: [f64; 2],
    pub var_r: [f64; 2],
    pub var_v: [f64; 2],
    pub rel_x: [f64; 2],
    pub rel_y: [f64; 2],
    pub rel_heading: [f64; 2],
    pub evader_speed: [f64; 2],
}

impl Default for ParameterRanges {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            turn_radius: [0.05, 0.5],
            range: [0.5, 2.0],
            pursuer_speed: [1.0, 3.0],
            var_x: [0.0, 0.15],
            var_y: [0.0, 0.15],
            corr_xy: [-0.95, 0.95],
            var_psi: [0.0, 0.3],
            var_a: [0.0, 0.01],
            var_r: [0.0, 0.15],
            var_v: [0.0, 0.4],
            rel_x: [-4.0, 4.0],
            rel_y: [-4.0, 4.0],
            rel_heading: [-PI, PI],
            evader_speed: [0.3, 1.5],
        }
    }
}

impl ParameterRanges {
    pub const DIMS: usize = 14;

    /// Ranges in sampling order.
    pub fn as_rows(&self) -> [[f64; 2]; Self::DIMS] {
        [
            self.turn_radius,
            self.range,
            self.pursuer_speed,
            self.var_x,
            self.var_y,
            self.corr_xy,
            self.var_psi,
            self.var_a,
            self.var_r,
            self.var_v,
            self.rel_x,
            self.rel_y,
            self.rel_heading,
            self.evader_speed,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let names = [
            "turn_radius",
            "range",
            "pursuer_speed",
            "var_x",
            "var_y",
            "corr_xy",
            "var_psi",
            "var_a",
            "var_r",
            "var_v",
            "rel_x",
            "rel_y",
            "rel_heading",
            "evader_speed",
        ];
        for (name, [lo, hi]) in names.iter().zip(self.as_rows()) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::RangeConfig(format!("{name}: need finite lo < hi, got [{lo}, {hi}]")));
            }
        }
        for (name, r) in [
            ("turn_radius", self.turn_radius),
            ("range", self.range),
            ("pursuer_speed", self.pursuer_speed),
        ] {
            if r[0] <= 0.0 {
                return Err(Error::RangeConfig(format!("{name} must be positive")));
            }
        }
        if self.evader_speed[0] < 0.0 {
            return Err(Error::RangeConfig("evader_speed must be nonnegative".into()));
        }
        for (name, r) in [
            ("var_x", self.var_x),
            ("var_y", self.var_y),
            ("var_psi", self.var_psi),
            ("var_a", self.var_a),
            ("var_r", self.var_r),
            ("var_v", self.var_v),
        ] {
            if r[0] < 0.0 {
                return Err(Error::RangeConfig(format!("{name} must be nonnegative")));
            }
        }
        if self.corr_xy[0] < -1.0 || self.corr_xy[1] > 1.0 {
            return Err(Error::RangeConfig("corr_xy must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    /// Whether a feature vector built in the pursuer frame falls in the box.
    pub fn contains(&self, f: &FeatureVector) -> bool {
        let x = f.as_array();
        let tol = 1e-12;
        let inside = |v: f64, r: [f64; 2]| v >= r[0] - tol && v <= r[1] + tol;
        let corr_ok = {
            let denom = (x[3] * x[4]).sqrt();
            if denom == 0.0 {
                x[5].abs() <= tol
            } else {
                inside(x[5] / denom, self.corr_xy)
            }
        };
        inside(x[0], self.turn_radius)
            && inside(x[1], self.range)
            && inside(x[2], self.pursuer_speed)
            && inside(x[3], self.var_x)
            && inside(x[4], self.var_y)
            && corr_ok
            && inside(x[6], self.var_psi)
            && inside(x[7], self.var_a)
            && inside(x[8], self.var_r)
            && inside(x[9], self.var_v)
            && inside(x[10], self.rel_x)
            && inside(x[11], self.rel_y)
            && inside(x[12], self.rel_heading)
            && inside(x[13], self.evader_speed)
    }
}

/// One sampled problem: pursuer belief centred at the origin with zero mean
/// heading, and an evader relative to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Configuration {
    pub belief: PursuerBelief,
    pub evader: EvaderState,
}

impl Configuration {
    pub fn features(&self) -> FeatureVector {
        FeatureVector::build(&self.belief, &self.evader, FeatureFrame::PursuerAligned)
    }

    /// Inverse of [`Configuration::features`] for pursuer-frame features.
    pub fn from_features(f: &FeatureVector) -> Result<Self> {
        let x = f.as_array();
        let belief = PursuerBelief::new(
            [0.0, 0.0, 0.0, x[0], x[1], x[2]],
            [[x[3], x[5]], [x[5], x[4]]],
            x[6],
            x[7],
            x[8],
            x[9],
        )?;
        let evader = EvaderState::new(Vec2::new(x[10], x[11]), x[12], x[13])?;
        Ok(Self { belief, evader })
    }
}

/// Unit-cube Latin hypercube: for each dimension, a random permutation of
/// the `n` strata with a uniform offset inside each stratum.
pub(crate) fn unit_hypercube(n: usize, dims: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        for i in (1..n).rev() {
            let j = rng.below(i + 1);
            perm.swap(i, j);
        }
        for (i, row) in out.iter_mut().enumerate() {
            row[d] = (perm[i] as f64 + rng.uniform()) / n as f64;
        }
    }
    out
}

pub fn latin_hypercube(n: usize, ranges: &ParameterRanges, rng: &mut RngStream) -> Result<Vec<Configuration>> {
    if n == 0 {
        return Err(Error::InvalidArgument("Latin hypercube needs n >= 1".into()));
    }
    ranges.validate()?;
    let rows = ranges.as_rows();
    unit_hypercube(n, ParameterRanges::DIMS, rng)
        .into_iter()
        .map(|u| {
            let mut v = [0.0; N_FEATURES];
            for d in 0..ParameterRanges::DIMS {
                let [lo, hi] = rows[d];
                v[d] = lo + u[d] * (hi - lo);
            }
            // Column 5 holds ρ; convert to the covariance.
            v[5] *= (v[3] * v[4]).sqrt();
            Configuration::from_features(&FeatureVector(v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_points_one_per_quarter() {
        let mut rng = RngStream::new(3);
        let u = unit_hypercube(4, 1, &mut rng);
        let mut bins: Vec<usize> = u.iter().map(|r| (r[0] * 4.0) as usize).collect();
        bins.sort();
        assert_eq!(bins, vec![0, 1, 2, 3]);
    }

    #[test]
    fn every_dimension_stratified() {
        let n = 257;
        let mut rng = RngStream::new(11);
        let r = ParameterRanges::default();
        let cfgs = latin_hypercube(n, &r, &mut rng).unwrap();
        let rows = r.as_rows();
        for d in 0..14 {
            let mut seen = vec![0usize; n];
            for c in &cfgs {
                let f = c.features().0;
                let v = if d == 5 {
                    let s = (f[3] * f[4]).sqrt();
                    if s == 0.0 {
                        continue;
                    }
                    f[5] / s
                } else {
                    f[d]
                };
                let [lo, hi] = rows[d];
                let bin = (((v - lo) / (hi - lo)) * n as f64).floor() as usize;
                seen[bin.min(n - 1)] += 1;
            }
            if d != 5 {
                assert!(seen.iter().all(|&c| c == 1), "dimension {d}");
            }
        }
    }

    #[test]
    fn covariances_are_psd() {
        let mut rng = RngStream::new(5);
        for c in latin_hypercube(2000, &ParameterRanges::default(), &mut rng).unwrap() {
            let [[a, b], [_, d]] = c.belief.cov_pos;
            let tr = a + d;
            let det = a * d - b * b;
            let lmin = 0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt();
            assert!(lmin >= -1e-15, "{:?}", c.belief.cov_pos);
            assert!(ParameterRanges::default().contains(&c.features()));
        }
    }

    #[test]
    fn bad_ranges_rejected() {
        let mut r = ParameterRanges::default();
        r.range = [2.0, 1.0];
        assert!(matches!(r.validate(), Err(Error::RangeConfig(_))));
        let mut rng = RngStream::new(0);
        assert!(latin_hypercube(10, &r, &mut rng).is_err());
        assert!(latin_hypercube(0, &ParameterRanges::default(), &mut rng).is_err());
    }

    #[test]
    fn ranges_json_strict() {
        let r: ParameterRanges = serde_json::from_str(r#"{"range":[0.5,1.5]}"#).unwrap();
        assert_eq!(r.range, [0.5, 1.5]);
        assert!(serde_json::from_str::<ParameterRanges>(r#"{"ranj":[0.5,1.5]}"#).is_err());
    }
}
