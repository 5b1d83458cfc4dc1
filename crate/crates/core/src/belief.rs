//! Gaussian belief over the pursuer parameters `[x, y, ψ, a, R, v]`.
//!
//! The covariance has a correlated 2×2 position block and independent
//! variances for the remaining four parameters.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::error::{Error, Result};
use crate::geom::idx;

/// Eigenvalues down to `-PSD_FLOOR·trace` are treated as rounding and clamped.
const PSD_FLOOR: f64 = 1e-10;

/// Serialized as `{mean, cov_pos, var_psi, var_a, var_R, var_v}`; unknown
/// keys are rejected and the covariance is validated on load.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BeliefRepr", into = "BeliefRepr")]
pub struct PursuerBelief {
    pub mean: [f64; 6],
    pub cov_pos: [[f64; 2]; 2],
    pub var_psi: f64,
    pub var_a: f64,
    pub var_r: f64,
    pub var_v: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeliefRepr {
    mean: [f64; 6],
    cov_pos: [[f64; 2]; 2],
    var_psi: f64,
    var_a: f64,
    #[serde(rename = "var_R")]
    var_r: f64,
    var_v: f64,
}

impl TryFrom<BeliefRepr> for PursuerBelief {
    type Error = Error;
    fn try_from(r: BeliefRepr) -> Result<Self> {
        Self::new(r.mean, r.cov_pos, r.var_psi, r.var_a, r.var_r, r.var_v)
    }
}

impl From<PursuerBelief> for BeliefRepr {
    fn from(b: PursuerBelief) -> Self {
        Self {
            mean: b.mean,
            cov_pos: b.cov_pos,
            var_psi: b.var_psi,
            var_a: b.var_a,
            var_r: b.var_r,
            var_v: b.var_v,
        }
    }
}

impl PursuerBelief {
    pub fn new(
        mean: [f64; 6],
        cov_pos: [[f64; 2]; 2],
        var_psi: f64,
        var_a: f64,
        var_r: f64,
        var_v: f64,
    ) -> Result<Self> {
        Self {
            mean,
            cov_pos,
            var_psi,
            var_a,
            var_r,
            var_v,
        }
        .validated()
    }

    /// Zero covariance around `mean`.
    pub fn point(mean: [f64; 6]) -> Result<Self> {
        Self::new(mean, [[0.0; 2]; 2], 0.0, 0.0, 0.0, 0.0)
    }

    /// `σ²·I₆`.
    pub fn isotropic(mean: [f64; 6], var: f64) -> Result<Self> {
        Self::new(mean, [[var, 0.0], [0.0, var]], var, var, var, var)
    }

    /// Checks finiteness, symmetry and positive semidefiniteness, clamping
    /// eigenvalues within the rounding floor.
    pub fn validated(mut self) -> Result<Self> {
        let rest = [self.var_psi, self.var_a, self.var_r, self.var_v];
        let mut all = self.mean.iter().chain(self.cov_pos.iter().flatten()).chain(rest.iter());
        if !all.all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite belief entry".into()));
        }
        let [[sxx, sxy], [syx, syy]] = self.cov_pos;
        let scale = sxx.abs().max(syy.abs()).max(sxy.abs()).max(1e-300);
        if (sxy - syx).abs() > 1e-12 * scale {
            return Err(Error::NotPositiveSemidefinite(format!(
                "position covariance is not symmetric: {sxy} vs {syx}"
            )));
        }
        let trace = self.trace().abs();
        let floor = -PSD_FLOOR * trace.max(f64::MIN_POSITIVE);
        for v in [&mut self.var_psi, &mut self.var_a, &mut self.var_r, &mut self.var_v] {
            if *v < floor {
                return Err(Error::NotPositiveSemidefinite(format!("negative variance {v}")));
            }
            *v = v.max(0.0);
        }
        let sxy = 0.5 * (sxy + syx);
        let (l1, l2, vec) = sym2_eigen(sxx, sxy, syy);
        if l2 < floor {
            return Err(Error::NotPositiveSemidefinite(format!(
                "position covariance eigenvalue {l2} below floor {floor}"
            )));
        }
        if l2 < 0.0 {
            let (l1, l2) = (l1.max(0.0), 0.0);
            let (c, s) = vec;
            self.cov_pos = [
                [l1 * c * c + l2 * s * s, (l1 - l2) * c * s],
                [(l1 - l2) * c * s, l1 * s * s + l2 * c * c],
            ];
        } else {
            self.cov_pos = [[sxx, sxy], [sxy, syy]];
        }
        Ok(self)
    }

    /// Full 6×6 covariance.
    pub fn covariance(&self) -> [[f64; 6]; 6] {
        let mut c = [[0.0; 6]; 6];
        c[0][0] = self.cov_pos[0][0];
        c[0][1] = self.cov_pos[0][1];
        c[1][0] = self.cov_pos[1][0];
        c[1][1] = self.cov_pos[1][1];
        c[2][2] = self.var_psi;
        c[3][3] = self.var_a;
        c[4][4] = self.var_r;
        c[5][5] = self.var_v;
        c
    }

    pub fn trace(&self) -> f64 {
        self.cov_pos[0][0] + self.cov_pos[1][1] + self.var_psi + self.var_a + self.var_r + self.var_v
    }

    /// Same covariance, different mean.
    pub fn with_mean(&self, mean: [f64; 6]) -> Self {
        Self { mean, ..*self }
    }

    /// Multivariate normal density at `tau`.
    pub fn density(&self, tau: &[f64; 6]) -> Result<f64> {
        let [[sxx, sxy], [_, syy]] = self.cov_pos;
        let det_pos = sxx * syy - sxy * sxy;
        let diag = [self.var_psi, self.var_a, self.var_r, self.var_v];
        if det_pos <= 0.0 || diag.iter().any(|&v| v <= 0.0) {
            return Err(Error::SingularCovariance(format!(
                "det(Σ_P) = {det_pos}, variances = {diag:?}"
            )));
        }
        let d: Vec<f64> = tau.iter().zip(self.mean).map(|(t, m)| t - m).collect();
        let mut quad = (syy * d[0] * d[0] - 2.0 * sxy * d[0] * d[1] + sxx * d[1] * d[1]) / det_pos;
        for (k, v) in diag.iter().enumerate() {
            quad += d[k + 2] * d[k + 2] / v;
        }
        let det = det_pos * diag.iter().product::<f64>();
        let norm = ((2.0 * std::f64::consts::PI).powi(6) * det).sqrt();
        Ok((-0.5 * quad).exp() / norm)
    }

    /// Lower-triangular square root of the position block, jittered once by
    /// `1e-12·trace/6` if the plain factorisation fails.
    pub fn factor(&self) -> Result<BeliefFactor> {
        let try_factor = |jitter: f64| -> Option<[[f64; 2]; 2]> {
            let sxx = self.cov_pos[0][0] + jitter;
            let sxy = self.cov_pos[0][1];
            let syy = self.cov_pos[1][1] + jitter;
            if sxx < 0.0 || syy < 0.0 {
                return None;
            }
            let l11 = sxx.sqrt();
            let l21 = if l11 > 0.0 {
                sxy / l11
            } else if sxy.abs() <= 1e-15 * syy.max(1e-300) || sxy == 0.0 {
                0.0
            } else {
                return None;
            };
            let rem = syy - l21 * l21;
            if rem < -1e-14 * syy.max(1e-300) {
                return None;
            }
            Some([[l11, 0.0], [l21, rem.max(0.0).sqrt()]])
        };
        let pos = match try_factor(0.0) {
            Some(l) => l,
            None => {
                let jitter = 1e-12 * self.trace() / 6.0;
                try_factor(jitter).ok_or_else(|| {
                    Error::NotPositiveSemidefinite(format!(
                        "cannot factor position covariance {:?}",
                        self.cov_pos
                    ))
                })?
            }
        };
        Ok(BeliefFactor {
            mean: self.mean,
            pos,
            std: [
                self.var_psi.sqrt(),
                self.var_a.sqrt(),
                self.var_r.sqrt(),
                self.var_v.sqrt(),
            ],
        })
    }

    /// `n` raw parameter draws `μ + S·ξ`.
    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Result<Vec<[f64; 6]>> {
        let f = self.factor()?;
        Ok((0..n).map(|_| f.draw(rng)).collect())
    }
}

/// Square-root factor of a [`PursuerBelief`] covariance.
#[derive(Clone, Copy, Debug)]
pub struct BeliefFactor {
    mean: [f64; 6],
    pos: [[f64; 2]; 2],
    std: [f64; 4],
}

impl BeliefFactor {
    pub fn draw(&self, rng: &mut RngStream) -> [f64; 6] {
        let mut xi = [0.0; 6];
        for x in xi.iter_mut() {
            *x = rng.standard_normal();
        }
        self.map(&xi)
    }

    /// Maps a standard-normal vector through the factor.
    pub fn map(&self, xi: &[f64; 6]) -> [f64; 6] {
        let m = self.mean;
        [
            m[0] + self.pos[0][0] * xi[0],
            m[1] + self.pos[1][0] * xi[0] + self.pos[1][1] * xi[1],
            m[2] + self.std[0] * xi[2],
            m[3] + self.std[1] * xi[3],
            m[4] + self.std[2] * xi[4],
            m[5] + self.std[3] * xi[5],
        ]
    }
}

/// Maps a raw Gaussian draw onto admissible pursuer parameters.
///
/// The turn radius enters only through the circle geometry, so a negative draw
/// is folded to `|a|`. A draw with `R ≤ 0` or `v_P ≤ 0` describes a pursuer
/// that cannot reach anything and yields `None`.
pub fn admissible(raw: [f64; 6]) -> Option<[f64; 6]> {
    if raw[idx::RANGE] <= 0.0 || raw[idx::SPEED] <= 0.0 {
        return None;
    }
    let mut p = raw;
    p[idx::TURN_RADIUS] = p[idx::TURN_RADIUS].abs();
    Some(p)
}

/// Eigen-decomposition of `[[a, b], [b, c]]`: `(λ_max, λ_min, (cos, sin))`
/// where `(cos, sin)` is the eigenvector of `λ_max`.
fn sym2_eigen(a: f64, b: f64, c: f64) -> (f64, f64, (f64, f64)) {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (mid + rad, mid - rad, (angle.cos(), angle.sin()))
}

/// Gaussian CDF `F(x; μ, σ²)`. With `σ² = 0` it is the step `1(x ≥ μ)`.
pub fn gaussian_cdf(x: f64, mean: f64, var: f64) -> f64 {
    gaussian_cdf_generic(x, mean, var)
}

pub fn gaussian_cdf_generic<T: Real>(x: T, mean: T, var: T) -> T {
    if var.value() <= 0.0 {
        return if x.value() >= mean.value() {
            T::one()
        } else {
            T::zero()
        };
    }
    ((x - mean) / var.sqrt()).norm_cdf()
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`, by bisection on
/// the CDF to full double precision.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile needs p in (0, 1), got {p}")));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if gaussian_cdf(mid, 0.0, 1.0) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Reproducible random stream.
///
/// Substreams are derived deterministically: substream `k` of a stream with
/// seed `s` is a fresh ChaCha8 generator seeded with `splitmix64(s ^ mix(k))`,
/// so work split into fixed chunks gives identical results regardless of how
/// many workers process those chunks.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, k: u64) -> RngStream {
        let mixed = splitmix64(self.seed ^ splitmix64(k.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        RngStream::new(mixed)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    pub(crate) fn scenario() -> PursuerBelief {
        PursuerBelief::new(
            [0.0, 0.0, FRAC_PI_4, 0.2, 1.0, 2.0],
            [[0.025, 0.04], [0.04, 0.1]],
            0.2,
            0.005,
            0.1,
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn density_at_mean_of_standard_normal() {
        let b = PursuerBelief::isotropic([0.0; 6], 1.0).unwrap();
        let d = b.density(&[0.0; 6]).unwrap();
        assert!((d - (2.0 * PI).powi(-3)).abs() < 1e-15);
    }

    #[test]
    fn density_mode_and_radial_symmetry() {
        let b = PursuerBelief::isotropic([1.0, -1.0, 0.0, 0.2, 1.0, 2.0], 0.3).unwrap();
        let peak = b.density(&b.mean).unwrap();
        let mut a = b.mean;
        a[0] += 0.4;
        let mut c = b.mean;
        c[4] -= 0.4;
        let da = b.density(&a).unwrap();
        let dc = b.density(&c).unwrap();
        assert!(da >= 0.0 && da <= peak);
        assert!((da - dc).abs() < 1e-14 * peak);
    }

    #[test]
    fn singular_density_rejected() {
        let b = PursuerBelief::point([0.0; 6]).unwrap();
        assert!(matches!(b.density(&[0.0; 6]), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn zero_covariance_samples_equal_mean() {
        let b = PursuerBelief::point([1.0, 2.0, 0.3, 0.2, 1.0, 2.0]).unwrap();
        let mut rng = RngStream::new(7);
        for s in b.sample(&mut rng, 100).unwrap() {
            assert_eq!(s, b.mean);
        }
    }

    #[test]
    fn seeded_streams_repeat() {
        let b = scenario();
        let a = b.sample(&mut RngStream::new(11), 50).unwrap();
        let c = b.sample(&mut RngStream::new(11), 50).unwrap();
        assert_eq!(a, c);
        let d = b.sample(&mut RngStream::new(12), 50).unwrap();
        assert_ne!(a, d);
        let root = RngStream::new(3);
        assert_eq!(root.substream(4).next_u64(), root.substream(4).next_u64());
        assert_ne!(root.substream(4).next_u64(), root.substream(5).next_u64());
    }

    #[test]
    fn empirical_covariance_converges() {
        let b = scenario();
        let n = 1_000_000;
        let samples = b.sample(&mut RngStream::new(2024), n).unwrap();
        let mut mean = [0.0; 6];
        for s in &samples {
            for i in 0..6 {
                mean[i] += s[i] / n as f64;
            }
        }
        let mut cov = [[0.0; 6]; 6];
        for s in &samples {
            for i in 0..6 {
                for j in 0..6 {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n as f64 - 1.0);
                }
            }
        }
        let target = b.covariance();
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                diff += (cov[i][j] - target[i][j]).powi(2);
                norm += target[i][j].powi(2);
            }
        }
        assert!((diff / norm).sqrt() < 0.01, "relative Frobenius {}", (diff / norm).sqrt());
    }

    #[test]
    fn density_integrates_to_one() {
        // Importance sampling from a wider isotropic proposal.
        let b = PursuerBelief::new(
            [0.0, 0.0, 0.1, 0.2, 1.0, 2.0],
            [[0.02, 0.005], [0.005, 0.01]],
            0.01,
            0.004,
            0.02,
            0.03,
        )
        .unwrap();
        let s = 0.3f64;
        let mut rng = RngStream::new(5);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut x = b.mean;
            let mut q = 1.0;
            for v in x.iter_mut() {
                let xi = rng.standard_normal();
                *v += s * xi;
                q *= (-0.5 * xi * xi).exp() / ((2.0 * PI).sqrt() * s);
            }
            acc += b.density(&x).unwrap() / q;
        }
        let integral = acc / n as f64;
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-9, 0.01, 0.05, 0.25, 0.5, 0.9] {
            let q = normal_quantile(p).unwrap();
            assert!((gaussian_cdf(q, 0.0, 1.0) - p).abs() <= 1e-12 * p);
        }
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!(normal_quantile(0.0).is_err() && normal_quantile(1.0).is_err());
    }

    #[test]
    fn cdf_examples() {
        for var in [0.01, 1.0, 4.0] {
            assert!((gaussian_cdf(0.0, 0.0, var) - 0.5).abs() < 1e-15);
        }
        assert_eq!(gaussian_cdf(0.0, -0.1, 0.0), 1.0);
        assert_eq!(gaussian_cdf(0.0, 0.0, 0.0), 1.0);
        assert_eq!(gaussian_cdf(0.0, 0.1, 0.0), 0.0);
    }

    /// Φ(1) from the Maclaurin series of erf summed to convergence.
    #[test]
    fn cdf_matches_series_oracle() {
        fn erf_series(x: f64) -> f64 {
            let mut term = x;
            let mut sum = x;
            let mut n = 0.0;
            while term.abs() > 1e-18 {
                n += 1.0;
                term *= -x * x / n;
                sum += term / (2.0 * n + 1.0);
            }
            2.0 / PI.sqrt() * sum
        }
        for &(mu, var) in &[(0.0, 1.0), (2.0, 0.25), (-1.5, 9.0)] {
            for &k in &[-2.5, -1.0, -0.3, 0.0, 1.0, 1.7] {
                let x = mu + k * f64::sqrt(var);
                let oracle = 0.5 * (1.0 + erf_series(k / 2f64.sqrt()));
                assert!((gaussian_cdf(x, mu, var) - oracle).abs() <= 1e-7);
            }
        }
        let one_sigma = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
        assert!((one_sigma - 0.841_344_746).abs() < 1e-9);
        assert!((gaussian_cdf(1.3 + 0.5, 1.3, 0.25) - one_sigma).abs() <= 1e-7);
    }

    #[test]
    fn cdf_monotone_with_limits() {
        let mut last = 0.0;
        for i in -400..=400 {
            let p = gaussian_cdf(i as f64 * 0.05, 0.3, 2.0);
            assert!(p >= last);
            last = p;
        }
        assert!(gaussian_cdf(-1e3, 0.0, 1.0) < 1e-300);
        assert_eq!(gaussian_cdf(1e3, 0.0, 1.0), 1.0);
    }

    #[test]
    fn rounding_level_negative_eigenvalue_is_clamped() {
        let b = PursuerBelief::new(
            [0.0; 6],
            [[0.04, 0.02 + 1e-13], [0.02 + 1e-13, 0.01]],
            0.1,
            0.1,
            0.1,
            0.1,
        )
        .unwrap();
        let [[a, c], [_, d]] = b.cov_pos;
        assert!(a * d - c * c >= -1e-18);
        assert!(PursuerBelief::new([0.0; 6], [[0.01, 0.05], [0.05, 0.01]], 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn json_schema_is_strict() {
        let b = scenario();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"var_R\""));
        let back: PursuerBelief = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        let extra = s.replacen('{', "{\"extra\":1,", 1);
        assert!(serde_json::from_str::<PursuerBelief>(&extra).is_err());
    }

    #[test]
    fn admissible_mapping() {
        assert_eq!(admissible([0.0, 0.0, 0.0, -0.1, 1.0, 2.0]).unwrap()[3], 0.1);
        assert!(admissible([0.0, 0.0, 0.0, 0.1, -1.0, 2.0]).is_none());
        assert!(admissible([0.0, 0.0, 0.0, 0.1, 1.0, 0.0]).is_none());
    }
}
