//! Probability that the evader lies inside the true engagement zone.
//!
//! Four estimators share one contract: given a [`PursuerBelief`] and a known
//! evader state, return `P(z(Θ_P, Θ_E) ≤ 0)`.
//!
//! * Monte Carlo counts zone membership over belief draws.
//! * Linear propagates the belief through a first-order expansion of `z`
//!   about the mean and reads the Gaussian CDF at zero.
//! * Quadratic does the same with the exact first two moments of the
//!   second-order expansion.
//! * Neural evaluates the trained surrogate on the relative feature vector.
//!
//! The linear and quadratic estimators are generic over [`Real`], so the
//! planner differentiates them with respect to the evader state by passing
//! dual-valued evader coordinates.

use serde::{Deserialize, Serialize};

use crate::belief::{admissible, gaussian_cdf_generic, PursuerBelief, RngStream};
use crate::diff::{value_gradient_hessian_with, value_gradient_with, Dual, Real};
use crate::error::{Error, Result};
use crate::geom::{ez_value_generic, idx, EvaderState};
use crate::surrogate::{FeatureVector, MlpModel};

/// Monte Carlo samples per independently seeded chunk.
pub const MC_CHUNK: usize = 4096;
/// Default sample count for ground-truth labels.
pub const MC_LABEL_SAMPLES: usize = 100_000;
/// Default sample count for quick evaluation.
pub const MC_QUICK_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Linear,
    Quadratic,
    Nn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Linear => "linear",
            Method::Quadratic => "quadratic",
            Method::Nn => "nn",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(Method::Mc),
            "linear" => Ok(Method::Linear),
            "quadratic" => Ok(Method::Quadratic),
            "nn" => Ok(Method::Nn),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CspezEstimate {
    pub probability: f64,
    pub method: Method,
    /// Mean and variance of `z` under the local model (linear/quadratic).
    pub moments: Option<(f64, f64)>,
    /// Number of draws (Monte Carlo).
    pub n_samples: Option<usize>,
    /// A derivative was non-finite and the deterministic indicator was used.
    pub degraded: bool,
    /// The query lies outside the surrogate's training box.
    pub extrapolated: bool,
}

impl CspezEstimate {
    fn new(probability: f64, method: Method) -> Self {
        Self {
            probability,
            method,
            moments: None,
            n_samples: None,
            degraded: false,
            extrapolated: false,
        }
    }

    /// Binomial standard error of a Monte Carlo estimate.
    pub fn standard_error(&self) -> Option<f64> {
        self.n_samples
            .map(|n| (self.probability * (1.0 - self.probability) / n as f64).sqrt())
    }
}

/// Zone membership of one raw belief draw. Draws with a pursuer that cannot
/// move are outside; degenerate geometry counts as captured.
fn captured(raw: [f64; 6], evader: &[f64; 4]) -> bool {
    match admissible(raw) {
        None => false,
        Some(p) => match ez_value_generic(evader, &p) {
            Ok(z) => z <= 0.0,
            Err(_) => true,
        },
    }
}

/// Monte Carlo estimate from `n` sequential draws of `rng`.
pub fn mc_cspez(b: &PursuerBelief, e: &EvaderState, n: usize, rng: &mut RngStream) -> Result<CspezEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs n >= 1".into()));
    }
    let factor = b.factor()?;
    let ev = e.to_array();
    let hits = (0..n).filter(|_| captured(factor.draw(rng), &ev)).count();
    let mut est = CspezEstimate::new(hits as f64 / n as f64, Method::Mc);
    est.n_samples = Some(n);
    Ok(est)
}

/// Monte Carlo estimate split into [`MC_CHUNK`]-sized chunks, chunk `k` drawn
/// from `root.substream(k)`. The result depends only on `root` and `n`, not
/// on `workers`.
pub fn mc_cspez_chunked(
    b: &PursuerBelief,
    e: &EvaderState,
    n: usize,
    root: &RngStream,
    workers: usize,
) -> Result<CspezEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs n >= 1".into()));
    }
    let factor = b.factor()?;
    let ev = e.to_array();
    let chunks = n.div_ceil(MC_CHUNK);
    let count_chunk = |k: usize| -> usize {
        let mut rng = root.substream(k as u64);
        let len = MC_CHUNK.min(n - k * MC_CHUNK);
        (0..len).filter(|_| captured(factor.draw(&mut rng), &ev)).count()
    };
    let workers = workers.max(1).min(chunks);
    let hits: usize = if workers == 1 {
        (0..chunks).map(count_chunk).sum()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let count_chunk = &count_chunk;
                    s.spawn(move || (w..chunks).step_by(workers).map(count_chunk).sum::<usize>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
        })
    };
    let mut est = CspezEstimate::new(hits as f64 / n as f64, Method::Mc);
    est.n_samples = Some(n);
    Ok(est)
}

/// `gᵀ Σ g`.
pub fn quad_form<T: Real, const N: usize>(g: &[T; N], cov: &[[f64; N]; N]) -> T {
    let mut acc = T::zero();
    for i in 0..N {
        for j in 0..N {
            if cov[i][j] != 0.0 {
                acc += g[i] * g[j] * cov[i][j];
            }
        }
    }
    acc
}

/// Mean and variance of `z₀ + gᵀδ`, `δ ~ N(0, Σ)`.
pub fn linear_moments<T: Real, const N: usize>(z0: T, g: &[T; N], cov: &[[f64; N]; N]) -> (T, T) {
    (z0, quad_form(g, cov))
}

/// Exact mean and variance of `z₀ + gᵀδ + ½δᵀHδ`, `δ ~ N(0, Σ)`:
/// `μ = z₀ + ½ tr(HΣ)`, `σ² = gᵀΣg + ½ tr(HΣHΣ)`.
pub fn quadratic_moments<T: Real, const N: usize>(
    z0: T,
    g: &[T; N],
    h: &[[T; N]; N],
    cov: &[[f64; N]; N],
) -> (T, T) {
    let mut hs = [[T::zero(); N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut acc = T::zero();
            for k in 0..N {
                if cov[k][j] != 0.0 {
                    acc += h[i][k] * cov[k][j];
                }
            }
            hs[i][j] = acc;
        }
    }
    let mut tr = T::zero();
    let mut tr2 = T::zero();
    for i in 0..N {
        tr += hs[i][i];
        for j in 0..N {
            tr2 += hs[i][j] * hs[j][i];
        }
    }
    (z0 + tr * 0.5, quad_form(g, cov) + tr2 * 0.5)
}

fn lift1<T: Real>(e: &[T; 4]) -> [Dual<T, 6>; 4] {
    e.map(Dual::constant)
}

fn lift2<T: Real>(e: &[T; 4]) -> [Dual<Dual<T, 6>, 6>; 4] {
    e.map(|v| Dual::constant(Dual::constant(v)))
}

/// Mean and variance of `z` under the first-order model, generic in the
/// evader scalar so callers can differentiate through it.
pub fn linear_terms<T: Real>(b: &PursuerBelief, evader: &[T; 4]) -> Result<(T, T)> {
    let ev = lift1(evader);
    let mean = b.mean.map(T::cst);
    let (z, g) = value_gradient_with(|th| ez_value_generic(&ev, th), &mean)?;
    check_finite(z, &g)?;
    Ok(linear_moments(z, &g, &b.covariance()))
}

/// Mean and variance of `z` under the second-order model.
pub fn quadratic_terms<T: Real>(b: &PursuerBelief, evader: &[T; 4]) -> Result<(T, T)> {
    let ev = lift2(evader);
    let mean = b.mean.map(T::cst);
    let (z, g, h) = value_gradient_hessian_with(|th| ez_value_generic(&ev, th), &mean)?;
    check_finite(z, &g)?;
    if !h.iter().flatten().all(Real::is_finite) {
        return Err(Error::NonFinite("Hessian of z".into()));
    }
    Ok(quadratic_moments(z, &g, &h, &b.covariance()))
}

fn check_finite<T: Real>(z: T, g: &[T; 6]) -> Result<()> {
    if z.is_finite() && g.iter().all(Real::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("z = {:?}, gradient = {:?}", z.value(), g.map(|v| v.value()))))
    }
}

/// `P(z ≤ 0)` from moments, falling back to the deterministic indicator at
/// the mean when derivatives are unusable.
fn probability_from<T: Real>(b: &PursuerBelief, evader: &[T; 4], moments: Result<(T, T)>) -> Result<(T, bool)> {
    match moments {
        Ok((mu, var)) => Ok((gaussian_cdf_generic(T::zero(), mu, var), false)),
        Err(Error::NonFinite(_)) => {
            let z = ez_value_generic(evader, &b.mean.map(T::cst))?;
            let p = if z.value() <= 0.0 { T::one() } else { T::zero() };
            Ok((p, true))
        }
        Err(e) => Err(e),
    }
}

/// Linearised probability, generic in the evader scalar. The flag reports a
/// fallback to the deterministic indicator.
pub fn linear_probability<T: Real>(b: &PursuerBelief, evader: &[T; 4]) -> Result<(T, bool)> {
    probability_from(b, evader, linear_terms(b, evader))
}

/// Quadratic-model probability, generic in the evader scalar.
pub fn quadratic_probability<T: Real>(b: &PursuerBelief, evader: &[T; 4]) -> Result<(T, bool)> {
    probability_from(b, evader, quadratic_terms(b, evader))
}

pub fn linear_cspez(b: &PursuerBelief, e: &EvaderState) -> Result<CspezEstimate> {
    let ev = e.to_array();
    let terms = linear_terms(b, &ev);
    let moments = terms.as_ref().ok().copied();
    let (p, degraded) = probability_from(b, &ev, terms)?;
    let mut est = CspezEstimate::new(p, Method::Linear);
    est.moments = moments;
    est.degraded = degraded;
    Ok(est)
}

pub fn quadratic_cspez(b: &PursuerBelief, e: &EvaderState) -> Result<CspezEstimate> {
    let ev = e.to_array();
    let terms = quadratic_terms(b, &ev);
    let moments = terms.as_ref().ok().copied();
    let (p, degraded) = probability_from(b, &ev, terms)?;
    let mut est = CspezEstimate::new(p, Method::Quadratic);
    est.moments = moments;
    est.degraded = degraded;
    Ok(est)
}

pub fn nn_cspez(model: &MlpModel, b: &PursuerBelief, e: &EvaderState) -> Result<CspezEstimate> {
    let features = FeatureVector::build(b, e, model.frame());
    let p = model.predict(&features)?;
    let mut est = CspezEstimate::new(p, Method::Nn);
    est.extrapolated = !model.in_training_box(&features);
    Ok(est)
}

/// Dispatches to one estimator. `mc_n` and `rng` are used only by Monte
/// Carlo, `model` only by the neural estimator.
pub fn estimate(
    method: Method,
    b: &PursuerBelief,
    e: &EvaderState,
    model: Option<&MlpModel>,
    mc_n: usize,
    rng: &mut RngStream,
) -> Result<CspezEstimate> {
    match method {
        Method::Mc => mc_cspez(b, e, mc_n, rng),
        Method::Linear => linear_cspez(b, e),
        Method::Quadratic => quadratic_cspez(b, e),
        Method::Nn => {
            let model = model.ok_or_else(|| Error::Model("the nn method needs a trained model".into()))?;
            nn_cspez(model, b, e)
        }
    }
}

/// The deterministic zone indicator at the belief mean.
pub fn indicator_at_mean(b: &PursuerBelief, e: &EvaderState) -> Result<f64> {
    let z = ez_value_generic(&e.to_array(), &b.mean)?;
    Ok(if z <= 0.0 { 1.0 } else { 0.0 })
}

/// `z` at the belief mean.
pub fn z_at_mean(b: &PursuerBelief, e: &EvaderState) -> Result<f64> {
    ez_value_generic(&e.to_array(), &b.mean)
}

/// Range-mean shift helper used by monotonicity checks.
pub fn with_range_mean(b: &PursuerBelief, range: f64) -> PursuerBelief {
    let mut m = b.mean;
    m[idx::RANGE] = range;
    b.with_mean(m)
}
