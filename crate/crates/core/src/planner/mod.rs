//! Minimum-time chance-constrained trajectory planning.
//!
//! The decision vector holds the B-spline control points followed by the
//! final time, `x = [c₁ₓ, c₁ᵧ, …, c_Nₓ, c_Nᵧ, t_f]`. At `N_s` equally spaced
//! samples of `[0, t_f]` the planner enforces the operating box, a speed band
//! just below the evader speed, turn-rate and curvature limits and the
//! probability bound `P ≤ ε` from the selected estimator; the spline must
//! start at `E₀` and end at `E_f`.
//!
//! The probability bound is imposed through an equivalent monotone transform
//! that does not saturate: for the Gaussian estimators `P ≤ ε` is
//! `−μ_z − Φ⁻¹(ε)·σ_z ≤ 0`, and for the network it is
//! `logit(P) − logit(ε) ≤ 0`.

mod nlp;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::belief::{normal_quantile, PursuerBelief, RngStream};
use crate::cspez::{linear_probability, linear_terms, mc_cspez, quadratic_probability, quadratic_terms, Method};
use crate::diff::{Dual, Real};
use crate::error::{Error, Result};
use crate::geom::{ez_value_generic, EvaderState, Vec2};
use crate::spline::{basis_row, BasisRow, SplineTrajectory};
use crate::surrogate::{FeatureVector, MlpModel};

pub use nlp::{
    kkt_residual, lagrangian_gradient, max_violation, AugmentedLagrangian, NlpEval, NlpProblem, NlpSolver,
    HessianMode, SolverOptions, SolverOutcome, SolverStatus,
};

/// Contract tolerance on equalities and bounds.
pub const CONTRACT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

fn default_n_ctrl() -> usize {
    8
}
fn default_degree() -> usize {
    3
}
fn default_n_samples() -> usize {
    100
}
fn default_tf_factor() -> f64 {
    1.3
}
fn default_speed_band() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanProblem {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub evader_speed: f64,
    pub turn_rate_bounds: [f64; 2],
    pub curvature_bound: f64,
    pub region: Region,
    pub belief: PursuerBelief,
    pub method: Method,
    /// Probability bound; `1` removes the constraint.
    pub epsilon: f64,
    #[serde(default = "default_n_ctrl")]
    pub n_ctrl: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Initial final time as a multiple of the straight-line time.
    #[serde(default = "default_tf_factor")]
    pub initial_tf_factor: f64,
    /// Relative half-width of the speed band `[v_E(1 − band), v_E(1 + band)]`.
    #[serde(default = "default_speed_band")]
    pub speed_band: f64,
    #[serde(default)]
    pub initial_guess: InitialGuess,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// How the solver is started.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialGuess {
    /// Straight segment with `t_f = initial_tf_factor·‖E_f − E₀‖/v_E`.
    Straight,
    /// Two constant-speed circular arcs from start to goal, one bulging to
    /// each side of the chord by `sagitta·‖E_f − E₀‖`. Each is solved with
    /// initial penalty `rho_init` and the fastest successful plan is kept.
    Arcs { sagitta: f64, rho_init: f64 },
}

impl Default for InitialGuess {
    fn default() -> Self {
        InitialGuess::Arcs {
            sagitta: 0.18,
            rho_init: 1e6,
        }
    }
}

impl PlanProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.turn_rate_bounds[0] < self.turn_rate_bounds[1]) {
            return bad("turn-rate bounds must satisfy lb < ub".into());
        }
        if !(self.curvature_bound > 0.0) {
            return bad("curvature bound must be positive".into());
        }
        if !(self.evader_speed > 0.0) {
            return bad("evader speed must be positive".into());
        }
        if !(self.region.contains(self.start) && self.region.contains(self.goal)) {
            return bad("start and goal must lie in the operating region".into());
        }
        if self.degree == 0 || self.n_ctrl < self.degree + 1 {
            return bad(format!("need n_ctrl > degree >= 1, got {} and {}", self.n_ctrl, self.degree));
        }
        if self.n_samples < 2 {
            return bad("need at least two constraint samples".into());
        }
        if !(self.speed_band > 0.0 && self.speed_band < 1.0) {
            return bad("speed band must lie in (0, 1)".into());
        }
        if self.method == Method::Mc && self.epsilon < 1.0 {
            return bad("Monte Carlo has no usable gradient and cannot constrain the planner".into());
        }
        Ok(())
    }

    pub fn straight_distance(&self) -> f64 {
        (Vec2::from(self.goal) - Vec2::from(self.start)).norm()
    }

    pub fn n_vars(&self) -> usize {
        2 * self.n_ctrl + 1
    }

    pub fn has_cspez(&self) -> bool {
        self.epsilon < 1.0
    }

    fn v_floor(&self) -> f64 {
        1e-6 * self.evader_speed
    }

    /// Straight-line control points from start to goal with
    /// `t_f = factor·‖E_f − E₀‖/v_E`.
    pub fn straight_guess(&self) -> Result<SplineTrajectory> {
        let tf = self.initial_tf_factor * self.straight_distance() / self.evader_speed;
        SplineTrajectory::straight(self.start.into(), self.goal.into(), self.n_ctrl, self.degree, 0.0, tf.max(1e-3))
    }

    /// Spline tracing the circular arc from start to goal whose midpoint
    /// sits `h` to the left of the chord (right for negative `h`), flown at
    /// the evader speed.
    ///
    /// Control points lie on a concentric circle at equal angular steps
    /// `θ = arc/N_k`, centred so the curve starts and ends on the arc's
    /// radii. The radius is enlarged by the inverse of the basis-weighted
    /// mean of `cos(jθ)` so the curve passes through the arc's end points.
    pub fn arc_guess(&self, h: f64) -> Result<SplineTrajectory> {
        if h == 0.0 {
            return self.straight_guess();
        }
        let (a, b) = (Vec2::from(self.start), Vec2::from(self.goal));
        let d = b - a;
        let c = d.norm();
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("arc guess needs distinct start and goal".into()));
        }
        let left = Vec2::new(-d.y, d.x) * (1.0 / c);
        let s = h.abs();
        let r = (c * c / 4.0 + s * s) / (2.0 * s);
        let centre = (a + b) * 0.5 - left * (h.signum() * (r - s));
        let mut sweep = 2.0 * (c / (2.0 * r)).min(1.0).asin();
        if s > c / 2.0 {
            sweep = 2.0 * std::f64::consts::PI - sweep;
        }
        let nk = (self.n_ctrl - self.degree) as f64;
        let theta = sweep / nk;
        let lead = (self.degree as f64 - 1.0) / 2.0;
        let w = &basis_row(self.degree, self.n_ctrl, 0.0).values[0];
        let shrink: f64 = w.iter().enumerate().map(|(j, w)| w * ((j as f64 - lead) * theta).cos()).sum();
        let rp = r / shrink;
        let a0 = (a - centre).y.atan2((a - centre).x);
        // Travel clockwise for a left bulge, counterclockwise for a right one.
        let dir = -h.signum();
        let cps = (0..self.n_ctrl)
            .map(|i| centre + Vec2::unit(a0 + dir * theta * (i as f64 - lead)) * rp)
            .collect();
        SplineTrajectory::new(cps, self.degree, 0.0, r * sweep / self.evader_speed)
    }

    /// Initial trajectories tried by the planner, in order.
    pub fn initial_guesses(&self) -> Result<Vec<SplineTrajectory>> {
        match self.initial_guess {
            InitialGuess::Straight => Ok(vec![self.straight_guess()?]),
            InitialGuess::Arcs { sagitta, .. } => {
                let h = sagitta * self.straight_distance();
                Ok(vec![self.arc_guess(h)?, self.arc_guess(-h)?])
            }
        }
    }
}

pub fn to_decision(s: &SplineTrajectory) -> Vec<f64> {
    let mut x: Vec<f64> = s.control_points().iter().flat_map(|c| c.to_array()).collect();
    x.push(s.tf());
    x
}

pub fn from_decision(x: &[f64], degree: usize) -> Result<SplineTrajectory> {
    let n = (x.len() - 1) / 2;
    let cps = (0..n).map(|i| Vec2::new(x[2 * i], x[2 * i + 1])).collect();
    SplineTrajectory::new(cps, degree, 0.0, x[2 * n])
}

/// Flat-output quantities at one sample with derivatives with respect to
/// `[ẋ, ẏ, ẍ, ÿ]`.
struct LocalFlat {
    speed: Dual<f64, 4>,
    turn: Dual<f64, 4>,
    curv: Dual<f64, 4>,
    heading: Dual<f64, 4>,
}

fn local_flat(d1: [f64; 2], d2: [f64; 2], floor: f64) -> Result<LocalFlat> {
    let a = [Dual::variable(d1[0], 0), Dual::variable(d1[1], 1)];
    let b = [Dual::variable(d2[0], 2), Dual::variable(d2[1], 3)];
    let (speed, turn, curv) = crate::spline::flat_from_derivs(a, b, floor)?;
    Ok(LocalFlat {
        speed,
        turn,
        curv,
        heading: a[1].atan2(a[0]),
    })
}

struct SampleGeom {
    p: [f64; 2],
    d1: [f64; 2],
    d2: [f64; 2],
}

/// Which monotone transform of the probability is constrained.
enum Bound {
    None,
    Gaussian { quadratic: bool, q: f64 },
    Logit { model_logit: f64 },
}

/// The trajectory problem as a dense NLP.
pub struct TrajectoryNlp<'a> {
    problem: &'a PlanProblem,
    model: Option<&'a MlpModel>,
    rows: Vec<BasisRow>,
    bound: Bound,
}

/// Per-sample inequality count: box (4), probability (0 or 1), speed (2),
/// turn rate (2), curvature (2).
pub fn ineq_per_sample(problem: &PlanProblem) -> usize {
    10 + usize::from(problem.has_cspez())
}

impl<'a> TrajectoryNlp<'a> {
    pub fn new(problem: &'a PlanProblem, model: Option<&'a MlpModel>) -> Result<Self> {
        problem.validate()?;
        let bound = if !problem.has_cspez() {
            Bound::None
        } else {
            match problem.method {
                Method::Linear | Method::Quadratic => Bound::Gaussian {
                    quadratic: problem.method == Method::Quadratic,
                    q: normal_quantile(problem.epsilon)?,
                },
                Method::Nn => {
                    if model.is_none() {
                        return Err(Error::Model("the nn method needs a trained model".into()));
                    }
                    Bound::Logit {
                        model_logit: (problem.epsilon / (1.0 - problem.epsilon)).ln(),
                    }
                }
                Method::Mc => unreachable!("rejected by validate"),
            }
        };
        let ns = problem.n_samples;
        let rows = (0..ns)
            .map(|s| basis_row(problem.degree, problem.n_ctrl, s as f64 / (ns - 1) as f64))
            .collect();
        Ok(Self {
            problem,
            model,
            rows,
            bound,
        })
    }

    /// Sample times for a given final time.
    pub fn sample_times(&self, tf: f64) -> Vec<f64> {
        let ns = self.problem.n_samples;
        (0..ns).map(|s| tf * s as f64 / (ns - 1) as f64).collect()
    }

    pub fn basis_rows(&self) -> &[BasisRow] {
        &self.rows
    }

    fn geom(&self, x: &[f64], s: usize) -> SampleGeom {
        let nc = self.problem.n_ctrl;
        let cps: Vec<[f64; 2]> = (0..nc).map(|i| [x[2 * i], x[2 * i + 1]]).collect();
        let [p, d1, d2] = crate::spline::combine(&self.rows[s], &cps, 1.0 / x[2 * nc]);
        SampleGeom { p, d1, d2 }
    }

    /// Gradient of a sample quantity with respect to the decision vector,
    /// given its partials with respect to position and `[ẋ, ẏ, ẍ, ÿ]`.
    fn chain(&self, s: usize, tf: f64, g: &SampleGeom, dp: [f64; 2], dl: [f64; 4]) -> Vec<f64> {
        let nv = self.problem.n_vars();
        let row = &self.rows[s];
        let mut out = vec![0.0; nv];
        for j in 0..=self.problem.degree {
            let i = row.first + j;
            let (w0, w1, w2) = (row.values[0][j], row.values[1][j] / tf, row.values[2][j] / (tf * tf));
            out[2 * i] += dp[0] * w0 + dl[0] * w1 + dl[2] * w2;
            out[2 * i + 1] += dp[1] * w0 + dl[1] * w1 + dl[3] * w2;
        }
        out[nv - 1] = -(dl[0] * g.d1[0] + dl[1] * g.d1[1]) / tf - 2.0 * (dl[2] * g.d2[0] + dl[3] * g.d2[1]) / tf;
        out
    }

    /// Transformed probability constraint and its gradient with respect to
    /// the evader `[x, y, ψ]` at every sample.
    fn bound_values(&self, states: &[[f64; 3]]) -> Result<Vec<(f64, [f64; 3])>> {
        let p = self.problem;
        match self.bound {
            Bound::None => Ok(Vec::new()),
            Bound::Gaussian { quadratic, q } => states
                .iter()
                .map(|st| gaussian_bound(&p.belief, *st, p.evader_speed, quadratic, q))
                .collect(),
            Bound::Logit { model_logit } => {
                let model = self.model.expect("checked in new");
                let frame = model.frame();
                let jac = FeatureVector::evader_jacobian(&p.belief, frame);
                let rows: Vec<_> = states
                    .iter()
                    .map(|st| {
                        let e = EvaderState {
                            position: Vec2::new(st[0], st[1]),
                            heading: st[2],
                            speed: p.evader_speed,
                        };
                        FeatureVector::build(&p.belief, &e, frame).0
                    })
                    .collect();
                let (logits, grads) = model.logit_batch_with_gradient(&rows)?;
                Ok(logits
                    .into_iter()
                    .zip(grads)
                    .map(|(l, g)| {
                        let mut d = [0.0; 3];
                        for (f, jr) in jac.iter().enumerate() {
                            for k in 0..3 {
                                d[k] += g[f] * jr[k];
                            }
                        }
                        (l - model_logit, d)
                    })
                    .collect())
            }
        }
    }
}

/// `−μ_z − q·σ_z` and its evader gradient. Falls back to `−z` at the mean
/// when the moments are not differentiable.
fn gaussian_bound(b: &PursuerBelief, st: [f64; 3], speed: f64, quadratic: bool, q: f64) -> Result<(f64, [f64; 3])> {
    let e = [
        Dual::<f64, 3>::variable(st[0], 0),
        Dual::variable(st[1], 1),
        Dual::variable(st[2], 2),
        Dual::constant(speed),
    ];
    let terms = if quadratic {
        quadratic_terms(b, &e)
    } else {
        linear_terms(b, &e)
    };
    let g = match terms {
        Ok((mu, var)) if var.re > 1e-300 => -mu - var.sqrt() * q,
        Ok((mu, _)) => -mu,
        Err(Error::NonFinite(_)) | Err(Error::DegenerateGeometry(_)) => {
            let z = ez_value_generic(&e, &b.mean.map(Dual::constant))?;
            -z
        }
        Err(err) => return Err(err),
    };
    let d = g.du.map(|v| if v.is_finite() { v } else { 0.0 });
    if !g.re.is_finite() {
        return Err(Error::NonFinite("probability constraint".into()));
    }
    Ok((g.re, d))
}

impl NlpProblem for TrajectoryNlp<'_> {
    fn n_vars(&self) -> usize {
        self.problem.n_vars()
    }

    fn evaluate(&self, x: &[f64]) -> Result<NlpEval> {
        let p = self.problem;
        let nv = p.n_vars();
        if x.len() != nv {
            return Err(Error::InvalidArgument("decision vector has the wrong length".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("decision vector".into()));
        }
        let tf = x[nv - 1];
        if !(tf > 1e-6) {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {tf}")));
        }
        let ns = p.n_samples;
        let geoms: Vec<SampleGeom> = (0..ns).map(|s| self.geom(x, s)).collect();
        let flats: Vec<LocalFlat> = geoms
            .iter()
            .map(|g| local_flat(g.d1, g.d2, p.v_floor()))
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; nv];
        grad[nv - 1] = 1.0;
        let mut eq = Vec::with_capacity(4);
        let mut eq_jac = Vec::with_capacity(4);
        for (s, target) in [(0, p.start), (ns - 1, p.goal)] {
            for c in 0..2 {
                eq.push(geoms[s].p[c] - target[c]);
                let mut dp = [0.0; 2];
                dp[c] = 1.0;
                eq_jac.push(self.chain(s, tf, &geoms[s], dp, [0.0; 4]));
            }
        }

        let states: Vec<[f64; 3]> = geoms
            .iter()
            .zip(&flats)
            .map(|(g, f)| [g.p[0], g.p[1], f.heading.re])
            .collect();
        let bounds = self.bound_values(&states)?;

        let per = ineq_per_sample(p);
        let mut ineq = Vec::with_capacity(ns * per);
        let mut ineq_jac = Vec::with_capacity(ns * per);
        let (ve, band) = (p.evader_speed, p.speed_band);
        let u_scale = p.turn_rate_bounds[0].abs().max(p.turn_rate_bounds[1].abs()).max(1e-12);
        let k_scale = p.curvature_bound;
        for s in 0..ns {
            let g = &geoms[s];
            let f = &flats[s];
            for c in 0..2 {
                let mut dp = [0.0; 2];
                dp[c] = -1.0;
                ineq.push(p.region.min[c] - g.p[c]);
                ineq_jac.push(self.chain(s, tf, g, dp, [0.0; 4]));
                dp[c] = 1.0;
                ineq.push(g.p[c] - p.region.max[c]);
                ineq_jac.push(self.chain(s, tf, g, dp, [0.0; 4]));
            }
            if let Some((val, d)) = bounds.get(s) {
                let dl = f.heading.du.map(|h| d[2] * h);
                ineq.push(*val);
                ineq_jac.push(self.chain(s, tf, g, [d[0], d[1]], dl));
            }
            let scaled = |q: &Dual<f64, 4>, sign: f64, offset: f64, scale: f64| {
                ((sign * q.re - offset) / scale, q.du.map(|v| sign * v / scale))
            };
            for (val, dl) in [
                scaled(&f.speed, 1.0, ve * (1.0 + band), ve),
                scaled(&f.speed, -1.0, -ve * (1.0 - band), ve),
                scaled(&f.turn, 1.0, p.turn_rate_bounds[1], u_scale),
                scaled(&f.turn, -1.0, -p.turn_rate_bounds[0], u_scale),
                scaled(&f.curv, 1.0, p.curvature_bound, k_scale),
                scaled(&f.curv, -1.0, p.curvature_bound, k_scale),
            ] {
                ineq.push(val);
                ineq_jac.push(self.chain(s, tf, g, [0.0; 2], dl));
            }
        }
        Ok(NlpEval {
            f: tf,
            grad,
            eq,
            eq_jac,
            ineq,
            ineq_jac,
        })
    }
}

/// Probability from the selected estimator at one evader state.
pub fn probability_at(
    method: Method,
    belief: &PursuerBelief,
    model: Option<&MlpModel>,
    e: &EvaderState,
) -> Result<f64> {
    match method {
        Method::Linear => Ok(linear_probability(belief, &e.to_array())?.0),
        Method::Quadratic => Ok(quadratic_probability(belief, &e.to_array())?.0),
        Method::Nn => {
            let m = model.ok_or_else(|| Error::Model("the nn method needs a trained model".into()))?;
            m.predict(&FeatureVector::build(belief, e, m.frame()))
        }
        Method::Mc => Err(Error::InvalidArgument("use validate for Monte Carlo".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub turn_rate: f64,
    pub curvature: f64,
    /// Selected estimator's probability (absent when unconstrained).
    pub cspez: Option<f64>,
}

/// Worst residual of each constraint family, recomputed from the
/// trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub endpoint: f64,
    pub region: f64,
    /// `max P − ε`.
    pub cspez_excess: f64,
    /// `max |v − v_E|/v_E`.
    pub speed_rel_dev: f64,
    pub turn_rate: f64,
    pub curvature: f64,
}

impl Residuals {
    /// Whether the planning contract holds.
    pub fn within_contract(&self, speed_band: f64) -> bool {
        self.endpoint <= CONTRACT_TOL
            && self.region <= CONTRACT_TOL
            && self.cspez_excess <= CONTRACT_TOL
            && self.speed_rel_dev <= speed_band + CONTRACT_TOL
            && self.turn_rate <= CONTRACT_TOL
            && self.curvature <= CONTRACT_TOL
    }
}

/// Samples the trajectory at `times` and measures every constraint.
pub fn measure(
    problem: &PlanProblem,
    model: Option<&MlpModel>,
    traj: &SplineTrajectory,
    times: &[f64],
) -> Result<(Vec<SampleRecord>, Residuals)> {
    let mut res = Residuals {
        cspez_excess: f64::NEG_INFINITY,
        ..Residuals::default()
    };
    let start = traj.eval(traj.t0())?;
    let end = traj.eval(traj.tf())?;
    res.endpoint = (start - problem.start.into()).norm().max((end - problem.goal.into()).norm());
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let f = traj.flat_outputs(t, problem.v_floor())?;
        let d1 = traj.eval_d1(t)?;
        let heading = d1.y.atan2(d1.x);
        let pos = f.position.to_array();
        for c in 0..2 {
            res.region = res
                .region
                .max(problem.region.min[c] - pos[c])
                .max(pos[c] - problem.region.max[c]);
        }
        let cspez = if problem.has_cspez() {
            let e = EvaderState {
                position: f.position,
                heading,
                speed: problem.evader_speed,
            };
            let pr = probability_at(problem.method, &problem.belief, model, &e)?;
            res.cspez_excess = res.cspez_excess.max(pr - problem.epsilon);
            Some(pr)
        } else {
            None
        };
        let [lb, ub] = problem.turn_rate_bounds;
        res.speed_rel_dev = res
            .speed_rel_dev
            .max((f.speed - problem.evader_speed).abs() / problem.evader_speed);
        res.turn_rate = res.turn_rate.max(f.turn_rate - ub).max(lb - f.turn_rate);
        res.curvature = res.curvature.max(f.curvature.abs() - problem.curvature_bound);
        out.push(SampleRecord {
            t,
            position: pos,
            heading,
            speed: f.speed,
            turn_rate: f.turn_rate,
            curvature: f.curvature,
            cspez,
        });
    }
    if !problem.has_cspez() {
        res.cspez_excess = 0.0;
    }
    Ok((out, res))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub method: Method,
    pub epsilon: f64,
    pub trajectory: SplineTrajectory,
    pub tf: f64,
    pub status: SolverStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub residuals: Residuals,
    pub feasible: bool,
    pub samples: Vec<SampleRecord>,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub wall_time_s: f64,
}

impl PlanResult {
    pub fn is_success(&self) -> bool {
        self.status == SolverStatus::Success && self.feasible
    }
}

/// Plans with the in-repo augmented-Lagrangian solver. The time limit is
/// shared evenly between the initial guesses.
pub fn plan(problem: &PlanProblem, model: Option<&MlpModel>) -> Result<PlanResult> {
    let mut o = problem.solver;
    if let InitialGuess::Arcs { rho_init, .. } = problem.initial_guess {
        o.rho_init = rho_init;
        o.time_limit_s /= 2.0;
    }
    plan_with(problem, model, &AugmentedLagrangian::new(o))
}

/// Plans with any [`NlpSolver`] from each initial guess and keeps the
/// fastest successful result, or the least infeasible one if none succeeds.
pub fn plan_with(problem: &PlanProblem, model: Option<&MlpModel>, solver: &dyn NlpSolver) -> Result<PlanResult> {
    let clock = Instant::now();
    let mut best: Option<PlanResult> = None;
    for init in problem.initial_guesses()? {
        let r = plan_from(problem, model, solver, &init)?;
        let better = match &best {
            None => true,
            Some(b) => match (r.is_success(), b.is_success()) {
                (true, true) => r.tf < b.tf,
                (true, false) => true,
                (false, true) => false,
                (false, false) => r.max_violation < b.max_violation,
            },
        };
        if better {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one initial guess");
    best.wall_time_s = clock.elapsed().as_secs_f64();
    Ok(best)
}

/// Plans from a given initial trajectory.
pub fn plan_from(
    problem: &PlanProblem,
    model: Option<&MlpModel>,
    solver: &dyn NlpSolver,
    initial: &SplineTrajectory,
) -> Result<PlanResult> {
    let clock = Instant::now();
    let nlp = TrajectoryNlp::new(problem, model)?;
    let x0 = to_decision(initial);
    let out = solver.solve(&nlp, &x0)?;
    let traj = from_decision(&out.x, problem.degree)?;
    let times = nlp.sample_times(traj.tf());
    let (samples, residuals) = measure(problem, model, &traj, &times)?;
    Ok(PlanResult {
        method: problem.method,
        epsilon: problem.epsilon,
        tf: traj.tf(),
        trajectory: traj,
        status: out.status,
        outer_iterations: out.outer_iterations,
        inner_iterations: out.inner_iterations,
        evaluations: out.evaluations,
        kkt_residual: out.kkt_residual,
        max_violation: out.max_violation,
        feasible: residuals.within_contract(problem.speed_band),
        residuals,
        samples,
        eq_multipliers: out.eq_multipliers,
        ineq_multipliers: out.ineq_multipliers,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub mc_n: usize,
    pub seed: u64,
    /// Largest Monte Carlo probability along the path and where it occurs.
    pub max_mc: f64,
    pub max_mc_t: f64,
    /// Largest probability from the planning estimator at the fine sampling.
    pub max_estimate: Option<f64>,
    pub residuals: Residuals,
    pub mc: Vec<f64>,
}

/// Re-checks a plan at `factor × N_s` samples (at least 4×) with fresh
/// Monte Carlo estimates; sample `i` draws from substream `i` of `seed`.
pub fn validate(
    result: &PlanResult,
    problem: &PlanProblem,
    model: Option<&MlpModel>,
    mc_n: usize,
    seed: u64,
    factor: usize,
) -> Result<ValidationReport> {
    let traj = &result.trajectory;
    let n = problem.n_samples * factor.max(4);
    let times = traj.sample_times(n);
    let (samples, residuals) = measure(problem, model, traj, &times)?;
    let root = RngStream::new(seed);
    let mut mc = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        let e = EvaderState {
            position: s.position.into(),
            heading: s.heading,
            speed: problem.evader_speed,
        };
        mc.push(mc_cspez(&problem.belief, &e, mc_n, &mut root.substream(i as u64))?.probability);
    }
    let (imax, max_mc) = mc
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b });
    let max_estimate = samples
        .iter()
        .filter_map(|s| s.cspez)
        .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))));
    Ok(ValidationReport {
        n_samples: n,
        mc_n,
        seed,
        max_mc,
        max_mc_t: times[imax],
        max_estimate,
        residuals,
        mc,
    })
}
