//! Dense nonlinear programming interface and an augmented-Lagrangian solver.
//!
//! Problems have the form `min f(x)` subject to `h(x) = 0` and `g(x) ≤ 0`.
//! The solver minimises the Powell–Hestenes–Rockafellar augmented Lagrangian
//! `φ(x) = f + Σ λh + ½ρh² + Σ (max(0, μ + ρg)² − μ²)/2ρ` in an inner loop and
//! updates the multipliers in an outer loop. Each inner step minimises a
//! model of `φ` in which the constraints are linearised but the `max` is
//! kept, with a convexified Lagrangian Hessian as curvature. The Hessian is
//! either a finite-difference Jacobian of the Lagrangian gradient or a
//! damped BFGS approximation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values and dense derivatives at one point.
#[derive(Clone, Debug)]
pub struct NlpEval {
    pub f: f64,
    pub grad: Vec<f64>,
    pub eq: Vec<f64>,
    pub eq_jac: Vec<Vec<f64>>,
    pub ineq: Vec<f64>,
    pub ineq_jac: Vec<Vec<f64>>,
}

pub trait NlpProblem {
    fn n_vars(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<NlpEval>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Success,
    MaxIterations,
    TimeLimit,
    Stalled,
    NumericalFailure,
}

/// Source of the Lagrangian curvature in the inner model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Forward differences of the Lagrangian gradient, one extra evaluation
    /// per variable and inner iteration.
    FiniteDifference,
    /// Powell-damped BFGS updates.
    Bfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Constraint violation accepted at convergence.
    pub feas_tol: f64,
    /// Infinity norm of the Lagrangian gradient accepted at convergence.
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_init: f64,
    pub rho_max: f64,
    pub time_limit_s: f64,
    /// Cap on the infinity norm of a single step.
    pub max_step: f64,
    pub hessian: HessianMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            opt_tol: 1e-6,
            max_outer: 60,
            max_inner: 400,
            rho_init: 10.0,
            rho_max: 1e10,
            time_limit_s: 60.0,
            max_step: 2.0,
            hessian: HessianMode::FiniteDifference,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOutcome {
    pub x: Vec<f64>,
    pub status: SolverStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub max_violation: f64,
    pub kkt_residual: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
}

pub trait NlpSolver {
    fn solve(&self, problem: &dyn NlpProblem, x0: &[f64]) -> Result<SolverOutcome>;
}

/// Largest violation of `h = 0`, `g ≤ 0`.
pub fn max_violation(e: &NlpEval) -> f64 {
    let eq = e.eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    e.ineq.iter().fold(eq, |m, v| m.max(*v))
}

/// `∇f + Jₕᵀλ + J_gᵀμ`.
pub fn lagrangian_gradient(e: &NlpEval, lambda: &[f64], mu: &[f64]) -> Vec<f64> {
    let mut g = e.grad.clone();
    for (row, l) in e.eq_jac.iter().zip(lambda) {
        axpy(*l, row, &mut g);
    }
    for (row, m) in e.ineq_jac.iter().zip(mu) {
        if *m != 0.0 {
            axpy(*m, row, &mut g);
        }
    }
    g
}

/// Stationarity and complementarity residual for given multipliers.
pub fn kkt_residual(e: &NlpEval, lambda: &[f64], mu: &[f64]) -> f64 {
    let stat = norm_inf(&lagrangian_gradient(e, lambda, mu));
    let comp = e
        .ineq
        .iter()
        .zip(mu)
        .fold(0.0f64, |m, (g, u)| m.max(u.min(-g).abs()));
    stat.max(comp)
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `A x = b` for symmetric positive semidefinite `A` by Cholesky,
/// adding a growing multiple of the identity if the factorisation fails.
fn spd_solve(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let diag_max = a.diagonal().amax().max(1e-12);
    let rhs = DVector::from_column_slice(b);
    let mut shift = 0.0;
    for _ in 0..30 {
        let shifted = if shift == 0.0 {
            a.clone()
        } else {
            a + DMatrix::identity(n, n) * shift
        };
        if let Some(c) = shifted.cholesky() {
            let x = c.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x.as_slice().to_vec());
            }
        }
        shift = if shift == 0.0 { 1e-12 * diag_max } else { shift * 10.0 };
    }
    None
}

/// Replaces eigenvalues below `floor·max(1, |λ|max)` by that floor.
fn convexify(h: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(h);
    let top = eig.eigenvalues.amax().max(1.0);
    let floor = 1e-8 * top;
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

#[derive(Clone, Debug, Default)]
pub struct AugmentedLagrangian {
    pub options: SolverOptions,
}

struct State {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
}

impl State {
    fn merit(&self, e: &NlpEval) -> f64 {
        let mut phi = e.f;
        for (h, l) in e.eq.iter().zip(&self.lambda) {
            phi += l * h + 0.5 * self.rho * h * h;
        }
        for (g, m) in e.ineq.iter().zip(&self.mu) {
            let t = (m + self.rho * g).max(0.0);
            phi += (t * t - m * m) / (2.0 * self.rho);
        }
        phi
    }

    /// Multiplier estimates `λ + ρh`, `max(0, μ + ρg)` at a point.
    fn estimates(&self, e: &NlpEval) -> (Vec<f64>, Vec<f64>) {
        let l = e.eq.iter().zip(&self.lambda).map(|(h, l)| l + self.rho * h).collect();
        let m = e
            .ineq
            .iter()
            .zip(&self.mu)
            .map(|(g, m)| (m + self.rho * g).max(0.0))
            .collect();
        (l, m)
    }
}

impl AugmentedLagrangian {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

/// Forward-difference Hessian of the Lagrangian at fixed multipliers.
fn fd_hessian(
    problem: &dyn NlpProblem,
    x: &[f64],
    base: &[f64],
    lambda: &[f64],
    mu: &[f64],
    evals: &mut usize,
) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let step = 1e-7 * x[i].abs().max(1.0);
        for sign in [1.0, -1.0] {
            let mut xt = x.to_vec();
            xt[i] += sign * step;
            *evals += 1;
            if let Ok(et) = problem.evaluate(&xt) {
                let gt = lagrangian_gradient(&et, lambda, mu);
                if gt.iter().all(|v| v.is_finite()) {
                    for j in 0..n {
                        h[(j, i)] = sign * (gt[j] - base[j]) / step;
                    }
                    break;
                }
            }
        }
    }
    (&h + h.transpose()) * 0.5
}

impl NlpSolver for AugmentedLagrangian {
    fn solve(&self, problem: &dyn NlpProblem, x0: &[f64]) -> Result<SolverOutcome> {
        let o = &self.options;
        let n = problem.n_vars();
        if x0.len() != n {
            return Err(Error::InvalidArgument(format!("x0 has {} entries, expected {n}", x0.len())));
        }
        let start = Instant::now();
        let mut evals = 1usize;
        let mut x = x0.to_vec();
        let mut e = problem.evaluate(&x)?;
        let mut st = State {
            lambda: vec![0.0; e.eq.len()],
            mu: vec![0.0; e.ineq.len()],
            rho: o.rho_init,
        };
        let mut b = DMatrix::identity(n, n);
        let mut omega = 1.0 / st.rho;
        let mut eta = 0.1 / st.rho.powf(0.1);
        let mut inner_total = 0usize;
        let mut status = SolverStatus::MaxIterations;
        let mut outer = 0usize;
        let mut best: Option<(f64, Vec<f64>, NlpEval, Vec<f64>, Vec<f64>)> = None;

        'outer: while outer < o.max_outer {
            outer += 1;
            let mut stalled = 0;
            for _ in 0..o.max_inner {
                if start.elapsed().as_secs_f64() > o.time_limit_s {
                    status = SolverStatus::TimeLimit;
                    break 'outer;
                }
                let (lh, mh) = st.estimates(&e);
                let grad = lagrangian_gradient(&e, &lh, &mh);
                if norm_inf(&grad) <= omega {
                    break;
                }
                inner_total += 1;
                if o.hessian == HessianMode::FiniteDifference {
                    b = convexify(fd_hessian(problem, &x, &grad, &lh, &mh, &mut evals));
                }
                let Some(mut d) = model_step(&b, &e, &st, &grad) else {
                    status = SolverStatus::NumericalFailure;
                    break 'outer;
                };
                let dn = norm_inf(&d);
                if dn > o.max_step {
                    d.iter_mut().for_each(|v| *v *= o.max_step / dn);
                }
                let mut slope = dot(&grad, &d);
                if !(slope < 0.0) {
                    b = DMatrix::identity(n, n);
                    d = grad.iter().map(|g| -g).collect();
                    let dn = norm_inf(&d);
                    if dn > o.max_step {
                        d.iter_mut().for_each(|v| *v *= o.max_step / dn);
                    }
                    slope = dot(&grad, &d);
                }
                let phi0 = st.merit(&e);
                let mut alpha = 1.0;
                let mut accepted = None;
                for _ in 0..40 {
                    let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                    evals += 1;
                    if let Ok(et) = problem.evaluate(&xt) {
                        let phi = st.merit(&et);
                        if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * slope {
                            accepted = Some((xt, et));
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                let Some((xn, en)) = accepted else {
                    stalled += 1;
                    b = DMatrix::identity(n, n);
                    if stalled >= 3 {
                        break;
                    }
                    continue;
                };
                if o.hessian == HessianMode::Bfgs {
                    let (ln, mn) = st.estimates(&en);
                    let g_new = lagrangian_gradient(&en, &ln, &mn);
                    let g_old = lagrangian_gradient(&e, &ln, &mn);
                    let s: Vec<f64> = xn.iter().zip(&x).map(|(a, c)| a - c).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g_old).map(|(a, c)| a - c).collect();
                    bfgs_update(&mut b, &s, &y);
                }
                x = xn;
                e = en;
            }
            let (lh, mh) = st.estimates(&e);
            let viol = e
                .eq
                .iter()
                .map(|h| h.abs())
                .chain(e.ineq.iter().zip(&st.mu).map(|(g, m)| g.max(-m / st.rho)))
                .fold(0.0f64, f64::max);
            st.lambda = lh;
            st.mu = mh;
            let feas = max_violation(&e);
            let kkt = kkt_residual(&e, &st.lambda, &st.mu);
            let score = feas.max(1e-3 * kkt);
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, x.clone(), e.clone(), st.lambda.clone(), st.mu.clone()));
            }
            if feas <= o.feas_tol && kkt <= o.opt_tol {
                status = SolverStatus::Success;
                best = Some((score, x.clone(), e.clone(), st.lambda.clone(), st.mu.clone()));
                break;
            }
            if viol <= eta {
                eta = (eta / st.rho.powf(0.9)).max(0.1 * o.feas_tol);
                omega = (omega / st.rho).max(0.5 * o.opt_tol);
            } else {
                if st.rho >= o.rho_max {
                    status = SolverStatus::Stalled;
                    break;
                }
                st.rho = (st.rho * 10.0).min(o.rho_max);
                eta = (0.1 / st.rho.powf(0.1)).max(0.1 * o.feas_tol);
                omega = (1.0 / st.rho).max(0.5 * o.opt_tol);
            }
        }
        let (_, bx, be, bl, bm) = match best {
            Some(b) => b,
            None => (0.0, x.clone(), e.clone(), st.lambda.clone(), st.mu.clone()),
        };
        Ok(SolverOutcome {
            max_violation: max_violation(&be),
            kkt_residual: kkt_residual(&be, &bl, &bm),
            x: bx,
            status,
            outer_iterations: outer,
            inner_iterations: inner_total,
            evaluations: evals,
            eq_multipliers: bl,
            ineq_multipliers: bm,
        })
    }
}

fn add_outer(h: &mut DMatrix<f64>, row: &[f64], w: f64) {
    let n = row.len();
    for i in 0..n {
        if row[i] == 0.0 {
            continue;
        }
        let ri = w * row[i];
        for j in 0..n {
            h[(i, j)] += ri * row[j];
        }
    }
}

/// Minimises the augmented Lagrangian with linearised constraints and
/// curvature `b`:
///
/// `m(d) = ∇fᵀd + ½dᵀBd + Σ λ(h + Jd) + ½ρ(h + Jd)² + Σ max(0, μ + ρ(g + Gd))²/2ρ`.
///
/// The model is convex and piecewise quadratic, so a damped semismooth
/// Newton iteration finds its minimiser exactly once the active set settles.
/// `grad_phi` is `∇m(0)`, the gradient of the true augmented Lagrangian.
fn model_step(b: &DMatrix<f64>, e: &NlpEval, st: &State, grad_phi: &[f64]) -> Option<Vec<f64>> {
    let n = grad_phi.len();
    let rho = st.rho;
    let mut base = b.clone();
    for row in &e.eq_jac {
        add_outer(&mut base, row, rho);
    }
    let lin = |jac: &[Vec<f64>], d: &[f64]| -> Vec<f64> { jac.iter().map(|r| dot(r, d)).collect() };
    let value = |d: &[f64]| -> f64 {
        let dv = DVector::from_column_slice(d);
        let mut m = dot(&e.grad, d) + 0.5 * dv.dot(&(b * &dv));
        for ((h, l), jd) in e.eq.iter().zip(&st.lambda).zip(lin(&e.eq_jac, d)) {
            let r = h + jd;
            m += l * r + 0.5 * rho * r * r;
        }
        for ((g, mu), gd) in e.ineq.iter().zip(&st.mu).zip(lin(&e.ineq_jac, d)) {
            let t = (mu + rho * (g + gd)).max(0.0);
            m += t * t / (2.0 * rho);
        }
        m
    };
    let gradient = |d: &[f64]| -> (Vec<f64>, Vec<bool>) {
        let bd = b * DVector::from_column_slice(d);
        let mut gm: Vec<f64> = e.grad.iter().zip(bd.iter()).map(|(gf, v)| gf + v).collect();
        for ((h, l), row) in e.eq.iter().zip(&st.lambda).zip(&e.eq_jac) {
            axpy(l + rho * (h + dot(row, d)), row, &mut gm);
        }
        let mut active = Vec::with_capacity(e.ineq.len());
        for ((g, mu), row) in e.ineq.iter().zip(&st.mu).zip(&e.ineq_jac) {
            let t = mu + rho * (g + dot(row, d));
            active.push(t > 0.0);
            if t > 0.0 {
                axpy(t, row, &mut gm);
            }
        }
        (gm, active)
    };
    let scale = norm_inf(grad_phi).max(1e-300);
    let mut d = vec![0.0; n];
    let mut m_d = value(&d);
    for _ in 0..50 {
        let (gm, active) = gradient(&d);
        if norm_inf(&gm) <= 1e-10 * scale {
            break;
        }
        let mut h = base.clone();
        for (row, a) in e.ineq_jac.iter().zip(&active) {
            if *a {
                add_outer(&mut h, row, rho);
            }
        }
        let neg: Vec<f64> = gm.iter().map(|v| -v).collect();
        let step = spd_solve(&h, &neg)?;
        let slope = dot(&gm, &step);
        if !(slope < 0.0) {
            break;
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let dt: Vec<f64> = d.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
            let mt = value(&dt);
            if mt <= m_d + 1e-4 * alpha * slope {
                d = dt;
                m_d = mt;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Some(d)
}

/// Powell-damped BFGS update keeping `b` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &[f64], y: &[f64]) {
    let sv = DVector::from_column_slice(s);
    let yv = DVector::from_column_slice(y);
    let bs = &*b * &sv;
    let sbs = sv.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = sv.dot(&yv);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = &yv * theta + &bs * (1.0 - theta);
    let sr = sv.dot(&r);
    if !(sr > 1e-300) || !sr.is_finite() {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x² + y² s.t. x + y = 1, x ≥ 0.2 (inactive) → (0.5, 0.5).
    struct Toy;
    impl NlpProblem for Toy {
        fn n_vars(&self) -> usize {
            2
        }
        fn evaluate(&self, x: &[f64]) -> Result<NlpEval> {
            Ok(NlpEval {
                f: x[0] * x[0] + x[1] * x[1],
                grad: vec![2.0 * x[0], 2.0 * x[1]],
                eq: vec![x[0] + x[1] - 1.0],
                eq_jac: vec![vec![1.0, 1.0]],
                ineq: vec![0.2 - x[0]],
                ineq_jac: vec![vec![-1.0, 0.0]],
            })
        }
    }

    /// Rosenbrock with an active disc constraint x² + y² ≤ 1.
    struct Disc;
    impl NlpProblem for Disc {
        fn n_vars(&self) -> usize {
            2
        }
        fn evaluate(&self, x: &[f64]) -> Result<NlpEval> {
            let (a, b) = (x[0], x[1]);
            Ok(NlpEval {
                f: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                grad: vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
                eq: vec![],
                eq_jac: vec![],
                ineq: vec![a * a + b * b - 1.0],
                ineq_jac: vec![vec![2.0 * a, 2.0 * b]],
            })
        }
    }

    #[test]
    fn equality_constrained_quadratic() {
        let out = AugmentedLagrangian::default().solve(&Toy, &[3.0, -1.0]).unwrap();
        assert_eq!(out.status, SolverStatus::Success);
        assert!((out.x[0] - 0.5).abs() < 1e-6 && (out.x[1] - 0.5).abs() < 1e-6);
        assert!((out.eq_multipliers[0] + 1.0).abs() < 1e-5);
        assert!(out.ineq_multipliers[0].abs() < 1e-9);
    }

    #[test]
    fn rosenbrock_on_disc() {
        let out = AugmentedLagrangian::default().solve(&Disc, &[0.0, 0.0]).unwrap();
        assert_eq!(out.status, SolverStatus::Success);
        // Known optimum (0.7864, 0.6177).
        assert!((out.x[0] - 0.7864).abs() < 1e-3 && (out.x[1] - 0.6177).abs() < 1e-3);
        let e = Disc.evaluate(&out.x).unwrap();
        assert!(kkt_residual(&e, &out.eq_multipliers, &out.ineq_multipliers) <= 1e-6);
        assert!(max_violation(&e) <= 1e-7);
    }

    #[test]
    fn bfgs_mode_also_converges() {
        let solver = AugmentedLagrangian::new(SolverOptions {
            hessian: HessianMode::Bfgs,
            ..SolverOptions::default()
        });
        let out = solver.solve(&Disc, &[0.0, 0.0]).unwrap();
        assert_eq!(out.status, SolverStatus::Success);
        assert!((out.x[0] - 0.7864).abs() < 1e-3 && (out.x[1] - 0.6177).abs() < 1e-3);
    }

    #[test]
    fn convexify_floors_negative_curvature() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let c = convexify(h);
        let eig = SymmetricEigen::new(c);
        assert!(eig.eigenvalues.iter().all(|v| *v > 0.0));
        assert!((eig.eigenvalues.amax() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_start_length() {
        assert!(AugmentedLagrangian::default().solve(&Toy, &[1.0]).is_err());
    }
}
