use std::f64::consts::FRAC_PI_4;

use cspez_core::planner::{NlpProblem, SolverOptions};
use cspez_core::planner::{
    ineq_per_sample, plan, probability_at, to_decision, validate, InitialGuess, PlanProblem, PlanResult,
    Region, TrajectoryNlp,
};
use cspez_core::{EvaderState, Method, PursuerBelief};

fn scenario(method: Method, epsilon: f64) -> PlanProblem {
    PlanProblem {
        start: [-4.0, -4.0],
        goal: [4.0, 4.0],
        evader_speed: 1.0,
        turn_rate_bounds: [-1.0, 1.0],
        curvature_bound: 0.2,
        region: Region {
            min: [-5.0, -5.0],
            max: [5.0, 5.0],
        },
        belief: PursuerBelief::new([0.0, 0.0, FRAC_PI_4, 0.2, 1.0, 2.0], [[0.025, 0.04], [0.04, 0.1]], 0.2, 0.005, 0.1, 0.3)
            .unwrap(),
        method,
        epsilon,
        n_ctrl: 8,
        degree: 3,
        n_samples: 100,
        initial_tf_factor: 1.3,
        speed_band: 1e-4,
        initial_guess: InitialGuess::default(),
        solver: SolverOptions::default(),
    }
}

/// Recomputes every constraint from the returned trajectory at the solver's
/// sample times.
fn check_contract(p: &PlanProblem, r: &PlanResult) {
    let s = &r.trajectory;
    assert!((s.eval(0.0).unwrap() - p.start.into()).norm() <= 1e-6);
    assert!((s.eval(r.tf).unwrap() - p.goal.into()).norm() <= 1e-6);
    assert!(r.tf >= p.straight_distance() / p.evader_speed / (1.0 + p.speed_band) - 1e-9);
    for t in s.sample_times(p.n_samples) {
        let f = s.flat_outputs(t, 1e-6 * p.evader_speed).unwrap();
        let [x, y] = f.position.to_array();
        assert!(x >= p.region.min[0] - 1e-6 && x <= p.region.max[0] + 1e-6);
        assert!(y >= p.region.min[1] - 1e-6 && y <= p.region.max[1] + 1e-6);
        assert!(((f.speed - p.evader_speed) / p.evader_speed).abs() <= p.speed_band + 1e-6, "speed {}", f.speed);
        assert!(f.turn_rate >= p.turn_rate_bounds[0] - 1e-6 && f.turn_rate <= p.turn_rate_bounds[1] + 1e-6);
        assert!(f.curvature.abs() <= p.curvature_bound + 1e-6);
        if p.epsilon < 1.0 {
            let d1 = s.eval_d1(t).unwrap();
            let e = EvaderState::new(f.position, d1.y.atan2(d1.x), p.evader_speed).unwrap();
            let prob = probability_at(p.method, &p.belief, None, &e).unwrap();
            assert!(prob <= p.epsilon + 1e-6, "t={t}: {prob}");
        }
    }
}

/// `‖∇f + Jₕᵀλ + J_gᵀμ‖∞` and complementarity from a fresh evaluation.
fn stationarity(p: &PlanProblem, r: &PlanResult) -> (f64, f64) {
    let nlp = TrajectoryNlp::new(p, None).unwrap();
    let x = to_decision(&r.trajectory);
    let e = nlp.evaluate(&x).unwrap();
    let mut g = e.grad.clone();
    for (row, l) in e.eq_jac.iter().zip(&r.eq_multipliers) {
        for (gi, v) in g.iter_mut().zip(row) {
            *gi += l * v;
        }
    }
    for (row, m) in e.ineq_jac.iter().zip(&r.ineq_multipliers) {
        assert!(*m >= 0.0);
        for (gi, v) in g.iter_mut().zip(row) {
            *gi += m * v;
        }
    }
    let comp = e
        .ineq
        .iter()
        .zip(&r.ineq_multipliers)
        .fold(0.0f64, |a, (c, m)| a.max((m * c).abs()));
    (g.iter().fold(0.0f64, |a, v| a.max(v.abs())), comp)
}

#[test]
fn without_a_pursuer_the_path_is_straight() {
    let p = scenario(Method::Linear, 1.0);
    let r = plan(&p, None).unwrap();
    assert!(r.is_success(), "{:?}", r.status);
    let d = p.straight_distance() / p.evader_speed;
    assert!((r.tf - d).abs() <= 0.01 * d, "{} vs {d}", r.tf);
    check_contract(&p, &r);
}

#[test]
fn linear_plan_meets_its_contract() {
    let p = scenario(Method::Linear, 0.05);
    let r = plan(&p, None).unwrap();
    assert!(r.is_success(), "{:?}", r.status);
    check_contract(&p, &r);
    let (stat, comp) = stationarity(&p, &r);
    assert!(stat <= p.solver.opt_tol, "stationarity {stat:e}");
    assert!(comp <= 1e-6, "complementarity {comp:e}");

    let v = validate(&r, &p, None, 2000, 3, 4).unwrap();
    assert_eq!(v.n_samples, 400);
    assert!(v.max_estimate.unwrap() <= p.epsilon + 0.01, "{:?}", v.max_estimate);
    assert!(v.mc.iter().all(|m| (0.0..=1.0).contains(m)));
    assert_eq!(v, validate(&r, &p, None, 2000, 3, 4).unwrap());
}

#[test]
fn relaxing_the_threshold_never_slows_the_plan() {
    let tf: Vec<f64> = [0.01, 0.05, 0.5]
        .iter()
        .map(|&eps| {
            let r = plan(&scenario(Method::Linear, eps), None).unwrap();
            assert!(r.is_success());
            r.tf
        })
        .collect();
    assert!(tf[2] <= tf[1] && tf[1] <= tf[0], "{tf:?}");
}

#[test]
fn validation_sees_the_pursuer() {
    // The unconstrained straight line runs head-on through a tight belief.
    let mut p = scenario(Method::Linear, 1.0);
    (p.start, p.goal) = (p.goal, p.start);
    p.belief = PursuerBelief::new(p.belief.mean, [[1e-4, 0.0], [0.0, 1e-4]], 1e-3, 1e-5, 1e-3, 1e-3).unwrap();
    let r = plan(&p, None).unwrap();
    let v = validate(&r, &p, None, 2000, 1, 4).unwrap();
    assert!(v.max_mc > 0.99, "{}", v.max_mc);
    let at = r.trajectory.eval(v.max_mc_t).unwrap();
    assert!(at.norm() < 1.5, "{at:?}");

    // A line along the bottom edge is out of reach.
    let mut far = scenario(Method::Linear, 1.0);
    far.start = [-4.0, -4.8];
    far.goal = [4.0, -4.8];
    let r = plan(&far, None).unwrap();
    let v = validate(&r, &far, None, 2000, 1, 4).unwrap();
    assert!(v.max_mc < 1e-3, "{}", v.max_mc);
}

#[test]
fn constraint_rows_touch_only_supported_control_points() {
    let p = scenario(Method::Quadratic, 0.05);
    let nlp = TrajectoryNlp::new(&p, None).unwrap();
    let mut x = to_decision(&p.arc_guess(2.0).unwrap());
    x[5] += 0.3;
    let e = nlp.evaluate(&x).unwrap();
    let per = ineq_per_sample(&p);
    let nv = p.n_vars();
    let knots = cspez_core::spline::normalized_knots(p.degree, p.n_ctrl);
    for s in 0..p.n_samples {
        let u = s as f64 / (p.n_samples - 1) as f64;
        for row in &e.ineq_jac[s * per..(s + 1) * per] {
            let touched: Vec<usize> = (0..p.n_ctrl).filter(|&i| row[2 * i] != 0.0 || row[2 * i + 1] != 0.0).collect();
            assert!(touched.len() <= p.degree + 1, "sample {s}: {touched:?}");
            for i in touched {
                let inside = knots[i] <= u && (u < knots[i + p.degree + 1] || (u == 1.0 && i == p.n_ctrl - 1));
                assert!(inside, "sample {s} depends on control point {i}");
            }
            assert_eq!(row.len(), nv);
        }
    }
}

#[test]
fn invalid_problems_are_rejected() {
    let p = scenario(Method::Linear, 0.05);
    let mut bad = p.clone();
    bad.start = [6.0, 0.0];
    assert!(bad.validate().is_err());
    let mut bad = p;
    bad.epsilon = 0.0;
    assert!(bad.validate().is_err());
}
