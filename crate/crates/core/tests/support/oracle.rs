//! Brute-force curve-straight oracle.
//!
//! The pursuer flies an arc of swept angle `θ` on one turn circle and then a
//! straight line along its new heading. `F` is reachable after angle `θ` when
//! the heading points at `F`, i.e. the cross product `r(θ)` between heading
//! and `F − Q(θ)` vanishes with a positive dot product. The oracle scans `θ`
//! on a uniform grid, bisects every sign change and returns the shortest
//! `aθ + ‖F − Q(θ)‖` over both circles.

#![allow(dead_code)]

use std::f64::consts::TAU;

/// Point on the circle after turning `theta` and the heading there.
fn arc_state(p: [f64; 2], psi: f64, a: f64, sign: f64, theta: f64) -> ([f64; 2], [f64; 2]) {
    let c = [p[0] - sign * a * psi.sin(), p[1] + sign * a * psi.cos()];
    let h = psi + sign * theta;
    let q = [c[0] + sign * a * h.sin(), c[1] - sign * a * h.cos()];
    (q, [h.cos(), h.sin()])
}

fn residual(f: [f64; 2], p: [f64; 2], psi: f64, a: f64, sign: f64, theta: f64) -> (f64, f64, f64) {
    let (q, d) = arc_state(p, psi, a, sign, theta);
    let w = [f[0] - q[0], f[1] - q[1]];
    let cross = d[0] * w[1] - d[1] * w[0];
    let dot = d[0] * w[0] + d[1] * w[1];
    (cross, dot, (w[0] * w[0] + w[1] * w[1]).sqrt())
}

/// Shortest path over one side (`sign` = +1 left, −1 right), if any.
pub fn side_length(f: [f64; 2], p: [f64; 2], psi: f64, a: f64, sign: f64, grid: usize) -> Option<f64> {
    let c = [p[0] - sign * a * psi.sin(), p[1] + sign * a * psi.cos()];
    // Incremental rotation keeps the scan free of trigonometric calls.
    let step = TAU / grid as f64;
    let (cs, sn) = (step.cos(), step.sin() * sign);
    let mut d = [psi.cos(), psi.sin()];
    let mut best: Option<f64> = None;
    let mut prev = f64::NAN;
    let mut prev_theta = 0.0;
    for i in 0..=grid {
        let theta = i as f64 * step;
        // Q = C + a·(d rotated by −90° for left, +90° for right).
        let q = [c[0] + sign * a * d[1], c[1] - sign * a * d[0]];
        let w = [f[0] - q[0], f[1] - q[1]];
        let r = d[0] * w[1] - d[1] * w[0];
        if i > 0 && (r == 0.0 || prev.signum() != r.signum()) {
            if let Some(l) = refine(f, p, psi, a, sign, prev_theta, theta.min(TAU)) {
                best = Some(best.map_or(l, |b: f64| b.min(l)));
            }
        } else if i == 0 && r == 0.0 {
            let (_, dot, dist) = residual(f, p, psi, a, sign, 0.0);
            if dot >= 0.0 {
                best = Some(dist);
            }
        }
        prev = r;
        prev_theta = theta;
        d = [d[0] * cs - d[1] * sn, d[0] * sn + d[1] * cs];
        if i % 4096 == 0 {
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
            d = [d[0] / n, d[1] / n];
        }
    }
    best
}

fn refine(f: [f64; 2], p: [f64; 2], psi: f64, a: f64, sign: f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (rlo, _, _) = residual(f, p, psi, a, sign, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (rm, _, _) = residual(f, p, psi, a, sign, mid);
        if (rm < 0.0) == (rlo < 0.0) && rm != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let (_, dot, dist) = residual(f, p, psi, a, sign, theta);
    (dot > 0.0).then_some(a * theta.rem_euclid(TAU) + dist)
}

/// Shortest curve-straight length over both turn directions.
pub fn shortest_length(f: [f64; 2], p: [f64; 2], psi: f64, a: f64, grid: usize) -> Option<f64> {
    let l = side_length(f, p, psi, a, 1.0, grid);
    let r = side_length(f, p, psi, a, -1.0, grid);
    match (l, r) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    }
}

/// Distance from `f` to the nearer turn centre, in units of `a`.
pub fn clearance(f: [f64; 2], p: [f64; 2], psi: f64, a: f64) -> f64 {
    [1.0, -1.0]
        .iter()
        .map(|s| {
            let c = [p[0] - s * a * psi.sin(), p[1] + s * a * psi.cos()];
            ((f[0] - c[0]).powi(2) + (f[1] - c[1]).powi(2)).sqrt() / a
        })
        .fold(f64::INFINITY, f64::min)
}
