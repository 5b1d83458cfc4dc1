//! Uniform B-spline trajectories and unicycle flat outputs.
//!
//! Knots are unclamped and uniform, `t_j = t₀ + (j − k)Δ` for
//! `j = 0, …, N_c + k`, with `N_k = N_c − k` internal spans and
//! `Δ = (t_f − t₀)/N_k`. With this layout every `t ∈ [t₀, t_f]` is covered
//! by exactly `k + 1` basis functions and the basis sums to one there. The
//! curve does not interpolate its end control points.
//!
//! Because the knots scale with `t_f`, evaluation is done at the normalized
//! parameter `τ = (t − t₀)/(t_f − t₀)`; the basis weights at fixed `τ` do
//! not depend on `t_f` and time derivatives pick up powers of `1/(t_f − t₀)`.

use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Relative slack when checking that `t` lies in `[t₀, t_f]`.
const DOMAIN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SplineTrajectory {
    control_points: Vec<Vec2>,
    degree: usize,
    t0: f64,
    tf: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplineRepr {
    degree: usize,
    t0: f64,
    tf: f64,
    n_internal_knots: usize,
    control_points: Vec<[f64; 2]>,
}

impl Serialize for SplineTrajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SplineRepr {
            degree: self.degree,
            t0: self.t0,
            tf: self.tf,
            n_internal_knots: self.n_internal_knots(),
            control_points: self.control_points.iter().map(|c| c.to_array()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SplineTrajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SplineRepr::deserialize(d)?;
        let s = SplineTrajectory::new(r.control_points.into_iter().map(Vec2::from).collect(), r.degree, r.t0, r.tf)
            .map_err(serde::de::Error::custom)?;
        if s.n_internal_knots() != r.n_internal_knots {
            return Err(serde::de::Error::custom(format!(
                "n_internal_knots must equal control points minus degree ({})",
                s.n_internal_knots()
            )));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatOutputs {
    pub position: Vec2,
    pub speed: f64,
    pub turn_rate: f64,
    pub curvature: f64,
}

/// Nonzero basis values and their first two derivatives with respect to the
/// normalized parameter: functions `first ..= first + degree`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisRow {
    pub first: usize,
    pub values: [Vec<f64>; 3],
}

/// Normalized uniform knots `u_j = (j − k)/N_k`.
pub fn normalized_knots(degree: usize, n_ctrl: usize) -> Vec<f64> {
    let nk = (n_ctrl - degree) as f64;
    (0..=n_ctrl + degree)
        .map(|j| (j as f64 - degree as f64) / nk)
        .collect()
}

/// Knot span `μ` with `u_μ ≤ u < u_{μ+1}`, using the last span at `u = 1`.
fn span(degree: usize, n_ctrl: usize, u: f64) -> usize {
    let nk = n_ctrl - degree;
    let s = (u * nk as f64).floor();
    let s = if s < 0.0 { 0 } else { (s as usize).min(nk - 1) };
    degree + s
}

/// Basis functions and derivatives up to second order at normalized `u`,
/// by the triangular Cox–de Boor table and the degree-reduction recurrence
/// for derivatives.
pub fn basis_row(degree: usize, n_ctrl: usize, u: f64) -> BasisRow {
    let p = degree;
    let knots = normalized_knots(degree, n_ctrl);
    let i = span(degree, n_ctrl, u);
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[i + 1 - j];
        right[j] = knots[i + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let n = 2usize.min(p);
    let mut ders = [vec![0.0; p + 1], vec![0.0; p + 1], vec![0.0; p + 1]];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let (p_i, mut a) = (p as isize, [vec![0.0; p + 1], vec![0.0; p + 1]]);
    for r in 0..=p_i {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n as isize {
            let mut d = 0.0;
            let rk = r - k;
            let pk = p_i - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { -rk };
            let j2 = if r - 1 <= pk { k - 1 } else { p_i - r };
            for j in j1..=j2 {
                let (ju, rkj) = (j as usize, (rk + j) as usize);
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                d += a[s2][ju] * ndu[rkj][pk as usize];
            }
            if r <= pk {
                a[s2][k as usize] = -a[s1][(k - 1) as usize] / ndu[(pk + 1) as usize][r as usize];
                d += a[s2][k as usize] * ndu[r as usize][pk as usize];
            }
            ders[k as usize][r as usize] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut f = p as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1).take(n) {
        row.iter_mut().for_each(|v| *v *= f);
        f *= (p - k) as f64;
    }
    BasisRow { first: i - p, values: ders }
}

/// Recursive Cox–de Boor definition of `B_{i,k}(u)` on the normalized
/// knots, half-open spans (the last span is closed at `u = 1`).
pub fn basis_function(i: usize, degree: usize, n_ctrl: usize, u: f64) -> f64 {
    fn rec(knots: &[f64], i: usize, k: usize, u: f64, last: usize) -> f64 {
        if k == 0 {
            let (a, b) = (knots[i], knots[i + 1]);
            let end = knots[last + 1];
            let inside = if u >= end { i == last } else { a <= u && u < b };
            return if inside { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + k] - knots[i];
        if d1 > 0.0 {
            v += (u - knots[i]) / d1 * rec(knots, i, k - 1, u, last);
        }
        let d2 = knots[i + k + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + k + 1] - u) / d2 * rec(knots, i + 1, k - 1, u, last);
        }
        v
    }
    let knots = normalized_knots(degree, n_ctrl);
    rec(&knots, i, degree, u, n_ctrl - 1)
}

/// Position, first and second time derivatives from a basis row, generic
/// in the control-point scalar. `inv_span = 1/(t_f − t₀)`.
pub fn combine<T: Real>(row: &BasisRow, cps: &[[T; 2]], inv_span: T) -> [[T; 2]; 3] {
    let mut out = [[T::zero(); 2]; 3];
    for (d, vals) in row.values.iter().enumerate() {
        for (j, &w) in vals.iter().enumerate() {
            if w != 0.0 {
                let c = cps[row.first + j];
                out[d][0] += c[0] * w;
                out[d][1] += c[1] * w;
            }
        }
    }
    for c in 0..2 {
        out[1][c] *= inv_span;
        out[2][c] = out[2][c] * inv_span * inv_span;
    }
    out
}

/// Speed, turn rate and curvature from velocity and acceleration.
pub fn flat_from_derivs<T: Real>(d1: [T; 2], d2: [T; 2], v_floor: f64) -> Result<(T, T, T)> {
    let v2 = d1[0] * d1[0] + d1[1] * d1[1];
    let v = v2.sqrt();
    if !(v.value() > v_floor) {
        return Err(Error::DegenerateVelocity {
            speed: v.value(),
            floor: v_floor,
        });
    }
    let u = (d1[0] * d2[1] - d1[1] * d2[0]) / v2;
    Ok((v, u, u / v))
}

impl SplineTrajectory {
    pub fn new(control_points: Vec<Vec2>, degree: usize, t0: f64, tf: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("spline degree must be at least 1".into()));
        }
        if control_points.len() < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "degree {degree} needs at least {} control points, got {}",
                degree + 1,
                control_points.len()
            )));
        }
        if !(t0.is_finite() && tf.is_finite() && tf > t0) {
            return Err(Error::InvalidArgument(format!("need t0 < tf, got [{t0}, {tf}]")));
        }
        if !control_points.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite control point".into()));
        }
        Ok(Self {
            control_points,
            degree,
            t0,
            tf,
        })
    }

    /// Control points spaced evenly on the segment from `a` to `b`.
    pub fn straight(a: Vec2, b: Vec2, n_ctrl: usize, degree: usize, t0: f64, tf: f64) -> Result<Self> {
        if n_ctrl < 2 {
            return Err(Error::InvalidArgument("need at least two control points".into()));
        }
        let cps = (0..n_ctrl)
            .map(|i| {
                let s = i as f64 / (n_ctrl - 1) as f64;
                a + (b - a) * s
            })
            .collect();
        Self::new(cps, degree, t0, tf)
    }

    pub fn control_points(&self) -> &[Vec2] {
        &self.control_points
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn n_internal_knots(&self) -> usize {
        self.control_points.len() - self.degree
    }

    pub fn knot_spacing(&self) -> f64 {
        (self.tf - self.t0) / self.n_internal_knots() as f64
    }

    /// Full knot vector in time units.
    pub fn knots(&self) -> Vec<f64> {
        let d = self.knot_spacing();
        (0..=self.control_points.len() + self.degree)
            .map(|j| self.t0 + (j as f64 - self.degree as f64) * d)
            .collect()
    }

    fn normalized(&self, t: f64) -> Result<f64> {
        let slack = DOMAIN_TOL * (self.tf - self.t0).max(1.0);
        if !(t >= self.t0 - slack && t <= self.tf + slack) {
            return Err(Error::OutsideDomain {
                t,
                t0: self.t0,
                tf: self.tf,
            });
        }
        Ok(((t - self.t0) / (self.tf - self.t0)).clamp(0.0, 1.0))
    }

    pub fn basis_at(&self, t: f64) -> Result<BasisRow> {
        Ok(basis_row(self.degree, self.control_points.len(), self.normalized(t)?))
    }

    fn derivs(&self, t: f64) -> Result<[[f64; 2]; 3]> {
        let row = self.basis_at(t)?;
        let cps: Vec<[f64; 2]> = self.control_points.iter().map(|c| c.to_array()).collect();
        Ok(combine(&row, &cps, 1.0 / (self.tf - self.t0)))
    }

    pub fn eval(&self, t: f64) -> Result<Vec2> {
        Ok(self.derivs(t)?[0].into())
    }

    pub fn eval_d1(&self, t: f64) -> Result<Vec2> {
        Ok(self.derivs(t)?[1].into())
    }

    pub fn eval_d2(&self, t: f64) -> Result<Vec2> {
        Ok(self.derivs(t)?[2].into())
    }

    pub fn flat_outputs(&self, t: f64, v_floor: f64) -> Result<FlatOutputs> {
        let [p, d1, d2] = self.derivs(t)?;
        let (speed, turn_rate, curvature) = flat_from_derivs(d1, d2, v_floor)?;
        Ok(FlatOutputs {
            position: p.into(),
            speed,
            turn_rate,
            curvature,
        })
    }

    /// `n ≥ 2` equally spaced times from `t₀` to `t_f` inclusive.
    pub fn sample_times(&self, n: usize) -> Vec<f64> {
        let n = n.max(2);
        (0..n)
            .map(|i| self.t0 + (self.tf - self.t0) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curvy() -> SplineTrajectory {
        let cps = [[-4.0, -4.0], [-3.0, -1.0], [-1.0, -2.0], [0.5, 1.0], [2.0, 0.5], [2.5, 3.0], [3.5, 3.0], [4.0, 4.0]];
        SplineTrajectory::new(cps.iter().map(|&c| c.into()).collect(), 3, 0.0, 11.0).unwrap()
    }

    #[test]
    fn constant_control_points() {
        let c = Vec2::new(1.5, -2.0);
        let s = SplineTrajectory::new(vec![c; 8], 3, 0.0, 5.0).unwrap();
        for t in s.sample_times(17) {
            assert!((s.eval(t).unwrap() - c).norm() < 1e-14);
            assert!(s.eval_d1(t).unwrap().norm() < 1e-12);
            assert!(s.eval_d2(t).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn straight_line_reproduced() {
        let s = SplineTrajectory::straight(Vec2::new(-4.0, -4.0), Vec2::new(4.0, 4.0), 8, 3, 0.0, 10.0).unwrap();
        for t in s.sample_times(33) {
            let p = s.eval(t).unwrap();
            assert!((p.x - p.y).abs() < 1e-12);
            let f = s.flat_outputs(t, 1e-6).unwrap();
            assert!(f.turn_rate.abs() < 1e-10 && f.curvature.abs() < 1e-10);
        }
        // Uniform spacing gives constant speed: length of control polygon over time.
        let v = s.flat_outputs(3.3, 1e-6).unwrap().speed;
        assert!((v - 8.0 * 2f64.sqrt() / 7.0 * 5.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let s = curvy();
        for t in [0.7, 2.9, 5.5, 8.1, 10.2] {
            let h = 1e-5;
            let fd1 = (s.eval(t + h).unwrap() - s.eval(t - h).unwrap()) * (0.5 / h);
            let fd2 = (s.eval_d1(t + h).unwrap() - s.eval_d1(t - h).unwrap()) * (0.5 / h);
            let d1 = s.eval_d1(t).unwrap();
            let d2 = s.eval_d2(t).unwrap();
            assert!((d1 - fd1).norm() <= 1e-6 * d1.norm().max(1.0));
            assert!((d2 - fd2).norm() <= 1e-6 * d2.norm().max(1.0));
        }
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        for (k, nc) in [(1, 4), (2, 5), (3, 8), (4, 9)] {
            for i in 0..=200 {
                let u = i as f64 / 200.0;
                let row = basis_row(k, nc, u);
                assert!((row.values[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.values[0].iter().all(|&b| b >= -1e-15));
                assert!(row.values[1].iter().sum::<f64>().abs() < 1e-9);
                for j in 0..=k {
                    let b = basis_function(row.first + j, k, nc, u);
                    assert!((b - row.values[0][j]).abs() < 1e-12, "k={k} u={u}");
                }
            }
        }
    }

    #[test]
    fn outside_domain_rejected() {
        let s = curvy();
        assert!(matches!(s.eval(-0.1), Err(Error::OutsideDomain { .. })));
        assert!(s.eval(11.5).is_err());
        assert!(s.eval(11.0).is_ok());
    }

    #[test]
    fn reversal_flips_turn_rate() {
        let s = curvy();
        let mut rev: Vec<Vec2> = s.control_points().to_vec();
        rev.reverse();
        let r = SplineTrajectory::new(rev, 3, 0.0, 11.0).unwrap();
        for t in [1.0, 4.0, 7.5] {
            let a = s.flat_outputs(t, 1e-6).unwrap();
            let b = r.flat_outputs(11.0 - t, 1e-6).unwrap();
            assert!((a.turn_rate + b.turn_rate).abs() < 1e-10);
            assert!((a.speed - b.speed).abs() < 1e-10);
        }
    }

    #[test]
    fn circle_curvature() {
        let (rad, n) = (2.0, 200);
        let cps: Vec<Vec2> = (0..n)
            .map(|i| Vec2::unit(2.0 * std::f64::consts::PI * i as f64 / (n - 3) as f64) * rad)
            .collect();
        let s = SplineTrajectory::new(cps, 3, 0.0, 1.0).unwrap();
        for t in s.sample_times(41) {
            let f = s.flat_outputs(t, 1e-9).unwrap();
            let r = f.position.norm();
            assert!((f.curvature - 1.0 / r).abs() < 1e-3 / r, "{} vs {}", f.curvature, 1.0 / r);
        }
    }

    #[test]
    fn local_support() {
        let s = curvy();
        let times = s.sample_times(101);
        for i in 0..8 {
            let mut cps = s.control_points().to_vec();
            cps[i] = cps[i] + Vec2::new(0.3, -0.2);
            let p = SplineTrajectory::new(cps, 3, 0.0, 11.0).unwrap();
            for &t in &times {
                let row = s.basis_at(t).unwrap();
                let changed = (p.eval(t).unwrap() - s.eval(t).unwrap()).norm() > 0.0;
                let supported = i >= row.first && i <= row.first + 3 && row.values[0][i - row.first] > 0.0;
                assert_eq!(changed, supported, "cp {i} t {t}");
            }
        }
    }

    #[test]
    fn degenerate_velocity() {
        let s = SplineTrajectory::new(vec![Vec2::new(1.0, 1.0); 6], 3, 0.0, 1.0).unwrap();
        assert!(matches!(s.flat_outputs(0.5, 1e-6), Err(Error::DegenerateVelocity { .. })));
    }

    #[test]
    fn json_round_trip() {
        let s = curvy();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"n_internal_knots\":5"));
        let back: SplineTrajectory = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        let bad = j.replace("\"n_internal_knots\":5", "\"n_internal_knots\":4");
        assert!(serde_json::from_str::<SplineTrajectory>(&bad).is_err());
    }

    #[test]
    fn knot_layout() {
        let s = curvy();
        let k = s.knots();
        assert_eq!(k.len(), 12);
        assert!((k[3] - 0.0).abs() < 1e-15 && (k[8] - 11.0).abs() < 1e-12);
        assert!((k[0] + 3.0 * 2.2).abs() < 1e-12);
    }
}
