//! Curve-straight intercept geometry and the engagement-zone function.
//!
//! A pursuer at `P` with heading `ψ_P` flies one arc of its minimum turn
//! radius `a` (left or right) and then a straight segment tangent to that arc.
//! The evader is assumed to hold its heading while the pursuer uses its whole
//! range `R`, so the intercept point is the projection
//! `F = E + (v_E/v_P)·R·[cos ψ_E, sin ψ_E]`. The engagement-zone function is
//! `z = L(F) − R` where `L` is the shorter of the two curve-straight lengths;
//! the evader is inside the zone when `z ≤ 0`.
//!
//! Everything is written once over [`Real`] so the same code yields values,
//! gradients and Hessians.

use std::f64::consts::TAU;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::error::{Error, Result};

/// Index of each pursuer parameter in the 6-vector `[x, y, ψ, a, R, v]`.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const HEADING: usize = 2;
    pub const TURN_RADIUS: usize = 3;
    pub const RANGE: usize = 4;
    pub const SPEED: usize = 5;
}

/// Squared distances below `a²·(1 − INSIDE_TOL)` count as strictly inside a
/// turn circle.
const INSIDE_TOL: f64 = 1e-12;
/// Arc angles in `(−ANGLE_TOL, 0)` are rounding noise around zero.
const ANGLE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// Scalar 2D cross product.
    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn unit(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl Add for Vec2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

/// One deterministic draw of the pursuer parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PursuerParams {
    pub position: Vec2,
    pub heading: f64,
    pub turn_radius: f64,
    pub range: f64,
    pub speed: f64,
}

impl PursuerParams {
    pub fn new(position: Vec2, heading: f64, turn_radius: f64, range: f64, speed: f64) -> Result<Self> {
        let p = Self {
            position,
            heading,
            turn_radius,
            range,
            speed,
        };
        p.validate()?;
        Ok(p)
    }

    /// From the parameter vector `[x, y, ψ, a, R, v]`.
    pub fn from_array(t: [f64; 6]) -> Result<Self> {
        Self::new(Vec2::new(t[0], t[1]), t[2], t[3], t[4], t[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.position.x,
            self.position.y,
            self.heading,
            self.turn_radius,
            self.range,
            self.speed,
        ]
    }

    fn validate(&self) -> Result<()> {
        let finite = self.to_array().iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(format!("non-finite pursuer parameters {self:?}")));
        }
        if self.turn_radius <= 0.0 || self.range <= 0.0 || self.speed <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pursuer needs a > 0, R > 0, v_P > 0, got a={}, R={}, v_P={}",
                self.turn_radius, self.range, self.speed
            )));
        }
        Ok(())
    }
}

/// Evader position, heading and speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaderState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
}

impl EvaderState {
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Result<Self> {
        if !position.is_finite() || !heading.is_finite() || !speed.is_finite() || speed < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "evader needs finite state and v_E >= 0, got {position:?}, ψ={heading}, v={speed}"
            )));
        }
        Ok(Self {
            position,
            heading,
            speed,
        })
    }

    /// `[x, y, ψ, v]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.position.x, self.position.y, self.heading, self.speed]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// +1 for counter-clockwise turns, −1 for clockwise.
    fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// A resolved curve-straight path to an intercept point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsPath {
    pub side: Side,
    /// Swept arc angle in `[0, 2π)`.
    pub arc_angle: f64,
    pub tangent_point: Vec2,
    pub length: f64,
}

/// Where the evader will be after the pursuer has used its whole range.
pub fn project_evader(e: &EvaderState, range: f64, pursuer_speed: f64) -> Result<Vec2> {
    if !(range.is_finite() && pursuer_speed.is_finite()) || pursuer_speed <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "projection needs finite R and v_P > 0, got R={range}, v_P={pursuer_speed}"
        )));
    }
    let nu = e.speed / pursuer_speed;
    Ok(e.position + Vec2::unit(e.heading) * (nu * range))
}

pub fn turn_center(p: &PursuerParams, side: Side) -> Vec2 {
    let [cx, cy] = turn_center_generic(
        [p.position.x, p.position.y],
        p.heading,
        p.turn_radius,
        side,
    );
    Vec2::new(cx, cy)
}

fn turn_center_generic<T: Real>(p: [T; 2], heading: T, a: T, side: Side) -> [T; 2] {
    let s = side.sign();
    [p[0] - a * heading.sin() * s, p[1] + a * heading.cos() * s]
}

/// Arc angle, tangent point and length of the curve-straight path on one side.
/// `None` when `F` lies strictly inside that side's turn circle.
pub(crate) fn side_path_generic<T: Real>(
    f: [T; 2],
    p: [T; 2],
    heading: T,
    a: T,
    side: Side,
) -> Option<(T, [T; 2], T)> {
    let c = turn_center_generic(p, heading, a, side);
    let v1 = [f[0] - c[0], f[1] - c[1]];
    let d2 = v1[0] * v1[0] + v1[1] * v1[1];
    let a2 = a * a;
    if d2.value() < a2.value() * (1.0 - INSIDE_TOL) {
        return None;
    }

    let alpha = a2 / d2;
    let radicand = a2 - a2 * alpha;
    let beta = if radicand.value() > 0.0 {
        radicand.sqrt()
    } else {
        T::zero()
    };
    let d = d2.sqrt();
    // Left turns take the clockwise perpendicular of v1, right turns the
    // counter-clockwise one.
    let perp = match side {
        Side::Left => [v1[1] / d, -v1[0] / d],
        Side::Right => [-v1[1] / d, v1[0] / d],
    };
    let v3 = [alpha * v1[0] + beta * perp[0], alpha * v1[1] + beta * perp[1]];
    let v4 = [p[0] - c[0], p[1] - c[1]];

    let cross = v4[0] * v3[1] - v4[1] * v3[0];
    let dot = v4[0] * v3[0] + v4[1] * v3[1];
    let raw = match side {
        Side::Left => cross.atan2(dot),
        Side::Right => (-cross).atan2(dot),
    };
    let theta = wrap_arc_angle(raw);

    let g = [c[0] + v3[0], c[1] + v3[1]];
    let straight = norm_or_zero([f[0] - g[0], f[1] - g[1]]);
    Some((theta, g, a * theta + straight))
}

fn wrap_arc_angle<T: Real>(theta: T) -> T {
    let v = theta.value();
    if v >= 0.0 {
        theta
    } else if v > -ANGLE_TOL {
        // Keep the derivative, pin the value to zero.
        theta - v
    } else {
        theta + TAU
    }
}

fn norm_or_zero<T: Real>(v: [T; 2]) -> T {
    let n2 = v[0] * v[0] + v[1] * v[1];
    if n2.value() > 0.0 {
        n2.sqrt()
    } else {
        T::zero()
    }
}

/// Curve-straight path to `f` on the requested side.
pub fn cs_path(f: Vec2, p: &PursuerParams, side: Side) -> Option<CsPath> {
    let (theta, g, length) = side_path_generic(
        [f.x, f.y],
        [p.position.x, p.position.y],
        p.heading,
        p.turn_radius,
        side,
    )?;
    Some(CsPath {
        side,
        arc_angle: theta,
        tangent_point: Vec2::new(g[0], g[1]),
        length,
    })
}

/// Shortest curve-straight length and the side achieving it. Ties go Left.
pub(crate) fn shortest_cs_length_generic<T: Real>(
    f: [T; 2],
    p: [T; 2],
    heading: T,
    a: T,
) -> Result<(T, Side)> {
    let dx = f[0].value() - p[0].value();
    let dy = f[1].value() - p[1].value();
    let a_abs = a.value().abs();
    if (dx * dx + dy * dy).sqrt() <= 1e-12 * a_abs {
        return Ok((T::zero(), Side::Left));
    }
    let left = side_path_generic(f, p, heading, a, Side::Left);
    let right = side_path_generic(f, p, heading, a, Side::Right);
    match (left, right) {
        (Some((_, _, l)), Some((_, _, r))) => {
            if l.value() <= r.value() {
                Ok((l, Side::Left))
            } else {
                Ok((r, Side::Right))
            }
        }
        (Some((_, _, l)), None) => Ok((l, Side::Left)),
        (None, Some((_, _, r))) => Ok((r, Side::Right)),
        (None, None) => Err(Error::DegenerateGeometry(format!(
            "F=({}, {}) inside both turn circles of P=({}, {}), a={}",
            f[0].value(),
            f[1].value(),
            p[0].value(),
            p[1].value(),
            a.value()
        ))),
    }
}

pub fn shortest_cs_length(f: Vec2, p: &PursuerParams) -> Result<f64> {
    if !f.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite intercept point {f:?}")));
    }
    let (l, _) = shortest_cs_length_generic(
        [f.x, f.y],
        [p.position.x, p.position.y],
        p.heading,
        p.turn_radius,
    )?;
    Ok(l)
}

/// Engagement-zone function over generic scalars.
///
/// `evader` is `[x, y, ψ, v]`, `pursuer` is `[x, y, ψ, a, R, v]`.
pub fn ez_value_generic<T: Real>(evader: &[T; 4], pursuer: &[T; 6]) -> Result<T> {
    let range = pursuer[idx::RANGE];
    let nu = evader[3] / pursuer[idx::SPEED];
    let reach = nu * range;
    let f = [
        evader[0] + reach * evader[2].cos(),
        evader[1] + reach * evader[2].sin(),
    ];
    let (l, _) = shortest_cs_length_generic(
        f,
        [pursuer[idx::X], pursuer[idx::Y]],
        pursuer[idx::HEADING],
        pursuer[idx::TURN_RADIUS],
    )?;
    Ok(l - range)
}

/// `z ≤ 0` iff the evader is inside the curve-straight engagement zone.
pub fn ez_value(e: &EvaderState, p: &PursuerParams) -> Result<f64> {
    ez_value_generic(&e.to_array(), &p.to_array())
}

/// Membership test for the deterministic engagement zone.
pub fn in_engagement_zone(e: &EvaderState, p: &PursuerParams) -> Result<bool> {
    Ok(ez_value(e, p)? <= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn pursuer(x: f64, y: f64, psi: f64, a: f64) -> PursuerParams {
        PursuerParams::new(Vec2::new(x, y), psi, a, 1.0, 2.0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let still = EvaderState::new(Vec2::new(0.0, 0.0), 0.0, 0.0).unwrap();
        assert_eq!(project_evader(&still, 3.0, 2.0).unwrap(), Vec2::new(0.0, 0.0));

        let up = EvaderState::new(Vec2::new(1.0, 2.0), FRAC_PI_2, 1.0).unwrap();
        let f = project_evader(&up, 1.0, 2.0).unwrap();
        assert!((f.x - 1.0).abs() < 1e-15 && (f.y - 2.5).abs() < 1e-15);

        let diag = EvaderState::new(Vec2::new(-4.0, -4.0), FRAC_PI_4, 1.0).unwrap();
        let f = project_evader(&diag, 1.0, 2.0).unwrap();
        let expect = -4.0 + 2f64.sqrt() / 4.0;
        assert!((f.x - expect).abs() < 1e-15 && (f.y - expect).abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_bad_speed() {
        let e = EvaderState::new(Vec2::new(0.0, 0.0), 0.0, 1.0).unwrap();
        assert!(project_evader(&e, 1.0, 0.0).is_err());
        assert!(project_evader(&e, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn turn_center_examples() {
        let p = pursuer(0.0, 0.0, 0.0, 1.0);
        assert_eq!(turn_center(&p, Side::Left), Vec2::new(0.0, 1.0));
        assert_eq!(turn_center(&p, Side::Right), Vec2::new(0.0, -1.0));
        let c = turn_center(&pursuer(2.0, 3.0, FRAC_PI_2, 0.2), Side::Left);
        assert!((c.x - 1.8).abs() < 1e-15 && (c.y - 3.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_path_is_straight() {
        let p = pursuer(0.0, 0.0, 0.0, 1.0);
        let path = cs_path(Vec2::new(5.0, 0.0), &p, Side::Left).unwrap();
        assert_eq!(path.arc_angle, 0.0);
        assert!(path.tangent_point.norm() < 1e-15);
        assert!((path.length - 5.0).abs() < 1e-14);
    }

    #[test]
    fn point_on_circle_is_reached_by_arc_only() {
        let p = pursuer(0.0, 0.0, 0.0, 1.0);
        let path = cs_path(Vec2::new(0.0, 2.0), &p, Side::Left).unwrap();
        assert!((path.arc_angle - PI).abs() < 1e-12);
        assert!((path.tangent_point - Vec2::new(0.0, 2.0)).norm() < 1e-12);
        assert!((path.length - PI).abs() < 1e-12);
    }

    #[test]
    fn inside_circle_has_no_tangent() {
        let p = pursuer(0.0, 0.0, 0.0, 1.0);
        assert!(cs_path(Vec2::new(0.5, 0.9), &p, Side::Left).is_none());
        // The right side is still available.
        assert!(cs_path(Vec2::new(0.5, 0.9), &p, Side::Right).is_some());
        assert!(shortest_cs_length(Vec2::new(0.5, 0.9), &p).is_ok());
    }

    #[test]
    fn intercept_at_pursuer_is_captured() {
        let p = PursuerParams::new(Vec2::new(1.0, -2.0), 0.3, 0.2, 1.5, 2.0).unwrap();
        let e = EvaderState::new(Vec2::new(1.0, -2.0), 0.0, 0.0).unwrap();
        assert_eq!(ez_value(&e, &p).unwrap(), -1.5);
    }

    #[test]
    fn tangency_and_radius_hold() {
        let p = pursuer(0.3, -0.2, 1.1, 0.4);
        for &(fx, fy) in &[(2.0, 1.0), (-1.0, 0.5), (0.1, -1.7), (-3.0, -3.0)] {
            let f = Vec2::new(fx, fy);
            for side in [Side::Left, Side::Right] {
                let Some(path) = cs_path(f, &p, side) else { continue };
                let c = turn_center(&p, side);
                let g = path.tangent_point;
                let fg = f - g;
                assert!(fg.dot(g - c).abs() <= 1e-9 * 0.4 * fg.norm().max(1.0));
                assert!(((g - c).norm() - 0.4).abs() <= 1e-9 * 0.4);
                assert!((0.0..TAU).contains(&path.arc_angle));
                assert!((path.length - (0.4 * path.arc_angle + fg.norm())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mirror_symmetry_swaps_sides() {
        let p = pursuer(0.0, 0.0, 0.0, 0.7);
        for &(fx, fy) in &[(2.0, 1.0), (-1.0, 2.5), (0.1, 1.7), (-3.0, 0.2)] {
            let l = cs_path(Vec2::new(fx, fy), &p, Side::Left).unwrap();
            let r = cs_path(Vec2::new(fx, -fy), &p, Side::Right).unwrap();
            assert!((l.length - r.length).abs() < 1e-12);
        }
    }

    #[test]
    fn evader_ahead_fleeing_crosses_zero_at_reduced_range() {
        // d + νR − R with ν = 0.5, R = 1: zero at d = 0.5.
        let p = pursuer(0.0, 0.0, 0.0, 0.2);
        for &d in &[0.1, 0.5, 0.9, 3.0] {
            let e = EvaderState::new(Vec2::new(d, 0.0), 0.0, 1.0).unwrap();
            let z = ez_value(&e, &p).unwrap();
            assert!((z - (d + 0.5 - 1.0)).abs() < 1e-12, "d={d} z={z}");
        }
    }

    #[test]
    fn stationary_evader_uses_own_position() {
        let p = pursuer(0.0, 0.0, 0.4, 0.3);
        let e = EvaderState::new(Vec2::new(-1.0, 2.0), 2.0, 0.0).unwrap();
        let l = shortest_cs_length(Vec2::new(-1.0, 2.0), &p).unwrap();
        assert_eq!(ez_value(&e, &p).unwrap(), l - 1.0);
    }

    #[test]
    fn invalid_pursuer_rejected() {
        assert!(PursuerParams::new(Vec2::new(0.0, 0.0), 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(PursuerParams::new(Vec2::new(0.0, 0.0), 0.0, 1.0, -1.0, 1.0).is_err());
        assert!(PursuerParams::new(Vec2::new(0.0, f64::NAN), 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(EvaderState::new(Vec2::new(0.0, 0.0), 0.0, -1.0).is_err());
    }
}
