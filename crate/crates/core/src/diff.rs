//! Forward-mode automatic differentiation.
//!
//! [`Dual<T, N>`] carries a value and `N` directional partials. Because the
//! scalar slot is itself generic over [`Real`], duals nest: a
//! `Dual<Dual<f64, 6>, 6>` yields exact second derivatives, and wrapping that
//! once more in `Dual<_, 3>` differentiates a Hessian with respect to three
//! further inputs. The geometry, estimators and planner are written once
//! against [`Real`] and instantiated at whatever depth a caller needs.
//!
//! Central finite differences are provided only as oracles for tests.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::Result;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Scalar field usable by every differentiable routine in the crate.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Primal value with every derivative layer stripped.
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    /// Standard normal CDF.
    fn norm_cdf(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn powi2(self) -> Self {
        self * self
    }
    fn is_finite(&self) -> bool;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn norm_cdf(self) -> Self {
        0.5 * libm::erfc(-self * std::f64::consts::FRAC_1_SQRT_2)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Value plus `N` first-order partials, each of scalar type `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub du: [T; N],
}

pub type Dual6 = Dual<f64, 6>;

impl<T: Real, const N: usize> Dual<T, N> {
    pub fn constant(re: T) -> Self {
        Self {
            re,
            du: [T::zero(); N],
        }
    }

    /// Independent variable `i`.
    pub fn variable(re: T, i: usize) -> Self {
        let mut du = [T::zero(); N];
        du[i] = T::one();
        Self { re, du }
    }

    /// Applies a scalar function whose value `f` and derivative `df` at
    /// `self.re` are already known.
    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        let mut du = self.du;
        for d in du.iter_mut() {
            *d = *d * df;
        }
        Self { re: f, du }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for (a, b) in self.du.iter_mut().zip(rhs.du) {
            *a += b;
        }
        self
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.du.iter_mut().zip(rhs.du) {
            *a -= b;
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (d, b) in du.iter_mut().zip(rhs.du) {
            *d = *d * rhs.re + self.re * b;
        }
        Self {
            re: self.re * rhs.re,
            du,
        }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let re = self.re * inv;
        let mut du = self.du;
        for (d, b) in du.iter_mut().zip(rhs.du) {
            *d = (*d - re * b) * inv;
        }
        Self { re, du }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for d in self.du.iter_mut() {
            *d = -*d;
        }
        self
    }
}

impl<T: Real, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re = self.re + rhs;
        self
    }
}

impl<T: Real, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re = self.re - rhs;
        self
    }
}

impl<T: Real, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.re = self.re * rhs;
        for d in self.du.iter_mut() {
            *d = *d * rhs;
        }
        self
    }
}

impl<T: Real, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<T: Real, const N: usize> AddAssign for Dual<T, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Real, const N: usize> SubAssign for Dual<T, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Real, const N: usize> MulAssign for Dual<T, N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Real, const N: usize> Real for Dual<T, N> {
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::one() / (s * 2.0))
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::one() / self.re)
    }
    fn atan2(self, x: Self) -> Self {
        let re = self.re.atan2(x.re);
        let inv = T::one() / (x.re * x.re + self.re * self.re);
        let mut du = self.du;
        for (d, dx) in du.iter_mut().zip(x.du) {
            *d = (x.re * *d - self.re * dx) * inv;
        }
        Self { re, du }
    }
    fn norm_cdf(self) -> Self {
        let pdf = (self.re * self.re * -0.5).exp() * FRAC_1_SQRT_2PI;
        self.chain(self.re.norm_cdf(), pdf)
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.du.iter().all(Real::is_finite)
    }
}

/// A scalar function of `N` inputs that can be evaluated over any [`Real`].
pub trait ScalarFn<const N: usize> {
    fn eval<T: Real>(&self, x: &[T; N]) -> Result<T>;
}

pub type Grad6 = [f64; 6];
pub type Hess6 = [[f64; 6]; 6];

/// Value and gradient by one forward sweep with `N` partials.
pub fn gradient<const N: usize, F: ScalarFn<N>>(f: &F, x: &[f64; N]) -> Result<(f64, [f64; N])> {
    value_gradient_with(|v| f.eval(v), x)
}

/// Value, gradient and Hessian at `f64`.
pub fn hessian<const N: usize, F: ScalarFn<N>>(
    f: &F,
    x: &[f64; N],
) -> Result<(f64, [f64; N], [[f64; N]; N])> {
    value_gradient_hessian_with(|v| f.eval(v), x)
}

/// Value and gradient of `f` at `x`, where `x` may itself carry derivatives.
pub fn value_gradient_with<T, const N: usize, F>(f: F, x: &[T; N]) -> Result<(T, [T; N])>
where
    T: Real,
    F: FnOnce(&[Dual<T, N>; N]) -> Result<Dual<T, N>>,
{
    let mut seeded = [Dual::<T, N>::constant(T::zero()); N];
    for (i, s) in seeded.iter_mut().enumerate() {
        *s = Dual::variable(x[i], i);
    }
    let out = f(&seeded)?;
    Ok((out.re, out.du))
}

/// Value, gradient and Hessian of `f` at `x` by nested duals.
pub fn value_gradient_hessian_with<T, const N: usize, F>(
    f: F,
    x: &[T; N],
) -> Result<(T, [T; N], [[T; N]; N])>
where
    T: Real,
    F: FnOnce(&[Dual<Dual<T, N>, N>; N]) -> Result<Dual<Dual<T, N>, N>>,
{
    let zero = Dual::<Dual<T, N>, N>::constant(Dual::constant(T::zero()));
    let mut seeded = [zero; N];
    for (i, s) in seeded.iter_mut().enumerate() {
        let mut outer = Dual::<Dual<T, N>, N>::constant(Dual::variable(x[i], i));
        outer.du[i] = Dual::constant(T::one());
        *s = outer;
    }
    let out = f(&seeded)?;
    let mut hess = [[T::zero(); N]; N];
    for (i, row) in hess.iter_mut().enumerate() {
        for (j, h) in row.iter_mut().enumerate() {
            *h = out.du[i].du[j];
        }
    }
    Ok((out.re.re, out.re.du, hess))
}

/// Central-difference step used by the finite-difference oracles.
pub fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient, `h = 1e-5·max(1,|xᵢ|)`.
pub fn fd_gradient<const N: usize, F: ScalarFn<N>>(f: &F, x: &[f64; N]) -> Result<[f64; N]> {
    let mut g = [0.0; N];
    for i in 0..N {
        let h = fd_step(x[i], 1e-5);
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f.eval(&xp)? - f.eval(&xm)?) / (2.0 * h);
    }
    Ok(g)
}

/// Second-order central-difference Hessian, `h = 1e-4·max(1,|xᵢ|)`.
pub fn fd_hessian<const N: usize, F: ScalarFn<N>>(f: &F, x: &[f64; N]) -> Result<[[f64; N]; N]> {
    let f0 = f.eval(x)?;
    let h: Vec<f64> = x.iter().map(|&v| fd_step(v, 1e-4)).collect();
    let shifted = |i: usize, si: f64, j: usize, sj: f64| -> Result<f64> {
        let mut y = *x;
        y[i] += si * h[i];
        y[j] += sj * h[j];
        f.eval(&y)
    };
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h[i];
        xm[i] -= h[i];
        out[i][i] = (f.eval(&xp)? - 2.0 * f0 + f.eval(&xm)?) / (h[i] * h[i]);
        for j in 0..i {
            let v = (shifted(i, 1.0, j, 1.0)? - shifted(i, 1.0, j, -1.0)?
                - shifted(i, -1.0, j, 1.0)?
                + shifted(i, -1.0, j, -1.0)?)
                / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Coord(usize);
    impl ScalarFn<6> for Coord {
        fn eval<T: Real>(&self, x: &[T; 6]) -> Result<T> {
            Ok(x[self.0])
        }
    }

    struct PositionNormSq;
    impl ScalarFn<6> for PositionNormSq {
        fn eval<T: Real>(&self, x: &[T; 6]) -> Result<T> {
            Ok(x[0] * x[0] + x[1] * x[1])
        }
    }

    struct Quadratic([[f64; 6]; 6]);
    impl ScalarFn<6> for Quadratic {
        fn eval<T: Real>(&self, x: &[T; 6]) -> Result<T> {
            let mut acc = T::zero();
            for i in 0..6 {
                for j in 0..6 {
                    acc += x[i] * x[j] * (0.5 * self.0[i][j]);
                }
            }
            Ok(acc)
        }
    }

    struct Linear([f64; 6]);
    impl ScalarFn<6> for Linear {
        fn eval<T: Real>(&self, x: &[T; 6]) -> Result<T> {
            let mut acc = T::cst(3.0);
            for i in 0..6 {
                acc += x[i] * self.0[i];
            }
            Ok(acc)
        }
    }

    /// Touches every transcendental in the trait.
    struct Mixed;
    impl ScalarFn<6> for Mixed {
        fn eval<T: Real>(&self, x: &[T; 6]) -> Result<T> {
            let r = (x[0] * x[0] + x[1] * x[1] + 1.0).sqrt();
            Ok(x[2].sin() * x[3].cos() + x[1].atan2(x[0]) + (x[4] * 0.3).exp() * r.ln()
                - (x[5] / r).norm_cdf())
        }
    }

    #[test]
    fn coordinate_gradient_is_unit_vector() {
        let (v, g) = gradient(&Coord(3), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn position_norm_gradient() {
        let (_, g) = gradient(&PositionNormSq, &[1.5, -2.0, 0.3, 0.2, 1.0, 2.0]).unwrap();
        assert_eq!(g, [3.0, -4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let mut a = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                a[i][j] = ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 4.0 } else { 0.0 };
            }
        }
        for i in 0..6 {
            for j in 0..i {
                a[i][j] = a[j][i];
            }
        }
        let (_, _, h) = hessian(&Quadratic(a), &[0.1, -0.4, 2.0, 1.0, 0.0, -3.0]).unwrap();
        assert_eq!(h, a);
    }

    #[test]
    fn linear_hessian_is_zero() {
        let (_, g, h) = hessian(&Linear([1.0, 2.0, -3.0, 0.5, 0.0, 9.0]), &[1.0; 6]).unwrap();
        assert_eq!(g, [1.0, 2.0, -3.0, 0.5, 0.0, 9.0]);
        assert_eq!(h, [[0.0; 6]; 6]);
    }

    #[test]
    fn transcendental_derivatives_match_fd() {
        let x = [0.7, -0.3, 1.1, 0.4, -0.8, 0.25];
        let (_, g) = gradient(&Mixed, &x).unwrap();
        let fd = fd_gradient(&Mixed, &x).unwrap();
        for i in 0..6 {
            assert!((g[i] - fd[i]).abs() <= 1e-8 * (1.0 + g[i].abs()), "{i}: {g:?} {fd:?}");
        }
        let (_, _, h) = hessian(&Mixed, &x).unwrap();
        let fdh = fd_hessian(&Mixed, &x).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((h[i][j] - h[j][i]).abs() <= 1e-12);
                assert!((h[i][j] - fdh[i][j]).abs() <= 1e-5, "{i}{j}");
            }
        }
    }

    #[test]
    fn norm_cdf_value_at_zero() {
        let d = Dual::<f64, 1>::variable(0.0, 0).norm_cdf();
        assert!((d.re - 0.5).abs() < 1e-15);
        assert!((d.du[0] - FRAC_1_SQRT_2PI).abs() < 1e-15);
    }

    /// Third-order nesting: derivative of a Hessian entry with respect to an
    /// outer variable.
    #[test]
    fn nested_hessian_carries_outer_derivative() {
        struct Cubic;
        impl ScalarFn<6> for Cubic {
            fn eval<T: Real>(&self, x: &[T; 6]) -> Result<T> {
                Ok(x[0] * x[0] * x[1])
            }
        }
        // x1 = s (outer variable); d²f/dx0² = 2·x1, so its s-derivative is 2.
        let mut x = [Dual::<f64, 1>::constant(0.0); 6];
        x[0] = Dual::constant(0.5);
        x[1] = Dual::variable(3.0, 0);
        let (_, _, h) = value_gradient_hessian_with(|v| Cubic.eval(v), &x).unwrap();
        assert_eq!(h[0][0].re, 6.0);
        assert_eq!(h[0][0].du[0], 2.0);
        assert_eq!(h[0][1].du[0], 0.0);
    }

    proptest! {
        /// d/dx of a random cubic polynomial equals its analytic derivative.
        #[test]
        fn polynomial_derivative_exact(c in proptest::array::uniform4(-5.0f64..5.0), x in -3.0f64..3.0) {
            let xd = Dual::<f64, 1>::variable(x, 0);
            let p = xd * xd * xd * c[3] + xd * xd * c[2] + xd * c[1] + c[0];
            let dp = 3.0 * c[3] * x * x + 2.0 * c[2] * x + c[1];
            prop_assert!((p.du[0] - dp).abs() <= 1e-12 * (1.0 + dp.abs()));
        }
    }
}
