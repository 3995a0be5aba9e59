//! Forward-mode automatic differentiation with fixed-width dual numbers.
//!
//! [`Dual`] is generic over its scalar so duals can be nested: a
//! `Dual<Jet, 1>` carries a directional derivative whose entries are
//! themselves differentiated with respect to up to [`JET_WIDTH`] seeds. This
//! is how task-rate Jacobians (which contain second derivatives of the task
//! functions) are obtained without hand-written Hessians.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;

/// Number of independent seeds carried by a [`Jet`].
pub const JET_WIDTH: usize = 16;

/// Dual number with [`JET_WIDTH`] partials over `f64`.
pub type Jet = Dual<f64, JET_WIDTH>;

/// Scalar arithmetic shared by `f64` and every dual type.
///
/// Generic model code is written against this trait once and evaluated with
/// plain floats for values and with duals for derivatives.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
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
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn atan2(self, x: Self) -> Self;
    /// Derivative is undefined (NaN) at exactly zero.
    fn abs(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Dual number `re + Σ eps[i]·εᵢ` with `εᵢ εⱼ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Real, const N: usize> Dual<T, N> {
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            eps: [T::zero(); N],
        }
    }

    /// Independent variable seeded in slot `slot`.
    pub fn variable(re: T, slot: usize) -> Self {
        let mut d = Self::constant(re);
        d.eps[slot] = T::cst(1.0);
        d
    }

    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * df;
        }
        Dual { re: f, eps }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a += *b;
        }
        self
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= *b;
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a = *a * rhs.re + self.re * *b;
        }
        Dual {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a = (*a - q * *b) / rhs.re;
        }
        Dual { re: q, eps }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for a in self.eps.iter_mut() {
            *a = -*a;
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
        for a in self.eps.iter_mut() {
            *a = *a * rhs;
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

impl<T: Real, const N: usize> Real for Dual<T, N> {
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
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
        self.chain(self.re.ln(), T::cst(1.0) / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        self.chain(self.re.powi(n), self.re.powi(n - 1) * n as f64)
    }
    fn atan2(self, x: Self) -> Self {
        let y = self;
        let r2 = y.re * y.re + x.re * x.re;
        let mut eps = y.eps;
        for (e, (dy, dx)) in eps.iter_mut().zip(y.eps.iter().zip(x.eps.iter())) {
            *e = (x.re * *dy - y.re * *dx) / r2;
        }
        Dual {
            re: y.re.atan2(x.re),
            eps,
        }
    }
    fn abs(self) -> Self {
        let v = self.re.value();
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            f64::NAN
        };
        self.chain(self.re.abs(), T::cst(sign))
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::cst(1.0) - t * t)
    }
}

/// Jacobian of `f: Rⁿ → Rᵐ` at `x`, seeding at most [`JET_WIDTH`]
/// variables per evaluation.
///
/// The closure receives jets for all inputs and must fill all outputs.
pub fn jacobian<F>(x: &[f64], m: usize, mut f: F) -> (Vec<f64>, DMatrix<f64>)
where
    F: FnMut(&[Jet], &mut [Jet]),
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut values = vec![0.0; m];
    let mut xs: Vec<Jet> = x.iter().map(|&v| Jet::cst(v)).collect();
    let mut out = vec![Jet::cst(0.0); m];
    let mut start = 0;
    loop {
        let end = (start + JET_WIDTH).min(n);
        for (i, xi) in xs.iter_mut().enumerate() {
            *xi = if i >= start && i < end {
                Jet::variable(x[i], i - start)
            } else {
                Jet::cst(x[i])
            };
        }
        f(&xs, &mut out);
        for (r, o) in out.iter().enumerate() {
            values[r] = o.re;
            for c in start..end {
                jac[(r, c)] = o.eps[c - start];
            }
        }
        if end >= n {
            break;
        }
        start = end;
    }
    (values, jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        let x = 0.73;
        let d = Dual::<f64, 1>::variable(x, 0);
        let cases: Vec<(Dual<f64, 1>, f64)> = vec![
            (d.sin(), fd(f64::sin, x)),
            (d.cos(), fd(f64::cos, x)),
            (d.exp(), fd(f64::exp, x)),
            (d.ln(), fd(f64::ln, x)),
            (d.sqrt(), fd(f64::sqrt, x)),
            (d.powi(3), fd(|v| v.powi(3), x)),
            (d.tanh(), fd(f64::tanh, x)),
            (d.atan2(Dual::cst(0.4)), fd(|v| v.atan2(0.4), x)),
            ((d * d + d / (d + 2.0)) * 3.0, fd(|v| (v * v + v / (v + 2.0)) * 3.0, x)),
        ];
        for (got, want) in cases {
            assert!((got.eps[0] - want).abs() < 1e-8, "{got:?} vs {want}");
        }
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // d²/dx² sin(x) = -sin(x)
        let x = 0.3;
        let inner = Jet::variable(x, 0);
        let outer = Dual::<Jet, 1> {
            re: inner,
            eps: [Jet::cst(1.0)],
        };
        let y = outer.sin();
        assert!((y.eps[0].re - x.cos()).abs() < 1e-15);
        assert!((y.eps[0].eps[0] + x.sin()).abs() < 1e-15);
    }

    #[test]
    fn abs_at_zero_is_flagged() {
        let d = Dual::<f64, 1>::variable(0.0, 0).abs();
        assert!(d.eps[0].is_nan());
    }

    #[test]
    fn jacobian_chunks_wide_inputs() {
        let x: Vec<f64> = (0..37).map(|i| i as f64 * 0.1).collect();
        let (v, j) = jacobian(&x, 2, |xs, out| {
            let mut s = Jet::cst(0.0);
            let mut p = Jet::cst(0.0);
            for (i, xi) in xs.iter().enumerate() {
                s += *xi * (i as f64);
                p += *xi * *xi;
            }
            out[0] = s;
            out[1] = p;
        });
        for i in 0..37 {
            assert_eq!(j[(0, i)], i as f64);
            assert!((j[(1, i)] - 2.0 * x[i]).abs() < 1e-14);
        }
        assert!((v[1] - x.iter().map(|a| a * a).sum::<f64>()).abs() < 1e-12);
    }
}
