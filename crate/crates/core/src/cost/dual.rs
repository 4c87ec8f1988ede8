//! Nested forward-mode dual numbers.
//!
//! `Dual<Dual<f64>>` carries two independent infinitesimals, so the coefficient of
//! `e1*e2` is a mixed second partial. Four levels give the fourth-order blocks of a jet.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn re(&self) -> f64;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powf(&self, e: f64) -> Self;

    fn scale(&self, k: f64) -> Self {
        self.clone() * Self::constant(k)
    }
}

/// A variable seeded along some subset of the nested infinitesimal directions.
pub trait Seeded: Scalar {
    const DEPTH: usize;
    /// `seeds[l]` is true when this variable moves along direction `l`.
    fn variable(v: f64, seeds: &[bool]) -> Self;
    /// Coefficient of the product of all infinitesimals.
    fn top(&self) -> f64;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powf(&self, e: f64) -> Self {
        f64::powf(*self, e)
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
}

impl Seeded for f64 {
    const DEPTH: usize = 0;
    fn variable(v: f64, _seeds: &[bool]) -> Self {
        v
    }
    fn top(&self) -> f64 {
        *self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let eps = self.re.clone() * o.eps + self.eps * o.re.clone();
        Dual::new(self.re * o.re, eps)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re.clone();
        let eps = (self.eps - q.clone() * o.eps) / o.re;
        Dual::new(q, eps)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn constant(v: f64) -> Self {
        Dual::new(T::constant(v), T::constant(0.0))
    }
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        Dual::new(e.clone(), self.eps.clone() * e)
    }
    fn ln(&self) -> Self {
        Dual::new(self.re.ln(), self.eps.clone() / self.re.clone())
    }
    fn sqrt(&self) -> Self {
        let s = self.re.sqrt();
        let eps = self.eps.clone() / s.scale(2.0);
        Dual::new(s, eps)
    }
    fn powf(&self, e: f64) -> Self {
        if e == 0.0 {
            return Self::constant(1.0);
        }
        let lower = self.re.powf(e - 1.0);
        Dual::new(self.re.powf(e), self.eps.clone() * lower.scale(e))
    }
    fn scale(&self, k: f64) -> Self {
        Dual::new(self.re.scale(k), self.eps.scale(k))
    }
}

impl<T: Seeded> Seeded for Dual<T> {
    const DEPTH: usize = T::DEPTH + 1;
    fn variable(v: f64, seeds: &[bool]) -> Self {
        let (last, rest) = seeds.split_last().expect("seed list shorter than nesting depth");
        let eps = T::constant(if *last { 1.0 } else { 0.0 });
        Dual::new(T::variable(v, rest), eps)
    }
    fn top(&self) -> f64 {
        self.eps.top()
    }
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;
pub type D4 = Dual<D3>;

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S, y: S) -> S {
        (x.clone() * y.clone()).exp() / (x * x_sq(&y) + S::constant(1.0))
    }

    fn x_sq<S: Scalar>(y: &S) -> S {
        y.clone() * y.clone()
    }

    #[test]
    fn first_derivative() {
        let x = D1::variable(0.3, &[true]);
        let y = D1::variable(0.7, &[false]);
        let d = f(x, y).top();
        let h = 1e-6;
        let fd = (f(0.3 + h, 0.7) - f(0.3 - h, 0.7)) / (2.0 * h);
        assert!((d - fd).abs() < 1e-8);
    }

    #[test]
    fn mixed_second() {
        // d^2/dx dy of x^3 y^2 = 6 x^2 y
        let x = D2::variable(1.5, &[true, false]);
        let y = D2::variable(-0.5, &[false, true]);
        let v = x.powf(3.0) * y.powf(2.0);
        assert!((v.top() - 6.0 * 2.25 * -0.5).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_of_inverse() {
        // d^4/dx^4 (1/x) = 24 / x^5
        let s = [true, true, true, true];
        let x = D4::variable(0.8, &s);
        let v = D4::constant(1.0) / x;
        assert!((v.top() - 24.0 / 0.8f64.powi(5)).abs() < 1e-9);
    }

    #[test]
    fn transcendental() {
        let x = D2::variable(2.0, &[true, true]);
        assert!((x.ln().top() + 0.25).abs() < 1e-14);
        assert!((x.sqrt().top() + 0.25 * 2.0f64.powf(-1.5)).abs() < 1e-14);
        assert!((x.exp().top() - 2.0f64.exp()).abs() < 1e-12);
    }
}
