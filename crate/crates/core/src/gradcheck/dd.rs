//! Double-double arithmetic (about 32 significant digits) and the small
//! scalar trait the reference forward passes are written against.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        // x = k ln2 + r, then exp(r) = (exp(r / 2^10))^(2^10)
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::new(k)).ldexp(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=14 {
            term = term * r / Dd::new(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    pub fn ln(self) -> Self {
        if !(self.hi > 0.0) {
            return Dd::new(self.hi.ln());
        }
        // Newton on exp(y) = x
        let mut y = Dd::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::new(self.hi.sqrt());
        }
        let y = self.hi.sqrt();
        let (sq, err) = two_prod(y, y);
        let resid = (self - Dd { hi: sq, lo: err }).to_f64();
        Dd::renorm(y, resid / (2.0 * y))
    }

    pub fn tanh(self) -> Self {
        let t = (Dd::new(-2.0) * self.abs()).exp();
        let v = (Dd::ONE - t) / (Dd::ONE + t);
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd::new(v)
    }
}

impl PartialEq for Dd {
    fn eq(&self, other: &Self) -> bool {
        self.hi == other.hi && self.lo == other.lo
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            o => o,
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        if !s.is_finite() {
            return Dd::new(s);
        }
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        if !p.is_finite() {
            return Dd::new(p);
        }
        Dd::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        if !q1.is_finite() || !o.is_finite() {
            return Dd::new(q1);
        }
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        Dd::renorm(q1, q2) + Dd::new(q3)
    }
}

/// Scalar operations needed by the reference forward passes.
pub trait Real:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn lift(v: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn to_f64(self) -> f64;

    fn zero() -> Self {
        Self::lift(0.0)
    }

    fn max(self, o: Self) -> Self {
        if o > self {
            o
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn lift(v: f64) -> Self {
        v
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
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for Dd {
    fn lift(v: f64) -> Self {
        Dd::new(v)
    }
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn ln(self) -> Self {
        Dd::ln(self)
    }
    fn sqrt(self) -> Self {
        Dd::sqrt(self)
    }
    fn tanh(self) -> Self {
        Dd::tanh(self)
    }
    fn to_f64(self) -> f64 {
        Dd::to_f64(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        (a - b).abs().to_f64() <= tol * b.abs().to_f64().max(1e-300)
    }

    #[test]
    fn arithmetic_beyond_double() {
        let third = Dd::ONE / Dd::new(3.0);
        assert!(close(third * Dd::new(3.0), Dd::ONE, 1e-31));
        // 1 + 2^-80 is representable as a pair but not as one double
        let tiny = Dd::new(2f64.powi(-80));
        let x = Dd::ONE + tiny;
        assert_eq!((x - Dd::ONE).to_f64(), 2f64.powi(-80));
    }

    #[test]
    fn transcendental_identities() {
        for v in [-30.0, -2.5, -0.3, 1e-9, 0.7, 1.7, 20.0, 300.0] {
            let x = Dd::new(v);
            assert!(close(x.exp() * (-x).exp(), Dd::ONE, 1e-28), "exp at {v}");
            assert!(close(x.exp().ln(), x, 1e-28) || (x.exp().ln() - x).abs().to_f64() < 1e-28, "ln at {v}");
            let s = x.abs().sqrt();
            assert!(close(s * s, x.abs(), 1e-30), "sqrt at {v}");
            let t = x.tanh();
            let e2 = (Dd::new(2.0) * x).exp();
            if v.abs() < 300.0 {
                assert!((t - (e2 - Dd::ONE) / (e2 + Dd::ONE)).abs().to_f64() < 1e-28, "tanh at {v}");
            }
        }
    }

    #[test]
    fn agrees_with_f64_to_double_rounding() {
        for v in [0.1, 0.5, 2.0, 7.3] {
            assert!((Dd::new(v).exp().to_f64() - v.exp()).abs() <= 2e-16 * v.exp());
            assert!((Dd::new(v).ln().to_f64() - v.ln()).abs() <= 2e-16 * v.ln().abs());
            assert!((Dd::new(v).tanh().to_f64() - v.tanh()).abs() <= 2e-16);
        }
        assert!(close(Dd::new(1.0).exp(), Dd { hi: std::f64::consts::E, lo: 1.445_646_891_729_250_1e-16 }, 1e-28));
    }
}
