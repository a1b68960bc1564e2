//! Forward-mode dual numbers.
//!
//! The model forward/backward passes are written once, generic over
//! [`Scalar`]. Instantiated at `f64` they are the plain training path;
//! instantiated at [`Dual`] with tangent `v` they compute exact
//! Hessian-vector products `H v` (the tangent of the gradient) and
//! per-example directional derivatives `∇ℓ_i · v` in a single pass, which is
//! what the unrolled hypergradient needs.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const ZERO: Self;
    fn from_f64(x: f64) -> Self;
    /// Primal (value) part.
    fn val(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    /// `max(x, 0)` with derivative 0 at exactly 0.
    fn relu(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;

    fn from_f64(x: f64) -> f64 {
        x
    }

    fn val(self) -> f64 {
        self
    }

    fn exp(self) -> f64 {
        f64::exp(self)
    }

    fn ln(self) -> f64 {
        f64::ln(self)
    }

    fn tanh(self) -> f64 {
        f64::tanh(self)
    }

    fn relu(self) -> f64 {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// `re + ε·dv` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub dv: f64,
}

impl Dual {
    pub fn new(re: f64, dv: f64) -> Self {
        Dual { re, dv }
    }

    pub fn constant(re: f64) -> Self {
        Dual { re, dv: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.dv + o.dv)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.dv - o.dv)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.dv + self.dv * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.re;
        Dual::new(self.re * inv, (self.dv - self.re * o.dv * inv) * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.dv)
    }
}

impl Scalar for Dual {
    const ZERO: Dual = Dual { re: 0.0, dv: 0.0 };

    fn from_f64(x: f64) -> Dual {
        Dual::constant(x)
    }

    fn val(self) -> f64 {
        self.re
    }

    fn exp(self) -> Dual {
        let e = self.re.exp();
        Dual::new(e, self.dv * e)
    }

    fn ln(self) -> Dual {
        Dual::new(self.re.ln(), self.dv / self.re)
    }

    fn tanh(self) -> Dual {
        let t = self.re.tanh();
        Dual::new(t, self.dv * (1.0 - t * t))
    }

    fn relu(self) -> Dual {
        if self.re > 0.0 {
            self
        } else {
            Dual::ZERO
        }
    }

    fn is_finite(self) -> bool {
        self.re.is_finite() && self.dv.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    // d/dx [x·exp(x)] = (1+x)·exp(x); checked at x = 0.7.
    #[test]
    fn product_and_exp_rules() {
        let x = Dual::new(0.7, 1.0);
        let y = x * x.exp();
        close(y.re, 0.7 * 0.7f64.exp());
        close(y.dv, (1.0 + 0.7) * 0.7f64.exp());
    }

    // d/dx [ln(x)/x] = (1 - ln x)/x²; checked at x = 2.
    #[test]
    fn quotient_and_ln_rules() {
        let x = Dual::new(2.0, 1.0);
        let y = x.ln() / x;
        close(y.re, 2.0f64.ln() / 2.0);
        close(y.dv, (1.0 - 2.0f64.ln()) / 4.0);
    }

    #[test]
    fn relu_matches_f64_branch() {
        assert_eq!(Dual::new(-1.0, 5.0).relu(), Dual::ZERO);
        assert_eq!(Dual::new(0.0, 5.0).relu(), Dual::ZERO);
        assert_eq!(Dual::new(2.0, 5.0).relu(), Dual::new(2.0, 5.0));
        assert_eq!((-1.0f64).relu(), 0.0);
        assert_eq!(0.0f64.relu(), 0.0);
    }

    #[test]
    fn tanh_derivative() {
        let x = Dual::new(0.3, 1.0);
        let t = 0.3f64.tanh();
        close(x.tanh().dv, 1.0 - t * t);
    }
}
