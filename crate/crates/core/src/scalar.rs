//! Scalar abstraction and the special functions the probability models need.

use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};

/// Floating point type the physical and probabilistic models are generic over.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` literal. Every `Scalar` can represent (an approximation of) any `f64`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Tolerance used when checking that probabilities sum to one.
    fn prob_tolerance() -> Self;
}

impl Scalar for f32 {
    fn prob_tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn prob_tolerance() -> Self {
        1e-9
    }
}

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma<S: Scalar>(x: S) -> S {
    let half = S::lit(0.5);
    if x < half {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = S::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(S::one() - x);
    }
    let x = x - S::one();
    let mut acc = S::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc = acc + S::lit(c) / (x + S::lit(i as f64));
    }
    let t = x + S::lit(LANCZOS_G) + half;
    S::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

pub fn gamma<S: Scalar>(x: S) -> S {
    ln_gamma(x).exp()
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a + b).
pub fn ln_beta<S: Scalar>(a: S, b: S) -> S {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta<S: Scalar>(a: S, b: S, x: S) -> S {
    if x <= S::zero() {
        return S::zero();
    }
    if x >= S::one() {
        return S::one();
    }
    let front = (a * x.ln() + b * (S::one() - x).ln() - ln_beta(a, b)).exp();
    if x < (a + S::one()) / (a + b + S::lit(2.0)) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        S::one() - front * beta_continued_fraction(b, a, S::one() - x) / b
    }
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
fn beta_continued_fraction<S: Scalar>(a: S, b: S, x: S) -> S {
    let tiny = S::lit(1e-300).max(S::min_positive_value());
    let eps = S::epsilon();
    let one = S::one();
    let two = S::lit(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..500 {
        let m = S::lit(m as f64);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h = h * del;
        if (del - one).abs() < eps {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..15 {
            assert_relative_eq!(gamma(n as f64), fact, max_relative = 1e-12);
            fact *= n as f64;
        }
    }

    #[test]
    fn gamma_half_integer() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert_relative_eq!(gamma(0.5_f64), sqrt_pi, max_relative = 1e-13);
        assert_relative_eq!(gamma(1.5_f64), 0.5 * sqrt_pi, max_relative = 1e-13);
        assert_relative_eq!(gamma(20.5_f64), 5.406_242_982_335_075e17, max_relative = 1e-12);
    }

    #[test]
    fn gamma_recurrence_on_design_range() {
        // Γ(x+1) = xΓ(x) pins relative accuracy on [0.5, 20].
        let mut x = 0.5_f64;
        while x < 20.0 {
            let lhs = gamma(x + 1.0);
            let rhs = x * gamma(x);
            assert!(((lhs - rhs) / rhs).abs() < 1e-12, "x = {x}");
            x += 0.37;
        }
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1,1) = x, I_x(2,2) = 3x² − 2x³
        for &x in &[0.1_f64, 0.25, 0.5, 0.8] {
            assert_relative_eq!(incomplete_beta(1.0, 1.0, x), x, max_relative = 1e-12);
            let expect = 3.0 * x * x - 2.0 * x * x * x;
            assert_relative_eq!(incomplete_beta(2.0, 2.0, x), expect, max_relative = 1e-12);
        }
        assert_relative_eq!(incomplete_beta(0.5_f64, 0.5, 0.5), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        assert!((gamma(5.0_f32) - 24.0).abs() < 1e-3);
        assert!((incomplete_beta(2.0_f32, 2.0, 0.5) - 0.5).abs() < 1e-5);
    }
}
