//! Probability models for photovoltaic and wind turbine output.
//!
//! PV output is a scaled Beta variable on `[0, p_max]`. Wind speed is Weibull and is
//! pushed through the piecewise turbine power curve, which yields a mixed law with
//! point masses at zero and at rated output plus a continuous ramp segment.

use crate::error::{Error, Result};
use crate::scalar::{incomplete_beta, ln_beta, Scalar};
use rand::Rng;
use rand_distr::{Beta, Distribution, Weibull};
use serde::{Deserialize, Serialize};

/// A bounded output law: continuous mass plus finitely many atoms on `[0, level_max]`.
pub trait OutputDistribution<S: Scalar> {
    /// Upper end of the support (MW).
    fn level_max(&self) -> S;

    /// Mass of the absolutely continuous part on `[a, b)`.
    fn continuous_mass(&self, a: S, b: S) -> S;

    /// Point masses as `(level, probability)`.
    fn atoms(&self) -> Vec<(S, S)>;
}

/// Draws one output realisation (MW).
pub trait SampleOutput {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPvModel<S> {
    pub lambda1: S,
    pub lambda2: S,
    pub p_max: S,
}

impl<S: Scalar> BetaPvModel<S> {
    pub fn new(lambda1: S, lambda2: S, p_max: S) -> Result<Self> {
        if !(lambda1 > S::zero() && lambda2 > S::zero() && p_max > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "beta PV model needs positive shapes and p_max, got ({lambda1}, {lambda2}, {p_max})"
            )));
        }
        Ok(Self { lambda1, lambda2, p_max })
    }

    /// Density of output `p` (1/MW) using the Γ(λ1+λ2)/(Γ(λ1)Γ(λ2)) normalization.
    pub fn density(&self, p: S) -> Result<S> {
        if p < S::zero() || p > self.p_max || p.is_nan() {
            return Err(Error::Domain(format!("PV output {p} outside [0, {}]", self.p_max)));
        }
        let x = p / self.p_max;
        let one = S::one();
        let a = self.lambda1 - one;
        let b = self.lambda2 - one;
        // x^0 at the edges is 1; avoid 0·ln 0.
        let term = |base: S, exp: S| {
            if exp == S::zero() {
                S::one()
            } else {
                base.powf(exp)
            }
        };
        let norm = (-ln_beta(self.lambda1, self.lambda2)).exp();
        Ok(norm * term(x, a) * term(one - x, b) / self.p_max)
    }

    pub fn cdf(&self, p: S) -> S {
        incomplete_beta(self.lambda1, self.lambda2, p / self.p_max)
    }

    pub fn mean(&self) -> S {
        self.p_max * self.lambda1 / (self.lambda1 + self.lambda2)
    }
}

impl<S: Scalar> OutputDistribution<S> for BetaPvModel<S> {
    fn level_max(&self) -> S {
        self.p_max
    }

    fn continuous_mass(&self, a: S, b: S) -> S {
        let a = a.max(S::zero());
        let b = b.min(self.p_max);
        if b <= a {
            return S::zero();
        }
        self.cdf(b) - self.cdf(a)
    }

    fn atoms(&self) -> Vec<(S, S)> {
        Vec::new()
    }
}

impl SampleOutput for BetaPvModel<f64> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let beta = Beta::new(self.lambda1, self.lambda2).expect("validated shapes");
        self.p_max * beta.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullWtModel<S> {
    /// Weibull scale `z` (m/s).
    pub scale: S,
    /// Weibull shape `u`.
    pub shape: S,
    pub v_in: S,
    pub v_rated: S,
    pub v_out: S,
    /// Rated output (MW).
    pub p_rated: S,
}

impl<S: Scalar> WeibullWtModel<S> {
    pub fn new(scale: S, shape: S, v_in: S, v_rated: S, v_out: S, p_rated: S) -> Result<Self> {
        let ok = scale > S::zero()
            && shape > S::zero()
            && S::zero() < v_in
            && v_in < v_rated
            && v_rated < v_out
            && p_rated > S::zero();
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "wind model needs z, u, P_e > 0 and 0 < v_in < v_e < v_out \
                 (z={scale}, u={shape}, v_in={v_in}, v_e={v_rated}, v_out={v_out}, P_e={p_rated})"
            )));
        }
        Ok(Self { scale, shape, v_in, v_rated, v_out, p_rated })
    }

    /// Turbine output at wind speed `v` (MW).
    pub fn power_curve(&self, v: S) -> S {
        if v < self.v_in || v >= self.v_out {
            S::zero()
        } else if v < self.v_rated {
            (v - self.v_in) / (self.v_rated - self.v_in) * self.p_rated
        } else {
            self.p_rated
        }
    }

    /// Weibull CDF of wind speed, 1 − exp[−(v/z)^u].
    pub fn speed_cdf(&self, v: S) -> S {
        if v <= S::zero() {
            return S::zero();
        }
        S::one() - (-(v / self.scale).powf(self.shape)).exp()
    }

    pub fn speed_density(&self, v: S) -> S {
        if v < S::zero() {
            return S::zero();
        }
        let r = v / self.scale;
        self.shape / self.scale * r.powf(self.shape - S::one()) * (-r.powf(self.shape)).exp()
    }

    pub fn output_distribution(&self) -> WtOutputDistribution<S> {
        let mass_at_zero = self.speed_cdf(self.v_in) + (S::one() - self.speed_cdf(self.v_out));
        let mass_at_rated = self.speed_cdf(self.v_out) - self.speed_cdf(self.v_rated);
        WtOutputDistribution { model: *self, mass_at_zero, mass_at_rated }
    }

    fn speed_for_output(&self, p: S) -> S {
        self.v_in + p / self.p_rated * (self.v_rated - self.v_in)
    }
}

impl SampleOutput for WeibullWtModel<f64> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let w = Weibull::new(self.scale, self.shape).expect("validated Weibull");
        self.power_curve(w.sample(rng))
    }
}

/// Wind output law: atoms at 0 and `p_rated`, continuous density on `(0, p_rated)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtOutputDistribution<S> {
    pub model: WeibullWtModel<S>,
    pub mass_at_zero: S,
    pub mass_at_rated: S,
}

impl<S: Scalar> WtOutputDistribution<S> {
    /// Continuous density (1/MW) on the ramp segment; zero elsewhere.
    pub fn density(&self, p: S) -> S {
        let m = &self.model;
        if p <= S::zero() || p >= m.p_rated {
            return S::zero();
        }
        m.speed_density(m.speed_for_output(p)) * (m.v_rated - m.v_in) / m.p_rated
    }

    pub fn total_mass(&self) -> S {
        self.mass_at_zero + self.mass_at_rated + self.continuous_mass(S::zero(), self.model.p_rated)
    }
}

impl<S: Scalar> OutputDistribution<S> for WtOutputDistribution<S> {
    fn level_max(&self) -> S {
        self.model.p_rated
    }

    fn continuous_mass(&self, a: S, b: S) -> S {
        let m = &self.model;
        let a = a.max(S::zero());
        let b = b.min(m.p_rated);
        if b <= a {
            return S::zero();
        }
        m.speed_cdf(m.speed_for_output(b)) - m.speed_cdf(m.speed_for_output(a))
    }

    fn atoms(&self) -> Vec<(S, S)> {
        vec![(S::zero(), self.mass_at_zero), (self.model.p_rated, self.mass_at_rated)]
    }
}

/// Uniform output on `[0, level_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformOutput<S> {
    pub level_max: S,
}

impl<S: Scalar> OutputDistribution<S> for UniformOutput<S> {
    fn level_max(&self) -> S {
        self.level_max
    }

    fn continuous_mass(&self, a: S, b: S) -> S {
        let a = a.max(S::zero());
        let b = b.min(self.level_max);
        if b <= a {
            S::zero()
        } else {
            (b - a) / self.level_max
        }
    }

    fn atoms(&self) -> Vec<(S, S)> {
        Vec::new()
    }
}

impl SampleOutput for UniformOutput<f64> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen::<f64>() * self.level_max
    }
}

/// All mass at one level (a PV unit at night is `PointMass { level: 0 }`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass<S> {
    pub level: S,
}

impl<S: Scalar> OutputDistribution<S> for PointMass<S> {
    fn level_max(&self) -> S {
        self.level
    }

    fn continuous_mass(&self, _a: S, _b: S) -> S {
        S::zero()
    }

    fn atoms(&self) -> Vec<(S, S)> {
        vec![(self.level, S::one())]
    }
}

impl SampleOutput for PointMass<f64> {
    fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> f64 {
        self.level
    }
}

/// The renewable fleet available in one scheduling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodRenewables {
    pub pv: Option<BetaPvModel<f64>>,
    pub wind: Option<WeibullWtModel<f64>>,
}

impl SampleOutput for PeriodRenewables {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pv = self.pv.map_or(0.0, |m| m.sample(rng));
        let wt = self.wind.map_or(0.0, |m| m.sample(rng));
        pv + wt
    }
}
