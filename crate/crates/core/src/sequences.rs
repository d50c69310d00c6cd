//! Probabilistic sequences: discretized output laws on a uniform grid of step `q`.
//!
//! Level `i` of a sequence stands for output `i·q`. Independent sources combine by
//! addition-type convolution, and the spinning-reserve chance constraint turns into a
//! set of indicator rows over the levels of the joint sequence.

use crate::error::{Error, Result};
use crate::renewables::{OutputDistribution, SampleOutput};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbSequence<S> {
    step: S,
    probs: Vec<S>,
}

impl<S: Scalar> ProbSequence<S> {
    /// Builds a sequence from explicit level probabilities, checking the invariants.
    pub fn new(step: S, probs: Vec<S>) -> Result<Self> {
        if !(step > S::zero()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
        }
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty probabilistic sequence".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= S::zero() && **p <= S::one())) {
            return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
        }
        let total = probs.iter().fold(S::zero(), |acc, &p| acc + p);
        if (total - S::one()).abs() > S::prob_tolerance() {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { step, probs })
    }

    /// The sequence of a source that always outputs zero.
    pub fn zero(step: S) -> Self {
        Self { step, probs: vec![S::one()] }
    }

    /// Discretizes a bounded output law with step `q`.
    ///
    /// Cell 0 collects `[0, q/2)`, cell `i` collects `[iq − q/2, iq + q/2)` and the last
    /// cell `N = ceil(level_max / q)` also takes whatever lies above it. Atoms go to the
    /// cell that contains them.
    pub fn discretize<D: OutputDistribution<S> + ?Sized>(dist: &D, q: S) -> Result<Self> {
        if !(q > S::zero()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {q}")));
        }
        let level_max = dist.level_max();
        if level_max <= S::zero() {
            return Ok(Self::zero(q));
        }
        if q >= level_max {
            return Err(Error::DegenerateCell { step: q.as_f64(), level_max: level_max.as_f64() });
        }
        let n = (level_max / q).ceil().to_usize().expect("finite level count");
        let half = q / S::lit(2.0);
        let mut probs = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let centre = S::lit(i as f64) * q;
            let lo = if i == 0 { S::zero() } else { centre - half };
            let hi = if i == n { level_max } else { centre + half };
            probs.push(dist.continuous_mass(lo, hi).max(S::zero()));
        }
        for (level, mass) in dist.atoms() {
            let idx = (level / q + S::lit(0.5)).floor().to_usize().unwrap_or(0).min(n);
            probs[idx] = probs[idx] + mass;
        }
        Ok(Self { step: q, probs })
    }

    pub fn step(&self) -> S {
        self.step
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    /// Highest level index `N`.
    pub fn max_level(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn total(&self) -> S {
        self.probs.iter().fold(S::zero(), |acc, &p| acc + p)
    }

    /// Distribution of the sum of two independent sources.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        let tol = S::prob_tolerance() * self.step.max(other.step);
        if (self.step - other.step).abs() > tol {
            return Err(Error::StepMismatch { left: self.step.as_f64(), right: other.step.as_f64() });
        }
        let mut out = vec![S::zero(); self.probs.len() + other.probs.len() - 1];
        for (j, &a) in self.probs.iter().enumerate() {
            if a == S::zero() {
                continue;
            }
            for (k, &b) in other.probs.iter().enumerate() {
                out[j + k] = out[j + k] + a * b;
            }
        }
        Ok(Self { step: self.step, probs: out })
    }

    /// Expected output Σ m·q·s(m).
    pub fn expectation(&self) -> S {
        self.probs.iter().enumerate().fold(S::zero(), |acc, (m, &p)| acc + S::lit(m as f64) * self.step * p)
    }

    /// Deterministic-equivalent rows of the reserve chance constraint at confidence `confidence`.
    pub fn reserve_rows(&self, confidence: S) -> Result<ReserveRequirementRows<S>> {
        if !(confidence > S::zero() && confidence <= S::one()) {
            return Err(Error::InvalidParameter(format!("confidence {confidence} outside (0, 1]")));
        }
        let expected = self.expectation();
        let thresholds = (0..self.probs.len()).map(|m| expected - S::lit(m as f64) * self.step).collect();
        Ok(ReserveRequirementRows { expected, step: self.step, thresholds, probs: self.probs.clone(), confidence })
    }
}

/// Reserve rows for one period.
///
/// With binaries `w_m`, the encoding is `R − E·w_m ≥ −m·q` for every level `m` together
/// with `Σ d(m)·w_m ≥ 𝒢`. Setting `w_m = 1` forces `R ≥ E − m·q`, that is, the reserve
/// covers the shortfall when the renewables land on level `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveRequirementRows<S> {
    pub expected: S,
    pub step: S,
    /// `E − m·q`, strictly decreasing in `m`.
    pub thresholds: Vec<S>,
    pub probs: Vec<S>,
    pub confidence: S,
}

impl<S: Scalar> ReserveRequirementRows<S> {
    /// Big-M of the indicator rows. Every threshold is at most `E`.
    pub fn big_m(&self) -> S {
        self.expected
    }

    /// Offset on the right-hand side of the indicator row for level `m` (`−m·q`).
    pub fn indicator_rhs(&self, m: usize) -> S {
        -(S::lit(m as f64) * self.step)
    }

    /// Probability mass of the levels whose shortfall a reserve `r` covers.
    pub fn satisfied_probability(&self, r: S) -> S {
        self.thresholds.iter().zip(&self.probs).filter(|(t, _)| **t <= r).fold(S::zero(), |acc, (_, &p)| acc + p)
    }

    /// The best indicator assignment for reserve `r`: `w_m = 1` wherever feasible.
    pub fn indicator_assignment(&self, r: S) -> Vec<bool> {
        self.thresholds.iter().map(|t| *t <= r).collect()
    }

    /// Smallest non-negative reserve that satisfies the rows.
    pub fn min_reserve(&self) -> S {
        // Candidate reserves are 0 and the positive thresholds; the satisfied mass only
        // changes there.
        let slack = S::lit(1e-12).max(S::prob_tolerance() * S::lit(1e-3));
        let mut candidates: Vec<S> =
            std::iter::once(S::zero()).chain(self.thresholds.iter().copied().filter(|t| *t > S::zero())).collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
        for r in &candidates {
            if self.satisfied_probability(*r) >= self.confidence - slack {
                return *r;
            }
        }
        self.expected.max(S::zero())
    }
}

/// Monte Carlo estimate of a reserve chance constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceEstimate {
    pub probability: f64,
    /// Half-width of the 95 % normal-approximation interval.
    pub half_width: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 10_000;

/// Estimates `Pr[R ≥ E − P]` where `P` is drawn from `sampler`.
///
/// Samples are generated in chunks of fixed size, each with its own ChaCha stream, so
/// the estimate depends only on `seed` and `n_samples` and not on the thread count.
/// At least 10^4 samples are recommended; the half-width reports the achieved accuracy.
pub fn chance_satisfaction_mc<M>(
    sampler: &M,
    expected: f64,
    reserve: f64,
    n_samples: usize,
    seed: u64,
) -> ChanceEstimate
where
    M: SampleOutput + Sync,
{
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            (0..len).filter(|_| reserve >= expected - sampler.sample(&mut rng)).count()
        })
        .sum();
    let n = n_samples.max(1) as f64;
    let p = hits as f64 / n;
    ChanceEstimate { probability: p, half_width: 1.96 * (p * (1.0 - p) / n).sqrt(), samples: n_samples }
}
