//! Scalar probability laws for stage gains, additive noise and the
//! Monte-Carlo simulator.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionKind<T> {
    Gaussian { mean: T, variance: T },
    Uniform { lo: T, hi: T },
    Degenerate { value: T },
}

/// A validated scalar distribution. Construct through [`Distribution::gaussian`],
/// [`Distribution::uniform`] or [`Distribution::degenerate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution<T> {
    kind: DistributionKind<T>,
}

impl<T: Real> Distribution<T> {
    pub fn gaussian(mean: T, variance: T) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance < T::zero() {
            return Err(Error::InvalidDistribution(format!(
                "gaussian needs finite mean and variance >= 0, got mean={mean}, variance={variance}"
            )));
        }
        Ok(Self {
            kind: DistributionKind::Gaussian { mean, variance },
        })
    }

    pub fn uniform(lo: T, hi: T) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidDistribution(format!(
                "uniform needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            kind: DistributionKind::Uniform { lo, hi },
        })
    }

    pub fn degenerate(value: T) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "degenerate value must be finite, got {value}"
            )));
        }
        Ok(Self {
            kind: DistributionKind::Degenerate { value },
        })
    }

    /// Point mass at zero.
    pub fn zero() -> Self {
        Self {
            kind: DistributionKind::Degenerate { value: T::zero() },
        }
    }

    pub fn kind(&self) -> DistributionKind<T> {
        self.kind
    }

    /// True when all mass sits on a single point (including zero-variance
    /// Gaussians).
    pub fn is_point_mass(&self) -> bool {
        match self.kind {
            DistributionKind::Degenerate { .. } => true,
            DistributionKind::Gaussian { variance, .. } => variance == T::zero(),
            DistributionKind::Uniform { .. } => false,
        }
    }

    pub fn mean(&self) -> T {
        match self.kind {
            DistributionKind::Gaussian { mean, .. } => mean,
            DistributionKind::Uniform { lo, hi } => (lo + hi) / T::lit(2.0),
            DistributionKind::Degenerate { value } => value,
        }
    }

    pub fn variance(&self) -> T {
        match self.kind {
            DistributionKind::Gaussian { variance, .. } => variance,
            DistributionKind::Uniform { lo, hi } => {
                let w = hi - lo;
                w * w / T::lit(12.0)
            }
            DistributionKind::Degenerate { .. } => T::zero(),
        }
    }

    /// `E[X^2] = mean^2 + variance`.
    pub fn second_moment(&self) -> T {
        let m = self.mean();
        m * m + self.variance()
    }

    /// Density. Point masses have no density; this returns 0 off the atom
    /// and +inf on it.
    pub fn pdf(&self, x: T) -> T {
        match self.kind {
            DistributionKind::Gaussian { mean, variance } if variance > T::zero() => {
                let z = x - mean;
                (-(z * z) / (T::lit(2.0) * variance)).exp() / (T::lit(2.0) * T::PI() * variance).sqrt()
            }
            DistributionKind::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    T::one() / (hi - lo)
                } else {
                    T::zero()
                }
            }
            _ => {
                if x == self.mean() {
                    T::infinity()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `P(X <= x)`. Point masses use the right-continuous step, so the atom
    /// itself counts as below the threshold.
    pub fn cdf(&self, x: T) -> T {
        if x.is_nan() {
            return T::nan();
        }
        match self.kind {
            DistributionKind::Gaussian { mean, variance } if variance > T::zero() => {
                let z = (x - mean).to_f64_lossy() / (2.0 * variance.to_f64_lossy()).sqrt();
                T::lit(0.5 * libm::erfc(-z))
            }
            DistributionKind::Uniform { lo, hi } => {
                if x <= lo {
                    T::zero()
                } else if x >= hi {
                    T::one()
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            _ => {
                if x < self.mean() {
                    T::zero()
                } else {
                    T::one()
                }
            }
        }
    }

    /// `P(|X| > bound)`.
    pub fn tail_beyond(&self, bound: T) -> T {
        match self.kind {
            _ if self.is_point_mass() => {
                if self.mean().abs() > bound {
                    T::one()
                } else {
                    T::zero()
                }
            }
            DistributionKind::Gaussian { mean, variance } => {
                let s = (2.0 * variance.to_f64_lossy()).sqrt();
                let (m, b) = (mean.to_f64_lossy(), bound.to_f64_lossy());
                T::lit(0.5 * libm::erfc((b - m) / s) + 0.5 * libm::erfc((b + m) / s))
            }
            _ => self.cdf(-bound) + (T::one() - self.cdf(bound)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self.kind {
            DistributionKind::Gaussian { mean, variance } => {
                if variance == T::zero() {
                    mean
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + variance.sqrt() * T::lit(z)
                }
            }
            DistributionKind::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                lo + (hi - lo) * T::lit(u)
            }
            DistributionKind::Degenerate { value } => value,
        }
    }
}
