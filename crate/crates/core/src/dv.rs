//! Discrete-variable tagging rates (single-photon and weak-coherent sources).

use crate::keyrate::binary_entropy;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvTaggedInput<T> {
    /// Tagged fraction of the signals.
    pub p_tagged: T,
    /// Key length after error correction.
    pub sifted_length: T,
    /// Phase error rate of the untagged signals.
    pub phase_error: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WcpInput<T> {
    /// Single-photon gain.
    pub q1: T,
    /// Single-photon phase error rate.
    pub e_phase: T,
    /// Error-correction inefficiency, >= 1.
    pub f_ec: T,
    /// Overall gain.
    pub gain: T,
    /// Overall QBER.
    pub qber: T,
}

/// How the error-correction cost of [`wcp_rate`] is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EcCost {
    /// `f Q H2(E)`.
    #[default]
    Entropic,
    /// `f Q E`, the bit-error count taken literally.
    Linear,
}

fn unit_interval<T: Real>(name: &str, x: T) -> Result<()> {
    if x >= T::zero() && x <= T::one() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {x}")))
    }
}

impl<T: Real> DvTaggedInput<T> {
    pub fn validate(&self) -> Result<()> {
        unit_interval("tagged fraction", self.p_tagged)?;
        unit_interval("phase error rate", self.phase_error)?;
        if !(self.sifted_length >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "key length must be >= 0, got {}",
                self.sifted_length
            )));
        }
        Ok(())
    }
}

impl<T: Real> WcpInput<T> {
    pub fn validate(&self) -> Result<()> {
        unit_interval("phase error rate", self.e_phase)?;
        unit_interval("QBER", self.qber)?;
        if !(self.q1 >= T::zero()) || !(self.gain >= T::zero()) {
            return Err(Error::InvalidParameter("gains must be >= 0".into()));
        }
        if self.q1 > self.gain {
            return Err(Error::InvalidParameter(format!(
                "single-photon gain {} exceeds total gain {}",
                self.q1, self.gain
            )));
        }
        if !(self.f_ec >= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "error-correction coefficient must be >= 1, got {}",
                self.f_ec
            )));
        }
        Ok(())
    }
}

/// `K = (1 - p) s (1 - H2(delta))`. Negative values are returned as-is.
pub fn gllp_rate<T: Real>(input: &DvTaggedInput<T>) -> Result<T> {
    input.validate()?;
    let untagged = (T::one() - input.p_tagged) * input.sifted_length;
    Ok(untagged * (T::one() - binary_entropy(input.phase_error)?))
}

/// `K = Q1 (1 - H2(e1)) - f Q cost(E)`.
pub fn wcp_rate<T: Real>(input: &WcpInput<T>, cost: EcCost) -> Result<T> {
    input.validate()?;
    let privacy = input.q1 * (T::one() - binary_entropy(input.e_phase)?);
    let leak = match cost {
        EcCost::Entropic => binary_entropy(input.qber)?,
        EcCost::Linear => input.qber,
    };
    Ok(privacy - input.f_ec * input.gain * leak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(p: f64, s: f64, d: f64) -> DvTaggedInput<f64> {
        DvTaggedInput {
            p_tagged: p,
            sifted_length: s,
            phase_error: d,
        }
    }

    #[test]
    fn gllp_examples() {
        assert_eq!(gllp_rate(&dv(0.0, 1000.0, 0.0)).unwrap(), 1000.0);
        assert_eq!(gllp_rate(&dv(1.0, 1234.0, 0.07)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            gllp_rate(&dv(0.1, 1000.0, 0.05)).unwrap(),
            642.242738595639,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(gllp_rate(&dv(0.3, 77.0, 0.5)).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gllp_linear_in_length() {
        let a = gllp_rate(&dv(0.2, 100.0, 0.03)).unwrap();
        let b = gllp_rate(&dv(0.2, 300.0, 0.03)).unwrap();
        assert_abs_diff_eq!(b, 3.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn wcp_examples() {
        let noiseless = WcpInput {
            q1: 0.2,
            e_phase: 0.0,
            f_ec: 1.0,
            gain: 0.2,
            qber: 0.0,
        };
        assert_eq!(wcp_rate(&noiseless, EcCost::Entropic).unwrap(), 0.2);

        let dark = WcpInput {
            q1: 0.0,
            qber: 0.04,
            gain: 0.1,
            f_ec: 1.2,
            e_phase: 0.1,
        };
        let k = wcp_rate(&dark, EcCost::Entropic).unwrap();
        assert!(k <= 0.0);
        assert_abs_diff_eq!(k, -1.2 * 0.1 * binary_entropy(0.04).unwrap(), epsilon = 1e-15);

        let typical = WcpInput {
            q1: 0.1,
            e_phase: 0.05,
            f_ec: 1.16,
            gain: 0.12,
            qber: 0.03,
        };
        assert_abs_diff_eq!(
            wcp_rate(&typical, EcCost::Entropic).unwrap(),
            0.0443009576782490,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            wcp_rate(&typical, EcCost::Linear).unwrap(),
            0.1 * (1.0 - 0.286396957115956) - 1.16 * 0.12 * 0.03,
            epsilon = 1e-9
        );
    }

    #[test]
    fn wcp_rejects_inconsistent_gains() {
        let bad = WcpInput {
            q1: 0.3,
            e_phase: 0.0,
            f_ec: 1.0,
            gain: 0.2,
            qber: 0.0,
        };
        assert!(wcp_rate(&bad, EcCost::Entropic).is_err());
        let bad_f = WcpInput {
            q1: 0.1,
            e_phase: 0.0,
            f_ec: 0.9,
            gain: 0.2,
            qber: 0.0,
        };
        assert!(wcp_rate(&bad_f, EcCost::Entropic).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wcp_monotone(q1 in 0.0..0.1f64, extra in 0.0..0.1f64, e1 in 0.0..0.49f64,
                            ee in 0.0..0.49f64, de in 0.0..0.01f64, f in 1.0..1.5f64) {
                let base = WcpInput { q1, e_phase: e1, f_ec: f, gain: q1 + extra + 0.01, qber: ee };
                let k = wcp_rate(&base, EcCost::Entropic).unwrap();
                let worse_e = WcpInput { qber: ee + de, ..base };
                let worse_p = WcpInput { e_phase: e1 + de, ..base };
                let more_q1 = WcpInput { q1: (q1 + de).min(base.gain), ..base };
                prop_assert!(wcp_rate(&worse_e, EcCost::Entropic).unwrap() <= k + 1e-15);
                prop_assert!(wcp_rate(&worse_p, EcCost::Entropic).unwrap() <= k + 1e-15);
                prop_assert!(wcp_rate(&more_q1, EcCost::Entropic).unwrap() >= k - 1e-15);
            }
        }
    }
}
