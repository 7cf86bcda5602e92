//! Closed-form key-rate quantities for Gaussian-modulated coherent states
//! with homodyne detection and reverse reconciliation, in shot-noise units.
//!
//! The detector is trusted: its inefficiency and electronic noise are
//! referred to the detector input as `chi_hom = (1 - eta)/eta + v_el/eta`,
//! so the measured quadrature variance is `eta T (V + chi_tot)`.
//!
//! All logarithms are base 2; rates are bits per channel use.

use crate::{Error, Real, Result};

/// Evaluation parameters of a CV-QKD link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams<T> {
    /// Mean detector efficiency, in (0, 1].
    pub eta: T,
    /// Channel excess noise referred to the channel input.
    pub eps_c: T,
    /// Detector electronic noise.
    pub v_el: T,
    /// Alice's modulation variance `V_A`.
    pub modulation_variance: T,
    /// Reconciliation efficiency as a fraction.
    pub beta: T,
}

impl<T: Real> SystemParams<T> {
    pub fn new(eta: T, eps_c: T, v_el: T, modulation_variance: T, beta: T) -> Result<Self> {
        let p = Self {
            eta,
            eps_c,
            v_el,
            modulation_variance,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same as [`SystemParams::new`] with `beta` given in percent.
    pub fn with_beta_percent(eta: T, eps_c: T, v_el: T, modulation_variance: T, beta_percent: T) -> Result<Self> {
        Self::new(eta, eps_c, v_el, modulation_variance, beta_percent / T::lit(100.0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: T| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return bad("eta must lie in (0, 1], got eta", self.eta);
        }
        if !(self.eps_c >= T::zero() && self.eps_c.is_finite()) {
            return bad("eps_c must be >= 0, got eps_c", self.eps_c);
        }
        if !(self.v_el >= T::zero() && self.v_el.is_finite()) {
            return bad("v_el must be >= 0, got v_el", self.v_el);
        }
        if !(self.modulation_variance > T::zero() && self.modulation_variance.is_finite()) {
            return bad("V_A must be > 0, got V_A", self.modulation_variance);
        }
        if !(self.beta >= T::zero() && self.beta <= T::one()) {
            return bad("beta must lie in [0, 1], got beta", self.beta);
        }
        Ok(())
    }
}

/// Power transmittance and input-referred excess noise of the channel seen
/// by the key-rate engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveChannel<T> {
    pub transmittance: T,
    pub excess_noise: T,
}

impl<T: Real> EffectiveChannel<T> {
    pub fn new(transmittance: T, excess_noise: T) -> Result<Self> {
        let ch = Self {
            transmittance,
            excess_noise,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.transmittance == T::zero() {
            return Err(Error::SingularChannel("transmittance is zero".into()));
        }
        if !(self.transmittance > T::zero() && self.transmittance <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "transmittance must lie in (0, 1], got {}",
                self.transmittance
            )));
        }
        if !(self.excess_noise >= T::zero() && self.excess_noise.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "excess noise must be >= 0, got {}",
                self.excess_noise
            )));
        }
        Ok(())
    }
}

/// Intermediate noise terms shared by all the entropic quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTerms<T> {
    /// Line noise referred to the channel input, `1/T - 1 + eps`.
    pub chi_line: T,
    /// Detection noise referred to the detector input.
    pub chi_hom: T,
    /// `chi_line + chi_hom / T`.
    pub chi_tot: T,
    /// Alice's EPR variance `V_A + 1`.
    pub v: T,
    /// Bob's measured quadrature variance.
    pub v_b: T,
}

/// Per-term decomposition of the tagged rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateBreakdown<T> {
    pub p0: T,
    pub i_ab: T,
    pub h_xb: T,
    pub chi_be: T,
    pub beta: T,
    pub rate: T,
}

impl<T: Real> KeyRateBreakdown<T> {
    /// Assembles the breakdown; `rate = beta I - (1 - p0) H - p0 chi`.
    pub fn assemble(beta: T, p0: T, i_ab: T, h_xb: T, chi_be: T) -> Self {
        let rate = beta * i_ab - (T::one() - p0) * h_xb - p0 * chi_be;
        Self {
            p0,
            i_ab,
            h_xb,
            chi_be,
            beta,
            rate,
        }
    }
}

/// `H2(x) = -x log2 x - (1 - x) log2 (1 - x)`.
pub fn binary_entropy<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::Domain(format!("binary entropy needs x in [0, 1], got {x}")));
    }
    let term = |p: T| if p == T::zero() { T::zero() } else { -p * p.log2() };
    Ok(term(x) + term(T::one() - x))
}

/// Bosonic entropy `G(x) = (x + 1) log2 (x + 1) - x log2 x`.
pub fn g_func<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero()) || !x.is_finite() {
        return Err(Error::Domain(format!("G(x) needs x >= 0, got {x}")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    let x1 = x + T::one();
    Ok(x1 * x1.log2() - x * x.log2())
}

pub fn channel_terms<T: Real>(p: &SystemParams<T>, ch: &EffectiveChannel<T>) -> Result<ChannelTerms<T>> {
    ch.validate()?;
    let t = ch.transmittance;
    let v = p.modulation_variance + T::one();
    let chi_line = T::one() / t - T::one() + ch.excess_noise;
    let chi_hom = (T::one() - p.eta) / p.eta + p.v_el / p.eta;
    let chi_tot = chi_line + chi_hom / t;
    let v_b = p.eta * t * (v + chi_tot);
    Ok(ChannelTerms {
        chi_line,
        chi_hom,
        chi_tot,
        v,
        v_b,
    })
}

/// `I(A:B) = 1/2 log2 [(V + chi_tot) / (1 + chi_tot)]`.
pub fn mutual_information<T: Real>(p: &SystemParams<T>, ch: &EffectiveChannel<T>) -> Result<T> {
    let c = channel_terms(p, ch)?;
    Ok(T::lit(0.5) * ((c.v + c.chi_tot) / (T::one() + c.chi_tot)).log2())
}

/// Differential entropy of Bob's Gaussian quadrature, `1/2 log2 (2 pi e V_B)`.
pub fn bob_entropy<T: Real>(p: &SystemParams<T>, ch: &EffectiveChannel<T>) -> Result<T> {
    let c = channel_terms(p, ch)?;
    Ok(gaussian_entropy_bits(c.v_b))
}

pub(crate) fn gaussian_entropy_bits<T: Real>(variance: T) -> T {
    T::lit(0.5) * (T::lit(2.0) * T::PI() * T::E() * variance).log2()
}

/// Square roots of `(s + sqrt(s^2 - 4 q)) / 2` and `(s - sqrt(...)) / 2`.
fn eigen_pair<T: Real>(s: T, q: T, which: &str) -> Result<(T, T)> {
    let tol = T::lit(1e-9);
    let mut disc = s * s - T::lit(4.0) * q;
    if disc < T::zero() {
        if disc < -tol * (T::one() + s * s) {
            return Err(Error::NumericalDomain(format!(
                "negative discriminant {disc} for {which} symplectic eigenvalues"
            )));
        }
        disc = T::zero();
    }
    let root = disc.sqrt();
    let half = T::lit(0.5);
    let hi = (half * (s + root)).max(T::zero()).sqrt();
    let lo = (half * (s - root)).max(T::zero()).sqrt();
    Ok((hi, lo))
}

/// Symplectic eigenvalues `[l1, l2, l3, l4]`: `l1, l2` of Alice and Bob's
/// joint state, `l3, l4` of Alice's state conditioned on Bob's homodyne
/// outcome (trusted detector noise included).
pub fn symplectic_eigenvalues<T: Real>(p: &SystemParams<T>, ch: &EffectiveChannel<T>) -> Result<[T; 4]> {
    let c = channel_terms(p, ch)?;
    let t = ch.transmittance;
    let v = c.v;
    let two = T::lit(2.0);

    let a = v * v * (T::one() - two * t) + two * t + t * t * (v + c.chi_line).powi(2);
    let b = t * t * (v * c.chi_line + T::one()).powi(2);
    let (l1, l2) = eigen_pair(a, b, "joint")?;

    let sqrt_b = b.sqrt();
    let denom = t * (v + c.chi_tot);
    let cc = (a * c.chi_hom + v * sqrt_b + t * (v + c.chi_line)) / denom;
    let d = sqrt_b * (v + sqrt_b * c.chi_hom) / denom;
    let (l3, l4) = eigen_pair(cc, d, "conditional")?;

    Ok([l1, l2, l3, l4])
}

/// `G` of `(lambda - 1)/2` with round-off below the vacuum value absorbed.
fn g_of_eigenvalue<T: Real>(lambda: T) -> Result<T> {
    let x = (lambda - T::one()) / T::lit(2.0);
    if x < T::zero() {
        if x < -T::lit(1e-9) {
            return Err(Error::NumericalDomain(format!(
                "symplectic eigenvalue {lambda} below the vacuum bound"
            )));
        }
        return Ok(T::zero());
    }
    g_func(x)
}

/// Holevo bound `chi_BE` on Eve's information about Bob's key.
pub fn holevo_bound<T: Real>(p: &SystemParams<T>, ch: &EffectiveChannel<T>) -> Result<T> {
    let [l1, l2, l3, l4] = symplectic_eigenvalues(p, ch)?;
    let chi = g_of_eigenvalue(l1)? + g_of_eigenvalue(l2)? - g_of_eigenvalue(l3)? - g_of_eigenvalue(l4)?;
    Ok(chi)
}

/// Rate with every state untagged: `beta I(A:B) - chi_BE`.
pub fn perfect_rate<T: Real>(p: &SystemParams<T>, ch: &EffectiveChannel<T>) -> Result<T> {
    Ok(p.beta * mutual_information(p, ch)? - holevo_bound(p, ch)?)
}
