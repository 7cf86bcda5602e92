//! Tagged key rate for pipelines with fluctuating gains.
//!
//! A signal is untagged when every fluctuating stage gain stays at or below
//! its cutoff `k_s * mean(a_s)`. Only untagged signals contribute secret key:
//!
//! ```text
//! R = beta I(A':B) - (1 - p0) H(X_B) - p0 chi_BE
//! ```
//!
//! Raising the cutoffs raises `p0`. In exchange Alice rescales her data by
//! `k = prod k_s` and Eve's information is bounded on the correspondingly
//! worse channel `(k^2 V_A, T / k^2, k^2 eps)`. Bob-side terms stay at the
//! measured (unmapped) channel.

use rayon::prelude::*;

use crate::keyrate::{self, EffectiveChannel, KeyRateBreakdown, SystemParams};
use crate::pipeline::{effective_params, EffectiveParams, Pipeline};
use crate::{Error, Real, Result};

/// Cutoff coefficients for the modulation, channel and detection stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffPlan<T> {
    pub k1: T,
    pub k2: T,
    pub k3: T,
}

impl<T: Real> CutoffPlan<T> {
    pub fn new(k1: T, k2: T, k3: T) -> Result<Self> {
        for (name, k) in [("k1", k1), ("k2", k2), ("k3", k3)] {
            if !(k >= T::one()) || !k.is_finite() {
                return Err(Error::InvalidParameter(format!("cutoff {name} must be >= 1, got {k}")));
            }
        }
        Ok(Self { k1, k2, k3 })
    }

    pub fn unit() -> Self {
        Self {
            k1: T::one(),
            k2: T::one(),
            k3: T::one(),
        }
    }

    fn as_array(&self) -> [T; 3] {
        [self.k1, self.k2, self.k3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedRateInput<T> {
    pub params: SystemParams<T>,
    pub pipeline: Pipeline<T>,
    pub plan: CutoffPlan<T>,
}

/// `p0 = prod_s P(a_s <= k_s mean(a_s))`.
pub fn untagged_probability<T: Real>(pipeline: &Pipeline<T>, plan: &CutoffPlan<T>) -> T {
    pipeline
        .stages()
        .iter()
        .zip(plan.as_array())
        .map(|(stage, k)| {
            let a = stage.gain();
            a.cdf(k * a.mean())
        })
        .fold(T::one(), |acc, f| acc * f)
}

/// Product of the cutoffs on stages whose gain actually fluctuates. A cutoff
/// on a deterministic stage tags nothing, so Alice has nothing to rescale.
pub fn mapping_scale<T: Real>(pipeline: &Pipeline<T>, plan: &CutoffPlan<T>) -> T {
    pipeline
        .stages()
        .iter()
        .zip(plan.as_array())
        .filter(|(stage, _)| !stage.gain().is_point_mass())
        .fold(T::one(), |acc, (_, k)| acc * k)
}

/// Channel against which Eve's information is bounded after Alice rescales
/// her data by `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedChannel<T> {
    pub channel: EffectiveChannel<T>,
    pub modulation_variance: T,
}

/// `V_A' = k^2 V_A`, `T' = T / k^2`, `eps' = k^2 eps`. This keeps Bob's
/// variance and the Alice-Bob covariance unchanged under the rescaled claim.
pub fn mapped_effective_channel<T: Real>(eff: &EffectiveParams<T>, k: T) -> Result<MappedChannel<T>> {
    if !(k >= T::one()) {
        return Err(Error::InvalidParameter(format!("mapping scale must be >= 1, got {k}")));
    }
    let k2 = k * k;
    let channel = EffectiveChannel::new(eff.t_eff / k2, k2 * eff.eps_eff)?;
    debug_assert!(channel.transmittance <= T::one());
    Ok(MappedChannel {
        channel,
        modulation_variance: k2 * eff.modulation_variance,
    })
}

pub fn rate_with_tagging<T: Real>(input: &TaggedRateInput<T>) -> Result<KeyRateBreakdown<T>> {
    input.params.validate()?;
    let eff = effective_params(&input.pipeline)?;
    rate_from_effective(&eff, &input.pipeline, &input.plan, input.params.beta)
}

fn rate_from_effective<T: Real>(
    eff: &EffectiveParams<T>,
    pipeline: &Pipeline<T>,
    plan: &CutoffPlan<T>,
    beta: T,
) -> Result<KeyRateBreakdown<T>> {
    let sys = eff.system(beta)?;
    let measured = eff.channel()?;
    let p0 = untagged_probability(pipeline, plan);
    let i_ab = keyrate::mutual_information(&sys, &measured)?;
    let h_xb = keyrate::bob_entropy(&sys, &measured)?;

    let mapped = mapped_effective_channel(eff, mapping_scale(pipeline, plan))?;
    let sys_mapped = SystemParams {
        modulation_variance: mapped.modulation_variance,
        ..sys
    };
    let chi_be = keyrate::holevo_bound(&sys_mapped, &mapped.channel)?;
    let out = KeyRateBreakdown::assemble(beta, p0, i_ab, h_xb, chi_be);
    if out.rate.is_nan() {
        return Err(Error::NumericalDomain("key rate evaluated to NaN".into()));
    }
    Ok(out)
}

/// Regular grid `k_min, k_min + step, ...` up to `k_max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KGrid<T> {
    pub min: T,
    pub max: T,
    pub step: T,
}

impl<T: Real> Default for KGrid<T> {
    fn default() -> Self {
        Self {
            min: T::one(),
            max: T::lit(1.30),
            step: T::lit(0.005),
        }
    }
}

impl<T: Real> KGrid<T> {
    pub fn new(min: T, max: T, step: T) -> Result<Self> {
        let g = Self { min, max, step };
        g.points()?;
        Ok(g)
    }

    pub fn points(&self) -> Result<Vec<T>> {
        if !(self.min >= T::one()) {
            return Err(Error::Config(format!("k-min must be >= 1, got {}", self.min)));
        }
        if !(self.max >= self.min) {
            return Err(Error::Config(format!(
                "empty cutoff grid: k-max {} < k-min {}",
                self.max, self.min
            )));
        }
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(Error::Config(format!("k-step must be > 0, got {}", self.step)));
        }
        let span = ((self.max - self.min) / self.step).to_f64_lossy();
        let n = (span + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.min + T::lit(i as f64) * self.step).collect())
    }
}

/// Exhaustive search over the cutoff grid.
///
/// Deterministic stages are pinned (`k_min` for modulation and detection,
/// 1 for the channel), which is also where the tie-break would land. Ties
/// go to the smaller `k1`, then `k3`, then `k2`.
pub fn optimize_cutoffs<T: Real>(
    params: &SystemParams<T>,
    pipeline: &Pipeline<T>,
    grid: &KGrid<T>,
) -> Result<(CutoffPlan<T>, KeyRateBreakdown<T>)> {
    params.validate()?;
    let points = grid.points()?;
    let eff = effective_params(pipeline)?;

    let axis = |fluctuates: bool, pinned: T| -> Vec<T> {
        if fluctuates {
            points.clone()
        } else {
            vec![pinned]
        }
    };
    let [m, c, d] = pipeline.stages().map(|s| !s.gain().is_point_mass());
    let k1s = axis(m, grid.min);
    let k2s = axis(c, T::one());
    let k3s = axis(d, grid.min);

    // row-major in (k1, k3, k2) so that index order is the tie-break order
    let plans: Vec<CutoffPlan<T>> = k1s
        .iter()
        .flat_map(|&k1| {
            let k2s = &k2s;
            k3s.iter()
                .flat_map(move |&k3| k2s.iter().map(move |&k2| CutoffPlan { k1, k2, k3 }))
        })
        .collect();

    let results: Vec<Result<KeyRateBreakdown<T>>> = plans
        .par_iter()
        .map(|plan| rate_from_effective(&eff, pipeline, plan, params.beta))
        .collect();

    let mut best: Option<(usize, KeyRateBreakdown<T>)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        match &best {
            Some((_, b)) if r.rate <= b.rate => {}
            _ => best = Some((i, r)),
        }
    }
    let (i, breakdown) = best.ok_or_else(|| Error::Config("empty cutoff grid".into()))?;
    Ok((plans[i], breakdown))
}
