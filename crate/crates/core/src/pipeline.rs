//! Stage model for device imperfections.
//!
//! Each stage maps a quadrature `x` to `a x + sqrt(max(0, 1 - a^2)) b` with
//! random gain `a` and zero-mean additive term `b`. A physical loss stage
//! also lets in vacuum; stages flagged with `vacuum_fill` add
//! `max(0, 1 - E[a^2])` of unit-variance vacuum on top of `b`, which is what
//! makes the pipeline's output variance agree with [`crate::keyrate`].
//!
//! Three stages (modulation, channel, detection) form a [`Pipeline`]. Its
//! statistics are available two ways: the analytic moment recursion
//! ([`output_moments`], [`effective_params`]) and the Monte-Carlo simulator
//! ([`simulate_pipeline`], [`simulate_moments`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::keyrate::{EffectiveChannel, SystemParams};
use crate::{Distribution, Error, Real, Result};

/// Limit on `P(|a| > 1)` for stages that carry additive noise.
pub const GAIN_TAIL_LIMIT: f64 = 1e-6;

/// Loss floor for preset channels that carry excess noise.
pub const MIN_NOISY_CHANNEL_LOSS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageLabel {
    Modulation,
    Channel,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTransform<T> {
    label: StageLabel,
    a: Distribution<T>,
    b: Distribution<T>,
    vacuum_fill: bool,
}

impl<T: Real> StageTransform<T> {
    /// Generic stage. Channel and detection stages inject vacuum by default;
    /// see [`StageTransform::with_vacuum_fill`].
    pub fn new(label: StageLabel, a: Distribution<T>, b: Distribution<T>) -> Result<Self> {
        if b.mean() != T::zero() {
            return Err(Error::InvalidDistribution(format!(
                "additive term must have zero mean, got {}",
                b.mean()
            )));
        }
        if b.variance() > T::zero() && a.tail_beyond(T::one()) >= T::lit(GAIN_TAIL_LIMIT) {
            return Err(Error::InvalidDistribution(format!(
                "P(|a| > 1) = {} is too large for a stage with additive noise",
                a.tail_beyond(T::one())
            )));
        }
        Ok(Self {
            label,
            a,
            b,
            vacuum_fill: !matches!(label, StageLabel::Modulation),
        })
    }

    pub fn identity(label: StageLabel) -> Self {
        Self {
            label,
            a: Distribution::degenerate(T::one()).expect("finite"),
            b: Distribution::zero(),
            vacuum_fill: !matches!(label, StageLabel::Modulation),
        }
    }

    pub fn with_vacuum_fill(mut self, on: bool) -> Self {
        self.vacuum_fill = on;
        self
    }

    pub fn label(&self) -> StageLabel {
        self.label
    }

    pub fn gain(&self) -> &Distribution<T> {
        &self.a
    }

    pub fn noise(&self) -> &Distribution<T> {
        &self.b
    }

    pub fn vacuum_fill(&self) -> bool {
        self.vacuum_fill
    }

    /// Vacuum variance injected by this stage.
    pub fn vacuum_variance(&self) -> T {
        if self.vacuum_fill {
            (T::one() - self.a.second_moment()).max(T::zero())
        } else {
            T::zero()
        }
    }

    /// `E[x'^2]` given `E[x^2] = m`, for zero-mean x independent of a and b.
    pub fn propagate_second_moment(&self, m: T) -> T {
        let ea2 = self.a.second_moment();
        ea2 * m + self.vacuum_variance() + (T::one() - ea2) * self.b.variance()
    }

    /// One draw of `a x + sqrt(max(0, 1 - a^2)) b`.
    pub fn apply<R: Rng + ?Sized>(&self, x: T, rng: &mut R) -> T {
        let a = self.a.sample(rng);
        let b = self.b.sample(rng);
        a * x + (T::one() - a * a).max(T::zero()).sqrt() * b
    }

    /// [`StageTransform::apply`] plus this stage's vacuum contribution.
    fn propagate<R: Rng + ?Sized>(&self, x: T, rng: &mut R) -> T {
        let y = self.apply(x, rng);
        let vac = self.vacuum_variance();
        if vac > T::zero() {
            let z: f64 = rng.sample(StandardNormal);
            y + vac.sqrt() * T::lit(z)
        } else {
            y
        }
    }
}

/// Free-function form of [`StageTransform::apply`].
pub fn apply_stage<T: Real, R: Rng + ?Sized>(stage: &StageTransform<T>, x: T, rng: &mut R) -> T {
    stage.apply(x, rng)
}

/// Fiber or free-space loss with thermal excess noise `eps_c` referred to
/// the channel input: `a = sqrt(T_c)`, `Var(b) = T_c eps_c / (1 - T_c)`.
pub fn lossy_channel_stage<T: Real>(transmittance: T, excess_noise: T) -> Result<StageTransform<T>> {
    if transmittance == T::zero() {
        return Err(Error::SingularChannel("channel transmittance is zero".into()));
    }
    if !(transmittance > T::zero() && transmittance <= T::one()) {
        return Err(Error::InvalidParameter(format!(
            "channel transmittance must lie in (0, 1], got {transmittance}"
        )));
    }
    if !(excess_noise >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "excess noise must be >= 0, got {excess_noise}"
        )));
    }
    if transmittance == T::one() {
        if excess_noise > T::zero() {
            return Err(Error::SingularChannel(
                "thermal noise variance diverges at unit transmittance".into(),
            ));
        }
        return Ok(StageTransform::identity(StageLabel::Channel));
    }
    let var_b = transmittance * excess_noise / (T::one() - transmittance);
    StageTransform::new(
        StageLabel::Channel,
        Distribution::degenerate(transmittance.sqrt())?,
        Distribution::gaussian(T::zero(), var_b)?,
    )
}

/// Rotation by `theta` mixing in the conjugate quadrature, whose variance
/// is `quadrature_variance`. The conjugate quadrature already carries its
/// vacuum, so no extra vacuum is injected.
pub fn phase_rotation_stage<T: Real>(theta: T, quadrature_variance: T) -> Result<StageTransform<T>> {
    if !(theta.abs() < T::FRAC_PI_2()) {
        return Err(Error::InvalidParameter(format!("|theta| must be < pi/2, got {theta}")));
    }
    if !(quadrature_variance >= T::one()) {
        return Err(Error::InvalidParameter(format!(
            "quadrature variance must be >= 1, got {quadrature_variance}"
        )));
    }
    Ok(StageTransform::new(
        StageLabel::Channel,
        Distribution::degenerate(theta.cos())?,
        Distribution::gaussian(T::zero(), quadrature_variance)?,
    )?
    .with_vacuum_fill(false))
}

/// Distribution family for fluctuating gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fluctuation {
    #[default]
    Gaussian,
    /// Uniform with the same mean and variance.
    Uniform,
}

impl Fluctuation {
    pub fn distribution<T: Real>(self, mean: T, variance: T) -> Result<Distribution<T>> {
        if variance == T::zero() {
            return Distribution::degenerate(mean);
        }
        match self {
            Fluctuation::Gaussian => Distribution::gaussian(mean, variance),
            Fluctuation::Uniform => {
                let half = (T::lit(3.0) * variance).sqrt();
                Distribution::uniform(mean - half, mean + half)
            }
        }
    }
}

/// How Bob's electronic noise is placed in the detection stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElectronicNoise {
    /// `Var(b_d) = v_el / (1 - eta)`: the detector output carries `v_el`, as
    /// the key-rate engine assumes.
    #[default]
    Calibrated,
    /// `Var(b_d) = eta v_el / (1 - eta)` taken literally; the output carries
    /// `eta v_el`.
    Literal,
}

/// Intensity-fluctuating source: `a_m` with mean 1 and variance `v1`, no
/// additive term.
pub fn modulation_stage<T: Real>(v1: T, family: Fluctuation) -> Result<StageTransform<T>> {
    if !(v1 >= T::zero()) {
        return Err(Error::InvalidParameter(format!("V1 must be >= 0, got {v1}")));
    }
    StageTransform::new(
        StageLabel::Modulation,
        family.distribution(T::one(), v1)?,
        Distribution::zero(),
    )
}

/// Homodyne detector with efficiency `eta` fluctuating with variance `v2`
/// and electronic noise `v_el`.
pub fn detection_stage<T: Real>(
    eta: T,
    v_el: T,
    v2: T,
    family: Fluctuation,
    convention: ElectronicNoise,
) -> Result<StageTransform<T>> {
    if !(v2 >= T::zero()) {
        return Err(Error::InvalidParameter(format!("V2 must be >= 0, got {v2}")));
    }
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(Error::InvalidParameter(format!("eta must lie in (0, 1], got {eta}")));
    }
    let a = family.distribution(eta.sqrt(), v2)?;
    let b = if eta == T::one() {
        if v_el > T::zero() {
            return Err(Error::SingularChannel(
                "electronic noise variance diverges at unit efficiency".into(),
            ));
        }
        Distribution::zero()
    } else {
        let var_b = match convention {
            ElectronicNoise::Calibrated => v_el / (T::one() - eta),
            ElectronicNoise::Literal => eta * v_el / (T::one() - eta),
        };
        Distribution::gaussian(T::zero(), var_b)?
    };
    StageTransform::new(StageLabel::Detection, a, b)
}

/// Modulation, channel and detection stages applied in that order to a
/// coherent state with Gaussian modulation variance `V_A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pipeline<T> {
    pub modulation: StageTransform<T>,
    pub channel: StageTransform<T>,
    pub detection: StageTransform<T>,
    modulation_variance: T,
}

/// Knobs for [`Pipeline::preset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetShape<T> {
    pub v1: T,
    pub v2: T,
    pub family: Fluctuation,
    pub electronic_noise: ElectronicNoise,
}

impl<T: Real> PresetShape<T> {
    pub fn new(v1: T, v2: T) -> Self {
        Self {
            v1,
            v2,
            family: Fluctuation::Gaussian,
            electronic_noise: ElectronicNoise::Calibrated,
        }
    }
}

impl<T: Real> Pipeline<T> {
    pub fn new(
        modulation: StageTransform<T>,
        channel: StageTransform<T>,
        detection: StageTransform<T>,
        modulation_variance: T,
    ) -> Result<Self> {
        let labels = [modulation.label, channel.label, detection.label];
        if labels != [StageLabel::Modulation, StageLabel::Channel, StageLabel::Detection] {
            return Err(Error::InvalidParameter(format!(
                "stages must be ordered modulation, channel, detection; got {labels:?}"
            )));
        }
        if !(modulation_variance > T::zero() && modulation_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "V_A must be > 0, got {modulation_variance}"
            )));
        }
        Ok(Self {
            modulation,
            channel,
            detection,
            modulation_variance,
        })
    }

    /// The application pipeline: fluctuating source, lossy channel with
    /// excess noise, fluctuating detector with electronic noise.
    ///
    /// A noisy channel cannot be lossless in the stage model, so with
    /// `eps_c > 0` the transmittance is capped at `1 - MIN_NOISY_CHANNEL_LOSS`.
    pub fn preset(params: &SystemParams<T>, transmittance: T, shape: &PresetShape<T>) -> Result<Self> {
        params.validate()?;
        let cap = T::one() - T::lit(MIN_NOISY_CHANNEL_LOSS).max(T::epsilon());
        let transmittance = if params.eps_c > T::zero() && transmittance > cap {
            cap
        } else {
            transmittance
        };
        Self::new(
            modulation_stage(shape.v1, shape.family)?,
            lossy_channel_stage(transmittance, params.eps_c)?,
            detection_stage(params.eta, params.v_el, shape.v2, shape.family, shape.electronic_noise)?,
            params.modulation_variance,
        )
    }

    pub fn modulation_variance(&self) -> T {
        self.modulation_variance
    }

    pub fn stages(&self) -> [&StageTransform<T>; 3] {
        [&self.modulation, &self.channel, &self.detection]
    }

    /// Second moment of the quadrature entering the modulation stage:
    /// modulation plus one unit of shot noise.
    pub fn input_second_moment(&self) -> T {
        self.modulation_variance + T::one()
    }

    pub fn mean_gain(&self) -> T {
        self.stages()
            .iter()
            .map(|s| s.a.mean())
            .fold(T::one(), |acc, g| acc * g)
    }
}

/// Exact output statistics from the moment recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMoments<T> {
    /// `E[x_o | x_i] / x_i`.
    pub gain: T,
    /// Second moment arriving at the detection stage.
    pub detector_input: T,
    /// `Var(x_o)`.
    pub variance: T,
}

pub fn output_moments<T: Real>(p: &Pipeline<T>) -> OutputMoments<T> {
    let m_mod = p.modulation.propagate_second_moment(p.input_second_moment());
    let detector_input = p.channel.propagate_second_moment(m_mod);
    OutputMoments {
        gain: p.mean_gain(),
        detector_input,
        variance: p.detection.propagate_second_moment(detector_input),
    }
}

/// Channel and detector parameters as Alice and Bob would estimate them
/// from averaged statistics, with all gain fluctuations folded into the
/// excess noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParams<T> {
    pub t_eff: T,
    pub eps_eff: T,
    pub eta: T,
    pub v_el: T,
    pub modulation_variance: T,
    pub t_c: T,
    pub eps_c: T,
    pub v1: T,
    pub v2: T,
    /// Mean gains of the modulation, channel and detection stages.
    pub mean_gains: [T; 3],
}

impl<T: Real> EffectiveParams<T> {
    pub fn channel(&self) -> Result<EffectiveChannel<T>> {
        EffectiveChannel::new(self.t_eff, self.eps_eff)
    }

    /// Engine parameters with this detector and the given `beta`.
    pub fn system(&self, beta: T) -> Result<SystemParams<T>> {
        SystemParams::new(self.eta, self.eps_c, self.v_el, self.modulation_variance, beta)
    }

    /// `Var(x_o)` predicted by the key-rate engine on the effective channel.
    pub fn predicted_output_variance(&self) -> Result<T> {
        let sys = self.system(T::one())?;
        Ok(crate::keyrate::channel_terms(&sys, &self.channel()?)?.v_b)
    }
}

/// Effective channel of a pipeline with the preset shape (no additive term
/// at modulation, deterministic channel gain, vacuum-filling channel and
/// detection stages).
pub fn effective_params<T: Real>(p: &Pipeline<T>) -> Result<EffectiveParams<T>> {
    if !p.modulation.b.is_point_mass() || p.modulation.vacuum_fill {
        return Err(Error::UnsupportedShape(
            "modulation stage must have no additive term and no vacuum fill".into(),
        ));
    }
    if !p.channel.a.is_point_mass() || !p.channel.vacuum_fill {
        return Err(Error::UnsupportedShape(
            "channel stage must have a deterministic gain and fill vacuum".into(),
        ));
    }
    if !p.detection.vacuum_fill {
        return Err(Error::UnsupportedShape("detection stage must fill vacuum".into()));
    }
    let am = p.modulation.a.mean();
    let v1 = p.modulation.a.variance();
    let t_c = p.channel.a.second_moment();
    if !(t_c > T::zero() && t_c <= T::one()) {
        return Err(Error::UnsupportedShape(format!(
            "channel power gain {t_c} outside (0, 1]"
        )));
    }
    let eps_c = if t_c < T::one() {
        p.channel.b.variance() * (T::one() - t_c) / t_c
    } else if p.channel.b.variance() == T::zero() {
        T::zero()
    } else {
        return Err(Error::SingularChannel("noisy channel with unit transmittance".into()));
    };
    let ad = p.detection.a.mean();
    let v2 = p.detection.a.variance();
    let eta = ad * ad;
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(Error::UnsupportedShape(format!(
            "mean detector efficiency {eta} outside (0, 1]"
        )));
    }
    let v_el = (T::one() - eta) * p.detection.b.variance();

    let t_eff = am * am * t_c;
    if !(t_eff > T::zero() && t_eff <= T::one()) {
        return Err(Error::UnsupportedShape(format!(
            "effective transmittance {t_eff} outside (0, 1]"
        )));
    }
    // Bob's variance through the recursion, re-expressed as excess noise on
    // a channel of transmittance t_eff. A fluctuating detector gain trades
    // signal for vacuum plus electronic noise, hence the subtraction; where
    // that trade would lower the noise it is dropped.
    let m_in = p.input_second_moment();
    let m_det = output_moments(p).detector_input;
    let am2 = am * am;
    let swapped = (m_det - T::one() - p.detection.b.variance()).max(T::zero());
    let eps_eff = (eps_c + v1 * m_in) / am2 + (T::one() - T::one() / am2) + v2 * swapped / (eta * t_eff);
    if !(eps_eff >= T::zero()) {
        return Err(Error::UnsupportedShape(format!(
            "negative effective excess noise {eps_eff}"
        )));
    }

    Ok(EffectiveParams {
        t_eff,
        eps_eff,
        eta,
        v_el,
        modulation_variance: p.modulation_variance,
        t_c,
        eps_c,
        v1,
        v2,
        mean_gains: [am, p.channel.a.mean(), ad],
    })
}

/// One simulated signal: Alice's modulation value and Bob's outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePair<T> {
    pub x_in: T,
    pub x_out: T,
}

fn draw<T: Real, R: Rng + ?Sized>(p: &Pipeline<T>, modulation_sd: T, rng: &mut R) -> SamplePair<T> {
    let z: f64 = rng.sample(StandardNormal);
    let x_in = modulation_sd * T::lit(z);
    let shot: f64 = rng.sample(StandardNormal);
    let mut x = x_in + T::lit(shot);
    for stage in p.stages() {
        x = stage.propagate(x, rng);
    }
    SamplePair { x_in, x_out: x }
}

/// Draws `n` independent signals through the pipeline.
pub fn simulate_pipeline<T: Real, R: Rng + ?Sized>(p: &Pipeline<T>, n: usize, rng: &mut R) -> Vec<SamplePair<T>> {
    let sd = p.modulation_variance.sqrt();
    (0..n).map(|_| draw(p, sd, rng)).collect()
}

/// Running sums for the empirical statistics of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmpiricalMoments {
    pub n: u64,
    sum_in: f64,
    sum_out: f64,
    sum_in2: f64,
    sum_out2: f64,
    sum_out3: f64,
    sum_out4: f64,
    sum_cross: f64,
}

impl EmpiricalMoments {
    pub fn push(&mut self, x_in: f64, x_out: f64) {
        let o2 = x_out * x_out;
        self.n += 1;
        self.sum_in += x_in;
        self.sum_out += x_out;
        self.sum_in2 += x_in * x_in;
        self.sum_out2 += o2;
        self.sum_out3 += o2 * x_out;
        self.sum_out4 += o2 * o2;
        self.sum_cross += x_in * x_out;
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum_in += other.sum_in;
        self.sum_out += other.sum_out;
        self.sum_in2 += other.sum_in2;
        self.sum_out2 += other.sum_out2;
        self.sum_out3 += other.sum_out3;
        self.sum_out4 += other.sum_out4;
        self.sum_cross += other.sum_cross;
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn mean_out(&self) -> f64 {
        self.sum_out / self.nf()
    }

    pub fn var_in(&self) -> f64 {
        let m = self.sum_in / self.nf();
        self.sum_in2 / self.nf() - m * m
    }

    pub fn var_out(&self) -> f64 {
        let m = self.mean_out();
        self.sum_out2 / self.nf() - m * m
    }

    pub fn covariance(&self) -> f64 {
        self.sum_cross / self.nf() - (self.sum_in / self.nf()) * self.mean_out()
    }

    /// Standard error of [`EmpiricalMoments::var_out`], from the sample
    /// fourth central moment.
    pub fn var_out_stderr(&self) -> f64 {
        let n = self.nf();
        let m = self.mean_out();
        let (r2, r3, r4) = (self.sum_out2 / n, self.sum_out3 / n, self.sum_out4 / n);
        let mu4 = r4 - 4.0 * m * r3 + 6.0 * m * m * r2 - 3.0 * m.powi(4);
        let var = self.var_out();
        ((mu4 - var * var).max(0.0) / n).sqrt()
    }

    /// Least-squares slope of `x_out` on `x_in`.
    pub fn gain(&self) -> f64 {
        self.covariance() / self.var_in()
    }

    /// `Var(x_out | x_in)` under the linear model.
    pub fn residual_variance(&self) -> f64 {
        let g = self.gain();
        self.var_out() - g * g * self.var_in()
    }

    pub fn gain_stderr(&self) -> f64 {
        (self.residual_variance().max(0.0) / (self.nf() * self.var_in())).sqrt()
    }
}

const SHARD_SIZE: usize = 1 << 16;

/// Simulates `n` signals in fixed-size shards, each with its own ChaCha
/// stream derived from `seed`. The result does not depend on the number of
/// worker threads.
pub fn simulate_moments<T: Real>(p: &Pipeline<T>, n: usize, seed: u64) -> EmpiricalMoments {
    let sd = p.modulation_variance.sqrt();
    let shards = n.div_ceil(SHARD_SIZE);
    let partials: Vec<EmpiricalMoments> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64);
            let count = SHARD_SIZE.min(n - shard * SHARD_SIZE);
            let mut acc = EmpiricalMoments::default();
            for _ in 0..count {
                let s = draw(p, sd, &mut rng);
                acc.push(s.x_in.to_f64_lossy(), s.x_out.to_f64_lossy());
            }
            acc
        })
        .collect();
    partials.iter().fold(EmpiricalMoments::default(), |mut acc, part| {
        acc.merge(part);
        acc
    })
}

/// Agreement between the analytic model and the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McReport {
    pub samples: u64,
    pub analytic_gain: f64,
    pub empirical_gain: f64,
    pub gain_stderr: f64,
    /// `Var(x_o)` from the effective channel via the key-rate engine.
    pub effective_variance: f64,
    /// `Var(x_o)` from the exact moment recursion.
    pub recursion_variance: f64,
    pub empirical_variance: f64,
    pub variance_stderr: f64,
}

impl McReport {
    pub fn gain_sigmas(&self) -> f64 {
        (self.analytic_gain - self.empirical_gain).abs() / self.gain_stderr
    }

    pub fn effective_variance_sigmas(&self) -> f64 {
        (self.effective_variance - self.empirical_variance).abs() / self.variance_stderr
    }

    pub fn recursion_variance_sigmas(&self) -> f64 {
        (self.recursion_variance - self.empirical_variance).abs() / self.variance_stderr
    }
}

pub fn mc_check<T: Real>(p: &Pipeline<T>, n: usize, seed: u64) -> Result<McReport> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {n}")));
    }
    let eff = effective_params(p)?;
    let exact = output_moments(p);
    let emp = simulate_moments(p, n, seed);
    Ok(McReport {
        samples: emp.n,
        analytic_gain: exact.gain.to_f64_lossy(),
        empirical_gain: emp.gain(),
        gain_stderr: emp.gain_stderr(),
        effective_variance: eff.predicted_output_variance()?.to_f64_lossy(),
        recursion_variance: exact.variance.to_f64_lossy(),
        empirical_variance: emp.var_out(),
        variance_stderr: emp.var_out_stderr(),
    })
}
