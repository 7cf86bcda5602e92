//! Presets, fiber-distance sweeps, maximum secure distance and CSV output.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::keyrate::{KeyRateBreakdown, SystemParams};
use crate::pipeline::{ElectronicNoise, Fluctuation, Pipeline, PresetShape};
use crate::tagging::{optimize_cutoffs, CutoffPlan, KGrid};
use crate::{Error, Real, Result};

pub const DEFAULT_LOSS_DB_PER_KM: f64 = 0.2;

/// Fluctuation variances used for the application examples: about 5% on
/// the source intensity and on the detector efficiency.
pub const FIVE_PERCENT_V1: f64 = 0.0025;
pub const FIVE_PERCENT_V2: f64 = 0.0015;

/// A named parameter set with its fluctuation variances and fiber loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset<T> {
    pub name: String,
    pub params: SystemParams<T>,
    pub v1: T,
    pub v2: T,
    pub loss_db_per_km: T,
}

impl<T: Real> Preset<T> {
    /// eta 0.60, eps_c 0.02, v_el 0.02, V_A 18, beta 95.6%.
    pub fn table1() -> Self {
        Self::builtin("table1", [0.60, 0.02, 0.02, 18.0, 95.6])
    }

    /// eta 0.6134, eps_c 0.0081, v_el 0.1523, V_A 7.65, beta 98%.
    pub fn table3() -> Self {
        Self::builtin("table3", [0.6134, 0.0081, 0.1523, 7.65, 98.0])
    }

    fn builtin(name: &str, [eta, eps, vel, va, beta_pct]: [f64; 5]) -> Self {
        let params =
            SystemParams::with_beta_percent(T::lit(eta), T::lit(eps), T::lit(vel), T::lit(va), T::lit(beta_pct))
                .expect("built-in preset is valid");
        Self {
            name: name.to_string(),
            params,
            v1: T::lit(FIVE_PERCENT_V1),
            v2: T::lit(FIVE_PERCENT_V2),
            loss_db_per_km: T::lit(DEFAULT_LOSS_DB_PER_KM),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "table1" => Ok(Self::table1()),
            "table3" => Ok(Self::table3()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected table1 or table3)"
            ))),
        }
    }

    pub fn with_fluctuations(mut self, v1: T, v2: T) -> Self {
        self.v1 = v1;
        self.v2 = v2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.v1 >= T::zero()) || !(self.v2 >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "fluctuation variances must be >= 0, got V1={}, V2={}",
                self.v1, self.v2
            )));
        }
        if !(self.loss_db_per_km > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "fiber loss must be > 0 dB/km, got {}",
                self.loss_db_per_km
            )));
        }
        Ok(())
    }
}

/// `T = 10^(-loss L / 10)`.
pub fn transmittance_from_distance<T: Real>(distance_km: T, loss_db_per_km: T) -> T {
    T::lit(10.0).powf(-loss_db_per_km * distance_km / T::lit(10.0))
}

/// Settings shared by every distance of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig<T> {
    pub grid: KGrid<T>,
    pub family: Fluctuation,
    pub electronic_noise: ElectronicNoise,
}

impl<T: Real> Default for SweepConfig<T> {
    fn default() -> Self {
        Self {
            grid: KGrid::default(),
            family: Fluctuation::Gaussian,
            electronic_noise: ElectronicNoise::Calibrated,
        }
    }
}

/// One distance of a sweep. `rate` is clipped at zero; `rate_signed` is not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow<T> {
    pub distance_km: T,
    pub t_c: T,
    pub p0: T,
    pub k1: T,
    pub k3: T,
    pub i_ab: T,
    pub h_xb: T,
    pub chi_be: T,
    pub rate_signed: T,
    pub rate: T,
}

pub fn preset_pipeline<T: Real>(preset: &Preset<T>, transmittance: T, config: &SweepConfig<T>) -> Result<Pipeline<T>> {
    let shape = PresetShape {
        v1: preset.v1,
        v2: preset.v2,
        family: config.family,
        electronic_noise: config.electronic_noise,
    };
    Pipeline::preset(&preset.params, transmittance, &shape)
}

/// Optimized breakdown at one distance.
pub fn evaluate_distance<T: Real>(
    preset: &Preset<T>,
    distance_km: T,
    config: &SweepConfig<T>,
) -> Result<(CutoffPlan<T>, KeyRateBreakdown<T>, T)> {
    let t_c = transmittance_from_distance(distance_km, preset.loss_db_per_km);
    let pipeline = preset_pipeline(preset, t_c, config)?;
    let (plan, breakdown) = optimize_cutoffs(&preset.params, &pipeline, &config.grid)?;
    Ok((plan, breakdown, t_c))
}

fn row<T: Real>(distance_km: T, t_c: T, plan: &CutoffPlan<T>, b: &KeyRateBreakdown<T>) -> SweepRow<T> {
    SweepRow {
        distance_km,
        t_c,
        p0: b.p0,
        k1: plan.k1,
        k3: plan.k3,
        i_ab: b.i_ab,
        h_xb: b.h_xb,
        chi_be: b.chi_be,
        rate_signed: b.rate,
        rate: b.rate.max(T::zero()),
    }
}

/// Optimized rate at `l_min, l_min + l_step, ...` up to `l_max`.
///
/// Distances run in parallel; rows come back in ascending order. The
/// reported (clipped) rate must not increase with distance; a violation is
/// an error. Past the zero crossing the signed rate creeps back towards
/// zero from below as every term vanishes, so only the clipped column is
/// checked.
pub fn distance_sweep<T: Real>(
    preset: &Preset<T>,
    l_min: T,
    l_max: T,
    l_step: T,
    config: &SweepConfig<T>,
) -> Result<Vec<SweepRow<T>>> {
    preset.validate()?;
    if !(l_min >= T::zero()) || !(l_max >= l_min) {
        return Err(Error::Config(format!("need 0 <= lmin <= lmax, got [{l_min}, {l_max}]")));
    }
    if !(l_step > T::zero()) {
        return Err(Error::Config(format!("lstep must be > 0, got {l_step}")));
    }
    let n = (((l_max - l_min) / l_step).to_f64_lossy() + 1e-9).floor() as usize + 1;
    let rows: Vec<Result<SweepRow<T>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let l = l_min + T::lit(i as f64) * l_step;
            let (plan, b, t_c) = evaluate_distance(preset, l, config).map_err(|e| with_distance(e, l))?;
            Ok(row(l, t_c, &plan, &b))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    for w in rows.windows(2) {
        let tol = T::lit(1e-12) * w[0].rate.abs().max(T::lit(1e-300));
        if w[1].rate > w[0].rate + tol {
            return Err(Error::Invariant(format!(
                "rate increased from {} at {} km to {} at {} km",
                w[0].rate, w[0].distance_km, w[1].rate, w[1].distance_km
            )));
        }
    }
    Ok(rows)
}

fn with_distance(e: Error, l: impl std::fmt::Display) -> Error {
    let ctx = |m: String| format!("at {l} km: {m}");
    match e {
        Error::InvalidDistribution(m) => Error::InvalidDistribution(ctx(m)),
        Error::Domain(m) => Error::Domain(ctx(m)),
        Error::InvalidParameter(m) => Error::InvalidParameter(ctx(m)),
        Error::SingularChannel(m) => Error::SingularChannel(ctx(m)),
        Error::NumericalDomain(m) => Error::NumericalDomain(ctx(m)),
        Error::UnsupportedShape(m) => Error::UnsupportedShape(ctx(m)),
        Error::Config(m) => Error::Config(ctx(m)),
        Error::Invariant(m) => Error::Invariant(ctx(m)),
    }
}

/// Bracketing resolution of [`max_secure_distance`], in km.
pub const DISTANCE_TOLERANCE_KM: f64 = 0.1;
/// Search stops here if the rate is still positive.
pub const DISTANCE_SEARCH_LIMIT_KM: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxDistance<T> {
    /// Largest evaluated distance with positive optimized rate.
    pub km: T,
    /// The rate is already non-positive at zero distance.
    pub no_key_at_origin: bool,
    /// Still positive at [`DISTANCE_SEARCH_LIMIT_KM`].
    pub unbounded: bool,
}

/// Zero crossing of the optimized signed rate, by doubling then bisection.
pub fn max_secure_distance<T: Real>(preset: &Preset<T>, config: &SweepConfig<T>) -> Result<MaxDistance<T>> {
    preset.validate()?;
    let positive = |l: T| -> Result<bool> {
        Ok(evaluate_distance(preset, l, config)
            .map_err(|e| with_distance(e, l))?
            .1
            .rate
            > T::zero())
    };
    if !positive(T::zero())? {
        return Ok(MaxDistance {
            km: T::zero(),
            no_key_at_origin: true,
            unbounded: false,
        });
    }
    let limit = T::lit(DISTANCE_SEARCH_LIMIT_KM);
    let mut lo = T::zero();
    let mut hi = T::lit(10.0);
    loop {
        if positive(hi)? {
            lo = hi;
            if hi >= limit {
                return Ok(MaxDistance {
                    km: limit,
                    no_key_at_origin: false,
                    unbounded: true,
                });
            }
            hi = (hi * T::lit(2.0)).min(limit);
        } else {
            break;
        }
    }
    let tol = T::lit(DISTANCE_TOLERANCE_KM);
    while hi - lo > tol {
        let mid = (lo + hi) / T::lit(2.0);
        if positive(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MaxDistance {
        km: lo,
        no_key_at_origin: false,
        unbounded: false,
    })
}

pub const CSV_HEADER: &str = "distance_km,T_c,p0,k1,k3,I_AB,H_XB,chi_BE,rate_signed,rate";

/// Shortest decimal form of `x` rounded to 12 significant digits. Parsing
/// the output and formatting again yields the same string.
pub fn format_sig12(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if rounded == 0.0 || (1e-4..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

impl<T: Real> SweepRow<T> {
    fn fields(&self) -> [T; 10] {
        [
            self.distance_km,
            self.t_c,
            self.p0,
            self.k1,
            self.k3,
            self.i_ab,
            self.h_xb,
            self.chi_be,
            self.rate_signed,
            self.rate,
        ]
    }
}

pub fn write_csv<T: Real, W: Write>(rows: &[SweepRow<T>], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        let line: Vec<String> = r.fields().iter().map(|v| format_sig12(v.to_f64_lossy())).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<SweepRow<f64>>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty CSV".into()))?
        .map_err(|e| Error::Config(e.to_string()))?;
    if header.trim_end() != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header '{header}'")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("CSV line {}: {e}", lineno + 2)))?;
        if v.len() != 10 {
            return Err(Error::Config(format!(
                "CSV line {}: expected 10 fields, got {}",
                lineno + 2,
                v.len()
            )));
        }
        rows.push(SweepRow {
            distance_km: v[0],
            t_c: v[1],
            p0: v[2],
            k1: v[3],
            k3: v[4],
            i_ab: v[5],
            h_xb: v[6],
            chi_be: v[7],
            rate_signed: v[8],
            rate: v[9],
        });
    }
    Ok(rows)
}
