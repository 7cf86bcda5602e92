//! Argument handling and subcommands for the `cvtag` binary.
//!
//! [`run`] takes the full argv and writes to the given streams, so tests can
//! drive it in-process.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cvtag::dv::{gllp_rate, wcp_rate, DvTaggedInput, EcCost, WcpInput};
use cvtag::pipeline::{mc_check, ElectronicNoise, Fluctuation};
use cvtag::sweep::{
    distance_sweep, format_sig12, max_secure_distance, preset_pipeline, transmittance_from_distance, write_csv,
    SweepConfig,
};
use cvtag::tagging::optimize_cutoffs;
use cvtag::{CutoffPlan, Error, KGrid, KeyRateBreakdown, Preset, TaggedRateInput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

const DEFAULT_LMIN: f64 = 0.0;
const DEFAULT_LMAX: f64 = 120.0;
const DEFAULT_LSTEP: f64 = 1.0;
const DEFAULT_SAMPLES: usize = 1_000_000;

#[derive(Parser, Debug)]
#[command(
    name = "cvtag",
    version,
    about = "Tagged key-rate analysis for CV-QKD with fluctuating devices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimized key rate over a range of fiber distances, as CSV.
    Sweep(Common),
    /// Largest distance with a positive optimized key rate.
    Maxdist(Common),
    /// Key-rate breakdown at one distance for a fixed cutoff plan.
    Rate(Common),
    /// Best cutoff plan at one distance.
    Optimize(Common),
    /// Compare the effective-channel model against a Monte-Carlo run.
    McCheck(Common),
    /// Discrete-variable tagging rates.
    Dv {
        #[command(subcommand)]
        which: DvCommand,
    },
}

#[derive(Subcommand, Debug)]
enum DvCommand {
    /// K = (1 - p) s (1 - H2(delta)).
    Gllp {
        #[arg(long)]
        p_tagged: f64,
        #[arg(long)]
        length: f64,
        #[arg(long)]
        phase_error: f64,
    },
    /// K = Q1 (1 - H2(e1)) - f Q H2(E).
    Wcp {
        #[arg(long)]
        q1: f64,
        #[arg(long)]
        e1: f64,
        #[arg(long, default_value_t = 1.0)]
        f_ec: f64,
        #[arg(long)]
        gain: f64,
        #[arg(long)]
        qber: f64,
        /// Charge error correction as f Q E instead of f Q H2(E).
        #[arg(long)]
        linear_ec: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Gaussian,
    Uniform,
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Family as ValueEnum>::from_str(s, true)
    }
}

/// Options shared by the continuous-variable subcommands. Every field is
/// optional so that a config file can fill the gaps.
#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// Built-in parameter set: table1 or table3.
    #[arg(long)]
    preset: Option<String>,
    /// Variance of the source-intensity fluctuation.
    #[arg(long)]
    v1: Option<f64>,
    /// Variance of the detector-efficiency fluctuation.
    #[arg(long)]
    v2: Option<f64>,
    /// Fiber length in km for single-point subcommands.
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long)]
    lmin: Option<f64>,
    #[arg(long)]
    lmax: Option<f64>,
    #[arg(long)]
    lstep: Option<f64>,
    #[arg(long)]
    loss_db_per_km: Option<f64>,
    #[arg(long)]
    k_min: Option<f64>,
    #[arg(long)]
    k_max: Option<f64>,
    #[arg(long)]
    k_step: Option<f64>,
    /// Cutoffs for `rate`; default 1.
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(long)]
    k3: Option<f64>,
    /// Override the preset detector efficiency.
    #[arg(long)]
    eta: Option<f64>,
    /// Override the preset channel excess noise.
    #[arg(long)]
    eps: Option<f64>,
    /// Override the preset electronic noise.
    #[arg(long)]
    vel: Option<f64>,
    /// Override the preset modulation variance.
    #[arg(long)]
    va: Option<f64>,
    /// Override the reconciliation efficiency (fraction, not percent).
    #[arg(long)]
    beta: Option<f64>,
    /// Shape of the gain fluctuations.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file with the same keys as the long flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the literal electronic-noise term Var(b_d) = eta v_el / (1 - eta).
    #[arg(long)]
    strict_paper: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o error: {e}"))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn parse_value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, Failure> {
    raw.parse()
        .map_err(|_| Failure::Config(format!("config: cannot parse '{raw}' for '{key}'")))
}

fn fill<T: FromStr>(slot: &mut Option<T>, key: &str, raw: &str) -> Outcome {
    if slot.is_none() {
        *slot = Some(parse_value(key, raw)?);
    }
    Ok(())
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// `_` and `-` are interchangeable in keys.
fn read_config(text: &str) -> std::result::Result<BTreeMap<String, String>, Failure> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("config line {}: expected 'key = value'", i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Failure::Config(format!("config line {}: duplicate key '{key}'", i + 1)));
        }
    }
    Ok(map)
}

impl Common {
    fn merge_file(&mut self) -> Outcome {
        let Some(path) = self.config.clone() else {
            return Ok(());
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (key, raw) in read_config(&text)? {
            let raw = raw.as_str();
            match key.as_str() {
                "preset" => fill(&mut self.preset, &key, raw)?,
                "v1" => fill(&mut self.v1, &key, raw)?,
                "v2" => fill(&mut self.v2, &key, raw)?,
                "distance" => fill(&mut self.distance, &key, raw)?,
                "lmin" => fill(&mut self.lmin, &key, raw)?,
                "lmax" => fill(&mut self.lmax, &key, raw)?,
                "lstep" => fill(&mut self.lstep, &key, raw)?,
                "loss-db-per-km" => fill(&mut self.loss_db_per_km, &key, raw)?,
                "k-min" => fill(&mut self.k_min, &key, raw)?,
                "k-max" => fill(&mut self.k_max, &key, raw)?,
                "k-step" => fill(&mut self.k_step, &key, raw)?,
                "k1" => fill(&mut self.k1, &key, raw)?,
                "k2" => fill(&mut self.k2, &key, raw)?,
                "k3" => fill(&mut self.k3, &key, raw)?,
                "eta" => fill(&mut self.eta, &key, raw)?,
                "eps" => fill(&mut self.eps, &key, raw)?,
                "vel" => fill(&mut self.vel, &key, raw)?,
                "va" => fill(&mut self.va, &key, raw)?,
                "beta" => fill(&mut self.beta, &key, raw)?,
                "family" => fill(&mut self.family, &key, raw)?,
                "samples" => fill(&mut self.samples, &key, raw)?,
                "seed" => fill(&mut self.seed, &key, raw)?,
                "out" => fill(&mut self.out, &key, raw)?,
                // a flag on the command line can only switch it on
                "strict-paper" => self.strict_paper |= parse_value::<bool>(&key, raw)?,
                other => return Err(Failure::Config(format!("config: unknown key '{other}'"))),
            }
        }
        Ok(())
    }

    fn preset(&self) -> std::result::Result<Preset<f64>, Failure> {
        let mut p = Preset::by_name(self.preset.as_deref().unwrap_or("table1"))?;
        if let Some(v) = self.v1 {
            p.v1 = v;
        }
        if let Some(v) = self.v2 {
            p.v2 = v;
        }
        if let Some(v) = self.loss_db_per_km {
            p.loss_db_per_km = v;
        }
        let q = &mut p.params;
        q.eta = self.eta.unwrap_or(q.eta);
        q.eps_c = self.eps.unwrap_or(q.eps_c);
        q.v_el = self.vel.unwrap_or(q.v_el);
        q.modulation_variance = self.va.unwrap_or(q.modulation_variance);
        q.beta = self.beta.unwrap_or(q.beta);
        p.validate()?;
        Ok(p)
    }

    fn sweep_config(&self) -> std::result::Result<SweepConfig<f64>, Failure> {
        let d = KGrid::<f64>::default();
        let grid = KGrid::new(
            self.k_min.unwrap_or(d.min),
            self.k_max.unwrap_or(d.max),
            self.k_step.unwrap_or(d.step),
        )?;
        Ok(SweepConfig {
            grid,
            family: match self.family.unwrap_or(Family::Gaussian) {
                Family::Gaussian => Fluctuation::Gaussian,
                Family::Uniform => Fluctuation::Uniform,
            },
            electronic_noise: if self.strict_paper {
                ElectronicNoise::Literal
            } else {
                ElectronicNoise::Calibrated
            },
        })
    }

    fn distance(&self) -> std::result::Result<f64, Failure> {
        let l = self.distance.unwrap_or(0.0);
        if l >= 0.0 && l.is_finite() {
            Ok(l)
        } else {
            Err(Failure::Config(format!("distance must be >= 0, got {l}")))
        }
    }
}

fn print_breakdown(out: &mut dyn Write, b: &KeyRateBreakdown<f64>) -> std::io::Result<()> {
    for (k, v) in [
        ("p0", b.p0),
        ("I_AB", b.i_ab),
        ("H_XB", b.h_xb),
        ("chi_BE", b.chi_be),
        ("beta", b.beta),
        ("rate", b.rate),
    ] {
        writeln!(out, "{k} = {}", format_sig12(v))?;
    }
    Ok(())
}

fn print_plan(out: &mut dyn Write, plan: &CutoffPlan<f64>) -> std::io::Result<()> {
    for (k, v) in [("k1", plan.k1), ("k2", plan.k2), ("k3", plan.k3)] {
        writeln!(out, "{k} = {}", format_sig12(v))?;
    }
    Ok(())
}

fn cmd_sweep(mut c: Common, out: &mut dyn Write) -> Outcome {
    c.merge_file()?;
    let preset = c.preset()?;
    let cfg = c.sweep_config()?;
    let rows = distance_sweep(
        &preset,
        c.lmin.unwrap_or(DEFAULT_LMIN),
        c.lmax.unwrap_or(DEFAULT_LMAX),
        c.lstep.unwrap_or(DEFAULT_LSTEP),
        &cfg,
    )?;
    match &c.out {
        Some(path) => {
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            fs::write(path, buf).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        }
        None => write_csv(&rows, &mut *out)?,
    }
    Ok(())
}

fn cmd_maxdist(mut c: Common, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    c.merge_file()?;
    let preset = c.preset()?;
    let m = max_secure_distance(&preset, &c.sweep_config()?)?;
    if m.no_key_at_origin {
        writeln!(err, "warning: no positive key rate even at 0 km")?;
    }
    if m.unbounded {
        writeln!(
            err,
            "warning: rate still positive at the {} km search limit",
            format_sig12(m.km)
        )?;
    }
    writeln!(out, "max_distance_km = {}", format_sig12(m.km))?;
    Ok(())
}

fn cmd_rate(mut c: Common, out: &mut dyn Write) -> Outcome {
    c.merge_file()?;
    let preset = c.preset()?;
    let l = c.distance()?;
    let pipeline = preset_pipeline(
        &preset,
        transmittance_from_distance(l, preset.loss_db_per_km),
        &c.sweep_config()?,
    )?;
    let plan = CutoffPlan::new(c.k1.unwrap_or(1.0), c.k2.unwrap_or(1.0), c.k3.unwrap_or(1.0))?;
    let b = cvtag::tagging::rate_with_tagging(&TaggedRateInput {
        params: preset.params,
        pipeline,
        plan,
    })?;
    print_breakdown(out, &b)?;
    Ok(())
}

fn cmd_optimize(mut c: Common, out: &mut dyn Write) -> Outcome {
    c.merge_file()?;
    let preset = c.preset()?;
    let l = c.distance()?;
    let cfg = c.sweep_config()?;
    let pipeline = preset_pipeline(&preset, transmittance_from_distance(l, preset.loss_db_per_km), &cfg)?;
    let (plan, b) = optimize_cutoffs(&preset.params, &pipeline, &cfg.grid)?;
    print_plan(out, &plan)?;
    print_breakdown(out, &b)?;
    Ok(())
}

fn cmd_mc_check(mut c: Common, out: &mut dyn Write) -> Outcome {
    c.merge_file()?;
    let preset = c.preset()?;
    let l = c.distance()?;
    let pipeline = preset_pipeline(
        &preset,
        transmittance_from_distance(l, preset.loss_db_per_km),
        &c.sweep_config()?,
    )?;
    let r = mc_check(&pipeline, c.samples.unwrap_or(DEFAULT_SAMPLES), c.seed.unwrap_or(0))?;
    let lines: [(&str, f64); 10] = [
        ("analytic_gain", r.analytic_gain),
        ("empirical_gain", r.empirical_gain),
        ("gain_stderr", r.gain_stderr),
        ("gain_sigmas", r.gain_sigmas()),
        ("effective_variance", r.effective_variance),
        ("recursion_variance", r.recursion_variance),
        ("empirical_variance", r.empirical_variance),
        ("variance_stderr", r.variance_stderr),
        ("effective_variance_sigmas", r.effective_variance_sigmas()),
        ("recursion_variance_sigmas", r.recursion_variance_sigmas()),
    ];
    writeln!(out, "samples = {}", r.samples)?;
    for (k, v) in lines {
        writeln!(out, "{k} = {}", format_sig12(v))?;
    }
    let ok = r.gain_sigmas() <= 3.0 && r.effective_variance_sigmas() <= 3.0;
    writeln!(out, "within_3_sigma = {ok}")?;
    Ok(())
}

fn cmd_dv(which: DvCommand, out: &mut dyn Write) -> Outcome {
    let k = match which {
        DvCommand::Gllp {
            p_tagged,
            length,
            phase_error,
        } => gllp_rate(&DvTaggedInput {
            p_tagged,
            sifted_length: length,
            phase_error,
        })?,
        DvCommand::Wcp {
            q1,
            e1,
            f_ec,
            gain,
            qber,
            linear_ec,
        } => wcp_rate(
            &WcpInput {
                q1,
                e_phase: e1,
                f_ec,
                gain,
                qber,
            },
            if linear_ec { EcCost::Linear } else { EcCost::Entropic },
        )?,
    };
    writeln!(out, "rate = {}", format_sig12(k))?;
    Ok(())
}

fn thread_count() -> std::result::Result<usize, Failure> {
    match std::env::var("CVTAG_THREADS") {
        Err(_) => Ok(0),
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("CVTAG_THREADS must be a non-negative integer, got '{s}'"))),
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Sweep(c) => cmd_sweep(c, out),
        Command::Maxdist(c) => cmd_maxdist(c, out, err),
        Command::Rate(c) => cmd_rate(c, out),
        Command::Optimize(c) => cmd_optimize(c, out),
        Command::McCheck(c) => cmd_mc_check(c, out),
        Command::Dv { which } => cmd_dv(which, out),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };

    // buffered so the work can move onto a dedicated pool
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let result = thread_count().and_then(|n| {
        if n == 0 {
            dispatch(cli.command, &mut o, &mut e)
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| dispatch(cli.command, &mut o, &mut e))
        }
    });
    let _ = out.write_all(&o);
    let _ = err.write_all(&e);
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Numerical(m)) => {
            let _ = writeln!(err, "numerical error: {m}");
            EXIT_NUMERICAL
        }
    }
}
