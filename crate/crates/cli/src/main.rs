//! `fbcap`: feedback capacity of Gaussian channels with state-space noise.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 model validation failure,
//! 3 solver failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fbcap_core::capacity::{
    extract_policy, kim_ar_capacity, kim_ma_capacity, scop_finite_n, solve_capacity, solve_capacity_scalar,
    waterfilling_capacity, CapacitySolution, SolverOptions,
};
use fbcap_core::coding_scheme::{simulate, SchemeConfig};
use fbcap_core::io::read_model;
use fbcap_core::kalman::solve_dare;
use fbcap_core::linalg::to_rows;
use fbcap_core::state_space::{validate, ChannelModel, StateSpaceNoise};
use fbcap_core::{FbcapError, Mat};
use rayon::prelude::*;
use serde_json::{json, Value};

const WATERFILL_GRID: usize = 4096;

#[derive(Parser, Debug)]
#[command(
    name = "fbcap",
    version,
    about = "Feedback capacity of Gaussian channels with state-space noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Units {
    Bits,
    Nats,
}

impl Units {
    fn convert(self, nats: f64) -> f64 {
        match self {
            Units::Bits => nats / std::f64::consts::LN_2,
            Units::Nats => nats,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Units::Bits => "bits",
            Units::Nats => "nats",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Family {
    Ma,
    Ar,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions of a noise model.
    Validate { model: PathBuf },
    /// Stabilizing solution of the Riccati equation.
    Dare { model: PathBuf },
    /// Feedback capacity and optimal input law of a channel.
    Capacity {
        channel: PathBuf,
        /// Use the scalar formulation (p = m = 1).
        #[arg(long)]
        scalar: bool,
        #[arg(long, value_enum, default_value = "bits")]
        units: Units,
        /// Relative duality-gap tolerance.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        /// Restrict to inputs independent of past outputs.
        #[arg(long)]
        gamma_zero: bool,
    },
    /// Capacity curves over a first-order noise family, as CSV.
    Sweep {
        #[arg(long, value_enum)]
        family: Family,
        /// Inclusive range `start:stop:step`.
        #[arg(long, allow_hyphen_values = true)]
        param_range: String,
        #[arg(long, default_value_t = 1.0)]
        power: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bits")]
        units: Units,
    },
    /// Finite-horizon upper bound per channel use.
    Scop {
        channel: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "bits")]
        units: Units,
    },
    /// Monte Carlo error probability of the feedback coding scheme.
    Simulate {
        channel: PathBuf,
        /// Rate as a fraction of the feedback capacity.
        #[arg(long, default_value_t = 0.8)]
        rate_frac: f64,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Per-trial CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<FbcapError> for Failure {
    fn from(e: FbcapError) -> Self {
        let code = match &e {
            FbcapError::Json(_) | FbcapError::Io(_) | FbcapError::InvalidConfig(_) => 1,
            FbcapError::DimensionMismatch(_)
            | FbcapError::NotPsd { .. }
            | FbcapError::NotSymmetric(_)
            | FbcapError::InfiniteCapacity
            | FbcapError::NonFinite(_)
            | FbcapError::UnstableModel(_)
            | FbcapError::NotScalar
            | FbcapError::OutOfRange(_) => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = std::env::var("FBCAP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let result = match cli.command {
        Command::Validate { model } => cmd_validate(&model),
        Command::Dare { model } => cmd_dare(&model),
        Command::Capacity {
            channel,
            scalar,
            units,
            tol,
            gamma_zero,
        } => cmd_capacity(&channel, scalar, units, tol, gamma_zero),
        Command::Sweep {
            family,
            param_range,
            power,
            out,
            units,
        } => cmd_sweep(family, &param_range, power, out.as_deref(), units),
        Command::Scop { channel, n, units } => cmd_scop(&channel, n, units),
        Command::Simulate {
            channel,
            rate_frac,
            n,
            trials,
            seed,
            out,
        } => cmd_simulate(&channel, rate_frac, n, trials, seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn print_json(value: &Value) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(FbcapError::from(e)))?;
    text.push('\n');
    write_output(None, &text)
}

fn rows(m: &Mat) -> Value {
    json!(to_rows(m))
}

/// Number or `null` for non-finite values.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn load_noise(path: &Path) -> Result<StateSpaceNoise, Failure> {
    Ok(read_model(path)?.noise()?)
}

fn load_channel(path: &Path) -> Result<ChannelModel, Failure> {
    Ok(read_model(path)?.channel()?)
}

/// Rejects models whose filter is not well defined.
fn require_detectable(noise: &StateSpaceNoise) -> CmdResult {
    let report = validate(noise)?;
    if !report.detectable {
        return Err(Failure {
            code: 2,
            message: "detectability failed: (F, H) has an unobservable mode on or outside the unit circle".into(),
        });
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> CmdResult {
    let noise = load_noise(path)?;
    let report = validate(&noise)?;
    print_json(&json!({
        "detectable": report.detectable,
        "unit_circle_controllable": report.unit_circle_controllable,
        "stabilizable": report.stabilizable,
        "w_psd": report.w_psd,
        "sigma1_psd": report.sigma1_psd,
        "joint_psd": report.joint_psd,
        "spectral_radius": report.spectral_radius,
        "stationary": report.stationary,
        "warnings": report.warnings,
    }))?;
    if !report.detectable {
        return Err(Failure {
            code: 2,
            message: "detectability failed".into(),
        });
    }
    if !report.unit_circle_controllable {
        return Err(Failure {
            code: 2,
            message: "unit-circle controllability failed".into(),
        });
    }
    Ok(())
}

fn cmd_dare(path: &Path) -> CmdResult {
    let noise = load_noise(path)?;
    require_detectable(&noise)?;
    let sol = solve_dare(&noise)?;
    print_json(&json!({
        "Sigma": rows(&sol.sigma),
        "Kp": rows(&sol.kp),
        "Psi": rows(&sol.psi),
        "closed_loop_radius": sol.closed_loop_radius,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "maximal_only": sol.maximal_only,
    }))
}

fn solution_json(sol: &CapacitySolution, units: Units) -> Value {
    json!({
        "capacity": units.convert(sol.capacity_nats),
        "units": units.name(),
        "Pi": rows(&sol.pi),
        "SigmaHat": rows(&sol.sigma_hat),
        "Gamma": rows(&sol.gamma),
        "PsiY": rows(&sol.psi_y),
        "KY": rows(&sol.ky),
        "M": rows(&sol.m),
        "diagnostics": {
            "kkt_residual": sol.kkt_residual,
            "lmi_min_eigenvalues": sol.lmi_margins,
            "trace_slack": sol.trace_slack,
            "orthogonality": sol.orthogonality,
            "riccati_residual": sol.riccati_residual,
            "refinement_change": sol.refinement_change,
            "iterations": sol.iterations,
            "reduced_dim": sol.reduced_dim,
            "relaxed": sol.relaxed,
            "stalled": sol.stalled,
            "maximal_only": sol.riccati.maximal_only,
        },
    })
}

fn cmd_capacity(path: &Path, scalar: bool, units: Units, tol: f64, gamma_zero: bool) -> CmdResult {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Failure::usage(format!("--tol must be positive, got {tol}")));
    }
    let channel = load_channel(path)?;
    require_detectable(channel.noise())?;
    let options = SolverOptions {
        kkt_tol: tol,
        gamma_zero,
        ..SolverOptions::default()
    };
    let sol = if scalar {
        solve_capacity_scalar(&channel, &options)?
    } else {
        solve_capacity(&channel, &options)?
    };
    print_json(&solution_json(&sol, units))
}

/// Parses an inclusive `start:stop:step` range.
fn parse_range(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Failure::usage(format!("range must be start:stop:step, got {text:?}")));
    }
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Failure::usage(format!("invalid number {s:?} in range")))
    };
    let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 {
        return Err(Failure::usage("range step must be positive"));
    }
    if stop < start {
        return Err(Failure::usage("range is empty"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

struct SweepRow {
    param: f64,
    c_fb: f64,
    c_kim: f64,
    r_iid: f64,
    c_waterfill: f64,
    power_feedback: f64,
    power_iid: f64,
}

fn sweep_point(family: Family, param: f64, power: f64) -> Result<SweepRow, FbcapError> {
    let noise = match family {
        Family::Ma => StateSpaceNoise::ma1(param)?,
        Family::Ar => StateSpaceNoise::ar1(param)?,
    };
    let channel = ChannelModel::identity(power, noise)?;
    let sol = solve_capacity_scalar(&channel, &SolverOptions::default())?;
    let policy = extract_policy(&sol)?;
    let iid = solve_capacity_scalar(&channel, &SolverOptions::iid())?;
    let c_kim = match family {
        Family::Ma if param.abs() <= 1.0 => kim_ma_capacity(param, power)?,
        Family::Ar if param.abs() < 1.0 => kim_ar_capacity(param, power)?,
        _ => f64::NAN,
    };
    let c_waterfill = if channel.noise().is_stationary() {
        waterfilling_capacity(&channel, WATERFILL_GRID)?
    } else {
        f64::NAN
    };
    Ok(SweepRow {
        param,
        c_fb: sol.capacity_nats,
        c_kim,
        r_iid: iid.capacity_nats,
        c_waterfill,
        power_feedback: (&policy.a * &sol.sigma_hat * policy.a.transpose()).trace(),
        power_iid: policy.m.trace(),
    })
}

fn cmd_sweep(family: Family, range: &str, power: f64, out: Option<&Path>, units: Units) -> CmdResult {
    let params = parse_range(range)?;
    if !(power.is_finite() && power > 0.0) {
        return Err(Failure::usage(format!("--power must be positive, got {power}")));
    }
    let results: Vec<Result<SweepRow, FbcapError>> =
        params.par_iter().map(|&p| sweep_point(family, p, power)).collect();
    let mut text = String::from("param,c_fb,c_kim,r_iid,c_waterfill,power_feedback,power_iid\n");
    let mut failures = 0;
    for (param, row) in params.iter().zip(&results) {
        match row {
            Ok(r) => text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.param,
                units.convert(r.c_fb),
                units.convert(r.c_kim),
                units.convert(r.r_iid),
                units.convert(r.c_waterfill),
                r.power_feedback,
                r.power_iid
            )),
            Err(e) => {
                failures += 1;
                eprintln!("warning: parameter {param}: {e}");
                text.push_str(&format!("{param},NaN,NaN,NaN,NaN,NaN,NaN\n"));
            }
        }
    }
    write_output(out, &text)?;
    if failures == params.len() {
        return Err(Failure {
            code: 3,
            message: "every sweep point failed".into(),
        });
    }
    Ok(())
}

fn write_output(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::from(FbcapError::from(e))),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::from(FbcapError::from(e))),
            _ => Ok(()),
        },
    }
}

fn cmd_scop(path: &Path, n: usize, units: Units) -> CmdResult {
    let channel = load_channel(path)?;
    require_detectable(channel.noise())?;
    let sol = scop_finite_n(&channel, n, &SolverOptions::default())?;
    print_json(&json!({
        "n": n,
        "value": units.convert(sol.value_nats),
        "units": units.name(),
        "trace_pi": sol.pi.iter().map(|p| p.trace()).collect::<Vec<_>>(),
        "diagnostics": {
            "kkt_residual": sol.gap,
            "iterations": sol.iterations,
            "stalled": sol.stalled,
        },
    }))
}

fn cmd_simulate(path: &Path, rate_frac: f64, n: usize, trials: usize, seed: u64, out: Option<&Path>) -> CmdResult {
    if !(rate_frac.is_finite() && rate_frac > 0.0) {
        return Err(Failure::usage(format!("--rate-frac must be positive, got {rate_frac}")));
    }
    let channel = load_channel(path)?;
    require_detectable(channel.noise())?;
    let sol = solve_capacity_scalar(&channel, &SolverOptions::default())?;
    let policy = extract_policy(&sol)?;
    let capacity_bits = sol.capacity_nats / std::f64::consts::LN_2;
    let rate_bits = rate_frac * capacity_bits;
    let config = SchemeConfig::new(channel, policy, n, rate_bits, seed, trials)?;
    let res = simulate(&config)?;
    if let Some(path) = out {
        let mut text = String::from("trial,msg,msg_hat,error_flag\n");
        for o in &res.outcomes {
            text.push_str(&format!("{},{},{},{}\n", o.trial, o.msg, o.msg_hat, u8::from(o.error)));
        }
        write_output(Some(path), &text)?;
    }
    if res.power_violation {
        eprintln!(
            "warning: average power {:.4} exceeds the budget by more than 5%",
            res.avg_power
        );
    }
    print_json(&json!({
        "p_e": res.p_e,
        "ci_low": res.ci_low,
        "ci_high": res.ci_high,
        "errors": res.errors,
        "trials": res.trials,
        "messages": res.messages,
        "rate_bits": rate_bits,
        "capacity_bits": capacity_bits,
        "avg_power": res.avg_power,
        "power_violation": res.power_violation,
        "det_trace": res.det_trace.iter().map(|&d| num(d)).collect::<Vec<_>>(),
    }))
}
