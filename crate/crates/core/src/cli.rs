//! Command-line front end. Every subcommand reads a config, writes its
//! outputs and `report.json` under `--out`, prints one line per verdict and
//! a closing summary, and maps the outcome to an exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checks;
use crate::config::{parse_config_with, InitialDatum, SimConfig};
use crate::ensemble::{self, EnsembleResult, Verdict};
use crate::error::{Error, Result};
use crate::io::{write_ensemble, Report};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "smcf-lab", version, about = "Stochastic mean curvature flow of graphs on the flat torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Skip the explicit stability check (negative tests only).
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the ensemble and write traces, stats.csv and report.json.
    Simulate(CommonArgs),
    /// Convergence of the discrete geometric identities, the drift identity
    /// and the matrix positivity lemma.
    VerifyIdentities(CommonArgs),
    /// Supermartingale, decay, area, drift and moment tests.
    EnergyReport(CommonArgs),
    /// Pathwise gradient bound and the MaxExcess energy.
    MaxPrinciple(CommonArgs),
    /// Decay of `u − W` to a random constant.
    LargeTime(CommonArgs),
    /// Coupled runs over ε ∈ {0.2, 0.1, 0.05, 0}.
    ViscositySweep(CommonArgs),
    /// Coercivity gap and growth bounds on random fields.
    CoercivityCheck(CommonArgs),
    /// Spectral Galerkin against nodal stepping, and truncation.
    GalerkinCompare(CommonArgs),
    /// Strong distance between the Itô and Stratonovich schemes.
    ItoStratCheck(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::VerifyIdentities(_) => "verify-identities",
            Command::EnergyReport(_) => "energy-report",
            Command::MaxPrinciple(_) => "max-principle",
            Command::LargeTime(_) => "large-time",
            Command::ViscositySweep(_) => "viscosity-sweep",
            Command::CoercivityCheck(_) => "coercivity-check",
            Command::GalerkinCompare(_) => "galerkin-compare",
            Command::ItoStratCheck(_) => "ito-strat-check",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::VerifyIdentities(a)
            | Command::EnergyReport(a)
            | Command::MaxPrinciple(a)
            | Command::LargeTime(a)
            | Command::ViscositySweep(a)
            | Command::CoercivityCheck(a)
            | Command::GalerkinCompare(a)
            | Command::ItoStratCheck(a) => a,
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run_subcommand<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_CONFIG } else { EXIT_PASS };
        }
    };
    let name = cli.command.name();
    match execute(&cli.command) {
        Ok(report) => {
            for v in &report.verdicts {
                println!("{}", v.summary());
            }
            let passed = report.verdicts.iter().filter(|v| v.pass).count();
            let diverged = report.ensemble.as_ref().is_some_and(|m| !m.valid);
            let overall = if report.all_pass() && !diverged { "PASS" } else { "FAIL" };
            println!("{name}: {overall} ({passed} of {} verdicts pass)", report.verdicts.len());
            if diverged {
                let m = report.ensemble.as_ref().expect("checked");
                println!("{name}: ensemble invalid, {} of {} paths diverged", m.diverged, m.paths);
                EXIT_DIVERGED
            } else if report.all_pass() {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("{name}: error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::EnsembleDiverged { .. } | Error::InsufficientPaths { .. } => EXIT_DIVERGED,
        Error::Config(_)
        | Error::Json(_)
        | Error::Stability { .. }
        | Error::InvalidResolution(_)
        | Error::InvalidDimension(_)
        | Error::InvalidArgument(_)
        | Error::Parse { .. } => EXIT_INVALID_CONFIG,
        _ => EXIT_FAIL,
    }
}

fn load_config(args: &CommonArgs) -> Result<SimConfig> {
    let text = fs::read_to_string(&args.config).map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config = parse_config_with(&text, args.force)?;
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be ≥ 1".into()));
        }
        config.worker_count = Some(w);
    }
    Ok(config)
}

fn execute(cmd: &Command) -> Result<Report> {
    let args = cmd.args();
    let config = load_config(args)?;
    let out = &args.out;
    fs::create_dir_all(out)?;
    let mut report = Report::new(cmd.name(), &config);
    match cmd {
        Command::Simulate(_) => simulate(&config, out, &mut report)?,
        Command::VerifyIdentities(_) => verify_identities(&config, &mut report)?,
        Command::EnergyReport(_) => energy_report(&config, out, &mut report)?,
        Command::MaxPrinciple(_) => max_principle(&config, out, &mut report)?,
        Command::LargeTime(_) => large_time(&config, out, &mut report)?,
        Command::ViscositySweep(_) => viscosity_sweep(&config, &mut report)?,
        Command::CoercivityCheck(_) => coercivity_check(&config, &mut report)?,
        Command::GalerkinCompare(_) => galerkin_compare(&config, &mut report)?,
        Command::ItoStratCheck(_) => ito_strat_check(&config, &mut report)?,
    }
    report.write(out)?;
    Ok(report)
}

fn validity_verdict(result: &EnsembleResult) -> Verdict {
    let m = &result.meta;
    let frac = m.diverged as f64 / m.paths.max(1) as f64;
    let first = result.per_path.iter().filter_map(|p| p.diverged.map(|d| (p.path_id, d))).next();
    let detail = match first {
        Some((id, d)) => format!("{} of {} paths diverged; first: path {id} at step {} (t={})", m.diverged, m.paths, d.step, d.time),
        None => format!("{} paths, none diverged", m.paths),
    };
    Verdict::new("ensemble_valid", frac, ensemble::MAX_DIVERGED_FRACTION, detail)
}

fn run_and_write(config: &SimConfig, out: &Path, report: &mut Report) -> Result<EnsembleResult> {
    let result = ensemble::run_ensemble(config)?;
    write_ensemble(report, &result, out)?;
    report.verdicts.push(validity_verdict(&result));
    Ok(result)
}

fn simulate(config: &SimConfig, out: &Path, report: &mut Report) -> Result<()> {
    let result = run_and_write(config, out, report)?;
    for p in &result.per_path {
        let mut bytes = Vec::new();
        crate::io::write_field_csv(&p.final_state.u, &mut bytes)?;
        report.add_file(out, &format!("final_{}.csv", p.path_id), &bytes)?;
    }
    Ok(())
}

fn verify_identities(config: &SimConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let datum = &config.initial;
    if datum.value_at(&vec![0.0; grid.dim()]).is_none() {
        return Err(Error::Config("verify-identities needs a fourier initial datum".into()));
    }
    let (rows, mut verdicts) = checks::identity_convergence(grid.dim(), grid.res(), |x| datum.value_at(x).expect("checked"))?;
    verdicts.push(checks::drift_identity_check(grid, config.base_seed, 50, config.epsilon)?);
    verdicts.push(checks::matrix_positivity_check(config.base_seed, 1000, &[2, 3, 5])?);
    report.verdicts.extend(verdicts);
    report.data = json!({ "residuals": rows });
    Ok(())
}

/// Largest multiple of `dt` not above `min(0.05, T)`.
fn drift_window(config: &SimConfig) -> f64 {
    let steps = ((0.05f64.min(config.horizon) / config.dt) + 1e-9).floor().max(1.0);
    steps * config.dt
}

fn energy_report(config: &SimConfig, out: &Path, report: &mut Report) -> Result<()> {
    let result = run_and_write(config, out, report)?;
    if !result.meta.valid {
        return Ok(());
    }
    let tol = &config.tolerances;
    let mut v = Vec::new();
    for (f, q) in [("dirichlet", 1.0), ("dirichlet", 1.5), ("area", 1.0), ("gsquare", 1.0)] {
        v.push(ensemble::supermartingale_test(&result, f, q, None)?);
    }
    let l = ensemble::initial_lipschitz(&result);
    v.push(ensemble::quantified_decay_test(&result, l)?);
    v.push(ensemble::area_inequality_test(&result)?);
    let mut refined = config.clone();
    refined.max_refine_level = refined.max_refine_level.max(1);
    let mut drift = ensemble::drift_extrapolated_test(&refined, drift_window(config), 0.0)?;
    if !config.noise {
        drift.detail.push_str("; noise off, so the prediction's noise terms do not apply");
    }
    v.push(drift);
    v.push(ensemble::moment_bound_test(&result, 1.0, tol.k_moment)?);
    report.verdicts.extend(v);
    Ok(())
}

fn max_principle(config: &SimConfig, out: &Path, report: &mut Report) -> Result<()> {
    let result = run_and_write(config, out, report)?;
    let l = ensemble::initial_lipschitz(&result);
    report.verdicts.push(ensemble::max_principle_test(&result, l, config.tolerances.tol_mp));
    report.verdicts.push(ensemble::max_excess_test(&result, 1e-12));
    Ok(())
}

/// `1, 2, 4, …` strictly below the horizon.
pub fn dyadic_times(horizon: f64) -> Vec<f64> {
    std::iter::successors(Some(1.0f64), |t| Some(t * 2.0)).take_while(|&t| t < horizon - 1e-9).collect()
}

fn large_time(config: &SimConfig, out: &Path, report: &mut Report) -> Result<()> {
    let tgrid = dyadic_times(config.horizon);
    if tgrid.len() < 2 {
        return Err(Error::Config(format!("large-time needs T > 2 (got {})", config.horizon)));
    }
    let result = run_and_write(config, out, report)?;
    if !result.meta.valid {
        return Ok(());
    }
    let analysis = ensemble::large_time_analysis(&result, &tgrid)?;
    report.verdicts.push(analysis.verdict.clone());

    // a constant datum must stay exactly W plus that constant
    let mut constant = config.clone();
    constant.initial = InitialDatum::Fourier { offset: 0.3, sin: vec![], cos: vec![], terms: vec![] };
    let cres = ensemble::run_ensemble(&constant)?;
    let canalysis = ensemble::large_time_analysis(&cres, &tgrid)?;
    let worst = canalysis.decay_curve.iter().map(|d| d.mean.abs()).fold(0.0, f64::max);
    report.verdicts.push(Verdict::new("large_time_constant_datum", worst, 1e-12, "decay curve for u₀ ≡ 0.3"));
    report.data = json!({ "decay_curve": analysis.decay_curve, "alpha": analysis.alpha_per_path });
    Ok(())
}

fn viscosity_sweep(config: &SimConfig, report: &mut Report) -> Result<()> {
    let sweep = ensemble::viscosity_sweep(config, &[0.2, 0.1, 0.05, 0.0])?;
    report.verdicts.push(sweep.verdict.clone());
    report.data = json!({ "rows": sweep.rows, "exponent": sweep.exponent });
    Ok(())
}

fn coercivity_check(config: &SimConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let (rows, verdicts) = checks::coercivity_sweep(grid.dim(), grid.res(), config.base_seed, 100, &[0.0, 0.5, 1.0])?;
    report.verdicts.extend(verdicts);
    report.data = json!({ "rows": rows });
    Ok(())
}

fn galerkin_compare(config: &SimConfig, report: &mut Report) -> Result<()> {
    let (cmp, verdicts) = checks::galerkin_comparison(config)?;
    report.verdicts.extend(verdicts);
    report.data = serde_json::to_value(cmp)?;
    Ok(())
}

fn ito_strat_check(config: &SimConfig, report: &mut Report) -> Result<()> {
    let study = ensemble::ito_strat_study(config, 4, 0.4)?;
    report.verdicts.extend(study.verdicts.iter().cloned());
    report.data = serde_json::to_value(&study)?;
    Ok(())
}
