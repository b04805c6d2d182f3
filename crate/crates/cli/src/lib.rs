//! `pns-lab`: command-line front end for the photon-number-splitting
//! analyses.
//!
//! Exit status is 0 on success, 1 when the analysis itself fails (infeasible
//! redistribution, no root, full-blocking regime) and 2 on usage errors.
//! Data goes to `--out` or standard output, diagnostics to standard error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use pns_core::boundary::{boundary_curve, d1_exact, region_grid};
use pns_core::distributions::default_n_max;
use pns_core::fmt::sig17;
use pns_core::gain::{gain_bound, mu_opt, working_point_check};
use pns_core::matching::{
    b_match, difference_profile, feasibility_check, induction_sign_check, match_distribution, Feasibility,
    INDUCTION_ETA_MAX,
};
use pns_core::montecarlo::{goodness_of_fit, simulate, SimulationConfig, SimulationMode};
use pns_core::transport::{compose_with_base, extraction_plan, verify_plan};
use pns_core::{distributions::poisson, ChannelParams, Error};

pub const EXIT_OK: u8 = 0;
pub const EXIT_DOMAIN: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "pns-lab", version, about = "Photon-number statistics of the extended PNS attack")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blocking fraction, difference profile, feasibility and plan summary.
    Analyze(AnalyzeArgs),
    /// Grid of d1 over (mu, eta): CSV `mu,eta,d1,feasible`.
    Region(RegionArgs),
    /// Critical transmission over mu: CSV `mu,eta0_exact,eta0_approx`.
    Boundary(BoundaryArgs),
    /// Optimal mean photon number and its feasibility margin.
    Gain(GainArgs),
    /// Pulse-level simulation: histogram CSV plus chi-squared report.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub eta: f64,
    /// Truncation; defaults to the smallest n with Poisson(mu) tail < 1e-15 (at least 16).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=10_000))]
    pub nmax: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub mu_min: f64,
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub mu_max: f64,
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub eta_min: f64,
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub eta_max: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=100_000))]
    pub steps: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub mu_min: f64,
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub mu_max: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=1_000_000))]
    pub steps: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GainArgs {
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub eta: f64,
    /// Sifting factor; 0.5 for BB84.
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval, allow_negative_numbers = true)]
    pub sifting: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Lossy,
    Base,
    Extended,
}

impl From<ModeArg> for SimulationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Lossy => SimulationMode::LossyChannel,
            ModeArg::Base => SimulationMode::BasePns,
            ModeArg::Extended => SimulationMode::ExtendedPns,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    pub eta: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub pulses: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{s} is not finite"));
    }
    Ok(v)
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= pns_core::distributions::MAX_MEAN {
        Ok(v)
    } else {
        Err(format!("{v} must lie in (0, {}]", pns_core::distributions::MAX_MEAN))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie in (0, 1]"))
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let sub = args.get(1).and_then(|s| s.to_str()).map(str::to_owned);
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => return report_clap_error(e, sub.as_deref(), stdout, stderr),
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => report_clap_error(e, sub.as_deref(), stdout, stderr),
        Err(Failure::Domain(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DOMAIN
        }
        Err(Failure::Io(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DOMAIN
        }
    }
}

fn report_clap_error(e: clap::Error, sub: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let rendered = e.render().to_string();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = write!(stdout, "{rendered}");
            EXIT_OK
        }
        ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = write!(stderr, "{rendered}");
            EXIT_USAGE
        }
        _ => {
            let _ = write!(stderr, "{rendered}");
            if rendered.contains("Usage:") {
                return EXIT_USAGE;
            }
            let mut cmd = Cli::command();
            let usage = match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
                Some(sub_cmd) => sub_cmd.render_usage(),
                None => cmd.render_usage(),
            };
            let _ = writeln!(stderr, "\n{usage}");
            EXIT_USAGE
        }
    }
}

enum Failure {
    Usage(clap::Error),
    Domain(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn usage(sub: &str, msg: String) -> Failure {
    let mut cmd = Cli::command();
    let cmd = cmd.find_subcommand_mut(sub).expect("known subcommand");
    Failure::Usage(cmd.error(ErrorKind::ValueValidation, msg))
}

/// Opens `--out` or falls back to standard output.
fn with_output<F>(path: Option<&PathBuf>, stdout: &mut dyn Write, f: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> Result<(), Failure>,
{
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(stdout),
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<u8, Failure> {
    match cmd {
        Command::Analyze(a) => analyze(&a, stdout, stderr),
        Command::Region(a) => {
            if a.mu_min >= a.mu_max || a.eta_min >= a.eta_max {
                return Err(usage("region", "ranges need min < max".into()));
            }
            let grid = region_grid((a.mu_min, a.mu_max), (a.eta_min, a.eta_max), a.steps as usize)?;
            with_output(a.out.as_ref(), stdout, |w| Ok(grid.write_csv(w)?))?;
            Ok(EXIT_OK)
        }
        Command::Boundary(a) => {
            if a.mu_min >= a.mu_max {
                return Err(usage("boundary", "mu range needs min < max".into()));
            }
            let curve = boundary_curve((a.mu_min, a.mu_max), a.steps as usize)?;
            with_output(a.out.as_ref(), stdout, |w| Ok(curve.write_csv(w)?))?;
            for mu in &curve.skipped {
                writeln!(stderr, "no boundary point at mu={}", sig17(*mu))?;
            }
            Ok(if curve.skipped.is_empty() { EXIT_OK } else { EXIT_DOMAIN })
        }
        Command::Gain(a) => gain(&a, stdout),
        Command::Simulate(a) => simulate_cmd(&a, stdout, stderr),
    }
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write, stderr: &mut dyn Write) -> Result<u8, Failure> {
    let params = ChannelParams::new(a.mu, a.eta)?;
    let n_max = a.nmax.map_or_else(|| default_n_max(a.mu), |n| n as usize);
    writeln!(out, "mu={}", sig17(a.mu))?;
    writeln!(out, "eta={}", sig17(a.eta))?;
    writeln!(out, "n_max={n_max}")?;
    writeln!(out, "d1={}", sig17(d1_exact(&params)))?;
    let b = match b_match(&params) {
        Ok(b) => b,
        Err(e @ Error::FullBlockingRegime { .. }) => {
            writeln!(out, "regime=FULL-BLOCKING")?;
            writeln!(stderr, "{e}; the plain attack blocking every single-photon pulse applies")?;
            return Ok(EXIT_DOMAIN);
        }
        Err(e) => return Err(e.into()),
    };
    writeln!(out, "b_match={}", sig17(b))?;

    let profile = difference_profile(&params, n_max)?;
    let matched = match_distribution(&params, n_max)?;
    let loss = poisson(params.received_mean(), n_max)?;
    match profile.turning_index() {
        Some(n) => writeln!(out, "turning_index={n}")?,
        None => writeln!(out, "turning_index=none")?,
    }
    writeln!(out, "sum_d={}", sig17(profile.total()))?;
    if a.eta <= INDUCTION_ETA_MAX {
        writeln!(out, "sign_pattern={}", induction_sign_check(&params, n_max)?)?;
    } else {
        writeln!(out, "sign_pattern=uncertified (eta > 0.75)")?;
    }
    let verdict = feasibility_check(&profile);
    match verdict {
        Feasibility::Feasible => writeln!(out, "feasibility=FEASIBLE")?,
        Feasibility::Infeasible { witness, excess } => {
            writeln!(out, "feasibility=INFEASIBLE")?;
            writeln!(out, "witness={witness}")?;
            writeln!(out, "excess={}", sig17(excess))?;
        }
    }

    if verdict.is_feasible() {
        let extraction = extraction_plan(&params, n_max)?;
        let plan = compose_with_base(&extraction, b)?;
        let report = verify_plan(&plan, &params);
        for check in &report.checks {
            writeln!(
                out,
                "plan.{}={} (max deviation {})",
                check.name,
                if check.passed { "pass" } else { "FAIL" },
                sig17(check.max_deviation)
            )?;
        }
        // photons taken beyond the one every multi-photon pulse loses anyway
        let extra: f64 = (1..=n_max)
            .map(|n| matched.prob(n) * extraction.photons_taken(n))
            .sum();
        writeln!(out, "plan.extra_photons_per_pulse={}", sig17(extra))?;
    }

    writeln!(out, "# n,d_n,p_match,p_loss")?;
    for (n, d) in profile.d().iter().enumerate() {
        writeln!(out, "{n},{},{},{}", sig17(*d), sig17(matched.prob(n)), sig17(loss.prob(n)))?;
    }
    Ok(if verdict.is_feasible() { EXIT_OK } else { EXIT_DOMAIN })
}

fn gain(a: &GainArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    let opt = mu_opt(a.eta, a.sifting)?;
    let params = ChannelParams::new(opt.mu, a.eta)?;
    let report = gain_bound(&params, a.sifting)?;
    let wp = working_point_check(&params);
    writeln!(out, "eta={}", sig17(a.eta))?;
    writeln!(out, "sifting={}", sig17(a.sifting))?;
    writeln!(out, "mu_opt={}", sig17(opt.mu))?;
    writeln!(out, "mu_opt_over_eta={}", sig17(opt.mu / a.eta))?;
    writeln!(out, "bound={}", sig17(report.bound))?;
    writeln!(out, "s_multi={}", sig17(report.s_multi))?;
    writeln!(out, "p_exp={}", sig17(report.p_exp))?;
    writeln!(out, "d1={}", sig17(wp.d1))?;
    writeln!(out, "feasible={}", wp.feasible)?;
    let opt_str = |v: Option<f64>| v.map_or_else(|| "none".to_owned(), sig17);
    writeln!(out, "eta0_exact={}", opt_str(wp.eta0_exact))?;
    writeln!(out, "eta0_approx={}", opt_str(wp.eta0_approx))?;
    writeln!(out, "margin={}", opt_str(wp.margin))?;
    writeln!(out, "certified={}", wp.certified)?;
    for note in &wp.notes {
        writeln!(out, "note={note}")?;
    }
    Ok(EXIT_OK)
}

fn simulate_cmd(a: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<u8, Failure> {
    let config = SimulationConfig {
        params: ChannelParams::new(a.mu, a.eta)?,
        pulses: a.pulses,
        seed: a.seed,
        mode: a.mode.into(),
    };
    let result = simulate(&config)?;
    with_output(a.out.as_ref(), stdout, |w| Ok(result.write_histogram_csv(w)?))?;
    let fit = goodness_of_fit(&result);
    let report: &mut dyn Write = if a.out.is_some() { stdout } else { stderr };
    writeln!(report, "mode={}", config.mode)?;
    writeln!(report, "pulses={}", config.pulses)?;
    writeln!(report, "seed={}", config.seed)?;
    writeln!(report, "nonvacuum_count={}", result.nonvacuum_count)?;
    writeln!(report, "tagged_count={}", result.tagged_count)?;
    writeln!(report, "blocked_singles={}", result.blocked_singles)?;
    writeln!(report, "tv_distance={}", sig17(result.tv_distance_to_analytic))?;
    write!(report, "{}", fit.to_key_values())?;
    Ok(EXIT_OK)
}
