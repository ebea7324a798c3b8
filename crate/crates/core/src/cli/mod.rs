//! Command-line front end: `design`, `estimate`, `simulate`, `skeletal`, `verify`.
//!
//! Exit codes: 0 success, 1 usage or parameter error, 2 data or I/O error,
//! 3 verification failure, 4 numeric or internal error.

pub mod config;
pub mod dataset;
pub mod report;
pub mod verify;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::GswError;
use crate::estimator::{estimate_report, residual_projection};
use crate::linalg::build_setup;
use crate::montecarlo::experiment::{generate_outcomes, generate_x};
use crate::montecarlo::{
    run_prepared, OutcomeSpec, PreparedProblem, SimConfig, Target, XGenerator,
};
use crate::rng::{Lane, RngStream};
use crate::sampler::run_gsw_with;
use crate::skeletal::{run_coupled_replication, CoupledOptions, CoupledTrajectory};

use config::{read_config, FileConfig, RunConfig};
use dataset::{load_dataset, read_assignment};
use report::{
    csv_float, digest_file, emit_report, ensure_dir, write_bytes, InputDigest, ReportError,
    RunManifest,
};
use verify::{run_suite, CheckResult, Suite};

#[derive(Debug, Parser)]
#[command(
    name = "gsw",
    version,
    about = "Gram-Schmidt Walk designs, estimates and simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one assignment for the covariates in --x.
    Design {
        #[arg(long)]
        x: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Report the effect estimate, residual decomposition and bounds.
    Estimate {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        /// Assignment produced by `design`; enables tau_hat.
        #[arg(long)]
        z: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run replications and summarize the sampling distribution.
    Simulate {
        /// Covariate file; synthetic covariates are generated when absent.
        #[arg(long)]
        x: Option<PathBuf>,
        #[arg(long)]
        outcomes: Option<PathBuf>,
        #[arg(long, required_unless_present = "x")]
        n: Option<usize>,
        #[arg(long, required_unless_present = "x")]
        d: Option<usize>,
        #[arg(long, value_enum, default_value_t = XGen::Gaussian)]
        x_gen: XGen,
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        /// Synthetic outcomes: b = signal·Xβ + noise·e, a = b + effect.
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        effect: f64,
        /// Histogram bins in histogram.csv.
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Dump one coupled gs/skeletal trajectory.
    Skeletal {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        /// Replication index whose streams drive the run.
        #[arg(long, default_value_t = 0)]
        replication: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run oracle and invariant checks; exits 3 on any failure.
    Verify {
        /// `all` or a comma-separated list of suites.
        #[arg(long, default_value = "all")]
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value configuration file (phi, seed, replications, mode, epsilon_override, freeze_tol).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Fail instead of creating a missing output directory.
    #[arg(long)]
    pub no_mkdir: bool,
    /// Robustness parameter in (0, 1) [default: 0.5].
    #[arg(long)]
    pub phi: Option<f64>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications for `simulate` [default: 1000].
    #[arg(long)]
    pub reps: Option<usize>,
    /// gsw, iid, skeletal or coupled [default: gsw].
    #[arg(long)]
    pub mode: Option<String>,
    /// Overrides the coupling threshold ε_n.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Distance from ±1 at which a coordinate freezes [default: 1e-9].
    #[arg(long)]
    pub freeze_tol: Option<f64>,
    /// Record the wall-clock time in the manifest (makes reruns differ).
    #[arg(long)]
    pub record_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum XGen {
    Gaussian,
    Sphere,
    Ones,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    TauHat,
    Residual,
}

#[derive(Debug)]
pub enum CliError {
    Gsw(GswError),
    Report(ReportError),
    Verification(String),
}

impl From<GswError> for CliError {
    fn from(e: GswError) -> Self {
        CliError::Gsw(e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Report(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Gsw(e) => e.fmt(f),
            CliError::Report(e) => e.fmt(f),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gsw(GswError::Parameter(_) | GswError::TooLarge { .. }) => 1,
            CliError::Gsw(GswError::Data(_) | GswError::Degenerate(_)) => 2,
            CliError::Gsw(
                GswError::Numeric(_) | GswError::Logic(_) | GswError::InternalConsistency { .. },
            ) => 4,
            CliError::Report(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(common: &Common) -> CliResult<(RunConfig, Option<InputDigest>)> {
    let (file, digest) = match &common.config {
        Some(p) => (Some(read_config(p)?), Some(digest(p)?)),
        None => (None, None),
    };
    let flags = FileConfig {
        phi: common.phi,
        seed: common.seed,
        replications: common.reps,
        mode: common.mode.as_deref().map(str::parse).transpose()?,
        epsilon_override: common.epsilon,
        freeze_tol: common.freeze_tol,
    };
    Ok((RunConfig::resolve(file.as_ref(), &flags)?, digest))
}

fn digest(path: &Path) -> CliResult<InputDigest> {
    digest_file(path).map_err(|source| {
        CliError::Report(ReportError {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn digests(paths: &[Option<&Path>], config: Option<InputDigest>) -> CliResult<Vec<InputDigest>> {
    let mut out = Vec::new();
    for p in paths.iter().flatten() {
        out.push(digest(p)?);
    }
    out.extend(config);
    Ok(out)
}

/// Configuration echoed in a manifest.
#[derive(Debug, Serialize)]
struct Snapshot<E: Serialize> {
    run: RunConfig,
    options: E,
}

#[derive(Debug, Serialize)]
struct NoOptions {}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Design { x, common } => design(x, common),
        Command::Estimate {
            x,
            outcomes,
            z,
            common,
        } => estimate(x, outcomes, z.as_deref(), common),
        Command::Simulate {
            x,
            outcomes,
            n,
            d,
            x_gen,
            target,
            signal,
            noise,
            effect,
            bins,
            common,
        } => simulate(
            SimulateArgs {
                x: x.as_deref(),
                outcomes: outcomes.as_deref(),
                n: *n,
                d: *d,
                x_gen: *x_gen,
                target: *target,
                signal: *signal,
                noise: *noise,
                effect: *effect,
                bins: *bins,
            },
            common,
        ),
        Command::Skeletal {
            x,
            outcomes,
            replication,
            common,
        } => skeletal(x, outcomes, *replication, common),
        Command::Verify { suite, common } => verify_cmd(suite, common),
    }
}

fn prepare_out(common: &Common) -> CliResult<&Path> {
    ensure_dir(&common.out_dir, !common.no_mkdir)?;
    Ok(&common.out_dir)
}

#[derive(Debug, Serialize)]
struct DesignSummary {
    n: usize,
    d: usize,
    phi: f64,
    treated: usize,
    /// `‖Xᵀz‖/n`
    covariate_imbalance: f64,
}

fn design(x_path: &Path, common: &Common) -> CliResult<()> {
    let (cfg, cfg_digest) = resolve(common)?;
    let ds = load_dataset(x_path, None)?;
    let setup = build_setup(ds.x, cfg.phi)?;
    let mut rng = RngStream::for_replication(cfg.seed, 0, Lane::Main);
    let z = run_gsw_with(&setup, &mut rng, cfg.freeze_tol)?;
    let out = prepare_out(common)?;

    let mut csv = String::new();
    for s in &z {
        writeln!(csv, "{s}").expect("writing to a String");
    }
    write_bytes(&out.join("z.csv"), csv.as_bytes())?;

    let zf: Vec<f64> = z.iter().map(|&s| f64::from(s)).collect();
    let imbalance =
        (setup.x().transpose() * nalgebra::DVector::from_vec(zf)).norm() / setup.n() as f64;
    let summary = DesignSummary {
        n: setup.n(),
        d: setup.d(),
        phi: cfg.phi,
        treated: z.iter().filter(|&&s| s == 1).count(),
        covariate_imbalance: imbalance,
    };
    let manifest = RunManifest::new(
        "design",
        cfg.seed,
        Snapshot {
            run: cfg,
            options: NoOptions {},
        },
        digests(&[Some(x_path)], cfg_digest)?,
        common.record_timestamp,
    );
    emit_report(&manifest, &summary, Vec::new(), &out.join("design.json"))?;
    println!(
        "wrote {} and {}",
        out.join("z.csv").display(),
        out.join("design.json").display()
    );
    Ok(())
}

fn estimate(x_path: &Path, o_path: &Path, z_path: Option<&Path>, common: &Common) -> CliResult<()> {
    let (cfg, cfg_digest) = resolve(common)?;
    let ds = load_dataset(x_path, Some(o_path))?;
    let outcomes = ds.outcomes.expect("outcomes were requested");
    let z = z_path.map(read_assignment).transpose()?;
    let setup = build_setup(ds.x, cfg.phi)?;
    let rep = estimate_report(&setup, &outcomes, z.as_deref())?;
    let out = prepare_out(common)?;
    let manifest = RunManifest::new(
        "estimate",
        cfg.seed,
        Snapshot {
            run: cfg,
            options: NoOptions {},
        },
        digests(&[Some(x_path), Some(o_path), z_path], cfg_digest)?,
        common.record_timestamp,
    );
    let path = out.join("estimate.json");
    emit_report(&manifest, &rep, rep.notes.clone(), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

struct SimulateArgs<'a> {
    x: Option<&'a Path>,
    outcomes: Option<&'a Path>,
    n: Option<usize>,
    d: Option<usize>,
    x_gen: XGen,
    target: Option<TargetArg>,
    signal: f64,
    noise: f64,
    effect: f64,
    bins: usize,
}

#[derive(Debug, Serialize)]
struct SimulateOptions {
    n: usize,
    d: usize,
    x_generator: Option<XGen>,
    synthetic_outcomes: Option<(f64, f64, f64)>,
    target: Option<Target>,
    bins: usize,
}

fn simulate(args: SimulateArgs<'_>, common: &Common) -> CliResult<()> {
    let (cfg, cfg_digest) = resolve(common)?;
    let target = args.target.map(|t| match t {
        TargetArg::TauHat => Target::TauHat,
        TargetArg::Residual => Target::ResidualInnerProduct,
    });
    let (x, x_generator) = match args.x {
        Some(p) => (load_dataset(p, None)?.x, None),
        None => {
            let (n, d) = args.n.zip(args.d).ok_or_else(|| {
                GswError::Parameter("--n and --d are required without --x".into())
            })?;
            let gen = match args.x_gen {
                XGen::Gaussian => XGenerator::Gaussian,
                XGen::Sphere => XGenerator::UnitSphere,
                XGen::Ones => XGenerator::Ones,
                XGen::Zero => XGenerator::Zero,
            };
            (generate_x(&gen, n, d, cfg.seed)?, Some(args.x_gen))
        }
    };
    let (n, d) = (x.nrows(), x.ncols());
    let (outcome_spec, synthetic) = match args.outcomes {
        Some(p) => (OutcomeSpec::Given(dataset::read_outcomes(p)?), None),
        None => (
            OutcomeSpec::Synthetic {
                signal: args.signal,
                noise: args.noise,
                effect: args.effect,
            },
            Some((args.signal, args.noise, args.effect)),
        ),
    };
    let outcomes = generate_outcomes(&outcome_spec, &x, cfg.seed)?;
    let setup = build_setup(x.clone(), cfg.phi)?;
    let v = residual_projection(outcomes.mu(), setup.x())?.v;
    let sim = SimConfig {
        n,
        d,
        phi: cfg.phi,
        replications: cfg.replications,
        seed: cfg.seed,
        mode: cfg.mode,
        x: XGenerator::Matrix(x),
        outcomes: outcome_spec,
        target,
        epsilon_override: cfg.epsilon_override,
        freeze_tol: cfg.freeze_tol,
    };
    let problem = PreparedProblem { setup, outcomes, v };
    let diag = run_prepared(&sim, &problem)?;
    let out = prepare_out(common)?;

    let mut samples = String::from("replication,value\n");
    for (k, s) in diag.samples.iter().enumerate() {
        writeln!(samples, "{k},{}", csv_float(*s)).expect("writing to a String");
    }
    write_bytes(&out.join("samples.csv"), samples.as_bytes())?;
    let mut hist = String::from("lower,upper,count\n");
    for (lo, hi, c) in diag.histogram(args.bins) {
        writeln!(hist, "{},{},{c}", csv_float(lo), csv_float(hi)).expect("writing to a String");
    }
    write_bytes(&out.join("histogram.csv"), hist.as_bytes())?;

    let manifest = RunManifest::new(
        "simulate",
        cfg.seed,
        Snapshot {
            run: cfg,
            options: SimulateOptions {
                n,
                d,
                x_generator,
                synthetic_outcomes: synthetic,
                target,
                bins: args.bins,
            },
        },
        digests(&[args.x, args.outcomes], cfg_digest)?,
        common.record_timestamp,
    );
    let path = out.join("diagnostics.json");
    emit_report(&manifest, &diag, diag.warnings.clone(), &path)?;
    println!("wrote {}, samples.csv and histogram.csv", path.display());
    Ok(())
}

/// Trajectory summary without the per-round table.
#[derive(Debug, Serialize)]
struct SkeletalSummary<'a> {
    n: usize,
    eps_n: f64,
    kappa: f64,
    threshold_t: i64,
    coupling_vacuous: bool,
    case1_rounds: usize,
    first_violation_t: Option<usize>,
    m_gs: f64,
    m_tilde: f64,
    m: f64,
    quadratic_variation: f64,
    v_norm_sq: f64,
    skeletal_order: Vec<usize>,
    warnings: &'a [String],
}

impl<'a> From<&'a CoupledTrajectory> for SkeletalSummary<'a> {
    fn from(t: &'a CoupledTrajectory) -> Self {
        Self {
            n: t.n,
            eps_n: t.eps_n,
            kappa: t.kappa,
            threshold_t: t.threshold_t,
            coupling_vacuous: t.coupling_vacuous,
            case1_rounds: t.case1_rounds,
            first_violation_t: t.first_violation_t,
            m_gs: t.m_gs,
            m_tilde: t.m_tilde,
            m: t.m,
            quadratic_variation: t.quadratic_variation,
            v_norm_sq: t.v_norm_sq,
            skeletal_order: t.skeletal_order().iter().map(|p| p + 1).collect(),
            warnings: &t.warnings,
        }
    }
}

#[derive(Debug, Serialize)]
struct SkeletalOptions {
    replication: u64,
}

fn skeletal(x_path: &Path, o_path: &Path, replication: u64, common: &Common) -> CliResult<()> {
    let (cfg, cfg_digest) = resolve(common)?;
    let ds = load_dataset(x_path, Some(o_path))?;
    let outcomes = ds.outcomes.expect("outcomes were requested");
    let setup = build_setup(ds.x, cfg.phi)?;
    let v = residual_projection(outcomes.mu(), setup.x())?.v;
    let opts = CoupledOptions {
        eps_override: cfg.epsilon_override,
        freeze_tol: cfg.freeze_tol,
        record_directions: false,
    };
    let traj = run_coupled_replication(&setup, &v, cfg.seed, replication, &opts)?;
    let out = prepare_out(common)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(|source| ReportError {
        path: out.join("trajectory.csv"),
        source,
    })?;
    write_bytes(&out.join("trajectory.csv"), &csv)?;
    let manifest = RunManifest::new(
        "skeletal",
        cfg.seed,
        Snapshot {
            run: cfg,
            options: SkeletalOptions { replication },
        },
        digests(&[Some(x_path), Some(o_path)], cfg_digest)?,
        common.record_timestamp,
    );
    let summary = SkeletalSummary::from(&traj);
    let path = out.join("summary.json");
    emit_report(&manifest, &summary, traj.warnings.clone(), &path)?;
    println!("wrote {} and trajectory.csv", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    passed: bool,
    checks: Vec<CheckResult>,
}

#[derive(Debug, Serialize)]
struct VerifyOptions {
    suites: Vec<Suite>,
}

fn verify_cmd(suite_arg: &str, common: &Common) -> CliResult<()> {
    let (cfg, cfg_digest) = resolve(common)?;
    let suites = Suite::parse_list(suite_arg)?;
    let mut checks = Vec::new();
    for &s in &suites {
        checks.extend(run_suite(s, cfg.seed)?);
    }
    println!(
        "{:<20} {:<52} {:>12} {:>10}  result",
        "suite", "case", "delta", "tol"
    );
    for c in &checks {
        println!(
            "{:<20} {:<52} {:>12.3e} {:>10.1e}  {}",
            c.suite_name(),
            c.case,
            c.delta,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let out = prepare_out(common)?;
    let manifest = RunManifest::new(
        "verify",
        cfg.seed,
        Snapshot {
            run: cfg,
            options: VerifyOptions { suites },
        },
        digests(&[], cfg_digest)?,
        common.record_timestamp,
    );
    let rep = VerifyReport {
        passed: failed == 0,
        checks,
    };
    emit_report(&manifest, &rep, Vec::new(), &out.join("verify.json"))?;
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} check(s) failed")));
    }
    Ok(())
}

impl CheckResult {
    fn suite_name(&self) -> &'static str {
        self.suite.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(
            CliError::Gsw(GswError::Parameter("x".into())).exit_code(),
            1
        );
        assert_eq!(CliError::Gsw(GswError::Data("x".into())).exit_code(), 2);
        assert_eq!(CliError::Verification("x".into()).exit_code(), 3);
        assert_eq!(CliError::Gsw(GswError::Numeric("x".into())).exit_code(), 4);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["gsw", "frobnicate"]), 1);
        assert_eq!(run(["gsw", "design"]), 1);
    }

    #[test]
    fn mode_flag_is_validated() {
        let tmp = tempfile::tempdir().unwrap();
        let x = tmp.path().join("X.csv");
        std::fs::write(&x, "1\n1\n").unwrap();
        let code = run([
            "gsw".into(),
            "design".into(),
            "--x".into(),
            x.into_os_string(),
            "--mode".into(),
            "nope".into(),
            "--out-dir".into(),
            tmp.path().as_os_str().to_owned(),
        ]);
        assert_eq!(code, 1);
    }
}
