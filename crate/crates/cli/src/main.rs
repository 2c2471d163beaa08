//! `majorant`: feasibility checks, diagonal realization, property suites and
//! convergence tables from the command line.
//!
//! Exit codes: 0 success, 1 a suite criterion failed, 2 infeasible,
//! 3 precondition violated, 64 malformed input, 70 internal error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use majorant::io::{validate_resolutions, Mode, PatternSpec, ProblemFile, ResultFile, SchurHornResult};
use majorant::matrix_model::singular_profile;
use majorant::oracle::{self, suite, InstanceKind, InstanceSpec};
use majorant::schur_horn::{realize_schur_horn, SchurHornInstance, Source};
use majorant::thompson::general_solve;
use majorant::{profile::submajorizes, Error, Strategy};
use serde_json::json;

#[derive(Parser)]
#[command(name = "majorant", version, about = "Diagonal realization under majorization constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Where to write the result; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the tolerance in the problem file.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the strategy in the problem file.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated powers of two.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the majorization report for a problem.
    Check(Common),
    /// Realize the diagonal and write a result file.
    Realize(Common),
    /// Unitary-orbit realization for self-adjoint data.
    SchurHorn(Common),
    /// Residual table over increasing resolutions, as CSV.
    Convergence(Common),
    /// Run the property suites.
    Suite {
        #[command(flatten)]
        common: Common,
        /// Run a single criterion.
        #[arg(long)]
        criterion: Option<usize>,
    },
    /// Write a seeded problem file.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "expectation-generated")]
        kind: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        gap: Option<f64>,
    },
    /// Dispatch on the "mode" field of the problem file.
    Run(Common),
}

/// Failures carry the exit code they map to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Infeasible { .. } => 2,
            Error::Precondition { .. } | Error::NotSelfAdjoint { .. } => 3,
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Json(_) | Error::Io(_) | Error::Csv(_) => 64,
            Error::Invariant(_) => 70,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<u8, Failure>;

fn load(common: &Common) -> Result<ProblemFile, Failure> {
    let path = common.input.as_ref().ok_or_else(|| Failure {
        code: 64,
        message: "--input is required".into(),
    })?;
    let mut p = ProblemFile::load(path)?;
    if let Some(t) = common.tol {
        p.tol = Some(t);
    }
    if let Some(s) = common.strategy {
        p.strategy = s;
    }
    if let Some(r) = &common.resolutions {
        p.resolutions = Some(r.clone());
    }
    p.validate()?;
    Ok(p)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text).map_err(Error::from)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(Error::from)?;
            if !text.ends_with('\n') {
                writeln!(out).map_err(Error::from)?;
            }
        }
    }
    Ok(())
}

fn check(p: &ProblemFile) -> CliResult {
    let (a, t) = p.pair()?;
    let report = submajorizes(&a.singular_profile(), &singular_profile(t), p.tol())?;
    let (cell, margin) = report.worst_margin();
    let body = json!({
        "ii1_feasible": report.submajorized,
        "finite_feasible": report.finite_feasible(),
        "worst_margin": { "cell": cell, "margin": margin },
        "report": report,
    });
    println!("{}", serde_json::to_string_pretty(&body).map_err(Error::from)?);
    Ok(if report.submajorized { 0 } else { 2 })
}

fn realize(p: &ProblemFile, output: Option<&Path>) -> CliResult {
    let (a, t) = p.pair()?;
    let r = general_solve(a, t, p.strategy, p.tol())?;
    let summary = r.summary_line();
    let file = ResultFile::Thompson(r);
    match output {
        Some(path) => {
            file.save(path)?;
            println!("{summary}");
        }
        None => {
            emit(None, &file.to_json()?)?;
            eprintln!("{summary}");
        }
    }
    Ok(0)
}

fn schur_horn(p: &ProblemFile, output: Option<&Path>) -> CliResult {
    let (a, t) = p.pair()?;
    let tol = p.tol();
    if let Some(z) = a.entries().iter().find(|z| z.im.abs() > tol) {
        return Err(Error::InvalidInput(format!("Schur-Horn targets must be real, found {z}")).into());
    }
    let inst = SchurHornInstance {
        target: a.entries().iter().map(|z| z.re).collect(),
        source: Source::Element(t.clone()),
    };
    let r = realize_schur_horn(&inst, tol)?;
    let report = r.report(&inst, tol)?;
    let summary = format!(
        "realized: residual={:.3e}, rotations={}, spectrum drift={:.3e}",
        report.diag_residual, report.rotations, report.spectrum_drift
    );
    let file = ResultFile::SchurHorn(SchurHornResult { u: r.u, s: r.s, report });
    match output {
        Some(path) => {
            file.save(path)?;
            println!("{summary}");
        }
        None => {
            emit(None, &file.to_json()?)?;
            eprintln!("{summary}");
        }
    }
    Ok(0)
}

fn convergence(p: &ProblemFile, output: Option<&Path>) -> CliResult {
    let PatternSpec { a, t } = p.pattern.as_ref().ok_or_else(|| Error::InvalidInput("convergence needs \"pattern\"".into()))?;
    let resolutions = p.resolutions.clone().unwrap_or_else(|| vec![4, 16, 64, 256]);
    validate_resolutions(&resolutions)?;
    let rows = oracle::resolution_convergence(a, t, &resolutions, p.strategy, p.tol())?;
    let mut buf = Vec::new();
    oracle::write_convergence_csv(&rows, &mut buf)?;
    emit(output, &String::from_utf8_lossy(&buf))?;
    Ok(0)
}

fn run_suite(common: &Common, criterion: Option<usize>) -> CliResult {
    let outcomes = match criterion {
        Some(id) => vec![suite::run_one(id, common.seed).ok_or_else(|| Failure {
            code: 64,
            message: format!("no criterion {id}; expected 1..=8"),
        })?],
        None => suite::run_all(common.seed),
    };
    for o in &outcomes {
        println!("{}", o.line());
    }
    if let Some(path) = &common.output {
        fs::write(path, serde_json::to_string_pretty(&outcomes).map_err(Error::from)?).map_err(Error::from)?;
    }
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 1 })
}

fn generate(common: &Common, kind: &str, n: usize, gap: Option<f64>) -> CliResult {
    let kind: InstanceKind = serde_json::from_value(json!(kind))
        .map_err(|_| Error::InvalidInput(format!("unknown instance kind {kind:?}")))?;
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()).into());
    }
    let inst = InstanceSpec { seed: common.seed, n, kind, gap }.generate();
    let mut p = ProblemFile::instance(inst.a, inst.t);
    p.tol = common.tol;
    p.strategy = common.strategy.unwrap_or_default();
    emit(common.output.as_deref(), &serde_json::to_string_pretty(&p).map_err(Error::from)?)?;
    Ok(0)
}

fn dispatch(mode: Mode, common: &Common) -> CliResult {
    if mode == Mode::Suite {
        return run_suite(common, None);
    }
    let mut p = load(common)?;
    p.mode = Some(mode);
    p.validate()?;
    let out = common.output.as_deref();
    match mode {
        Mode::Check => check(&p),
        Mode::Realize => realize(&p, out),
        Mode::SchurHorn => schur_horn(&p, out),
        Mode::Convergence => convergence(&p, out),
        Mode::Suite => unreachable!(),
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Check(c) => dispatch(Mode::Check, &c),
        Command::Realize(c) => {
            // A file that asks for the Schur-Horn route keeps it.
            let mode = match load(&c)?.mode {
                Some(Mode::SchurHorn) => Mode::SchurHorn,
                _ => Mode::Realize,
            };
            dispatch(mode, &c)
        }
        Command::SchurHorn(c) => dispatch(Mode::SchurHorn, &c),
        Command::Convergence(c) => dispatch(Mode::Convergence, &c),
        Command::Suite { common, criterion } => run_suite(&common, criterion),
        Command::Generate { common, kind, n, gap } => generate(&common, &kind, n, gap),
        Command::Run(c) => {
            let mode = load(&c)?.mode();
            dispatch(mode, &c)
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("MAJORANT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
