//! `heatkern`: heat invariants, traces, zeta functions, determinants and KdV
//! flows for `L = -D² + Q` on a circle.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical-resolution
//! refusal, 4 verification failure. Errors are printed to stderr as one line
//! `error[<kind>]: <message>`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` rejects NaN too

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatkern::diffpoly::Ring;
use heatkern::heatcoeffs::{w_coefficient, HeatCoefficients, TaylorTable};
use heatkern::kdvflow::{self, FlowConfig, Functional, Integrator};
use heatkern::oracle::{Oracle, SpectralProblem};
use heatkern::{perturb, verify, Error};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "heatkern", version, about = "Heat-kernel invariants and spectral functions of -D² + Q on a circle")]
struct Cli {
    /// Output format for tables.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    /// Write the table here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Symbolic heat-kernel coefficients `[a_k]` (or `W_k`).
    Coeffs(CoeffsArgs),
    /// Global invariants `A_k = ∫ tr [a_k]` of a problem.
    Invariants(InvariantsArgs),
    /// Normalized heat trace: oracle, second-order and resummed forms.
    Trace(TraceArgs),
    /// `log Det(L − λ)`: oracle, Weyl term and `γ(λ)`.
    Det(DetArgs),
    /// `ζ(s, λ)` by direct eigenvalue sum and by Mellin transform.
    Zeta(ZetaArgs),
    /// Integrate a KdV-hierarchy flow and report conservation.
    Kdv(KdvArgs),
    /// Run the cross-validation suite, or the checks for one problem.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct CoeffsArgs {
    /// Single order to print.
    #[arg(long, conflicts_with = "kmax")]
    k: Option<u32>,
    /// Print every order from 0 (or 1 for `W_k`) up to this one.
    #[arg(long)]
    kmax: Option<u32>,
    /// Use the commutative (scalar-potential) image.
    #[arg(long)]
    scalar: bool,
    /// Print `W_k` instead of `[a_k]`.
    #[arg(long)]
    w: bool,
}

#[derive(Args, Debug)]
struct ProblemArg {
    /// Problem file: `{"a": …, "N": …, "modes": [{"n": …, "matrix": [[re, im], …]}]}`.
    #[arg(long)]
    problem: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Smallest `t` the eigenvalue cutoff must serve (default `0.01 a²`).
    #[arg(long)]
    t_min: Option<f64>,
    /// Number of heat invariants in the small-`t` series.
    #[arg(long, default_value_t = 6)]
    order: u32,
}

#[derive(Args, Debug)]
struct InvariantsArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long, conflicts_with = "kmax")]
    k: Option<u32>,
    #[arg(long)]
    kmax: Option<u32>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Comma-separated times.
    #[arg(long, value_delimiter = ',', required = true)]
    t: Vec<f64>,
    /// Terms in the resummed series.
    #[arg(long, default_value_t = 6)]
    terms: usize,
}

#[derive(Args, Debug)]
struct DetArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Comma-separated spectral shifts (negative).
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    lambda: Vec<f64>,
}

#[derive(Args, Debug)]
struct ZetaArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Comma-separated exponents.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    s: Vec<f64>,
    /// Spectral shift, below the lowest eigenvalue.
    #[arg(long, allow_hyphen_values = true)]
    lambda: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IntegratorArg {
    IfRk4,
    Etdrk4,
    Gauss4,
}

impl From<IntegratorArg> for Integrator {
    fn from(i: IntegratorArg) -> Self {
        match i {
            IntegratorArg::IfRk4 => Integrator::IfRk4,
            IntegratorArg::Etdrk4 => Integrator::Etdrk4,
            IntegratorArg::Gauss4 => Integrator::Gauss4,
        }
    }
}

#[derive(Args, Debug)]
struct KdvArgs {
    #[command(flatten)]
    problem: ProblemArg,
    /// Flow index.
    #[arg(long, default_value_t = 2)]
    k: u32,
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    s_end: f64,
    #[arg(long, default_value_t = 4096)]
    steps: usize,
    /// States kept along the trajectory.
    #[arg(long, default_value_t = 16)]
    records: usize,
    #[arg(long, value_enum)]
    integrator: Option<IntegratorArg>,
    /// Rescaled invariants `I_m` to track.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    track: Vec<u32>,
    /// Heat invariants `A_m` to track.
    #[arg(long, value_delimiter = ',')]
    heat: Vec<u32>,
    /// Write the trajectory as JSON lines.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run the problem-specific checks instead of the full suite.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Run only the named check.
    #[arg(long, conflicts_with = "problem")]
    check: Option<String>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Resolution { .. } => (3, "resolution"),
            Error::Integration { .. } => (3, "integration"),
            Error::Aliasing { .. } => (2, "aliasing"),
            Error::Domain(_) => (2, "domain"),
            Error::Input(_) | Error::NotExactDerivative(_) => (2, "input"),
            Error::Json(_) => (2, "parse"),
            Error::Io(_) => (2, "io"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        kind: "config",
        message: message.into(),
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        return report(f);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    eprintln!("error[{}]: {}", f.kind, f.message.replace('\n', " "));
    ExitCode::from(f.code)
}

fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var("HEATKERN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_error(format!("HEATKERN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(e.to_string()))
}

fn run(cli: &Cli) -> Outcome {
    let mut out: Box<dyn Write> = match &cli.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let result = match &cli.command {
        Command::Coeffs(a) => coeffs(a, cli.format, &mut out),
        Command::Invariants(a) => invariants(a, cli.format, &mut out),
        Command::Trace(a) => trace(a, cli.format, &mut out),
        Command::Det(a) => det(a, cli.format, &mut out),
        Command::Zeta(a) => zeta(a, cli.format, &mut out),
        Command::Kdv(a) => kdv(a, cli.format, &mut out),
        Command::Verify(a) => run_verify(a, cli.format, &mut out),
    };
    out.flush()?;
    result
}

fn load(path: &Path) -> Result<SpectralProblem, Failure> {
    SpectralProblem::from_file(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn build_oracle(problem: SpectralProblem, args: &OracleArgs) -> Result<Oracle, Failure> {
    let a = problem.radius();
    let t_min = args.t_min.unwrap_or(1e-2 * a * a);
    Ok(Oracle::build(problem, t_min, args.order, &mut HeatCoefficients::new())?)
}

fn nonempty_positive(name: &str, values: &[f64]) -> Outcome {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(config_error(format!("{name} must be a nonempty list of positive numbers")));
    }
    Ok(())
}

fn json<W: Write + ?Sized, T: Serialize + ?Sized>(out: &mut W, value: &T) -> Outcome {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn order_range(k: Option<u32>, kmax: Option<u32>, first: u32) -> Result<Vec<u32>, Failure> {
    match (k, kmax) {
        (Some(k), None) => Ok(vec![k]),
        (None, Some(m)) => Ok((first..=m).collect()),
        _ => Err(config_error("give exactly one of --k and --kmax")),
    }
}

#[derive(Serialize)]
struct CoeffRow {
    k: u32,
    text: String,
    terms: heatkern::diffpoly::DiffPoly,
}

fn coeffs(a: &CoeffsArgs, format: Format, out: &mut dyn Write) -> Outcome {
    let ks = order_range(a.k, a.kmax, if a.w { 1 } else { 0 })?;
    let ring = if a.scalar { Ring::Commutative } else { Ring::Noncommutative };
    let mut table = TaylorTable::new(ring);
    let rows: Vec<CoeffRow> = ks
        .iter()
        .map(|&k| {
            let p = if a.w { w_coefficient(&mut table, k) } else { table.diagonal(k) };
            CoeffRow {
                k,
                text: p.to_string(),
                terms: p,
            }
        })
        .collect();
    match format {
        Format::Json => json(out, &rows),
        Format::Csv if a.k.is_some() => Ok(writeln!(out, "{}", rows[0].text)?),
        Format::Csv => {
            writeln!(out, "k,coefficient")?;
            for r in &rows {
                writeln!(out, "{},\"{}\"", r.k, r.text)?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct IndexValue {
    index: u32,
    value: f64,
}

fn invariants(a: &InvariantsArgs, format: Format, out: &mut dyn Write) -> Outcome {
    let ks = order_range(a.k, a.kmax, 0)?;
    let problem = load(&a.problem.problem)?;
    let mut coeffs = HeatCoefficients::new();
    let rows = ks
        .iter()
        .map(|&k| {
            let g = coeffs.global_invariant(k, problem.potential())?;
            Ok(IndexValue { index: k, value: g.value })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    match format {
        Format::Json => json(out, &rows),
        Format::Csv if a.k.is_some() => Ok(writeln!(out, "{:.16e}", rows[0].value)?),
        Format::Csv => {
            writeln!(out, "index,value")?;
            for r in &rows {
                writeln!(out, "{},{:.16e}", r.index, r.value)?;
            }
            Ok(())
        }
    }
}

fn trace(a: &TraceArgs, format: Format, out: &mut dyn Write) -> Outcome {
    nonempty_positive("t", &a.t)?;
    let o = build_oracle(load(&a.problem.problem)?, &a.oracle)?;
    let rows = perturb::trace_rows(&o, &a.t, a.terms)?;
    match format {
        Format::Json => json(out, &rows),
        Format::Csv => Ok(perturb::write_trace_csv(out, &rows)?),
    }
}

fn det(a: &DetArgs, format: Format, out: &mut dyn Write) -> Outcome {
    if a.lambda.is_empty() || a.lambda.iter().any(|l| !(*l < 0.0)) {
        return Err(config_error("lambda must be a nonempty list of negative numbers"));
    }
    let o = build_oracle(load(&a.problem.problem)?, &a.oracle)?;
    let rows = perturb::det_rows(&o, &a.lambda)?;
    match format {
        Format::Json => json(out, &rows),
        Format::Csv => Ok(perturb::write_det_csv(out, &rows)?),
    }
}

#[derive(Serialize)]
struct ZetaRow {
    s: f64,
    lambda: f64,
    direct: f64,
    mellin: f64,
}

fn zeta(a: &ZetaArgs, format: Format, out: &mut dyn Write) -> Outcome {
    if a.s.is_empty() {
        return Err(config_error("s must be a nonempty list"));
    }
    let o = build_oracle(load(&a.problem.problem)?, &a.oracle)?;
    let rows = a
        .s
        .iter()
        .map(|&s| {
            Ok(ZetaRow {
                s,
                lambda: a.lambda,
                direct: o.zeta(s, a.lambda)?,
                mellin: o.zeta_mellin(s, a.lambda)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    match format {
        Format::Json => json(out, &rows),
        Format::Csv => {
            writeln!(out, "s,lambda,zeta_direct,zeta_mellin")?;
            for r in &rows {
                writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", r.s, r.lambda, r.direct, r.mellin)?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct KdvSummary<'a> {
    k: u32,
    integrator: &'static str,
    speed: f64,
    dt: f64,
    steps: usize,
    report: &'a kdvflow::ConservationReport,
}

fn kdv(a: &KdvArgs, format: Format, out: &mut dyn Write) -> Outcome {
    let problem = load(&a.problem.problem)?;
    let cfg = FlowConfig {
        grid: a.grid,
        s_end: a.s_end,
        steps: a.steps,
        records: a.records,
        integrator: a.integrator.map(Into::into),
    };
    let mut coeffs = HeatCoefficients::new();
    let traj = match kdvflow::integrate_flow(a.k, problem.potential(), &cfg, &mut coeffs) {
        Ok(t) => t,
        Err(f) => {
            // keep what was computed before the failure
            if let Some(p) = &a.trajectory {
                f.partial.write_jsonl(BufWriter::new(File::create(p)?))?;
            }
            return Err(f.error.into());
        }
    };
    if let Some(p) = &a.trajectory {
        traj.write_jsonl(BufWriter::new(File::create(p)?))?;
    }
    let functionals: Vec<Functional> = a
        .heat
        .iter()
        .map(|&m| Functional::Heat(m))
        .chain(a.track.iter().map(|&m| Functional::Rescaled(m)))
        .collect();
    let report = kdvflow::conservation_report(&traj, &functionals, &mut coeffs)?;
    match format {
        Format::Json => json(
            out,
            &KdvSummary {
                k: a.k,
                integrator: traj.integrator.name(),
                speed: traj.speed,
                dt: traj.dt,
                steps: traj.steps,
                report: &report,
            },
        ),
        Format::Csv => {
            writeln!(out, "functional,initial,final,drift")?;
            for s in &report.series {
                let first = s.values.first().copied().unwrap_or(f64::NAN);
                let last = s.values.last().copied().unwrap_or(f64::NAN);
                writeln!(out, "{},{:.16e},{:.16e},{:.16e}", s.functional.label(), first, last, s.drift)?;
            }
            Ok(())
        }
    }
}

fn run_verify(a: &VerifyArgs, format: Format, out: &mut dyn Write) -> Outcome {
    let results = match (&a.problem, &a.check) {
        (Some(p), _) => verify::problem_checks(&load(p)?),
        (None, Some(name)) => {
            let all = verify::checks();
            let Some((_, check)) = all.iter().find(|(n, _)| n == name) else {
                let names: Vec<&str> = all.iter().map(|(n, _)| *n).collect();
                return Err(config_error(format!("unknown check {name:?}; known: {}", names.join(", "))));
            };
            vec![check()]
        }
        (None, None) => verify::run_all(),
    };
    match format {
        Format::Json => json(out, &results)?,
        Format::Csv => {
            for r in &results {
                writeln!(out, "{r}")?;
            }
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            kind: "verification",
            message: format!("{} of {} checks failed: {}", failed.len(), results.len(), failed.join(", ")),
        })
    }
}
