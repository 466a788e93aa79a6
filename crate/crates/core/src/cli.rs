//! Command-line front end. [`run`] does all the work and returns the exit
//! code together with what should go to stdout and stderr, so tests can drive
//! it in-process.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::forward::{solve_forward, ForwardOptions};
use crate::inverse::{Diagnostics, InverseError, InverseSolution, Method, Norm, W1Mode};
use crate::inverse_l1::{closed_form_l1, solve_l1};
use crate::inverse_linf::{closed_form_linf, solve_linf};
use crate::io::{sha256_hex, to_canonical, InstanceFile, IoError};
use crate::kkt::{
    frank_wolfe_gap, kkt_check, tree_potentials, BoundMultiplierSign, DualCertificate, KktError,
    KktOutcome,
};
use crate::model::{
    check_flow_feasibility, generate_instance, validate_instance, FlowMatrix, FlowReport,
    GeneratorConfig, InstanceReport, QuadraticMode, DEFAULT_SUPPORT_TOL,
};
use crate::oracle::{verify_inverse, OracleError, Verdict, MAX_VERTEX_LINKS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_NOT_CERTIFIED: i32 = 4;
pub const EXIT_SOLVER: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable overriding the support tolerance.
pub const TOL_ENV: &str = "INVQTP_TOL";

#[derive(Debug, Parser)]
#[command(
    name = "invqtp",
    version,
    about = "Inverse quadratic transportation problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check balance, signs and (if present) feasibility of x0.
    Validate { path: PathBuf },
    /// Find the nearest cost making x0 optimal.
    Inverse {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = NormArg::L1)]
        norm: NormArg,
        #[arg(long, value_enum, default_value_t = MethodArg::Lp)]
        method: MethodArg,
        /// Source of the constraint multipliers; `free` is only valid with `--method lp`.
        #[arg(long, value_enum)]
        w1: Option<W1Arg>,
        /// Attach a brute-force verdict (small instances only).
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for KKT multipliers certifying x0.
    CheckKkt { path: PathBuf },
    /// Write a seeded random instance.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long)]
        diagonal: bool,
        /// Embed a forward-optimal flow instead of the northwest corner.
        #[arg(long)]
        optimal_x0: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    Linf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Lp,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum W1Arg {
    Free,
    Tree,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CliOutcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliOutcome {
    fn fail(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: format!("error: {message}\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEcho {
    pub n: usize,
    pub m: usize,
    /// SHA-256 of the input file bytes.
    pub input_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixEcho {
    Dense(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instance: InstanceEcho,
    pub method: String,
    pub norm: Norm,
    /// Where `w1` came from: `free`, `tree`, `zero`, or `zero-fallback` when
    /// tree potentials were refused on a cyclic support.
    pub w1_source: String,
    pub objective: f64,
    pub h_star: MatrixEcho,
    pub d_star: Vec<f64>,
    pub certificate: DualCertificate,
    pub diagnostics: Diagnostics,
    pub verdict: Option<Verdict>,
    pub timing: Timing,
}

impl RunReport {
    pub fn from_solution(
        sol: &InverseSolution,
        instance: InstanceEcho,
        w1_source: &str,
        verdict: Option<Verdict>,
        elapsed_ms: f64,
    ) -> Self {
        let cost = sol.perturbed_cost();
        let h_star = if cost.is_diagonal() {
            MatrixEcho::Diagonal(cost.q().diagonal().iter().copied().collect())
        } else {
            MatrixEcho::Dense(
                cost.q()
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            )
        };
        Self {
            instance,
            method: sol.tag().to_string(),
            norm: sol.norm,
            w1_source: w1_source.to_string(),
            objective: sol.objective,
            h_star,
            d_star: sol.d_star.clone(),
            certificate: sol.certificate.clone(),
            diagnostics: sol.diagnostics.clone(),
            verdict,
            timing: Timing { elapsed_ms },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub instance: InstanceEcho,
    pub balance: InstanceReport,
    pub flow: Option<FlowReport>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub instance: InstanceEcho,
    pub certified: bool,
    pub certificate: Option<DualCertificate>,
    pub stationarity_residual: Option<f64>,
    /// Phase-one residual of the multiplier search when no certificate exists.
    pub phase_one_residual: Option<f64>,
    /// Whether multipliers exist with `w2` added rather than subtracted.
    pub plus_sign_certified: bool,
    /// First-order gap of x0, when the instance is small enough to enumerate.
    pub frank_wolfe_gap: Option<f64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CliOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            return if e.use_stderr() {
                CliOutcome {
                    code,
                    stdout: String::new(),
                    stderr: text,
                }
            } else {
                CliOutcome {
                    code,
                    stdout: text,
                    stderr: String::new(),
                }
            };
        }
    };
    let tol = match support_tolerance(std::env::var(TOL_ENV).ok().as_deref()) {
        Ok(tol) => tol,
        Err(message) => return CliOutcome::fail(EXIT_USAGE, message),
    };
    match cli.command {
        Command::Validate { path } => cmd_validate(&path),
        Command::Inverse {
            path,
            norm,
            method,
            w1,
            verify,
            out,
        } => cmd_inverse(&path, norm, method, w1, verify, out.as_deref(), tol),
        Command::CheckKkt { path } => cmd_check_kkt(&path, tol),
        Command::Generate {
            seed,
            n,
            m,
            diagonal,
            optimal_x0,
            out,
        } => cmd_generate(seed, n, m, diagonal, optimal_x0, out.as_deref()),
    }
}

/// Support tolerance from the environment value, if any.
pub fn support_tolerance(value: Option<&str>) -> Result<f64, String> {
    match value {
        None => Ok(DEFAULT_SUPPORT_TOL),
        Some(text) => match text.trim().parse::<f64>() {
            Ok(tol) if tol.is_finite() && tol >= 0.0 => Ok(tol),
            _ => Err(format!(
                "{TOL_ENV} must be a nonnegative number, got `{text}`"
            )),
        },
    }
}

fn load(path: &Path) -> Result<(InstanceFile, InstanceEcho), CliOutcome> {
    let (file, bytes) = InstanceFile::read(path).map_err(|e| CliOutcome::fail(EXIT_PARSE, e))?;
    let echo = InstanceEcho {
        n: file.n,
        m: file.m,
        input_sha256: sha256_hex(&bytes),
    };
    Ok((file, echo))
}

fn emit<T: Serialize>(report: &T, code: i32, out: Option<&Path>) -> CliOutcome {
    let text = match to_canonical(report) {
        Ok(text) => text,
        Err(e) => return CliOutcome::fail(EXIT_SOLVER, e),
    };
    match out {
        None => CliOutcome {
            code,
            stdout: text,
            stderr: String::new(),
        },
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => CliOutcome {
                code,
                ..CliOutcome::default()
            },
            Err(e) => CliOutcome::fail(EXIT_PARSE, IoError::from(e)),
        },
    }
}

fn cmd_validate(path: &Path) -> CliOutcome {
    let (file, instance) = match load(path) {
        Ok(v) => v,
        Err(outcome) => return outcome,
    };
    let balance = validate_instance(&file.supplies, &file.demands);
    let flow = match (&file.x0, file.instance()) {
        (Some(x0), Ok(inst)) => match check_flow_feasibility(&inst, x0) {
            Ok(report) => Some(report),
            Err(e) => return CliOutcome::fail(EXIT_INVALID, e),
        },
        _ => None,
    };
    let passed = balance.accepted && flow.as_ref().is_none_or(|f| f.feasible);
    let report = ValidateReport {
        instance,
        balance,
        flow,
        passed,
    };
    emit(&report, if passed { EXIT_OK } else { EXIT_INVALID }, None)
}

/// Instance, cost and flow for commands that need `x0`.
type Problem = (
    crate::model::TransportationInstance,
    crate::model::QuadraticCost,
    FlowMatrix,
);

fn problem(file: &InstanceFile, tol: f64) -> Result<Problem, CliOutcome> {
    let invalid = |e: &dyn std::fmt::Display| CliOutcome::fail(EXIT_INVALID, e);
    let inst = file.instance().map_err(|e| invalid(&e))?;
    let cost = file.cost().map_err(|e| invalid(&e))?;
    let x0 = file
        .x0
        .clone()
        .ok_or_else(|| invalid(&"the instance has no `x0`"))?;
    let flow = FlowMatrix::new(x0, tol).map_err(|e| invalid(&e))?;
    let report = check_flow_feasibility(&inst, flow.x()).map_err(|e| invalid(&e))?;
    if !report.feasible {
        return Err(invalid(&format!(
            "x0 is infeasible (row residual {:e}, column residual {:e}, min entry {:e})",
            report.max_row_residual, report.max_column_residual, report.min_entry
        )));
    }
    Ok((inst, cost, flow))
}

fn inverse_failure(e: InverseError) -> CliOutcome {
    match e {
        InverseError::InfeasibleFlow { .. } | InverseError::Model(_) => {
            CliOutcome::fail(EXIT_INVALID, e)
        }
        _ => CliOutcome::fail(EXIT_SOLVER, e),
    }
}

fn cmd_inverse(
    path: &Path,
    norm: NormArg,
    method: MethodArg,
    w1: Option<W1Arg>,
    verify: bool,
    out: Option<&Path>,
    tol: f64,
) -> CliOutcome {
    let method = match method {
        MethodArg::Lp => Method::Lp,
        MethodArg::Closed => Method::ClosedForm,
    };
    let w1 = w1.unwrap_or(match method {
        Method::Lp => W1Arg::Free,
        Method::ClosedForm => W1Arg::Tree,
    });
    if method == Method::ClosedForm && w1 == W1Arg::Free {
        return CliOutcome::fail(
            EXIT_USAGE,
            "`--method closed` needs `--w1 tree` or `--w1 zero`",
        );
    }
    let norm = match norm {
        NormArg::L1 => Norm::L1,
        NormArg::Linf => Norm::Linf,
    };
    let (file, echo) = match load(path) {
        Ok(v) => v,
        Err(outcome) => return outcome,
    };
    let (inst, cost, flow) = match problem(&file, tol) {
        Ok(p) => p,
        Err(outcome) => return outcome,
    };
    if verify && inst.links() > MAX_VERTEX_LINKS {
        return CliOutcome::fail(
            EXIT_GUARD,
            OracleError::GuardExceeded {
                links: inst.links(),
                limit: MAX_VERTEX_LINKS,
            },
        );
    }
    let started = Instant::now();
    let partition = flow.partition();
    let (w1mode, source) = match w1 {
        W1Arg::Free => (W1Mode::Free, "free"),
        W1Arg::Zero => (W1Mode::Fixed(vec![0.0; inst.n() + inst.m()]), "zero"),
        W1Arg::Tree => match tree_potentials(&inst, &cost, &flow, &partition) {
            Ok(w) => (W1Mode::Fixed(w), "tree"),
            Err(KktError::CyclicSupport(_)) => (
                W1Mode::Fixed(vec![0.0; inst.n() + inst.m()]),
                "zero-fallback",
            ),
            Err(e) => return CliOutcome::fail(EXIT_SOLVER, e),
        },
    };
    let solved = match (method, norm, &w1mode) {
        (Method::Lp, Norm::L1, _) => solve_l1(&inst, &cost, &flow, &partition, &w1mode),
        (Method::Lp, Norm::Linf, _) => solve_linf(&inst, &cost, &flow, &partition, &w1mode),
        (Method::ClosedForm, Norm::L1, W1Mode::Fixed(w)) => {
            closed_form_l1(&inst, &cost, &flow, &partition, w)
        }
        (Method::ClosedForm, Norm::Linf, W1Mode::Fixed(w)) => {
            closed_form_linf(&inst, &cost, &flow, &partition, w)
        }
        (Method::ClosedForm, _, W1Mode::Free) => unreachable!("rejected above"),
    };
    let sol = match solved {
        Ok(sol) => sol,
        Err(e) => return inverse_failure(e),
    };
    let verdict = if verify {
        match verify_inverse(&sol, &cost, &inst, &flow) {
            Ok(v) => Some(v),
            Err(e @ OracleError::GuardExceeded { .. }) => return CliOutcome::fail(EXIT_GUARD, e),
            Err(e) => return CliOutcome::fail(EXIT_SOLVER, e),
        }
    } else {
        None
    };
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let report = RunReport::from_solution(&sol, echo, source, verdict, elapsed_ms);
    emit(&report, EXIT_OK, out)
}

fn cmd_check_kkt(path: &Path, tol: f64) -> CliOutcome {
    let (file, instance) = match load(path) {
        Ok(v) => v,
        Err(outcome) => return outcome,
    };
    let (inst, cost, flow) = match problem(&file, tol) {
        Ok(p) => p,
        Err(outcome) => return outcome,
    };
    let partition = flow.partition();
    let check = |sign| kkt_check(&inst, &cost, &flow, &partition, sign);
    let (minus, plus) = match (
        check(BoundMultiplierSign::Minus),
        check(BoundMultiplierSign::Plus),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return CliOutcome::fail(EXIT_SOLVER, e),
    };
    let gap = if inst.links() <= MAX_VERTEX_LINKS {
        frank_wolfe_gap(&inst, &cost, flow.x()).ok()
    } else {
        None
    };
    let mut report = KktReport {
        instance,
        certified: minus.is_certified(),
        certificate: None,
        stationarity_residual: None,
        phase_one_residual: None,
        plus_sign_certified: plus.is_certified(),
        frank_wolfe_gap: gap,
    };
    match minus {
        KktOutcome::Certified {
            certificate,
            residual,
        } => {
            report.certificate = Some(certificate);
            report.stationarity_residual = Some(residual);
        }
        KktOutcome::Infeasible { phase_one_residual } => {
            report.phase_one_residual = Some(phase_one_residual);
        }
    }
    let code = if report.certified {
        EXIT_OK
    } else {
        EXIT_NOT_CERTIFIED
    };
    emit(&report, code, None)
}

/// Instance file text for `generate`.
pub fn generated_file(
    seed: u64,
    n: usize,
    m: usize,
    diagonal: bool,
    optimal_x0: bool,
) -> Result<InstanceFile, String> {
    let mode = if diagonal {
        QuadraticMode::Diagonal
    } else {
        QuadraticMode::DensePsd
    };
    let config = GeneratorConfig::new(seed, n, m).with_quadratic(mode);
    let mut generated = generate_instance(&config).map_err(|e| e.to_string())?;
    if optimal_x0 {
        let sol = solve_forward(
            &generated.instance,
            &generated.cost,
            ForwardOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        generated.flow = sol.x;
    }
    Ok(InstanceFile::from_generated(&generated))
}

fn cmd_generate(
    seed: u64,
    n: usize,
    m: usize,
    diagonal: bool,
    optimal_x0: bool,
    out: Option<&Path>,
) -> CliOutcome {
    let file = match generated_file(seed, n, m, diagonal, optimal_x0) {
        Ok(file) => file,
        Err(message) => return CliOutcome::fail(EXIT_INVALID, message),
    };
    let text = file.to_canonical();
    match out {
        None => CliOutcome {
            code: EXIT_OK,
            stdout: text,
            stderr: String::new(),
        },
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => CliOutcome::default(),
            Err(e) => CliOutcome::fail(EXIT_PARSE, e),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_override() {
        assert_eq!(support_tolerance(None), Ok(DEFAULT_SUPPORT_TOL));
        assert_eq!(support_tolerance(Some("1e-6")), Ok(1e-6));
        assert!(support_tolerance(Some("-1")).is_err());
        assert!(support_tolerance(Some("abc")).is_err());
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(run(["invqtp", "inverse"]).code, EXIT_USAGE);
        assert_eq!(
            run(["invqtp", "inverse", "x.json", "--norm", "l2"]).code,
            EXIT_USAGE
        );
        let closed_free = run([
            "invqtp", "inverse", "x.json", "--method", "closed", "--w1", "free",
        ]);
        assert_eq!(closed_free.code, EXIT_USAGE);
    }
}
