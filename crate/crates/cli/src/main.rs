//! Command-line front end: solve problem documents, check the
//! linearization, run stability experiments and materialize Gibbs kernels.
//!
//! Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 failed check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use schroedinger_core::diagnostics::check_jacobian;
use schroedinger_core::io::{parse_cost, parse_problem, ProblemDocument, SolutionDocument};
use schroedinger_core::solvers::solve;
use schroedinger_core::stability::lipschitz_experiment;
use schroedinger_core::{Error, Family, Method, SolverConfig, ValidatedProblem};

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "schroedinger",
    version,
    about = "Multi-marginal Schrödinger system toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MethodArg {
    Sinkhorn,
    Newton,
    Hybrid,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sinkhorn => Method::Sinkhorn,
            MethodArg::Newton => Method::Newton,
            MethodArg::Hybrid => Method::Hybrid,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Point {
    Solution,
    Zero,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the system for the target marginals of a problem document.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "sinkhorn")]
        method: MethodArg,
        /// Stopping level for the sup-norm residual.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long = "max-iter", default_value_t = 10_000)]
        max_iter: usize,
        /// Write the solution document here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check kernel, range and derivative of the linearization.
    CheckJacobian {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "solution")]
        at: Point,
    },
    /// Lipschitz experiment on random marginals within a density band.
    Stability {
        template: PathBuf,
        #[arg(long)]
        band: f64,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a cost file into a kernel-form problem document.
    Gibbs {
        cost: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(e: Error) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: e.to_string(),
        }
    }

    fn solver(e: Error) -> Self {
        let code = if e.is_validation() {
            EXIT_VALIDATION
        } else {
            EXIT_SOLVER
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_VALIDATION,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure {
            code: EXIT_VALIDATION,
            message: format!("cannot write {}: {e}", p.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<ValidatedProblem, Failure> {
    parse_problem(&read(path)?)
        .and_then(|d| d.problem())
        .map_err(Failure::input)
}

fn run_solve(
    problem: &Path,
    method: MethodArg,
    tol: f64,
    max_iter: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let p = load(problem)?;
    let config = SolverConfig {
        method: method.into(),
        tolerance: tol,
        max_iterations: max_iter,
        ..SolverConfig::default()
    };
    match solve(p.model(), p.target(), &config) {
        Ok(sol) => {
            let doc = SolutionDocument::new(&p, &sol).map_err(Failure::solver)?;
            eprintln!(
                "converged in {} iterations, residual {:e}",
                sol.report.iterations, doc.residual_linf
            );
            emit(&doc.to_json(), out)
        }
        Err(Error::NotConverged(sol)) => {
            // The best iterate is still written so the run can be inspected.
            if let Ok(doc) = SolutionDocument::new(&p, &sol) {
                emit(&doc.to_json(), out)?;
            }
            Err(Failure {
                code: EXIT_SOLVER,
                message: format!(
                    "not converged after {} iterations, residual {:e}",
                    sol.report.iterations,
                    sol.report.final_residual()
                ),
            })
        }
        Err(e) => Err(Failure::solver(e)),
    }
}

fn run_check(problem: &Path, at: Point) -> Result<(), Failure> {
    let p = load(problem)?;
    let model = p.model();
    let phi = match at {
        Point::Zero => Family::zeros(model.spaces()),
        Point::Solution => {
            solve(model, p.target(), &SolverConfig::default())
                .map_err(Failure::solver)?
                .potentials
                .values
        }
    };
    let checks = check_jacobian(model, &phi, 8, 0).map_err(Failure::solver)?;
    println!(
        "kernel dim = {} (expected {})",
        checks.kernel_dim,
        checks.n_marginals - 1
    );
    println!(
        "{:<44} {:>12} {:>12}  result",
        "check", "value", "threshold"
    );
    for row in &checks.rows {
        println!(
            "{:<44} {:>12.3e} {:>12.3e}  {}",
            row.name,
            row.value,
            row.threshold,
            if row.passed { "PASS" } else { "FAIL" }
        );
    }
    if checks.all_passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK,
            message: "jacobian checks failed".into(),
        })
    }
}

fn run_stability(
    template: &Path,
    band: f64,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let p = load(template)?;
    let report = lipschitz_experiment(p.model(), band, trials, seed).map_err(Failure::solver)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    emit(&text, out)
}

fn run_gibbs(cost: &Path, epsilon: f64, out: &Path) -> Result<(), Failure> {
    let doc: ProblemDocument = parse_cost(&read(cost)?)
        .and_then(|c| c.materialize(epsilon))
        .map_err(Failure::input)?;
    emit(&doc.to_json(), Some(out))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve {
            problem,
            method,
            tol,
            max_iter,
            out,
        } => run_solve(problem, *method, *tol, *max_iter, out.as_deref()),
        Command::CheckJacobian { problem, at } => run_check(problem, *at),
        Command::Stability {
            template,
            band,
            trials,
            seed,
            out,
        } => run_stability(template, *band, *trials, *seed, out.as_deref()),
        Command::Gibbs { cost, epsilon, out } => run_gibbs(cost, *epsilon, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
