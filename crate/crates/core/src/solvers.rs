//! Solvers for `T(φ) = μ` in the mean-zero gauge.
//!
//! * Sinkhorn: cyclic exact solves of one marginal equation at a time in the
//!   log domain. Each step maximizes the concave dual in one block, so the
//!   dual objective never decreases.
//! * Newton: `φ ← φ − t·h` with `T'(φ) h = T(φ) − μ` solved on the gauge
//!   space, `t` chosen by backtracking on the L∞ residual.
//! * Hybrid: Sinkhorn down to a switch level, then Newton.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::{build_jacobian, DEFAULT_DENSE_CAP};
use crate::map::{
    apply_log_t, dual_objective, exp_checked, gauge_project_e, log_partial, residual_from_t,
    PotentialFamily,
};
use crate::model::{Family, MarginalFamily, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sinkhorn,
    Newton,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initialization {
    Zero,
    /// Entries drawn uniformly from `[-amplitude, amplitude]` using the
    /// configured seed, then gauge-projected.
    Random {
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stopping level for the L∞ residual `‖T(φ) − μ‖`.
    pub tolerance: f64,
    pub method: Method,
    /// Backtracking factor for the Newton line search.
    pub newton_damping: f64,
    /// Armijo-type ratio: accept `t` when `r(t) ≤ (1 − c·t)·r(0)`.
    pub sufficient_decrease: f64,
    pub hybrid_switch: f64,
    pub seed: u64,
    pub init: Initialization,
    /// Shuffle the Sinkhorn sweep order each sweep (seeded).
    pub randomize_sweep: bool,
    pub dense_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-10,
            method: Method::Sinkhorn,
            newton_damping: 0.5,
            sufficient_decrease: 1e-4,
            hybrid_switch: 1e-2,
            seed: 0,
            init: Initialization::Zero,
            randomize_sweep: false,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.newton_damping > 0.0 && self.newton_damping < 1.0) {
            return Err(Error::InvalidConfig(
                "newton damping factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.sufficient_decrease >= 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::InvalidConfig(
                "sufficient-decrease ratio must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub iterations: usize,
    /// L∞ residual of the starting point and after every iteration.
    pub residual_history: Vec<f64>,
    /// Dual objective at the same points as `residual_history`.
    pub dual_history: Vec<f64>,
    pub converged: bool,
    pub method_used: Method,
    /// Accepted Newton step lengths.
    #[serde(default)]
    pub step_lengths: Vec<f64>,
    /// Index into the histories where a hybrid run handed over to Newton.
    #[serde(default)]
    pub switch_index: Option<usize>,
}

impl SolveReport {
    fn new(method: Method) -> Self {
        Self {
            iterations: 0,
            residual_history: Vec::new(),
            dual_history: Vec::new(),
            converged: false,
            method_used: method,
            step_lengths: Vec::new(),
            switch_index: None,
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub potentials: PotentialFamily,
    pub report: SolveReport,
}

fn finish(potentials: PotentialFamily, report: SolveReport) -> Result<Solution> {
    let converged = report.converged;
    let sol = Solution { potentials, report };
    if converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged(Box::new(sol)))
    }
}

fn check_finite(phi: &Family, what: &'static str) -> Result<()> {
    match phi.flatten().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

fn initial_point(model: &Model, config: &SolverConfig) -> Family {
    match config.init {
        Initialization::Zero => Family::zeros(model.spaces()),
        Initialization::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let raw = Family(
                model
                    .spaces()
                    .iter()
                    .map(|s| {
                        (0..s.len())
                            .map(|_| rng.random_range(-amplitude..=amplitude))
                            .collect()
                    })
                    .collect(),
            );
            gauge_project_e(model.spaces(), &raw).values
        }
    }
}

/// L∞ residual and the values of `T(φ)`.
fn evaluate(model: &Model, phi: &Family, mu: &MarginalFamily) -> Result<(f64, Family)> {
    let t = exp_checked(&apply_log_t(model, phi)?)?;
    let r = residual_from_t(model, &t, mu).norm_linf;
    if r.is_nan() {
        return Err(Error::NonFinite {
            what: "residual",
            index: 0,
        });
    }
    Ok((r, t))
}

/// Exact solve of the i-th equation: `φ_i ← log μ_i − log Σ_{x_{-i}} K e^{Σ_{j≠i} φ_j} m_{-i}`.
pub fn sinkhorn_step(
    model: &Model,
    phi: &Family,
    mu: &MarginalFamily,
    i: usize,
) -> Result<PotentialFamily> {
    phi.check_shape(model.spaces(), "potentials")?;
    mu.densities().check_shape(model.spaces(), "marginals")?;
    if i >= model.n_marginals() {
        return Err(Error::ShapeMismatch(format!(
            "marginal index {i} out of range for {} marginals",
            model.n_marginals()
        )));
    }
    let partial = log_partial(model, phi, i);
    let mut values = phi.clone();
    values.0[i] = mu.densities().0[i]
        .iter()
        .zip(partial)
        .map(|(m, p)| m.ln() - p)
        .collect();
    Ok(PotentialFamily::free(values))
}

pub fn sinkhorn_solve(
    model: &Model,
    mu: &MarginalFamily,
    config: &SolverConfig,
) -> Result<Solution> {
    let init = initial_point(model, config);
    sinkhorn_solve_from(model, mu, config, &init)
}

pub fn sinkhorn_solve_from(
    model: &Model,
    mu: &MarginalFamily,
    config: &SolverConfig,
    init: &Family,
) -> Result<Solution> {
    config.validate()?;
    init.check_shape(model.spaces(), "initial potentials")?;
    mu.densities().check_shape(model.spaces(), "marginals")?;
    let spaces = model.spaces();
    let mu = mu.balanced(spaces);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..model.n_marginals()).collect();

    let mut report = SolveReport::new(Method::Sinkhorn);
    let mut phi = gauge_project_e(spaces, init).values;
    let (mut r, _) = evaluate(model, &phi, &mu)?;
    report.residual_history.push(r);
    report.dual_history.push(dual_objective(model, &phi, &mu)?);

    while r > config.tolerance && report.iterations < config.max_iterations {
        if config.randomize_sweep {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            phi = sinkhorn_step(model, &phi, &mu, i)?.values;
        }
        check_finite(&phi, "sinkhorn iterate")?;
        phi = gauge_project_e(spaces, &phi).values;
        report.iterations += 1;
        r = evaluate(model, &phi, &mu)?.0;
        report.residual_history.push(r);
        report.dual_history.push(dual_objective(model, &phi, &mu)?);
    }
    report.converged = r <= config.tolerance;
    finish(gauge_project_e(spaces, &phi), report)
}

/// Orthogonal projection onto equal-mass families: shifts each component
/// by a constant so all weighted masses equal their mean.
fn project_to_f(model: &Model, theta: &Family) -> Family {
    let spaces = model.spaces();
    let masses = theta.masses(spaces);
    let mean = masses.iter().sum::<f64>() / masses.len() as f64;
    Family(
        theta
            .0
            .iter()
            .zip(spaces)
            .zip(masses)
            .map(|((t, s), m)| {
                let c = (m - mean) / s.total_weight();
                t.iter().map(|v| v - c).collect()
            })
            .collect(),
    )
}

pub fn newton_solve(
    model: &Model,
    mu: &MarginalFamily,
    config: &SolverConfig,
    init: &Family,
) -> Result<Solution> {
    config.validate()?;
    init.check_shape(model.spaces(), "initial potentials")?;
    mu.densities().check_shape(model.spaces(), "marginals")?;
    let size = model.total_atoms();
    if size > config.dense_cap {
        return Err(Error::SizeCapExceeded {
            size,
            cap: config.dense_cap,
        });
    }
    let spaces = model.spaces();
    let mu = mu.balanced(spaces);
    let min_step = config.newton_damping.powi(20);

    let mut report = SolveReport::new(Method::Newton);
    let mut phi = gauge_project_e(spaces, init).values;
    let (mut r, mut t_vals) = evaluate(model, &phi, &mu)?;
    report.residual_history.push(r);
    report.dual_history.push(dual_objective(model, &phi, &mu)?);

    while r > config.tolerance && report.iterations < config.max_iterations {
        let jac = build_jacobian(model, &phi)?.with_dense_cap(config.dense_cap);
        let theta = project_to_f(model, &t_vals.sub(mu.densities()));
        let h = jac.solve_in_e(&theta)?;

        let mut step = 1.0;
        let accepted = loop {
            let cand = gauge_project_e(spaces, &phi.sub(&h.scale(step))).values;
            // An overflowing trial point counts as a rejected step.
            if let Ok((rc, tc)) = evaluate(model, &cand, &mu) {
                if rc <= (1.0 - config.sufficient_decrease * step) * r {
                    break Some((cand, rc, tc));
                }
            }
            step *= config.newton_damping;
            if step < min_step {
                break None;
            }
        };
        let Some((cand, rc, tc)) = accepted else {
            return Err(Error::LineSearchFailed {
                iteration: report.iterations + 1,
                residual: r,
                step,
            });
        };
        phi = cand;
        r = rc;
        t_vals = tc;
        report.iterations += 1;
        report.step_lengths.push(step);
        report.residual_history.push(r);
        report.dual_history.push(dual_objective(model, &phi, &mu)?);
    }
    report.converged = r <= config.tolerance;
    finish(gauge_project_e(spaces, &phi), report)
}

pub fn hybrid_solve(model: &Model, mu: &MarginalFamily, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let first = SolverConfig {
        tolerance: config.hybrid_switch.max(config.tolerance),
        ..config.clone()
    };
    let warm = match sinkhorn_solve(model, mu, &first) {
        Ok(s) => s,
        Err(Error::NotConverged(mut s)) => {
            s.report.method_used = Method::Hybrid;
            return Err(Error::NotConverged(s));
        }
        Err(e) => return Err(e),
    };
    let mut report = warm.report;
    report.method_used = Method::Hybrid;
    if report.final_residual() <= config.tolerance {
        report.converged = true;
        return Ok(Solution {
            potentials: warm.potentials,
            report,
        });
    }

    let newton = newton_solve(model, mu, config, &warm.potentials.values);
    let (sol, failed) = match newton {
        Ok(s) => (s, false),
        Err(Error::NotConverged(s)) => (*s, true),
        Err(e) => return Err(e),
    };
    report.switch_index = Some(report.residual_history.len() - 1);
    report.iterations += sol.report.iterations;
    report
        .residual_history
        .extend_from_slice(&sol.report.residual_history[1..]);
    report
        .dual_history
        .extend_from_slice(&sol.report.dual_history[1..]);
    report.step_lengths = sol.report.step_lengths;
    report.converged = !failed;
    finish(sol.potentials, report)
}

/// Dispatches on `config.method`; Newton starts from the configured
/// initialization.
pub fn solve(model: &Model, mu: &MarginalFamily, config: &SolverConfig) -> Result<Solution> {
    match config.method {
        Method::Sinkhorn => sinkhorn_solve(model, mu, config),
        Method::Newton => newton_solve(model, mu, config, &initial_point(model, config)),
        Method::Hybrid => hybrid_solve(model, mu, config),
    }
}
