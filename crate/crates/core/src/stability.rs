//! Empirical stability of the inverse map `S = T^{-1}` on the band
//! `F_{++,M} = { μ balanced : 1/M ≤ μ_i ≤ M }`.
//!
//! Measures the sup-norm of `S(μ)` over samples, Lipschitz quotients of
//! `S` in L² and L∞, and the weighted-L² operator norm of `S'(μ)`, which by
//! the mean-value inequality bounds the L² quotient along a segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::build_jacobian;
use crate::map::PotentialFamily;
use crate::model::{family_norm, DiscreteSpace, Family, MarginalFamily, Model, Norm};
use crate::solvers::{solve, Method, SolverConfig};

const MAX_REJECTIONS: usize = 256;
const SEGMENT_POINTS: usize = 11;
const DEGENERATE_DISTANCE: f64 = 1e-12;

/// Solver settings used by every experiment in this module.
pub fn experiment_config() -> SolverConfig {
    SolverConfig {
        tolerance: 1e-10,
        method: Method::Hybrid,
        max_iterations: 20_000,
        ..SolverConfig::default()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_component(space: &DiscreteSpace, band: f64, mass: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo = 1.0 / band;
    let hi = band;
    if band == 1.0 {
        return vec![mass; space.len()];
    }
    let log_band = band.ln();
    let mut last = Vec::new();
    for _ in 0..MAX_REJECTIONS {
        let v: Vec<f64> = (0..space.len())
            .map(|_| rng.random_range(-log_band..=log_band).exp())
            .collect();
        let shift = (mass - space.integrate(&v)) / space.total_weight();
        let mu: Vec<f64> = v.iter().map(|x| x + shift).collect();
        if mu.iter().all(|&x| x >= lo && x <= hi) {
            return mu;
        }
        last = v;
    }
    // Contract the last proposal toward the constant `mass`.
    let mean = space.integrate(&last) / space.total_weight();
    let centered: Vec<f64> = last.iter().map(|x| x - mean).collect();
    let kappa = centered.iter().fold(1.0_f64, |k, &c| {
        if c > 0.0 {
            k.min((hi - mass) / c)
        } else if c < 0.0 {
            k.min((mass - lo) / -c)
        } else {
            k
        }
    });
    centered.iter().map(|c| mass + kappa * c).collect()
}

fn sample_with(
    spaces: &[DiscreteSpace],
    band: f64,
    mass: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MarginalFamily> {
    if !band.is_finite() || band < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "band parameter must be >= 1 (got {band})"
        )));
    }
    let (lo, hi) = (1.0 / band, band);
    if !(mass >= lo && mass <= hi) {
        return Err(Error::BandInfeasible {
            mass,
            lower: lo,
            upper: hi,
        });
    }
    let densities = Family(
        spaces
            .iter()
            .map(|s| sample_component(s, band, mass, rng))
            .collect(),
    );
    MarginalFamily::new(spaces, densities)
}

/// Samples balanced marginals with every entry in `[1/M, M]` and common
/// mass `mass`. Deterministic for a fixed seed.
pub fn sample_marginals_in_band(
    spaces: &[DiscreteSpace],
    band: f64,
    mass: f64,
    seed: u64,
) -> Result<MarginalFamily> {
    sample_with(spaces, band, mass, &mut stream_rng(seed, 0))
}

/// `‖S'(μ)‖` in weighted L² at the potentials `phi` with `T(phi) = μ`.
pub fn schroedinger_prime_norm_at(model: &Model, phi: &Family) -> Result<f64> {
    let jac = build_jacobian(model, phi)?;
    let sigma = jac.restricted_singular_values()?;
    let smallest = sigma.last().copied().unwrap_or(0.0);
    if smallest.is_nan() || smallest <= 0.0 {
        return Err(Error::NotInRange(
            "restricted linearization is singular".into(),
        ));
    }
    Ok(1.0 / smallest)
}

/// Solves `φ = S(μ)` and returns the weighted-L² operator norm of `S'(μ)`.
pub fn schroedinger_prime_norm(model: &Model, mu: &MarginalFamily) -> Result<f64> {
    let sol = solve(model, mu, &experiment_config())?;
    schroedinger_prime_norm_at(model, &sol.potentials.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub distance_l2: f64,
    pub distance_linf: f64,
    pub ratio_l2: f64,
    pub ratio_linf: f64,
    /// Max of `‖S'‖` over equispaced points of the segment `[μ, ν]`.
    pub segment_max_op_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityReport {
    pub band: f64,
    pub trials: usize,
    pub max_potential_sup: Option<f64>,
    pub max_ratio_l2: Option<f64>,
    pub max_ratio_linf: Option<f64>,
    pub max_op_norm_l2: Option<f64>,
    /// Largest `ratio_l2 / segment_max_op_norm` over measured pairs.
    pub max_mean_value_ratio: Option<f64>,
    pub failures: usize,
    pub skipped_pairs: usize,
    pub pairs: Vec<PairRecord>,
}

enum PairOutcome {
    Failed,
    Skipped { sup: f64 },
    Measured { sup: f64, record: PairRecord },
}

fn is_solver_failure(e: &Error) -> bool {
    matches!(e, Error::NotConverged(_) | Error::LineSearchFailed { .. })
}

fn run_pair(model: &Model, band: f64, seed: u64, k: u64) -> Result<PairOutcome> {
    let spaces = model.spaces();
    let mu = sample_with(spaces, band, 1.0, &mut stream_rng(seed, 2 * k))?;
    let nu = sample_with(spaces, band, 1.0, &mut stream_rng(seed, 2 * k + 1))?;
    let config = experiment_config();
    let (s_mu, s_nu) = match (solve(model, &mu, &config), solve(model, &nu, &config)) {
        (Ok(a), Ok(b)) => (a.potentials.values, b.potentials.values),
        (Err(e), _) | (_, Err(e)) if is_solver_failure(&e) => return Ok(PairOutcome::Failed),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let sup = s_mu.max_abs().max(s_nu.max_abs());
    let diff_mu = mu.densities().sub(nu.densities());
    let distance_l2 = family_norm(spaces, &diff_mu, Norm::L2)?;
    let distance_linf = diff_mu.max_abs();
    if distance_l2 < DEGENERATE_DISTANCE {
        return Ok(PairOutcome::Skipped { sup });
    }
    let diff_s = s_mu.sub(&s_nu);
    let ratio_l2 = family_norm(spaces, &diff_s, Norm::L2)? / distance_l2;
    let ratio_linf = diff_s.max_abs() / distance_linf;

    let mut segment_max_op_norm = 0.0_f64;
    for p in 0..SEGMENT_POINTS {
        let t = p as f64 / (SEGMENT_POINTS - 1) as f64;
        let phi = match p {
            0 => s_mu.clone(),
            _ if p == SEGMENT_POINTS - 1 => s_nu.clone(),
            _ => {
                let point = mu
                    .densities()
                    .zip_map(nu.densities(), |a, b| (1.0 - t) * a + t * b);
                let point = model.marginals(point)?;
                match solve(model, &point, &config) {
                    Ok(s) => s.potentials.values,
                    Err(e) if is_solver_failure(&e) => return Ok(PairOutcome::Failed),
                    Err(e) => return Err(e),
                }
            }
        };
        segment_max_op_norm = segment_max_op_norm.max(schroedinger_prime_norm_at(model, &phi)?);
    }
    Ok(PairOutcome::Measured {
        sup,
        record: PairRecord {
            distance_l2,
            distance_linf,
            ratio_l2,
            ratio_linf,
            segment_max_op_norm,
        },
    })
}

fn fold_max(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.max(v)))
}

/// Samples `trials` pairs in `F_{++,M}` (mass 1) and measures Lipschitz
/// quotients of `S` together with the segment operator-norm certificate.
pub fn lipschitz_experiment(
    model: &Model,
    band: f64,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if trials < 2 {
        return Err(Error::InvalidConfig("need at least 2 trials".into()));
    }
    let outcomes: Vec<Result<PairOutcome>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| run_pair(model, band, seed, k))
        .collect();
    let mut report = StabilityReport {
        band,
        trials,
        max_potential_sup: None,
        max_ratio_l2: None,
        max_ratio_linf: None,
        max_op_norm_l2: None,
        max_mean_value_ratio: None,
        failures: 0,
        skipped_pairs: 0,
        pairs: Vec::new(),
    };
    for outcome in outcomes {
        match outcome? {
            PairOutcome::Failed => report.failures += 1,
            PairOutcome::Skipped { sup } => {
                report.skipped_pairs += 1;
                report.max_potential_sup = fold_max(report.max_potential_sup, sup);
            }
            PairOutcome::Measured { sup, record } => {
                report.max_potential_sup = fold_max(report.max_potential_sup, sup);
                report.max_ratio_l2 = fold_max(report.max_ratio_l2, record.ratio_l2);
                report.max_ratio_linf = fold_max(report.max_ratio_linf, record.ratio_linf);
                report.max_op_norm_l2 = fold_max(report.max_op_norm_l2, record.segment_max_op_norm);
                report.max_mean_value_ratio = fold_max(
                    report.max_mean_value_ratio,
                    record.ratio_l2 / record.segment_max_op_norm,
                );
                report.pairs.push(record);
            }
        }
    }
    if report.failures == trials {
        return Err(Error::AllTrialsFailed(trials));
    }
    Ok(report)
}

/// Dyadic ladder `2, 4, ...` below `band`, followed by `band` itself.
fn band_ladder(band: f64) -> Vec<f64> {
    let mut ladder = Vec::new();
    let mut b = 2.0;
    while b < band {
        ladder.push(b);
        b *= 2.0;
    }
    ladder.push(band);
    ladder
}

/// Largest `‖S(μ)‖_∞` over samples in `F_{++,M}` with mass 1.
///
/// Every level of the band ladder draws `trials` samples from its own
/// seed streams, so sample sets are nested both in `trials` and across
/// dyadic bands.
pub fn apriori_bound_scan(model: &Model, band: f64, trials: usize, seed: u64) -> Result<f64> {
    let ladder = band_ladder(band);
    let jobs: Vec<(usize, u64)> = (0..ladder.len())
        .flat_map(|l| (0..trials as u64).map(move |k| (l, k)))
        .collect();
    let config = experiment_config();
    let sups: Vec<Result<f64>> = jobs
        .into_par_iter()
        .map(|(level, k)| {
            let stream = ((level as u64) << 32) | k;
            let mu = sample_with(
                model.spaces(),
                ladder[level],
                1.0,
                &mut stream_rng(seed, stream),
            )?;
            Ok(solve(model, &mu, &config)?.potentials.values.max_abs())
        })
        .collect();
    sups.into_iter().try_fold(0.0_f64, |acc, s| Ok(acc.max(s?)))
}

/// Applies a zero-sum constant shift and re-tags the potentials as free.
pub fn shifted(phi: &Family, shifts: &[f64]) -> PotentialFamily {
    PotentialFamily::free(Family(
        phi.0
            .iter()
            .zip(shifts)
            .map(|(p, &c)| p.iter().map(|v| v + c).collect())
            .collect(),
    ))
}
