//! Couplings built from potentials, their marginals, the relative entropy
//! with respect to `K·m`, and the primal-dual gap.
//!
//! The entropy keeps the `−1` inside the integrand:
//!
//! ```text
//! H(q | K m) = Σ_x m(x) γ(x) (log γ(x) − log K(x) − 1),   q = γ m
//! ```
//!
//! so it equals the usual Kullback-Leibler form minus the mass of `q`, and
//! at a solution of the system it coincides with the dual objective.

use crate::error::{Error, Result};
use crate::map::{dual_objective, log_total_mass};
use crate::model::{DiscreteSpace, Family, KernelTensor, MarginalFamily, Model};
use crate::tensor::{advance, LseAccumulator};

/// A coupling `q = γ m` stored through `log γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub shape: Vec<usize>,
    pub log_density: Vec<f64>,
    /// `Σ_x m(x) γ(x)`.
    pub mass: f64,
}

fn check_coupling_shape(coupling: &Coupling, spaces: &[DiscreteSpace]) -> Result<()> {
    let sizes: Vec<usize> = spaces.iter().map(DiscreteSpace::len).collect();
    if sizes != coupling.shape {
        return Err(Error::ShapeMismatch(format!(
            "coupling shape {:?} does not match space sizes {sizes:?}",
            coupling.shape
        )));
    }
    Ok(())
}

/// Pairwise summation; the reduction tree depends only on the length.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// `Σ_x m(x) e^{log_density(x)} g(x)` after a global max shift.
fn shifted_integral(
    log_density: &[f64],
    shape: &[usize],
    spaces: &[DiscreteSpace],
    g: impl Fn(usize) -> f64,
) -> f64 {
    let mut log_mass = Vec::with_capacity(log_density.len());
    let mut idx = vec![0usize; shape.len()];
    for &ld in log_density {
        let lw: f64 = idx
            .iter()
            .enumerate()
            .map(|(j, &x)| spaces[j].log_weights()[x])
            .sum();
        log_mass.push(ld + lw);
        advance(&mut idx, shape);
    }
    let top = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let terms: Vec<f64> = log_mass
        .iter()
        .enumerate()
        .map(|(k, lm)| (lm - top).exp() * g(k))
        .collect();
    pairwise_sum(&terms) * top.exp()
}

/// `γ = K e^{Σ_j φ_j(x_j)}`.
pub fn coupling_from_potentials(model: &Model, phi: &Family) -> Result<Coupling> {
    phi.check_shape(model.spaces(), "potentials")?;
    let shape = model.kernel().shape().to_vec();
    let mut log_density = Vec::with_capacity(model.kernel().len());
    let mut idx = vec![0usize; shape.len()];
    for &lk in model.kernel().log_values() {
        let s: f64 = idx.iter().enumerate().map(|(j, &x)| phi.0[j][x]).sum();
        log_density.push(lk + s);
        advance(&mut idx, &shape);
    }
    Ok(Coupling {
        shape,
        log_density,
        mass: log_total_mass(model, phi).exp(),
    })
}

/// Densities of the marginals of `q = γ m` with respect to each `m_i`.
///
/// Evaluated in a single streaming pass over the tensor with one
/// log-sum-exp accumulator per output atom.
pub fn marginals_of(coupling: &Coupling, spaces: &[DiscreteSpace]) -> Result<Family> {
    check_coupling_shape(coupling, spaces)?;
    let shape = &coupling.shape;
    let n = shape.len();
    let mut acc: Vec<Vec<LseAccumulator>> = spaces
        .iter()
        .map(|s| vec![LseAccumulator::default(); s.len()])
        .collect();
    let mut idx = vec![0usize; n];
    for &ld in &coupling.log_density {
        let lw: f64 = idx
            .iter()
            .enumerate()
            .map(|(j, &x)| spaces[j].log_weights()[x])
            .sum();
        for i in 0..n {
            let xi = idx[i];
            acc[i][xi].push(ld + lw - spaces[i].log_weights()[xi]);
        }
        advance(&mut idx, shape);
    }
    Ok(Family(
        acc.iter()
            .map(|a| a.iter().map(|v| v.value().exp()).collect())
            .collect(),
    ))
}

/// `H(q | K m)` including the `−1` term.
pub fn relative_entropy(
    coupling: &Coupling,
    kernel: &KernelTensor,
    spaces: &[DiscreteSpace],
) -> Result<f64> {
    check_coupling_shape(coupling, spaces)?;
    if kernel.shape() != coupling.shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "kernel shape {:?} does not match coupling shape {:?}",
            kernel.shape(),
            coupling.shape
        )));
    }
    let lk = kernel.log_values();
    let ld = &coupling.log_density;
    Ok(shifted_integral(ld, &coupling.shape, spaces, |k| {
        ld[k] - lk[k] - 1.0
    }))
}

/// The textbook relative entropy `Σ m γ log(γ/K)`, i.e. `H + mass`.
pub fn kl_divergence(
    coupling: &Coupling,
    kernel: &KernelTensor,
    spaces: &[DiscreteSpace],
) -> Result<f64> {
    Ok(relative_entropy(coupling, kernel, spaces)? + coupling.mass)
}

/// `H(q_φ | K m) − dual(φ, μ)`; zero at a solution.
pub fn duality_gap(model: &Model, phi: &Family, mu: &MarginalFamily) -> Result<f64> {
    let q = coupling_from_potentials(model, phi)?;
    let h = relative_entropy(&q, model.kernel(), model.spaces())?;
    Ok(h - dual_objective(model, phi, mu)?)
}

/// The independent coupling `γ(x) = ∏_i μ_i(x_i) / s^{N−1}`, which has
/// marginals `μ` whenever the masses agree.
pub fn product_feasible_coupling(
    mu: &MarginalFamily,
    spaces: &[DiscreteSpace],
) -> Result<Coupling> {
    mu.densities().check_shape(spaces, "marginals")?;
    let masses = mu.densities().masses(spaces);
    let lo = masses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo) > 1e-10 * mu.mass() {
        return Err(Error::MassImbalance {
            spread: (hi - lo) / mu.mass(),
            masses,
        });
    }
    let shape: Vec<usize> = spaces.iter().map(DiscreteSpace::len).collect();
    let n = shape.len();
    let logs: Vec<Vec<f64>> = mu
        .densities()
        .0
        .iter()
        .map(|d| d.iter().map(|v| v.ln()).collect())
        .collect();
    let offset = (n as f64 - 1.0) * mu.mass().ln();
    let total: usize = shape.iter().product();
    let mut log_density = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let s: f64 = idx.iter().enumerate().map(|(j, &x)| logs[j][x]).sum();
        log_density.push(s - offset);
        advance(&mut idx, &shape);
    }
    Ok(Coupling {
        shape,
        log_density,
        mass: mu.mass(),
    })
}
