//! The forward map `φ ↦ T(φ)` of the Schrödinger system, its logarithmic
//! form, the concave dual objective and the two gauge normalizations.
//!
//! For a family of potentials `φ = (φ_1, ..., φ_N)`,
//!
//! ```text
//! T_i(φ)(x_i) = e^{φ_i(x_i)} Σ_{x_{-i}} K(x_i, x_{-i}) e^{Σ_{j≠i} φ_j(x_j)} m_{-i}(x_{-i})
//! ```
//!
//! The system to solve is `T(φ) = μ`. Constant shifts `φ_i + λ_i` with
//! `Σ λ_i = 0` leave `T` unchanged, so solutions are pinned by a gauge.

use crate::error::{Error, Result};
use crate::model::{family_norm, DiscreteSpace, Family, MarginalFamily, Model, Norm};
use crate::tensor::marginalize;

const GAUGE_TOL: f64 = 1e-12;

/// Largest `t` with `exp(t)` finite.
pub(crate) const LOG_MAX: f64 = 709.782712893384;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    /// `Σ_x m_i(x) φ_i(x) = 0` for `i < N`.
    MeanZero,
    /// `Σ_x m_i(x) e^{φ_i(x)} = 1` for `i < N`.
    UnitExp,
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialFamily {
    pub values: Family,
    pub gauge: Gauge,
    /// Constants added by the last gauge change; they sum to zero.
    pub shifts: Option<Vec<f64>>,
}

impl PotentialFamily {
    pub fn free(values: Family) -> Self {
        Self {
            values,
            gauge: Gauge::Free,
            shifts: None,
        }
    }

    pub fn zeros(spaces: &[DiscreteSpace]) -> Self {
        Self {
            values: Family::zeros(spaces),
            gauge: Gauge::MeanZero,
            shifts: None,
        }
    }

    /// Checks the invariant implied by the gauge tag.
    pub fn check_gauge(&self, spaces: &[DiscreteSpace]) -> Result<()> {
        self.values.check_shape(spaces, "potentials")?;
        let n = spaces.len();
        let violation = match self.gauge {
            Gauge::Free => 0.0,
            Gauge::MeanZero => (0..n - 1)
                .map(|i| spaces[i].integrate(&self.values.0[i]).abs())
                .fold(0.0, f64::max),
            Gauge::UnitExp => (0..n - 1)
                .map(|i| {
                    let e: Vec<f64> = self.values.0[i].iter().map(|v| v.exp()).collect();
                    (spaces[i].integrate(&e) - 1.0).abs()
                })
                .fold(0.0, f64::max),
        };
        if violation > GAUGE_TOL {
            return Err(Error::InvalidConfig(format!(
                "potentials violate the {:?} gauge by {violation:e}",
                self.gauge
            )));
        }
        if let Some(s) = &self.shifts {
            let total: f64 = s.iter().sum();
            if total.abs() > GAUGE_TOL {
                return Err(Error::InvalidConfig(format!(
                    "gauge shifts sum to {total:e}, not 0"
                )));
            }
        }
        Ok(())
    }
}

/// `φ_j + log m_j` for every axis: the weight folded into a reduction over
/// axis `j`.
fn axis_weights(model: &Model, phi: &Family) -> Vec<Vec<f64>> {
    model
        .spaces()
        .iter()
        .zip(&phi.0)
        .map(|(s, p)| p.iter().zip(s.log_weights()).map(|(a, b)| a + b).collect())
        .collect()
}

/// `log Σ_{x_{-i}} K(x_i, x_{-i}) e^{Σ_{j≠i} φ_j(x_j)} m_{-i}(x_{-i})` for
/// every atom of space `i`.
pub(crate) fn log_partial(model: &Model, phi: &Family, i: usize) -> Vec<f64> {
    let w = axis_weights(model, phi);
    let k = model.kernel();
    marginalize(k.log_values(), k.shape(), &[i], |a| w[a].as_slice())
}

/// `log Σ_x K(x) e^{Σ_j φ_j(x_j)} m(x)`.
pub(crate) fn log_total_mass(model: &Model, phi: &Family) -> f64 {
    let w = axis_weights(model, phi);
    let k = model.kernel();
    marginalize(k.log_values(), k.shape(), &[], |a| w[a].as_slice())[0]
}

/// `T̃_i(φ) = log T_i(φ)` for every component.
pub fn apply_log_t(model: &Model, phi: &Family) -> Result<Family> {
    phi.check_shape(model.spaces(), "potentials")?;
    let w = axis_weights(model, phi);
    let k = model.kernel();
    let out = (0..model.n_marginals())
        .map(|i| {
            marginalize(k.log_values(), k.shape(), &[i], |a| w[a].as_slice())
                .into_iter()
                .zip(&phi.0[i])
                .map(|(l, p)| l + p)
                .collect()
        })
        .collect();
    Ok(Family(out))
}

pub(crate) fn exp_checked(log_t: &Family) -> Result<Family> {
    if let Some(v) = log_t
        .0
        .iter()
        .flatten()
        .find(|&&v| v > LOG_MAX || v.is_nan())
    {
        return Err(Error::Overflow(format!(
            "log T = {v} is outside the representable range"
        )));
    }
    Ok(log_t.map(f64::exp))
}

pub fn apply_t(model: &Model, phi: &Family) -> Result<Family> {
    exp_checked(&apply_log_t(model, phi)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub values: Family,
    pub norm_l2: f64,
    pub norm_linf: f64,
}

/// `r_i = T_i(φ) − μ_i` with its weighted L² and L∞ norms.
pub fn residual(model: &Model, phi: &Family, mu: &MarginalFamily) -> Result<Residual> {
    mu.densities().check_shape(model.spaces(), "marginals")?;
    let t = apply_t(model, phi)?;
    Ok(residual_from_t(model, &t, mu))
}

pub(crate) fn residual_from_t(model: &Model, t: &Family, mu: &MarginalFamily) -> Residual {
    let values = t.sub(mu.densities());
    let norm_l2 = family_norm(model.spaces(), &values, Norm::L2).expect("shapes checked");
    let norm_linf = values.max_abs();
    Residual {
        values,
        norm_l2,
        norm_linf,
    }
}

/// `Σ_i Σ_x m_i φ_i μ_i − Σ_x m K e^{Σ φ_j}`, the concave dual objective.
pub fn dual_objective(model: &Model, phi: &Family, mu: &MarginalFamily) -> Result<f64> {
    phi.check_shape(model.spaces(), "potentials")?;
    mu.densities().check_shape(model.spaces(), "marginals")?;
    let linear: f64 = model
        .spaces()
        .iter()
        .zip(&phi.0)
        .zip(&mu.densities().0)
        .map(|((s, p), m)| {
            let pm: Vec<f64> = p.iter().zip(m).map(|(a, b)| a * b).collect();
            s.integrate(&pm)
        })
        .sum();
    Ok(linear - log_total_mass(model, phi).exp())
}

fn apply_shifts(phi: &Family, shifts: &[f64]) -> Family {
    Family(
        phi.0
            .iter()
            .zip(shifts)
            .map(|(p, &l)| p.iter().map(|v| v + l).collect())
            .collect(),
    )
}

/// Normalizes to `Σ_x m_i φ_i = 0` for `i < N`; `φ_N` absorbs the shift.
pub fn gauge_project_e(spaces: &[DiscreteSpace], phi: &Family) -> PotentialFamily {
    let n = phi.components();
    let mut shifts = vec![0.0; n];
    for i in 0..n - 1 {
        let c = spaces[i].integrate(&phi.0[i]) / spaces[i].total_weight();
        shifts[i] = -c;
        shifts[n - 1] += c;
    }
    PotentialFamily {
        values: apply_shifts(phi, &shifts),
        gauge: Gauge::MeanZero,
        shifts: Some(shifts),
    }
}

/// Normalizes to `Σ_x m_i e^{φ_i} = 1` for `i < N`; `φ_N` absorbs the shift.
pub fn gauge_to_unit_exp(spaces: &[DiscreteSpace], phi: &Family) -> PotentialFamily {
    let n = phi.components();
    let mut shifts = vec![0.0; n];
    for i in 0..n - 1 {
        let logs: Vec<f64> = phi.0[i]
            .iter()
            .zip(spaces[i].log_weights())
            .map(|(p, lw)| p + lw)
            .collect();
        let lambda = -crate::tensor::logsumexp(&logs);
        shifts[i] = lambda;
        shifts[n - 1] -= lambda;
    }
    PotentialFamily {
        values: apply_shifts(phi, &shifts),
        gauge: Gauge::UnitExp,
        shifts: Some(shifts),
    }
}
