//! Problem data: finite weighted spaces, the positive kernel tensor and the
//! balanced marginal densities, plus weighted norms and the Gibbs kernel
//! constructor.
//!
//! Tensors are flattened row-major with index order `(x_1, ..., x_N)`.
//! The kernel is held in log form; linear values are derived on request.

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const MASS_BALANCE_TOL: f64 = 1e-10;

fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

fn check_positive(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|&v| v <= 0.0) {
        Some(index) => Err(Error::NonPositiveEntry {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// A finite probability space: `n` atoms with strictly positive weights
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl DiscreteSpace {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::ShapeMismatch(
                "a space needs at least one atom".into(),
            ));
        }
        check_finite("space weights", &weights)?;
        check_positive("space weights", &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidConfig(format!(
                "space weights must sum to 1 (got {total})"
            )));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0 / n as f64; n]).expect("uniform weights are valid")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `Σ_x m(x) f(x)`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `Σ_x m(x)`; one up to the construction tolerance.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// A family of `N` real functions, one per marginal space.
#[derive(Debug, Clone, PartialEq)]
pub struct Family(pub Vec<Vec<f64>>);

impl Family {
    pub fn zeros(spaces: &[DiscreteSpace]) -> Self {
        Family(spaces.iter().map(|s| vec![0.0; s.len()]).collect())
    }

    pub fn constants(spaces: &[DiscreteSpace], values: &[f64]) -> Self {
        Family(
            spaces
                .iter()
                .zip(values)
                .map(|(s, &c)| vec![c; s.len()])
                .collect(),
        )
    }

    pub fn components(&self) -> usize {
        self.0.len()
    }

    pub fn total_len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    /// Splits a flat vector into a family with the block sizes of `spaces`.
    pub fn from_flat(spaces: &[DiscreteSpace], flat: &[f64]) -> Result<Self> {
        let total: usize = spaces.iter().map(DiscreteSpace::len).sum();
        if flat.len() != total {
            return Err(Error::LengthMismatch {
                expected: total,
                actual: flat.len(),
            });
        }
        let mut out = Vec::with_capacity(spaces.len());
        let mut offset = 0;
        for s in spaces {
            out.push(flat[offset..offset + s.len()].to_vec());
            offset += s.len();
        }
        Ok(Family(out))
    }

    pub fn zip_map(&self, other: &Family, f: impl Fn(f64, f64) -> f64) -> Family {
        Family(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Family {
        Family(
            self.0
                .iter()
                .map(|a| a.iter().map(|&x| f(x)).collect())
                .collect(),
        )
    }

    pub fn sub(&self, other: &Family) -> Family {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Family) -> Family {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, t: f64) -> Family {
        self.map(|x| t * x)
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Weighted masses `Σ_x m_i(x) f_i(x)`, one per component.
    pub fn masses(&self, spaces: &[DiscreteSpace]) -> Vec<f64> {
        spaces
            .iter()
            .zip(&self.0)
            .map(|(s, f)| s.integrate(f))
            .collect()
    }

    pub(crate) fn check_shape(&self, spaces: &[DiscreteSpace], what: &str) -> Result<()> {
        if self.0.len() != spaces.len() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {} components for {} spaces",
                self.0.len(),
                spaces.len()
            )));
        }
        for (i, (f, s)) in self.0.iter().zip(spaces).enumerate() {
            if f.len() != s.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{what}: component {i} has length {} but space has {} atoms",
                    f.len(),
                    s.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    LInf,
}

/// Weighted norm of a single function on one space.
pub fn weighted_norm(space: &DiscreteSpace, f: &[f64], p: Norm) -> Result<f64> {
    if f.len() != space.len() {
        return Err(Error::LengthMismatch {
            expected: space.len(),
            actual: f.len(),
        });
    }
    Ok(match p {
        Norm::L2 => space
            .weights()
            .iter()
            .zip(f)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt(),
        Norm::LInf => f.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())),
    })
}

/// Weighted norm of a family: L² sums the squared component norms, L∞
/// takes the largest entry.
pub fn family_norm(spaces: &[DiscreteSpace], f: &Family, p: Norm) -> Result<f64> {
    if f.components() != spaces.len() {
        return Err(Error::LengthMismatch {
            expected: spaces.len(),
            actual: f.components(),
        });
    }
    let mut acc = 0.0_f64;
    for (s, fi) in spaces.iter().zip(&f.0) {
        let n = weighted_norm(s, fi, p)?;
        acc = match p {
            Norm::L2 => acc + n * n,
            Norm::LInf => acc.max(n),
        };
    }
    Ok(match p {
        Norm::L2 => acc.sqrt(),
        Norm::LInf => acc,
    })
}

pub(crate) fn row_major_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Strictly positive kernel density on the product space, stored as its
/// elementwise logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    shape: Vec<usize>,
    log_values: Vec<f64>,
}

impl KernelTensor {
    /// Builds a kernel from linear values; every entry must be finite and `> 0`.
    pub fn from_values(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::check_len(&shape, values.len())?;
        check_finite("kernel", values)?;
        check_positive("kernel", values)?;
        let log_values = values.iter().map(|v| v.ln()).collect();
        Ok(Self { shape, log_values })
    }

    /// Builds a kernel directly from `log K`; entries must be finite.
    pub fn from_log_values(shape: Vec<usize>, log_values: Vec<f64>) -> Result<Self> {
        Self::check_len(&shape, log_values.len())?;
        check_finite("kernel log-values", &log_values)?;
        Ok(Self { shape, log_values })
    }

    fn check_len(shape: &[usize], len: usize) -> Result<()> {
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "kernel needs at least 2 axes, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch("kernel axis of length 0".into()));
        }
        let expected = row_major_len(shape);
        if len != expected {
            return Err(Error::ShapeMismatch(format!(
                "kernel data has {len} entries but shape {shape:?} needs {expected}"
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    /// Materializes `K` in the linear domain. Entries that underflow to zero
    /// or overflow are reported.
    pub fn linear_values(&self) -> Result<Vec<f64>> {
        let values: Vec<f64> = self.log_values.iter().map(|l| l.exp()).collect();
        if let Some(index) = values.iter().position(|v| v.is_infinite()) {
            return Err(Error::Overflow(format!(
                "kernel entry {index} exceeds the f64 range"
            )));
        }
        check_positive("kernel", &values)?;
        Ok(values)
    }
}

/// Cost tensor and temperature for a Gibbs kernel `K = exp(-c/ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSpec {
    pub shape: Vec<usize>,
    pub cost: Vec<f64>,
    pub epsilon: f64,
}

pub fn build_gibbs_kernel(spec: &GibbsSpec) -> Result<KernelTensor> {
    if !spec.epsilon.is_finite() || spec.epsilon <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be a positive finite number (got {})",
            spec.epsilon
        )));
    }
    check_finite("cost", &spec.cost)?;
    let log_values = spec.cost.iter().map(|c| -c / spec.epsilon).collect();
    KernelTensor::from_log_values(spec.shape.clone(), log_values)
}

/// Positive marginal densities with a common weighted mass.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalFamily {
    densities: Family,
    mass: f64,
}

impl MarginalFamily {
    pub fn new(spaces: &[DiscreteSpace], densities: Family) -> Result<Self> {
        for d in &densities.0 {
            check_finite("marginal densities", d)?;
        }
        densities.check_shape(spaces, "marginals")?;
        for d in &densities.0 {
            check_positive("marginal densities", d)?;
        }
        let masses = densities.masses(spaces);
        let mass = masses.iter().sum::<f64>() / masses.len() as f64;
        let lo = masses.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = (hi - lo) / mass;
        if spread > MASS_BALANCE_TOL {
            return Err(Error::MassImbalance { masses, spread });
        }
        Ok(Self { densities, mass })
    }

    pub fn densities(&self) -> &Family {
        &self.densities
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// The representative with every component rescaled to exactly the
    /// common mass.
    pub fn balanced(&self, spaces: &[DiscreteSpace]) -> MarginalFamily {
        let masses = self.densities.masses(spaces);
        let densities = Family(
            self.densities
                .0
                .iter()
                .zip(masses)
                .map(|(d, m)| {
                    let r = self.mass / m;
                    if r == 1.0 {
                        d.clone()
                    } else {
                        d.iter().map(|v| v * r).collect()
                    }
                })
                .collect(),
        );
        MarginalFamily {
            densities,
            mass: self.mass,
        }
    }
}

/// Spaces and kernel with matching shapes. This is everything the forward
/// map needs; the target marginals live in [`ValidatedProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spaces: Vec<DiscreteSpace>,
    kernel: KernelTensor,
}

impl Model {
    pub fn new(spaces: Vec<DiscreteSpace>, kernel: KernelTensor) -> Result<Self> {
        if spaces.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need at least 2 marginal spaces, got {}",
                spaces.len()
            )));
        }
        let sizes: Vec<usize> = spaces.iter().map(DiscreteSpace::len).collect();
        if sizes != kernel.shape() {
            return Err(Error::ShapeMismatch(format!(
                "kernel shape {:?} does not match space sizes {sizes:?}",
                kernel.shape()
            )));
        }
        Ok(Self { spaces, kernel })
    }

    pub fn spaces(&self) -> &[DiscreteSpace] {
        &self.spaces
    }

    pub fn kernel(&self) -> &KernelTensor {
        &self.kernel
    }

    pub fn n_marginals(&self) -> usize {
        self.spaces.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.spaces.iter().map(DiscreteSpace::len).collect()
    }

    pub fn total_atoms(&self) -> usize {
        self.spaces.iter().map(DiscreteSpace::len).sum()
    }

    pub fn marginals(&self, densities: Family) -> Result<MarginalFamily> {
        MarginalFamily::new(&self.spaces, densities)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem {
    model: Model,
    target: MarginalFamily,
}

impl ValidatedProblem {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn target(&self) -> &MarginalFamily {
        &self.target
    }

    pub fn spaces(&self) -> &[DiscreteSpace] {
        self.model.spaces()
    }

    pub fn kernel(&self) -> &KernelTensor {
        self.model.kernel()
    }

    pub fn mass(&self) -> f64 {
        self.target.mass()
    }

    pub fn into_parts(self) -> (Model, MarginalFamily) {
        (self.model, self.target)
    }
}

pub fn validate_problem(
    spaces: Vec<DiscreteSpace>,
    kernel: KernelTensor,
    target: Family,
) -> Result<ValidatedProblem> {
    let model = Model::new(spaces, kernel)?;
    let target = MarginalFamily::new(model.spaces(), target)?;
    Ok(ValidatedProblem { model, target })
}
