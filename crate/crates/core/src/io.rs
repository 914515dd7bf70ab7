//! JSON problem and solution documents.
//!
//! Parsing is strict: unknown fields are rejected, tensors must declare
//! `"order": "row-major"`, and a problem carries exactly one of `kernel` or
//! `gibbs`. Floats are written as shortest round-trip decimals and re-read
//! bit-exactly.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::entropy::{coupling_from_potentials, duality_gap, kl_divergence, relative_entropy};
use crate::error::{Error, Result};
use crate::map::{dual_objective, residual, Gauge};
use crate::model::{
    build_gibbs_kernel, validate_problem, DiscreteSpace, Family, GibbsSpec, KernelTensor,
    ValidatedProblem,
};
use crate::solvers::{Solution, SolveReport};

pub const FORMAT_VERSION: &str = "1";
pub const ROW_MAJOR: &str = "row-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub shape: Vec<usize>,
    pub order: String,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsBlock {
    pub shape: Vec<usize>,
    pub order: String,
    pub cost_data: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub version: String,
    pub spaces: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs: Option<GibbsBlock>,
    pub marginals: Vec<Vec<f64>>,
}

/// Input of the `gibbs` subcommand: a problem whose kernel is given as a
/// cost tensor, with the temperature supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDocument {
    pub version: String,
    pub spaces: Vec<Vec<f64>>,
    pub cost: KernelBlock,
    pub marginals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDocument {
    pub version: String,
    pub potentials: Vec<Vec<f64>>,
    pub gauge: String,
    pub residual_linf: f64,
    pub dual_value: f64,
    pub entropy_value: f64,
    /// Standard relative entropy, `entropy_value + coupling mass`.
    pub kl_value: f64,
    pub duality_gap: f64,
    pub report: SolveReport,
}

fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::Schema(e.to_string()),
        _ => Error::Parse(e.to_string()),
    })
}

fn check_header(version: &str, order: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported version {version:?}, expected {FORMAT_VERSION:?}"
        )));
    }
    if order != ROW_MAJOR {
        return Err(Error::Schema(format!(
            "unsupported tensor order {order:?}, expected {ROW_MAJOR:?}"
        )));
    }
    Ok(())
}

fn build_spaces(spaces: &[Vec<f64>]) -> Result<Vec<DiscreteSpace>> {
    spaces.iter().cloned().map(DiscreteSpace::new).collect()
}

impl ProblemDocument {
    /// Validates the document and builds the problem it describes.
    pub fn problem(&self) -> Result<ValidatedProblem> {
        let kernel = match (&self.kernel, &self.gibbs) {
            (Some(k), None) => {
                check_header(&self.version, &k.order)?;
                KernelTensor::from_values(k.shape.clone(), &k.data)?
            }
            (None, Some(g)) => {
                check_header(&self.version, &g.order)?;
                build_gibbs_kernel(&GibbsSpec {
                    shape: g.shape.clone(),
                    cost: g.cost_data.clone(),
                    epsilon: g.epsilon,
                })?
            }
            (Some(_), Some(_)) => {
                return Err(Error::Schema(
                    "document has both `kernel` and `gibbs`".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Schema(
                    "document needs one of `kernel` or `gibbs`".into(),
                ))
            }
        };
        validate_problem(
            build_spaces(&self.spaces)?,
            kernel,
            Family(self.marginals.clone()),
        )
    }

    pub fn from_problem(problem: &ValidatedProblem) -> Result<Self> {
        let k = problem.kernel();
        Ok(Self {
            version: FORMAT_VERSION.into(),
            spaces: problem
                .spaces()
                .iter()
                .map(|s| s.weights().to_vec())
                .collect(),
            kernel: Some(KernelBlock {
                shape: k.shape().to_vec(),
                order: ROW_MAJOR.into(),
                data: k.linear_values()?,
            }),
            gibbs: None,
            marginals: problem.target().densities().0.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialize");
        s.push('\n');
        s
    }
}

pub fn parse_problem(text: &str) -> Result<ProblemDocument> {
    let doc: ProblemDocument = from_json(text)?;
    doc.problem()?;
    Ok(doc)
}

impl CostDocument {
    /// Materializes `K = exp(-cost/ε)` into a kernel-form problem document.
    pub fn materialize(&self, epsilon: f64) -> Result<ProblemDocument> {
        check_header(&self.version, &self.cost.order)?;
        let kernel = build_gibbs_kernel(&GibbsSpec {
            shape: self.cost.shape.clone(),
            cost: self.cost.data.clone(),
            epsilon,
        })?;
        let doc = ProblemDocument {
            version: FORMAT_VERSION.into(),
            spaces: self.spaces.clone(),
            kernel: Some(KernelBlock {
                shape: kernel.shape().to_vec(),
                order: ROW_MAJOR.into(),
                data: kernel.linear_values()?,
            }),
            gibbs: None,
            marginals: self.marginals.clone(),
        };
        doc.problem()?;
        Ok(doc)
    }
}

pub fn parse_cost(text: &str) -> Result<CostDocument> {
    from_json(text)
}

impl SolutionDocument {
    /// Evaluates residual, dual, entropy and gap of `solution` against the
    /// problem's target marginals.
    pub fn new(problem: &ValidatedProblem, solution: &Solution) -> Result<Self> {
        let model = problem.model();
        let mu = problem.target();
        let phi = &solution.potentials.values;
        let q = coupling_from_potentials(model, phi)?;
        Ok(Self {
            version: FORMAT_VERSION.into(),
            potentials: phi.0.clone(),
            gauge: gauge_name(solution.potentials.gauge).into(),
            residual_linf: residual(model, phi, mu)?.norm_linf,
            dual_value: dual_objective(model, phi, mu)?,
            entropy_value: relative_entropy(&q, model.kernel(), model.spaces())?,
            kl_value: kl_divergence(&q, model.kernel(), model.spaces())?,
            duality_gap: duality_gap(model, phi, mu)?,
            report: solution.report.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialize");
        s.push('\n');
        s
    }
}

fn gauge_name(g: Gauge) -> &'static str {
    match g {
        Gauge::MeanZero => "mean-zero",
        Gauge::UnitExp => "unit-exp",
        Gauge::Free => "free",
    }
}

pub fn parse_solution(text: &str) -> Result<SolutionDocument> {
    from_json(text)
}

pub fn write_solution(solution: &SolutionDocument, path: &Path) -> Result<()> {
    std::fs::write(path, solution.to_json())?;
    Ok(())
}
