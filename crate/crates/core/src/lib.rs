//! Solver for the discrete multi-marginal Schrödinger system
//!
//! ```text
//! μ_i(x_i) = e^{φ_i(x_i)} Σ_{x_{-i}} K(x_i, x_{-i}) e^{Σ_{j≠i} φ_j(x_j)} m_{-i}(x_{-i}),   i = 1..N
//! ```
//!
//! on finite weighted spaces, which characterizes entropic multi-marginal
//! optimal transport couplings `γ = K e^{Σ φ_j}`.
//!
//! * [`model`]: spaces, kernel, balanced marginals, Gibbs kernels.
//! * [`map`]: the forward map, dual objective and gauges.
//! * [`jacobian`]: the linearization `id + L`, restricted solves and its
//!   kernel/range structure.
//! * [`solvers`]: Sinkhorn, damped Newton and a hybrid schedule.
//! * [`entropy`]: couplings, relative entropy and the duality gap.
//! * [`stability`]: empirical bounds and Lipschitz constants of the inverse map.
//! * [`io`]: JSON documents.

pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod io;
pub mod jacobian;
mod linalg;
pub mod map;
pub mod model;
pub mod solvers;
pub mod stability;
pub mod tensor;

pub use error::{Error, Result};
pub use jacobian::{build_jacobian, JacobianOperator, KernelSpectrum};
pub use map::{Gauge, PotentialFamily};
pub use model::{
    DiscreteSpace, Family, KernelTensor, MarginalFamily, Model, Norm, ValidatedProblem,
};
pub use solvers::{Method, Solution, SolveReport, SolverConfig};
