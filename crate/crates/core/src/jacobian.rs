//! Linearization of the forward map.
//!
//! At a point `φ`, `T̃'(φ) = id + L` where `L` averages the other
//! components under the conditional laws of the probability measure
//!
//! ```text
//! Q_φ(x) ∝ K(x) e^{Σ_j φ_j(x_j)} m(x)
//! ```
//!
//! `(L h)_i(x_i) = E_{Q_φ}[ Σ_{j≠i} h_j(x_j) | x_i ]`. The kernel of
//! `id + L` is the `(N-1)`-dimensional space of blockwise constants summing
//! to zero, and its range is the codimension `N-1` subspace singled out by
//! [`JacobianOperator::range_check`].
//!
//! Two independent evaluation paths exist: [`JacobianOperator::apply_l`]
//! sweeps the full tensor once per call, while
//! [`JacobianOperator::assemble_dense`] builds the pairwise conditional
//! blocks from log-domain marginalizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, lstsq_qr, orthonormalize, spectral_norm, svd_sorted};
use crate::map::{apply_log_t, gauge_project_e, log_total_mass};
use crate::model::{DiscreteSpace, Family, Model};
use crate::tensor::{advance, logsumexp, marginalize};

pub const DEFAULT_DENSE_CAP: usize = 4096;

const KERNEL_REL_THRESHOLD: f64 = 1e-8;
const RANGE_PRECHECK_TOL: f64 = 1e-8;
const RANGE_POSTCHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct JacobianOperator<'a> {
    model: &'a Model,
    phi: Family,
    log_t: Family,
    log_gamma: Vec<f64>,
    /// `log_gamma + Σ_j log m_j(x_j)`: unnormalized log-mass of `Q_φ`.
    log_q: Vec<f64>,
    log_z: f64,
    dense_cap: usize,
}

#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    /// Singular values of `id + L` in the weighted L² geometry, descending.
    pub singular_values: Vec<f64>,
    /// Weighted-orthonormal basis of the numerical kernel, in the original
    /// coordinates.
    pub kernel_basis: Vec<Family>,
    /// Smallest singular value above the kernel threshold.
    pub smallest_nonzero: Option<f64>,
    /// Sine of the largest principal angle between the numerical kernel and
    /// the blockwise constants summing to zero.
    pub kernel_angle: f64,
}

impl KernelSpectrum {
    pub fn kernel_dim(&self) -> usize {
        self.kernel_basis.len()
    }
}

pub fn build_jacobian<'a>(model: &'a Model, phi: &Family) -> Result<JacobianOperator<'a>> {
    let log_t = apply_log_t(model, phi)?;
    let shape = model.kernel().shape();
    let log_k = model.kernel().log_values();
    let mut log_gamma = Vec::with_capacity(log_k.len());
    let mut log_q = Vec::with_capacity(log_k.len());
    let mut idx = vec![0usize; shape.len()];
    for &lk in log_k {
        let mut g = lk;
        let mut w = 0.0;
        for (j, &x) in idx.iter().enumerate() {
            g += phi.0[j][x];
            w += model.spaces()[j].log_weights()[x];
        }
        log_gamma.push(g);
        log_q.push(g + w);
        advance(&mut idx, shape);
    }
    Ok(JacobianOperator {
        model,
        phi: phi.clone(),
        log_t,
        log_gamma,
        log_q,
        log_z: log_total_mass(model, phi),
        dense_cap: DEFAULT_DENSE_CAP,
    })
}

impl<'a> JacobianOperator<'a> {
    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn phi(&self) -> &Family {
        &self.phi
    }

    /// Cached `T̃_i(φ)`.
    pub fn log_t(&self) -> &Family {
        &self.log_t
    }

    /// `log K + Σ_j φ_j`, the log-density of the coupling w.r.t. `m`.
    pub fn log_gamma(&self) -> &[f64] {
        &self.log_gamma
    }

    /// Log of the normalizer `Σ_x m(x) K(x) e^{Σ φ_j(x_j)}`.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    fn spaces(&self) -> &'a [DiscreteSpace] {
        self.model.spaces()
    }

    /// `T(φ)` from the cached logarithm.
    pub fn t_values(&self) -> Result<Family> {
        crate::map::exp_checked(&self.log_t)
    }

    /// Probability masses `Q_φ^i(x_i)` of the i-th marginal of `Q_φ`.
    pub fn q_marginal(&self, i: usize) -> Vec<f64> {
        self.log_t.0[i]
            .iter()
            .zip(self.spaces()[i].log_weights())
            .map(|(lt, lw)| (lt + lw - self.log_z).exp())
            .collect()
    }

    fn dense_size(&self) -> Result<usize> {
        let size = self.model.total_atoms();
        if size > self.dense_cap {
            return Err(Error::SizeCapExceeded {
                size,
                cap: self.dense_cap,
            });
        }
        Ok(size)
    }

    pub fn apply_l(&self, h: &Family) -> Result<Family> {
        h.check_shape(self.spaces(), "direction")?;
        let shape = self.model.kernel().shape();
        let n = shape.len();
        // c_i(x) = exp(log_q(x) - log m_i(x_i) - log T_i(x_i)) is the
        // conditional probability of x_{-i} given x_i.
        let offsets: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                self.spaces()[i]
                    .log_weights()
                    .iter()
                    .zip(&self.log_t.0[i])
                    .map(|(lw, lt)| lw + lt)
                    .collect()
            })
            .collect();
        let mut out = Family::zeros(self.spaces());
        let mut idx = vec![0usize; n];
        for &lq in &self.log_q {
            let total: f64 = idx.iter().enumerate().map(|(j, &x)| h.0[j][x]).sum();
            for i in 0..n {
                let xi = idx[i];
                let c = (lq - offsets[i][xi]).exp();
                out.0[i][xi] += c * (total - h.0[i][xi]);
            }
            advance(&mut idx, shape);
        }
        Ok(out)
    }

    /// `T̃'(φ) h = h + L h`.
    pub fn apply_ttilde_prime(&self, h: &Family) -> Result<Family> {
        Ok(h.add(&self.apply_l(h)?))
    }

    /// `T'(φ) h = e^{T̃(φ)} ⊙ T̃'(φ) h`.
    pub fn apply_t_prime(&self, h: &Family) -> Result<Family> {
        let d = self.apply_ttilde_prime(h)?;
        Ok(d.zip_map(&self.log_t, |v, lt| v * lt.exp()))
    }

    /// Dense matrix of `id + L` over the stacked atoms of all spaces.
    ///
    /// Block `(i, j)` holds the conditional probability of `x_j` given
    /// `x_i` under `Q_φ`; diagonal blocks are the identity.
    pub fn assemble_dense(&self) -> Result<DMatrix<f64>> {
        let size = self.dense_size()?;
        let spaces = self.spaces();
        let n = spaces.len();
        let shape = self.model.kernel().shape();
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + spaces[i].len();
        }
        let mut a = DMatrix::identity(size, size);
        for i in 0..n {
            for j in i + 1..n {
                let (ni, nj) = (spaces[i].len(), spaces[j].len());
                let mut pair =
                    marginalize(&self.log_gamma, shape, &[i, j], |k| spaces[k].log_weights());
                for xi in 0..ni {
                    for xj in 0..nj {
                        pair[xi * nj + xj] +=
                            spaces[i].log_weights()[xi] + spaces[j].log_weights()[xj];
                    }
                }
                for xi in 0..ni {
                    let row = &pair[xi * nj..(xi + 1) * nj];
                    let norm = logsumexp(row);
                    for xj in 0..nj {
                        a[(offsets[i] + xi, offsets[j] + xj)] = (row[xj] - norm).exp();
                    }
                }
                for xj in 0..nj {
                    let col: Vec<f64> = (0..ni).map(|xi| pair[xi * nj + xj]).collect();
                    let norm = logsumexp(&col);
                    for xi in 0..ni {
                        a[(offsets[j] + xj, offsets[i] + xi)] = (col[xi] - norm).exp();
                    }
                }
            }
        }
        Ok(a)
    }

    /// `√m` over the stacked atoms; conjugating by it maps the weighted
    /// L² geometry to the Euclidean one.
    fn sqrt_weights(&self) -> Vec<f64> {
        self.spaces()
            .iter()
            .flat_map(|s| s.weights().iter().map(|w| w.sqrt()))
            .collect()
    }

    /// Indicator vectors `√m ⊙ 1_i` of each block in weighted coordinates.
    fn block_indicators(&self) -> Vec<DVector<f64>> {
        let spaces = self.spaces();
        let size = self.model.total_atoms();
        let mut out = Vec::with_capacity(spaces.len());
        let mut offset = 0;
        for s in spaces {
            let mut v = DVector::zeros(size);
            for (k, w) in s.weights().iter().enumerate() {
                v[offset + k] = w.sqrt();
            }
            offset += s.len();
            out.push(v);
        }
        out
    }

    /// Solves `T'(φ) h = θ` for `h` in the mean-zero gauge.
    ///
    /// `θ` must have equal weighted masses. The scaled system
    /// `(id + L) h = θ e^{-T̃(φ)}` is stacked with the `N-1` gauge rows and
    /// solved by Householder QR; the post-solve residual certifies that the
    /// right-hand side lies in the range.
    pub fn solve_in_e(&self, theta: &Family) -> Result<Family> {
        theta.check_shape(self.spaces(), "right-hand side")?;
        let spaces = self.spaces();
        let masses = theta.masses(spaces);
        let scale = spaces
            .iter()
            .zip(&theta.0)
            .map(|(s, t)| s.integrate(&t.iter().map(|v| v.abs()).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        let spread = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - masses.iter().copied().fold(f64::INFINITY, f64::min);
        if spread > RANGE_PRECHECK_TOL * scale {
            return Err(Error::NotInRange(format!(
                "masses {masses:?} are not equal (spread {spread:e})"
            )));
        }
        let size = self.dense_size()?;
        let n = spaces.len();
        let scaled = theta.zip_map(&self.log_t, |t, lt| t * (-lt).exp());
        let rhs_top = DVector::from_vec(scaled.flatten());
        let a = self.assemble_dense()?;

        let mut stacked = DMatrix::zeros(size + n - 1, size);
        stacked.view_mut((0, 0), (size, size)).copy_from(&a);
        let mut offset = 0;
        for (i, s) in spaces.iter().enumerate().take(n - 1) {
            for (k, w) in s.weights().iter().enumerate() {
                stacked[(size + i, offset + k)] = *w;
            }
            offset += s.len();
        }
        let mut rhs = DVector::zeros(size + n - 1);
        rhs.rows_mut(0, size).copy_from(&rhs_top);

        let h = lstsq_qr(stacked, &rhs)
            .ok_or_else(|| Error::NotInRange("singular stacked system".into()))?;
        let resid = (&a * &h - &rhs_top).amax();
        let bound = RANGE_POSTCHECK_TOL * rhs_top.amax();
        if resid > bound {
            return Err(Error::NotInRange(format!(
                "residual {resid:e} exceeds {bound:e}"
            )));
        }
        let h = Family::from_flat(spaces, h.as_slice())?;
        Ok(gauge_project_e(spaces, &h).values)
    }

    /// Full singular spectrum of `id + L` in the weighted L² geometry and a
    /// basis of its numerical kernel.
    pub fn kernel_spectrum(&self) -> Result<KernelSpectrum> {
        let a = self.assemble_dense()?;
        let d = self.sqrt_weights();
        let size = d.len();
        let b = DMatrix::from_fn(size, size, |r, c| a[(r, c)] * d[r] / d[c]);
        let (sigma, v) = svd_sorted(b);
        let cutoff = KERNEL_REL_THRESHOLD * sigma[0];
        let kernel_cols: Vec<usize> = (0..size).filter(|&k| sigma[k] <= cutoff).collect();
        let smallest_nonzero = sigma.iter().copied().rfind(|&s| s > cutoff);

        let numeric = DMatrix::from_columns(
            &kernel_cols
                .iter()
                .map(|&k| v.column(k).into_owned())
                .collect::<Vec<_>>(),
        );
        let ind = self.block_indicators();
        let n = ind.len();
        let analytic_vecs: Vec<DVector<f64>> = (0..n - 1).map(|i| &ind[i] - &ind[n - 1]).collect();
        let analytic = DMatrix::from_columns(&orthonormalize(&analytic_vecs));
        let kernel_angle = subspace_sine(&numeric, &analytic, size);

        let kernel_basis = kernel_cols
            .iter()
            .map(|&k| {
                let col: Vec<f64> = (0..size).map(|r| v[(r, k)] / d[r]).collect();
                Family::from_flat(self.spaces(), &col)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelSpectrum {
            singular_values: sigma,
            kernel_basis,
            smallest_nonzero,
            kernel_angle,
        })
    }

    /// Largest discrepancy between the integrals `Σ_x m_i e^{T̃_i} θ_i`,
    /// relative to `max(1, |I_1|)`. Zero exactly on the range of `T̃'(φ)`.
    pub fn range_check(&self, theta: &Family) -> Result<f64> {
        theta.check_shape(self.spaces(), "direction")?;
        let ints: Vec<f64> = self
            .spaces()
            .iter()
            .zip(&theta.0)
            .zip(&self.log_t.0)
            .map(|((s, t), lt)| {
                let f: Vec<f64> = t.iter().zip(lt).map(|(a, b)| a * b.exp()).collect();
                s.integrate(&f)
            })
            .collect();
        let hi = ints.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = ints.iter().copied().fold(f64::INFINITY, f64::min);
        Ok((hi - lo) / ints[0].abs().max(1.0))
    }

    /// Singular values (descending) of `T'(φ)` restricted to the gauge
    /// space `E` with values in the equal-mass space `F`, both with the
    /// weighted L² norm.
    pub fn restricted_singular_values(&self) -> Result<Vec<f64>> {
        let a = self.assemble_dense()?;
        let d = self.sqrt_weights();
        let size = d.len();
        let scale: Vec<f64> = self.log_t.flatten().into_iter().map(f64::exp).collect();
        // weighted coordinates: y = √m ⊙ h
        let t_prime = DMatrix::from_fn(size, size, |r, c| scale[r] * a[(r, c)] * d[r] / d[c]);
        let ind = self.block_indicators();
        let n = ind.len();
        let e_basis = complement_basis(&ind[..n - 1], size);
        let f_constraints: Vec<DVector<f64>> = (0..n - 1).map(|i| &ind[i] - &ind[n - 1]).collect();
        let f_basis = complement_basis(&f_constraints, size);
        let restricted = f_basis.transpose() * t_prime * e_basis;
        Ok(svd_sorted(restricted).0)
    }
}

/// Sine of the largest principal angle between two subspaces given by
/// orthonormal columns; 1 when their dimensions differ.
fn subspace_sine(u: &DMatrix<f64>, w: &DMatrix<f64>, dim: usize) -> f64 {
    if u.ncols() != w.ncols() {
        return 1.0;
    }
    if u.ncols() == 0 {
        return 0.0;
    }
    let proj_w = w * w.transpose();
    let resid = (DMatrix::identity(dim, dim) - proj_w) * u;
    spectral_norm(&resid).min(1.0)
}
