//! Structural checks of the linearization at a point, reported as a
//! pass/fail table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::jacobian::build_jacobian;
use crate::map::{apply_t, gauge_project_e};
use crate::model::{Family, Model};

pub const KERNEL_ANGLE_TOL: f64 = 1e-8;
pub const CONDITIONING_FLOOR: f64 = 1e-6;
pub const RANGE_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;
pub const ROUND_TRIP_TOL: f64 = 1e-10;
pub const DENSE_MATCH_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianChecks {
    pub n_marginals: usize,
    pub kernel_dim: usize,
    pub rows: Vec<CheckRow>,
}

impl JacobianChecks {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

fn random_family(model: &Model, rng: &mut ChaCha8Rng) -> Family {
    Family(
        model
            .spaces()
            .iter()
            .map(|s| (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    )
}

/// Central difference `(T(φ + t h) − T(φ − t h)) / 2t`.
pub fn central_difference(model: &Model, phi: &Family, h: &Family, step: f64) -> Result<Family> {
    let plus = apply_t(model, &phi.add(&h.scale(step)))?;
    let minus = apply_t(model, &phi.sub(&h.scale(step)))?;
    Ok(plus.sub(&minus).scale(0.5 / step))
}

/// Runs the kernel, conditioning, range, derivative and round-trip checks
/// at `phi` with `directions` random directions.
pub fn check_jacobian(
    model: &Model,
    phi: &Family,
    directions: usize,
    seed: u64,
) -> Result<JacobianChecks> {
    let jac = build_jacobian(model, phi)?;
    let n = model.n_marginals();
    let spectrum = jac.kernel_spectrum()?;
    let sigma_max = spectrum.singular_values[0];
    let mut rows = vec![
        CheckRow {
            name: "kernel dimension - (N-1)",
            value: spectrum.kernel_dim() as f64 - (n as f64 - 1.0),
            threshold: 0.0,
            passed: spectrum.kernel_dim() == n - 1,
        },
        CheckRow {
            name: "kernel subspace angle (sin)",
            value: spectrum.kernel_angle,
            threshold: KERNEL_ANGLE_TOL,
            passed: spectrum.kernel_angle <= KERNEL_ANGLE_TOL,
        },
    ];
    let ratio = spectrum.smallest_nonzero.unwrap_or(0.0) / sigma_max;
    rows.push(CheckRow {
        name: "smallest nonzero / largest singular value",
        value: ratio,
        threshold: CONDITIONING_FLOOR,
        passed: ratio > CONDITIONING_FLOOR,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = jac.assemble_dense()?;
    let (mut range, mut fd, mut round_trip, mut dense_gap) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..directions {
        let h = random_family(model, &mut rng);
        let image = jac.apply_ttilde_prime(&h)?;
        range = range.max(jac.range_check(&image)?);

        let matvec = &dense * nalgebra::DVector::from_vec(h.flatten());
        let gap = matvec
            .iter()
            .zip(image.flatten())
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        dense_gap = dense_gap.max(gap / image.max_abs().max(1.0));

        let analytic = jac.apply_t_prime(&h)?;
        let numeric = central_difference(model, phi, &h, FD_STEP)?;
        fd = fd.max(numeric.sub(&analytic).max_abs() / analytic.max_abs().max(f64::MIN_POSITIVE));

        let h0 = gauge_project_e(model.spaces(), &h).values;
        let back = jac.solve_in_e(&jac.apply_t_prime(&h0)?)?;
        round_trip = round_trip.max(back.sub(&h0).max_abs());
    }
    rows.push(CheckRow {
        name: "range condition violation",
        value: range,
        threshold: RANGE_TOL,
        passed: range <= RANGE_TOL,
    });
    rows.push(CheckRow {
        name: "dense matrix vs operator apply",
        value: dense_gap,
        threshold: DENSE_MATCH_TOL,
        passed: dense_gap <= DENSE_MATCH_TOL,
    });
    rows.push(CheckRow {
        name: "T' vs central differences (rel)",
        value: fd,
        threshold: FD_TOL,
        passed: fd <= FD_TOL,
    });
    rows.push(CheckRow {
        name: "solve_in_E round trip",
        value: round_trip,
        threshold: ROUND_TRIP_TOL,
        passed: round_trip <= ROUND_TRIP_TOL,
    });
    Ok(JacobianChecks {
        n_marginals: n,
        kernel_dim: spectrum.kernel_dim(),
        rows,
    })
}
