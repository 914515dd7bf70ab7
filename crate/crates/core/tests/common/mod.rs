#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schroedinger_core::map::{apply_t, gauge_project_e};
use schroedinger_core::{DiscreteSpace, Family, KernelTensor, MarginalFamily, Model};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_space(n: usize, rng: &mut ChaCha8Rng) -> DiscreteSpace {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // last weight absorbs rounding so the sum is 1 to the last ulp
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    DiscreteSpace::new(w).unwrap()
}

pub fn random_model(sizes: &[usize], rng: &mut ChaCha8Rng) -> Model {
    let spaces: Vec<DiscreteSpace> = sizes.iter().map(|&n| random_space(n, rng)).collect();
    let len: usize = sizes.iter().product();
    let vals: Vec<f64> = (0..len).map(|_| rng.random_range(0.1..10.0)).collect();
    Model::new(
        spaces,
        KernelTensor::from_values(sizes.to_vec(), &vals).unwrap(),
    )
    .unwrap()
}

pub fn random_family(spaces: &[DiscreteSpace], amplitude: f64, rng: &mut ChaCha8Rng) -> Family {
    Family(
        spaces
            .iter()
            .map(|s| {
                (0..s.len())
                    .map(|_| rng.random_range(-amplitude..amplitude))
                    .collect()
            })
            .collect(),
    )
}

pub fn random_sizes(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rng.random_range(2..=4usize);
    let max = match n {
        2 => 12,
        3 => 7,
        _ => 4,
    };
    (0..n).map(|_| rng.random_range(1..=max)).collect()
}

pub struct Planted {
    pub model: Model,
    pub phi: Family,
    pub mu: MarginalFamily,
}

/// `φ*` uniform in `[-1, 1]` projected to the gauge space, `μ = T(φ*)`.
pub fn planted(seed: u64) -> Planted {
    let mut r = rng(seed);
    let sizes = random_sizes(&mut r);
    planted_with(&sizes, &mut r)
}

pub fn planted_with(sizes: &[usize], r: &mut ChaCha8Rng) -> Planted {
    let model = random_model(sizes, r);
    let phi = gauge_project_e(model.spaces(), &random_family(model.spaces(), 1.0, r)).values;
    let mu = model.marginals(apply_t(&model, &phi).unwrap()).unwrap();
    Planted { model, phi, mu }
}

/// Random direction with zero weighted mean in every component but the last.
pub fn random_e_direction(spaces: &[DiscreteSpace], rng: &mut ChaCha8Rng) -> Family {
    gauge_project_e(spaces, &random_family(spaces, 1.0, rng)).values
}
