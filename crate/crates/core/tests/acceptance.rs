//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::{
    planted, planted_with, random_e_direction, random_family, random_model, random_space, rng,
};
use rand::Rng;
use schroedinger_core::entropy::{duality_gap, product_feasible_coupling, relative_entropy};
use schroedinger_core::jacobian::build_jacobian;
use schroedinger_core::map::{apply_t, dual_objective, residual};
use schroedinger_core::model::{build_gibbs_kernel, GibbsSpec};
use schroedinger_core::solvers::{newton_solve, solve, Initialization};
use schroedinger_core::stability::{apriori_bound_scan, lipschitz_experiment};
use schroedinger_core::{
    DiscreteSpace, Family, MarginalFamily, Method, Model, Solution, SolverConfig,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Sinkhorn dual histories and converged solutions gathered across
/// criteria, checked by the duality and monotonicity criteria.
#[derive(Default)]
struct Ledger {
    sinkhorn_duals: Vec<Vec<f64>>,
    converged: Vec<(Model, MarginalFamily, Family)>,
}

impl Ledger {
    fn record(&mut self, model: &Model, mu: &MarginalFamily, sol: &Solution) {
        if sol.report.method_used == Method::Sinkhorn {
            self.sinkhorn_duals.push(sol.report.dual_history.clone());
        }
        if sol.report.converged {
            self.converged
                .push((model.clone(), mu.clone(), sol.potentials.values.clone()));
        }
    }
}

fn config(method: Method) -> SolverConfig {
    SolverConfig {
        method,
        tolerance: 1e-10,
        max_iterations: 100_000,
        ..SolverConfig::default()
    }
}

const PLANTED_INSTANCES: u64 = 20;

fn planted_instance(k: u64) -> common::Planted {
    if k == PLANTED_INSTANCES - 1 {
        // one instance at the largest tensor size in scope
        planted_with(&[20, 20, 20, 20], &mut rng(1_000 + k))
    } else {
        planted(1_000 + k)
    }
}

fn planted_recovery(ledger: &mut Ledger) -> Outcome {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..PLANTED_INSTANCES {
        let p = planted_instance(k);
        for method in [Method::Sinkhorn, Method::Newton, Method::Hybrid] {
            match solve(&p.model, &p.mu, &config(method)) {
                Ok(sol) => {
                    let err = sol.potentials.values.sub(&p.phi).max_abs();
                    worst = worst.max(err);
                    if err > 1e-8 {
                        failures.push(format!("instance {k} {method:?}: error {err:e}"));
                    }
                    ledger.record(&p.model, &p.mu, &sol);
                }
                Err(e) => failures.push(format!("instance {k} {method:?}: {e}")),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} instances x 3 methods, max L-inf error {worst:.2e} {:?}",
            PLANTED_INSTANCES, failures
        ),
    )
}

fn uniqueness(ledger: &mut Ledger) -> Outcome {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..PLANTED_INSTANCES {
        let p = planted(2_000 + k);
        let inits = [
            Initialization::Zero,
            Initialization::Random { amplitude: 3.0 },
            Initialization::Random { amplitude: 3.0 },
        ];
        let mut outputs = Vec::new();
        for (j, init) in inits.into_iter().enumerate() {
            let cfg = SolverConfig {
                init,
                seed: 17 + j as u64,
                randomize_sweep: j == 2,
                ..config(Method::Sinkhorn)
            };
            match solve(&p.model, &p.mu, &cfg) {
                Ok(sol) => {
                    ledger.record(&p.model, &p.mu, &sol);
                    outputs.push(sol.potentials.values);
                }
                Err(e) => failures.push(format!("instance {k} init {j}: {e}")),
            }
        }
        for a in 0..outputs.len() {
            for b in a + 1..outputs.len() {
                let d = outputs[a].sub(&outputs[b]).max_abs();
                worst = worst.max(d);
                if d > 1e-8 {
                    failures.push(format!("instance {k} inits {a},{b}: {d:e}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("3 initializations per instance, max pairwise gap {worst:.2e} {failures:?}"),
    )
}

/// Weighted-L² distance of `h` to the blockwise constants summing to zero.
fn distance_to_analytic_kernel(spaces: &[DiscreteSpace], h: &Family) -> f64 {
    let means: Vec<f64> = spaces
        .iter()
        .zip(&h.0)
        .map(|(s, v)| s.integrate(v) / s.total_weight())
        .collect();
    let mut dist2 = 0.0;
    for ((s, v), c) in spaces.iter().zip(&h.0).zip(&means) {
        let dev: Vec<f64> = v.iter().map(|x| (x - c) * (x - c)).collect();
        dist2 += s.integrate(&dev);
    }
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    dist2 += spaces
        .iter()
        .map(|s| avg * avg * s.total_weight())
        .sum::<f64>();
    dist2.sqrt()
}

fn jacobian_structure() -> Outcome {
    let mut worst_angle = 0.0_f64;
    let mut worst_ratio = f64::INFINITY;
    let mut failures = Vec::new();
    for k in 0..20 {
        let mut r = rng(3_000 + k);
        let sizes = common::random_sizes(&mut r);
        let model = random_model(&sizes, &mut r);
        let phi = random_family(model.spaces(), 2.0, &mut r);
        let n = model.n_marginals();
        let spectrum = build_jacobian(&model, &phi).and_then(|j| j.kernel_spectrum());
        let spectrum = match spectrum {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("pair {k}: {e}"));
                continue;
            }
        };
        // Frobenius bound on the sine of the largest principal angle.
        let frob = spectrum
            .kernel_basis
            .iter()
            .map(|h| distance_to_analytic_kernel(model.spaces(), h).powi(2))
            .sum::<f64>()
            .sqrt();
        let angle = frob.max(spectrum.kernel_angle);
        let ratio = spectrum.smallest_nonzero.unwrap_or(0.0) / spectrum.singular_values[0];
        worst_angle = worst_angle.max(angle);
        worst_ratio = worst_ratio.min(ratio);
        if spectrum.kernel_dim() != n - 1 {
            failures.push(format!(
                "pair {k}: kernel dim {} != {}",
                spectrum.kernel_dim(),
                n - 1
            ));
        }
        if angle > 1e-8 {
            failures.push(format!("pair {k}: angle {angle:e}"));
        }
        if ratio <= 1e-6 {
            failures.push(format!("pair {k}: sigma ratio {ratio:e}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "20 pairs, kernel dim N-1, max angle {worst_angle:.2e}, min sigma ratio {worst_ratio:.2e} {failures:?}"
        ),
    )
}

fn derivative_correctness() -> Outcome {
    let step = 1e-5;
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..20 {
        let mut r = rng(4_000 + k);
        let sizes = common::random_sizes(&mut r);
        let model = random_model(&sizes, &mut r);
        let phi = random_family(model.spaces(), 1.0, &mut r);
        let jac = build_jacobian(&model, &phi).unwrap();
        for d in 0..10 {
            let h = random_family(model.spaces(), 1.0, &mut r);
            let plus = apply_t(&model, &phi.add(&h.scale(step))).unwrap();
            let minus = apply_t(&model, &phi.sub(&h.scale(step))).unwrap();
            let fd = plus.sub(&minus).scale(0.5 / step);
            let an = jac.apply_t_prime(&h).unwrap();
            let rel = fd.sub(&an).max_abs() / an.max_abs();
            worst = worst.max(rel);
            if rel > 1e-6 {
                failures.push(format!("instance {k} direction {d}: {rel:e}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("20 instances x 10 directions, max relative error {worst:.2e} {failures:?}"),
    )
}

fn range_condition() -> Outcome {
    let mut worst_range = 0.0_f64;
    let mut worst_trip = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..20 {
        let mut r = rng(5_000 + k);
        let sizes = common::random_sizes(&mut r);
        let model = random_model(&sizes, &mut r);
        let phi = random_family(model.spaces(), 1.0, &mut r);
        let jac = build_jacobian(&model, &phi).unwrap();
        for d in 0..10 {
            let h = random_family(model.spaces(), 1.0, &mut r);
            let v = jac
                .range_check(&jac.apply_ttilde_prime(&h).unwrap())
                .unwrap();
            worst_range = worst_range.max(v);
            if v > 1e-12 {
                failures.push(format!("instance {k} direction {d}: range {v:e}"));
            }
            let h0 = random_e_direction(model.spaces(), &mut r);
            let back = jac.solve_in_e(&jac.apply_t_prime(&h0).unwrap());
            match back {
                Ok(b) => {
                    let e = b.sub(&h0).max_abs();
                    worst_trip = worst_trip.max(e);
                    if e > 1e-10 {
                        failures.push(format!("instance {k} direction {d}: round trip {e:e}"));
                    }
                }
                Err(e) => failures.push(format!("instance {k} direction {d}: {e}")),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "max range violation {worst_range:.2e}, max round-trip error {worst_trip:.2e} {failures:?}"
        ),
    )
}

fn quadratic_convergence() -> Outcome {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for k in 0..10 {
        let p = planted(6_000 + k);
        let mut r = rng(6_500 + k);
        let dir = random_e_direction(p.model.spaces(), &mut r);
        let init = p.phi.add(&dir.scale(1e-2 / dir.max_abs()));
        let cfg = SolverConfig {
            tolerance: 1e-12,
            ..config(Method::Newton)
        };
        let sol = match newton_solve(&p.model, &p.mu, &cfg, &init) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("instance {k}: {e}"));
                continue;
            }
        };
        let res = &sol.report.residual_history;
        let steps = &sol.report.step_lengths;
        let mut run = 0usize;
        let mut best = 0usize;
        for j in 0..steps.len() {
            let quadratic =
                steps[j] == 1.0 && res[j] > 1e-12 && res[j + 1] <= 10.0 * res[j] * res[j];
            run = if quadratic { run + 1 } else { 0 };
            best = best.max(run);
        }
        summary.push(best);
        if best < 2 {
            failures.push(format!("instance {k}: residuals {res:?}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("longest quadratic full-step runs {summary:?} {failures:?}"),
    )
}

fn strong_duality(ledger: &Ledger) -> Outcome {
    let mut worst_gap = 0.0_f64;
    let mut worst_weak = f64::INFINITY;
    let mut failures = Vec::new();
    for (idx, (model, mu, phi)) in ledger.converged.iter().enumerate() {
        let gap = duality_gap(model, phi, mu).unwrap().abs();
        worst_gap = worst_gap.max(gap);
        if gap > 1e-8 {
            failures.push(format!("solution {idx}: gap {gap:e}"));
        }
    }
    for k in 0..20 {
        let p = planted(7_000 + k);
        let q = product_feasible_coupling(&p.mu, p.model.spaces()).unwrap();
        let h = relative_entropy(&q, p.model.kernel(), p.model.spaces()).unwrap();
        let mut r = rng(7_500 + k);
        for j in 0..10 {
            let phi = random_family(p.model.spaces(), 2.0, &mut r);
            let d = dual_objective(&p.model, &phi, &p.mu).unwrap();
            worst_weak = worst_weak.min(h - d);
            if h < d - 1e-10 {
                failures.push(format!("instance {k} point {j}: H {h} < dual {d}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} solutions, max |gap| {worst_gap:.2e}; weak duality min slack {worst_weak:.2e} {failures:?}",
            ledger.converged.len()
        ),
    )
}

fn sinkhorn_monotonicity(ledger: &Ledger) -> Outcome {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for (idx, hist) in ledger.sinkhorn_duals.iter().enumerate() {
        for w in hist.windows(2) {
            let drop = w[0] - w[1];
            worst = worst.max(drop);
            if drop > 1e-12 {
                failures.push(format!("run {idx}: drop {drop:e}"));
                break;
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} sinkhorn runs, largest dual decrease {worst:.2e} {failures:?}",
            ledger.sinkhorn_duals.len()
        ),
    )
}

/// Classical two-marginal Sinkhorn in scaling-vector form:
/// `u ← μ₁ / (K (v ⊙ m₂))`, `v ← μ₂ / (Kᵀ (u ⊙ m₁))`.
fn scaling_oracle(
    k: &[f64],
    m1: &[f64],
    m2: &[f64],
    mu1: &[f64],
    mu2: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n1, n2) = (m1.len(), m2.len());
    let mut u = vec![1.0; n1];
    let mut v = vec![1.0; n2];
    for _ in 0..1_000_000 {
        for x in 0..n1 {
            let s: f64 = (0..n2).map(|y| k[x * n2 + y] * v[y] * m2[y]).sum();
            u[x] = mu1[x] / s;
        }
        for y in 0..n2 {
            let s: f64 = (0..n1).map(|x| k[x * n2 + y] * u[x] * m1[x]).sum();
            v[y] = mu2[y] / s;
        }
        let err = (0..n1)
            .map(|x| {
                let s: f64 = (0..n2).map(|y| k[x * n2 + y] * v[y] * m2[y]).sum();
                (u[x] * s - mu1[x]).abs() / mu1[x]
            })
            .fold(0.0_f64, f64::max);
        if err < 1e-15 {
            break;
        }
    }
    (u, v)
}

fn two_marginal_oracle(ledger: &mut Ledger) -> Outcome {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..10 {
        let mut r = rng(9_000 + k);
        let sizes = [r.random_range(1..=20usize), r.random_range(1..=20usize)];
        let model = random_model(&sizes, &mut r);
        let spaces = model.spaces();
        let mut dens: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&n| (0..n).map(|_| r.random_range(0.2..5.0)).collect())
            .collect();
        let mass: f64 = spaces[0].integrate(&dens[0]);
        let m2: f64 = spaces[1].integrate(&dens[1]);
        dens[1].iter_mut().for_each(|v| *v *= mass / m2);
        let mu = model
            .marginals(Family(dens.clone()))
            .unwrap()
            .balanced(spaces);
        let kv = model.kernel().linear_values().unwrap();
        let (u, v) = scaling_oracle(
            &kv,
            spaces[0].weights(),
            spaces[1].weights(),
            &mu.densities().0[0],
            &mu.densities().0[1],
        );
        let mut f1: Vec<f64> = u.iter().map(|x| x.ln()).collect();
        let mut f2: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let c = spaces[0].integrate(&f1);
        f1.iter_mut().for_each(|x| *x -= c);
        f2.iter_mut().for_each(|x| *x += c);
        let oracle = Family(vec![f1, f2]);
        for method in [Method::Sinkhorn, Method::Newton] {
            match solve(&model, &mu, &config(method)) {
                Ok(sol) => {
                    let d = sol.potentials.values.sub(&oracle).max_abs();
                    worst = worst.max(d);
                    if d > 1e-8 {
                        failures.push(format!("instance {k} {method:?}: {d:e}"));
                    }
                    ledger.record(&model, &mu, &sol);
                }
                Err(e) => failures.push(format!("instance {k} {method:?}: {e}")),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("10 two-marginal instances, max gap to scaling oracle {worst:.2e} {failures:?}"),
    )
}

fn stability_model() -> Model {
    random_model(&[5, 5, 5], &mut rng(10_000))
}

fn lipschitz_stability() -> Outcome {
    let model = stability_model();
    let report = match lipschitz_experiment(&model, 4.0, 50, 10_001) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let mut failures = Vec::new();
    if report.failures != 0 {
        failures.push(format!("{} solver failures", report.failures));
    }
    if report.pairs.len() != 50 {
        failures.push(format!("{} measured pairs", report.pairs.len()));
    }
    for (k, p) in report.pairs.iter().enumerate() {
        if p.ratio_l2 > 1.05 * p.segment_max_op_norm {
            failures.push(format!(
                "pair {k}: quotient {} > 1.05 x {}",
                p.ratio_l2, p.segment_max_op_norm
            ));
        }
        if !p.ratio_linf.is_finite() {
            failures.push(format!("pair {k}: L-inf quotient not finite"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "50 pairs in band M=4, max quotient/certificate {:.3}, max L-inf quotient {:.3} {failures:?}",
            report.max_mean_value_ratio.unwrap_or(f64::NAN),
            report.max_ratio_linf.unwrap_or(f64::NAN)
        ),
    )
}

fn apriori_bound() -> Outcome {
    let model = stability_model();
    let scans = (
        apriori_bound_scan(&model, 2.0, 30, 11_000),
        apriori_bound_scan(&model, 2.0, 60, 11_000),
    );
    match scans {
        (Ok(a), Ok(b)) => {
            let ok = a.is_finite() && b.is_finite() && b <= 1.2 * a;
            outcome(
                ok,
                format!("sup over 30 samples {a:.4}, over 60 samples {b:.4}"),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("scan failed: {e}")),
    }
}

fn gibbs_stress(ledger: &mut Ledger) -> Outcome {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    let mut runs = 0;
    for (case, sizes) in [vec![15, 15], vec![8, 8, 8]].into_iter().enumerate() {
        let mut r = rng(12_000 + case as u64);
        let spaces: Vec<DiscreteSpace> = sizes.iter().map(|&n| random_space(n, &mut r)).collect();
        let len: usize = sizes.iter().product();
        let mut cost: Vec<f64> = (0..len).map(|_| r.random_range(0.0..1.0)).collect();
        cost[0] = 0.0;
        cost[len - 1] = 1.0;
        let dens: Vec<Vec<f64>> = spaces
            .iter()
            .map(|s| {
                let v: Vec<f64> = (0..s.len()).map(|_| r.random_range(0.5..2.0)).collect();
                let m = s.integrate(&v);
                v.iter().map(|x| x / m).collect()
            })
            .collect();
        for eps in [1.0, 0.5, 0.2, 0.1, 0.05] {
            let kernel = build_gibbs_kernel(&GibbsSpec {
                shape: sizes.clone(),
                cost: cost.clone(),
                epsilon: eps,
            })
            .unwrap();
            let model = Model::new(spaces.clone(), kernel).unwrap();
            let mu = model.marginals(Family(dens.clone())).unwrap();
            let cfg = SolverConfig {
                tolerance: 1e-9,
                max_iterations: 1_000_000,
                ..config(Method::Sinkhorn)
            };
            runs += 1;
            match solve(&model, &mu, &cfg) {
                Ok(sol) => {
                    let rep = &sol.report;
                    let finite = rep.residual_history.iter().all(|v| v.is_finite())
                        && rep.dual_history.iter().all(|v| v.is_finite())
                        && sol.potentials.values.all_finite();
                    let res = residual(&model, &sol.potentials.values, &mu)
                        .unwrap()
                        .norm_linf;
                    worst = worst.max(res);
                    if !finite || res > 1e-8 {
                        failures.push(format!(
                            "N={} eps={eps}: residual {res:e}, finite {finite}",
                            sizes.len()
                        ));
                    }
                    ledger.record(&model, &mu, &sol);
                }
                Err(e) => failures.push(format!("N={} eps={eps}: {e}", sizes.len())),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{runs} runs down to eps=0.05, max residual {worst:.2e} {failures:?}"),
    )
}

fn main() {
    let mut ledger = Ledger::default();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut(&mut Ledger) -> Outcome| {
        let start = Instant::now();
        let o = f(&mut ledger);
        let secs = start.elapsed().as_secs_f64();
        println!(
            "[{}] {id:>2} {name} ({secs:.1}s): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o, secs));
    };
    run(1, "planted-solution recovery", &mut |l| planted_recovery(l));
    run(2, "uniqueness across initializations", &mut |l| {
        uniqueness(l)
    });
    run(3, "jacobian kernel structure", &mut |_| {
        jacobian_structure()
    });
    run(4, "derivative vs finite differences", &mut |_| {
        derivative_correctness()
    });
    run(5, "range condition and E round trip", &mut |_| {
        range_condition()
    });
    run(6, "newton quadratic convergence", &mut |_| {
        quadratic_convergence()
    });
    run(9, "two-marginal scaling oracle", &mut |l| {
        two_marginal_oracle(l)
    });
    run(12, "gibbs stress down to eps=0.05", &mut |l| {
        gibbs_stress(l)
    });
    run(7, "strong and weak duality", &mut |l| strong_duality(l));
    run(8, "sinkhorn dual monotonicity", &mut |l| {
        sinkhorn_monotonicity(l)
    });
    run(10, "lipschitz stability certificate", &mut |_| {
        lipschitz_stability()
    });
    run(11, "a-priori bound under doubling", &mut |_| {
        apriori_bound()
    });

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
