#![allow(dead_code)]

use flexdesign::instance::{DemandModel, DemandSample, FlexNetwork, Instance, Matrix};
use flexdesign::oracle::FlowSolution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random small instance with deterministic demand; profits may be negative.
pub fn random_instance(rng: &mut ChaCha8Rng, max_m: usize, max_n: usize) -> Instance {
    let m = rng.random_range(1..=max_m);
    let n = rng.random_range(1..=max_n);
    let capacities: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..10.0)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let profit = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..5.0));
    let cost = Matrix::from_fn(m, n, |_, _| rng.random_range(0.0..3.0));
    Instance::new(capacities, DemandModel::deterministic(mu), profit, cost, m * n).unwrap()
}

pub fn random_network(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> FlexNetwork {
    FlexNetwork::from_mask(m, n, (0..m * n).map(|_| rng.random_bool(density)).collect())
}

pub fn random_demand(rng: &mut ChaCha8Rng, n: usize) -> DemandSample {
    DemandSample {
        d: (0..n).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) }).collect(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest violation of primal feasibility, strong duality, dual feasibility
/// and complementary slackness, scaled by problem magnitude.
pub fn optimality_violation(inst: &Instance, d: &DemandSample, sol: &FlowSolution) -> f64 {
    let (m, n) = (inst.m, inst.n);
    let scale = 1.0
        + inst.capacities.iter().chain(&d.d).fold(0.0f64, |a, &b| a.max(b))
            * inst.unit_profit.as_slice().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut worst = 0.0f64;
    let mut bump = |v: f64| worst = worst.max(v);
    for i in 0..m {
        let row: f64 = (0..n).map(|j| sol.flow.get(i, j)).sum();
        bump(row - inst.capacities[i]);
        bump(-sol.duals_supply[i]);
        if sol.duals_supply[i] > 1e-9 {
            bump((inst.capacities[i] - row).abs() * sol.duals_supply[i]);
        }
    }
    for j in 0..n {
        let col: f64 = (0..m).map(|i| sol.flow.get(i, j)).sum();
        bump(col - d.d[j]);
        bump(-sol.duals_demand[j]);
        if sol.duals_demand[j] > 1e-9 {
            bump((d.d[j] - col).abs() * sol.duals_demand[j]);
        }
    }
    for i in 0..m {
        for j in 0..n {
            let f = sol.flow.get(i, j);
            let b = sol.arc_bound.get(i, j);
            let y = sol.duals_arc_bound.get(i, j);
            let p = inst.unit_profit.get(i, j);
            bump(-f);
            bump(f - b);
            bump(-y);
            let reduced = sol.duals_supply[i] + sol.duals_demand[j] + y - p;
            bump(-reduced);
            if f > 1e-9 {
                bump(reduced.abs() * f);
            }
            if y > 1e-9 {
                bump((b - f).abs() * y);
            }
        }
    }
    let dual = sol.dual_objective(&inst.capacities, &d.d);
    bump((dual - sol.objective).abs());
    worst / scale
}

/// Random tanh MLP with 1 to 3 layers, widths up to 8 and nonzero biases.
pub fn random_mlp(rng: &mut ChaCha8Rng) -> flexdesign::nn::Mlp {
    let depth = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=8)).collect();
    let mut net = flexdesign::nn::Mlp::new(&sizes, 1.0, rng.random());
    let flat: Vec<f64> = net.to_flat().iter().map(|w| w + rng.random_range(-0.5..0.5)).collect();
    net.set_flat(&flat).unwrap();
    net
}

/// Largest relative error between the analytic gradient of `<net(x), c>` and
/// central finite differences with step 1e-5.
pub fn finite_difference_error(net: &flexdesign::nn::Mlp, input: &[f64], cotangent: &[f64]) -> f64 {
    let analytic = net.backward(input, cotangent).unwrap().to_flat();
    let base = net.to_flat();
    let objective = |flat: &[f64]| -> f64 {
        let mut probe = net.clone();
        probe.set_flat(flat).unwrap();
        probe.forward(input).unwrap().iter().zip(cotangent).map(|(o, c)| o * c).sum()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for p in 0..base.len() {
        probe[p] = base[p] + h;
        let up = objective(&probe);
        probe[p] = base[p] - h;
        let down = objective(&probe);
        probe[p] = base[p];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[p].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[p] - numeric).abs() / denom);
    }
    worst
}
