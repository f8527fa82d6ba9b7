//! Second-stage profit oracle `P(d, F)` and the sample-average estimators built on it.

mod ascent;
pub mod flow;
pub mod simplex;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{DemandSample, FlexNetwork, Instance, Matrix, SampleSet};
use crate::par;
use flow::{FlowProblem, FlowWorkspace};

pub use ascent::{maximize_relaxation, AscentOptions, AscentResult, RelaxationDomain};

/// Which LP engine evaluates `P(d, F)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Successive shortest paths on the transportation graph.
    #[default]
    Flow,
    /// Dense tableau simplex.
    Reference,
}

/// Optimal allocation with primal and dual information.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub flow: Matrix,
    pub objective: f64,
    pub duals_supply: Vec<f64>,
    pub duals_demand: Vec<f64>,
    pub duals_arc_bound: Matrix,
    /// The arc bounds `M_ij F_ij` the solve used.
    pub arc_bound: Matrix,
}

impl FlowSolution {
    /// Objective of the dual LP at the stored duals.
    pub fn dual_objective(&self, capacities: &[f64], demand: &[f64]) -> f64 {
        let s: f64 = capacities.iter().zip(&self.duals_supply).map(|(c, u)| c * u).sum();
        let d: f64 = demand.iter().zip(&self.duals_demand).map(|(d, v)| d * v).sum();
        let b: f64 = self
            .arc_bound
            .as_slice()
            .iter()
            .zip(self.duals_arc_bound.as_slice())
            .map(|(b, y)| b * y)
            .sum();
        s + d + b
    }
}

/// Sample-average settings for the terminal-profit estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub omega: usize,
    /// Subtract the full-flexibility profit sample by sample.
    pub variance_reduction: bool,
}

thread_local! {
    static WORKSPACE: RefCell<FlowWorkspace> = RefCell::new(FlowWorkspace::new());
}

/// Tight arc bound `min(c_i, d_j)` scaled by the (possibly fractional) selection.
fn arc_bounds(instance: &Instance, demand: &[f64], selection: impl Fn(usize) -> f64, out: &mut Vec<f64>) {
    let n = instance.n;
    out.clear();
    out.extend((0..instance.m * n).map(|k| {
        let s = selection(k);
        if s == 0.0 {
            0.0
        } else {
            s * instance.capacities[k / n].min(demand[k % n])
        }
    }));
}

fn check_demand(instance: &Instance, demand: &DemandSample) {
    assert_eq!(demand.d.len(), instance.n, "demand vector length must equal n");
}

fn profit_with_bounds(instance: &Instance, demand: &[f64], bound: &[f64]) -> f64 {
    let problem = FlowProblem {
        capacities: &instance.capacities,
        demand,
        profit: instance.unit_profit.as_slice(),
        bound,
    };
    WORKSPACE.with(|ws| ws.borrow_mut().solve(&problem))
}

/// Optimal second-stage profit `P(d, F)` (objective only, flow engine).
pub fn profit(instance: &Instance, demand: &DemandSample, network: &FlexNetwork) -> f64 {
    check_demand(instance, demand);
    thread_local! {
        static BOUND: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
    }
    BOUND.with(|b| {
        let mut bound = b.borrow_mut();
        arc_bounds(instance, &demand.d, |k| if network.has(k) { 1.0 } else { 0.0 }, &mut bound);
        profit_with_bounds(instance, &demand.d, &bound)
    })
}

/// Solves the allocation LP for an arbitrary selection in `[0, 1]^{m x n}` with the chosen engine.
pub fn solve_fractional_with(
    engine: Engine,
    instance: &Instance,
    demand: &DemandSample,
    selection: &[f64],
) -> FlowSolution {
    check_demand(instance, demand);
    assert_eq!(selection.len(), instance.arcs(), "selection must have m*n entries");
    let (m, n) = (instance.m, instance.n);
    let mut bound = Vec::new();
    arc_bounds(instance, &demand.d, |k| selection[k], &mut bound);
    let problem = FlowProblem {
        capacities: &instance.capacities,
        demand: &demand.d,
        profit: instance.unit_profit.as_slice(),
        bound: &bound,
    };
    let (objective, flow, duals) = match engine {
        Engine::Flow => {
            let mut ws = FlowWorkspace::new();
            let objective = ws.solve(&problem);
            let duals = ws.duals(&problem);
            (objective, ws.flow().to_vec(), duals)
        }
        Engine::Reference => {
            let out = simplex::solve(&problem);
            (out.objective, out.flow, out.duals)
        }
    };
    let to_matrix = |v: &[f64]| Matrix::from_fn(m, n, |i, j| v[i * n + j]);
    FlowSolution {
        flow: to_matrix(&flow),
        objective,
        duals_supply: duals.supply,
        duals_demand: duals.demand,
        duals_arc_bound: to_matrix(&duals.arc_bound),
        arc_bound: to_matrix(&bound),
    }
}

fn network_selection(network: &FlexNetwork) -> Vec<f64> {
    network.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Optimal allocation for a binary network with the chosen engine.
pub fn solve_profit_with(engine: Engine, instance: &Instance, demand: &DemandSample, network: &FlexNetwork) -> FlowSolution {
    solve_fractional_with(engine, instance, demand, &network_selection(network))
}

/// Optimal allocation, with duals, on the flow engine.
pub fn solve_profit(instance: &Instance, demand: &DemandSample, network: &FlexNetwork) -> FlowSolution {
    solve_profit_with(Engine::Flow, instance, demand, network)
}

/// Dense-simplex cross-check of [`solve_profit`].
pub fn solve_profit_reference(instance: &Instance, demand: &DemandSample, network: &FlexNetwork) -> FlowSolution {
    solve_profit_with(Engine::Reference, instance, demand, network)
}

/// `P(d, 1)`: profit with every arc available.
pub fn full_flex_profit(instance: &Instance, demand: &DemandSample) -> f64 {
    profit(instance, demand, &instance.full_network())
}

/// Per-sample profits `P(d^w, F)` over `samples`, in sample order.
pub fn sample_profits(instance: &Instance, network: &FlexNetwork, samples: &[DemandSample]) -> Vec<f64> {
    par::map(samples, |d| profit(instance, d, network))
}

/// Per-sample estimator terms: `P(d^w, F)` or, with variance reduction, `P(d^w, F) - P(d^w, 1)`.
pub fn estimator_terms(instance: &Instance, network: &FlexNetwork, samples: &[DemandSample], variance_reduction: bool) -> Vec<f64> {
    let full = instance.full_network();
    par::map(samples, |d| {
        let p = profit(instance, d, network);
        if variance_reduction {
            p - profit(instance, d, &full)
        } else {
            p
        }
    })
}

/// Ordered mean, so results do not depend on thread scheduling.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample-average estimate of `E[P(d, F)]` over the first `omega` samples (optionally variance-reduced).
pub fn estimate_expected_profit(
    instance: &Instance,
    network: &FlexNetwork,
    samples: &SampleSet,
    config: EstimatorConfig,
) -> Result<f64> {
    if config.omega == 0 {
        return Err(Error::invalid("omega", "must be at least 1"));
    }
    instance.check_network(network)?;
    let head = samples.head(config.omega)?;
    Ok(mean(&estimator_terms(instance, network, head, config.variance_reduction)))
}

/// Estimated design objective: mean profit over `omega` samples minus installation cost.
pub fn fdp_objective_estimate(instance: &Instance, network: &FlexNetwork, samples: &SampleSet, omega: usize) -> Result<f64> {
    let config = EstimatorConfig {
        omega,
        variance_reduction: false,
    };
    Ok(estimate_expected_profit(instance, network, samples, config)? - network.installation_cost(&instance.arc_cost))
}

/// Mean and standard error of the design objective over all samples.
pub fn objective_with_stderr(instance: &Instance, network: &FlexNetwork, samples: &SampleSet) -> Result<(f64, f64)> {
    instance.check_network(network)?;
    if samples.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, available: 0 });
    }
    let terms = sample_profits(instance, network, &samples.samples);
    let mu = mean(&terms);
    let k = terms.len() as f64;
    let stderr = if terms.len() > 1 {
        let var = terms.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok((mu - network.installation_cost(&instance.arc_cost), stderr))
}

/// Supergradient of `F -> P(d, F * M)` at a fractional selection: `M_ij y_ij` with `y` the arc-bound duals.
pub fn profit_subgradient(instance: &Instance, demand: &DemandSample, selection: &[f64]) -> Matrix {
    let (_, grad) = profit_and_subgradient(instance, demand, selection);
    Matrix::from_fn(instance.m, instance.n, |i, j| grad[i * instance.n + j])
}

/// `P(d, F * M)` together with its supergradient, flattened.
pub fn profit_and_subgradient(instance: &Instance, demand: &DemandSample, selection: &[f64]) -> (f64, Vec<f64>) {
    check_demand(instance, demand);
    let n = instance.n;
    let mut bound = Vec::new();
    arc_bounds(instance, &demand.d, |k| selection[k], &mut bound);
    let problem = FlowProblem {
        capacities: &instance.capacities,
        demand: &demand.d,
        profit: instance.unit_profit.as_slice(),
        bound: &bound,
    };
    WORKSPACE.with(|ws| {
        let mut ws = ws.borrow_mut();
        let value = ws.solve(&problem);
        let duals = ws.duals(&problem);
        let grad = duals
            .arc_bound
            .iter()
            .enumerate()
            .map(|(k, y)| y * instance.capacities[k / n].min(demand.d[k % n]))
            .collect();
        (value, grad)
    })
}

/// Result of the continuous relaxation bound.
#[derive(Debug, Clone)]
pub struct UpperBound {
    /// Certified upper bound on the relaxation optimum (hence on every design).
    pub value: f64,
    /// Best relaxation objective reached by the ascent.
    pub best_objective: f64,
    /// Fractional selection attaining `best_objective`.
    pub selection: Vec<f64>,
    pub iterations: usize,
}

/// Upper bound on the design objective from the relaxation that drops integrality and the budget.
///
/// Maximizes `mean_w P(d^w, F * M^w) - sum I_ij F_ij` over `F` in `[0, 1]^{m x n}`
/// by projected supergradient ascent from `F = 1`. Each iterate `F` with
/// supergradient `g` certifies `h(F) + max_{F'} g . (F' - F)` as an upper
/// bound; the smallest certificate is returned.
pub fn lp_upper_bound(instance: &Instance, samples: &SampleSet, omega: usize) -> Result<UpperBound> {
    if omega == 0 {
        return Err(Error::invalid("omega", "must be at least 1"));
    }
    let head = samples.head(omega)?;
    let domain = RelaxationDomain {
        lower: vec![0.0; instance.arcs()],
        budget: None,
    };
    let options = AscentOptions {
        max_iterations: 5000,
        window: 50,
        rel_improvement: 1e-6,
        ..AscentOptions::default()
    };
    let start = vec![1.0; instance.arcs()];
    let res = maximize_relaxation(instance, head, &domain, start, &options);
    Ok(UpperBound {
        value: res.upper_bound,
        best_objective: res.best_value,
        selection: res.best_point,
        iterations: res.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{DemandModel, Instance, Matrix};

    fn small(c: Vec<f64>, mu: Vec<f64>, p: Vec<Vec<f64>>, cost: Vec<Vec<f64>>, k: usize) -> Instance {
        let (m, n) = (c.len(), mu.len());
        Instance::new(
            c,
            DemandModel::deterministic(mu),
            Matrix::from_rows("p", &p, m, n).unwrap(),
            Matrix::from_rows("i", &cost, m, n).unwrap(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn empty_network_and_zero_demand() {
        let inst = small(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![vec![0.0; 2]; 2], 4);
        let d = DemandSample { d: vec![1.0, 1.0] };
        let sol = solve_profit(&inst, &d, &inst.empty_network());
        assert_eq!(sol.objective, 0.0);
        assert!(sol.flow.as_slice().iter().all(|&f| f == 0.0));
        let zero = DemandSample { d: vec![0.0, 0.0] };
        assert_eq!(solve_profit(&inst, &zero, &inst.full_network()).objective, 0.0);
        assert_eq!(full_flex_profit(&inst, &zero), 0.0);
    }

    #[test]
    fn two_by_two_full_network() {
        let inst = small(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![vec![0.0; 2]; 2], 4);
        let d = DemandSample { d: vec![1.0, 1.0] };
        for engine in [Engine::Flow, Engine::Reference] {
            let sol = solve_profit_with(engine, &inst, &d, &inst.full_network());
            assert!((sol.objective - 4.0).abs() < 1e-12);
            assert!((sol.flow.get(0, 0) - 1.0).abs() < 1e-12);
            assert!((sol.flow.get(1, 1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_by_one_binding_bound_has_unit_supergradient() {
        let inst = small(vec![2.0], vec![1.0], vec![vec![1.0]], vec![vec![0.0]], 1);
        let d = DemandSample { d: vec![1.0] };
        let g = profit_subgradient(&inst, &d, &[0.3]);
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_network_supergradient_vanishes_on_slack_arcs() {
        let inst = small(vec![5.0, 5.0], vec![3.0, 3.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![vec![0.0; 2]; 2], 4);
        let d = DemandSample { d: vec![3.0, 3.0] };
        let sol = solve_profit(&inst, &d, &inst.full_network());
        let g = profit_subgradient(&inst, &d, &[1.0; 4]);
        for k in 0..4 {
            if sol.flow.as_slice()[k] < sol.arc_bound.as_slice()[k] - 1e-9 {
                assert_eq!(g.as_slice()[k], 0.0);
            }
        }
    }

    #[test]
    fn estimator_identities() {
        let inst = crate::instance::build_fashion_scenario(10).unwrap();
        let samples = inst.sample(3, 40);
        let full = inst.full_network();
        let vr = EstimatorConfig { omega: 40, variance_reduction: true };
        let raw = EstimatorConfig { omega: 40, variance_reduction: false };
        assert_eq!(estimate_expected_profit(&inst, &full, &samples, vr).unwrap(), 0.0);

        let net = FlexNetwork::from_arcs(10, 10, &(0..10).map(|i| (i, i)).collect::<Vec<_>>()).unwrap();
        let a = estimate_expected_profit(&inst, &net, &samples, vr).unwrap();
        let b = estimate_expected_profit(&inst, &full, &samples, raw).unwrap();
        let c = estimate_expected_profit(&inst, &net, &samples, raw).unwrap();
        assert!((a + b - c).abs() <= 1e-12 * c.abs());

        assert!(matches!(
            estimate_expected_profit(&inst, &net, &samples, EstimatorConfig { omega: 41, variance_reduction: false }),
            Err(Error::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn single_sample_estimate_equals_solve() {
        let inst = small(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![vec![0.0; 2]; 2], 4);
        let samples = inst.sample(0, 1);
        let net = FlexNetwork::from_arcs(2, 2, &[(0, 1), (1, 1)]).unwrap();
        let cfg = EstimatorConfig { omega: 1, variance_reduction: false };
        let est = estimate_expected_profit(&inst, &net, &samples, cfg).unwrap();
        assert_eq!(est, solve_profit(&inst, &samples.samples[0], &net).objective);
    }

    #[test]
    fn objective_subtracts_installation_costs() {
        // single arc, deterministic demand: p * min(c, d) - I
        let inst = small(vec![4.0, 1.0], vec![3.0, 2.0], vec![vec![2.5, 1.0], vec![1.0, 1.0]], vec![vec![1.5, 0.0], vec![0.0, 0.0]], 2);
        let samples = inst.sample(1, 3);
        let net = FlexNetwork::from_arcs(2, 2, &[(0, 0)]).unwrap();
        let obj = fdp_objective_estimate(&inst, &net, &samples, 3).unwrap();
        assert!((obj - (2.5 * 3.0 - 1.5)).abs() < 1e-12);
        assert_eq!(fdp_objective_estimate(&inst, &inst.empty_network(), &samples, 3).unwrap(), 0.0);
    }

    #[test]
    fn costless_bound_is_full_flex_average() {
        let inst = crate::instance::build_auto_scenario(16).unwrap();
        let samples = inst.sample(9, 30);
        let bound = lp_upper_bound(&inst, &samples, 30).unwrap();
        let full = estimate_expected_profit(&inst, &inst.full_network(), &samples, EstimatorConfig { omega: 30, variance_reduction: false }).unwrap();
        assert!((bound.value - full).abs() <= 1e-9 * full);
    }
}
