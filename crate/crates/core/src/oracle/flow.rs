//! Successive-shortest-path solver for the second-stage allocation LP.
//!
//! The LP `max sum p_ij f_ij` subject to row sums `<= c_i`, column sums
//! `<= d_j` and `0 <= f_ij <= b_ij` is a max-profit flow on the bipartite
//! graph `source -> supply i -> demand j -> sink` with arc costs `-p_ij`.
//! Leftover supply and demand are simply not routed, so augmentation stops as
//! soon as the cheapest source-sink path has nonnegative cost.
//!
//! Shortest paths are label-correcting Bellman-Ford passes over the dense
//! residual matrix; ties keep the first (lowest-index) label found.

const NONE: usize = usize::MAX;

/// Predecessor of a supply node on the current shortest-path tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SupplyPred {
    Source,
    Demand(usize),
}

/// Reusable buffers for one solver thread.
#[derive(Debug, Clone, Default)]
pub struct FlowWorkspace {
    m: usize,
    n: usize,
    flow: Vec<f64>,
    out: Vec<f64>,
    inflow: Vec<f64>,
    dist_supply: Vec<f64>,
    dist_demand: Vec<f64>,
    pred_supply: Vec<SupplyPred>,
    pred_demand: Vec<usize>,
    cap_eps: f64,
}

/// Read-only view of one allocation problem.
#[derive(Debug, Clone, Copy)]
pub struct FlowProblem<'a> {
    pub capacities: &'a [f64],
    pub demand: &'a [f64],
    /// Row-major `m x n` unit profits.
    pub profit: &'a [f64],
    /// Row-major `m x n` arc upper bounds (zero for absent arcs).
    pub bound: &'a [f64],
}

impl FlowProblem<'_> {
    pub fn m(&self) -> usize {
        self.capacities.len()
    }

    pub fn n(&self) -> usize {
        self.demand.len()
    }

    pub(crate) fn capacity_scale(&self) -> f64 {
        self.capacities
            .iter()
            .chain(self.demand)
            .copied()
            .fold(1.0, f64::max)
    }

    pub(crate) fn profit_scale(&self) -> f64 {
        self.profit.iter().fold(1.0f64, |acc, p| acc.max(p.abs()))
    }
}

/// Node potentials-derived duals of the allocation LP.
#[derive(Debug, Clone)]
pub struct Duals {
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub arc_bound: Vec<f64>,
}

impl FlowWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, m: usize, n: usize) {
        self.m = m;
        self.n = n;
        self.flow.clear();
        self.flow.resize(m * n, 0.0);
        self.out.clear();
        self.out.resize(m, 0.0);
        self.inflow.clear();
        self.inflow.resize(n, 0.0);
        self.dist_supply.resize(m, 0.0);
        self.dist_demand.resize(n, 0.0);
        self.pred_supply.resize(m, SupplyPred::Source);
        self.pred_demand.resize(n, NONE);
    }

    /// Optimal flow of the last solve, row-major.
    pub fn flow(&self) -> &[f64] {
        &self.flow
    }

    /// Solves the allocation LP and returns its optimal objective.
    pub fn solve(&mut self, problem: &FlowProblem<'_>) -> f64 {
        let (m, n) = (problem.m(), problem.n());
        debug_assert_eq!(problem.profit.len(), m * n);
        debug_assert_eq!(problem.bound.len(), m * n);
        self.reset(m, n);
        self.cap_eps = 1e-9 * problem.capacity_scale();
        let cost_eps = 1e-12 * problem.profit_scale();

        // every augmentation saturates at least one residual arc; this cap only
        // guards against floating-point pathologies
        let max_augmentations = 4 * (m * n + m + n) + 16;
        for _ in 0..max_augmentations {
            let Some((sink_node, path_cost)) = self.shortest_path(problem, cost_eps) else {
                break;
            };
            if path_cost >= -cost_eps {
                break;
            }
            self.augment(problem, sink_node);
        }

        let mut objective = 0.0;
        for (f, p) in self.flow.iter().zip(problem.profit) {
            if *f != 0.0 {
                objective += f * p;
            }
        }
        objective
    }

    /// Label-correcting shortest path from the source; returns the best
    /// demand node with spare demand and its distance.
    fn shortest_path(&mut self, problem: &FlowProblem<'_>, cost_eps: f64) -> Option<(usize, f64)> {
        let (m, n) = (self.m, self.n);
        let eps = self.cap_eps;
        let mut any_source = false;
        for i in 0..m {
            if problem.capacities[i] - self.out[i] > eps {
                self.dist_supply[i] = 0.0;
                any_source = true;
            } else {
                self.dist_supply[i] = f64::INFINITY;
            }
            self.pred_supply[i] = SupplyPred::Source;
        }
        if !any_source {
            return None;
        }
        self.dist_demand.iter_mut().for_each(|d| *d = f64::INFINITY);
        self.pred_demand.iter_mut().for_each(|p| *p = NONE);

        let tol = cost_eps;
        for _pass in 0..(m + n + 1) {
            let mut changed = false;
            for i in 0..m {
                let di = self.dist_supply[i];
                if di == f64::INFINITY {
                    continue;
                }
                let row = i * n;
                for j in 0..n {
                    let k = row + j;
                    if problem.bound[k] - self.flow[k] > eps {
                        let cand = di - problem.profit[k];
                        if cand < self.dist_demand[j] - tol {
                            self.dist_demand[j] = cand;
                            self.pred_demand[j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                let dj = self.dist_demand[j];
                if dj == f64::INFINITY {
                    continue;
                }
                for i in 0..m {
                    let k = i * n + j;
                    if self.flow[k] > eps {
                        let cand = dj + problem.profit[k];
                        if cand < self.dist_supply[i] - tol {
                            self.dist_supply[i] = cand;
                            self.pred_supply[i] = SupplyPred::Demand(j);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if problem.demand[j] - self.inflow[j] > eps {
                let dj = self.dist_demand[j];
                if dj < f64::INFINITY && best.is_none_or(|(_, b)| dj < b) {
                    best = Some((j, dj));
                }
            }
        }
        best
    }

    fn augment(&mut self, problem: &FlowProblem<'_>, sink_node: usize) {
        let n = self.n;
        let mut delta = problem.demand[sink_node] - self.inflow[sink_node];
        // walk back to the source to find the bottleneck
        let mut j = sink_node;
        let mut steps = 0;
        let origin = loop {
            let i = self.pred_demand[j];
            let k = i * n + j;
            delta = delta.min(problem.bound[k] - self.flow[k]);
            match self.pred_supply[i] {
                SupplyPred::Source => break i,
                SupplyPred::Demand(prev) => {
                    delta = delta.min(self.flow[i * n + prev]);
                    j = prev;
                }
            }
            steps += 1;
            debug_assert!(steps <= self.m + self.n, "cycle in shortest-path tree");
        };
        delta = delta.min(problem.capacities[origin] - self.out[origin]);
        debug_assert!(delta > 0.0);

        self.inflow[sink_node] += delta;
        self.out[origin] += delta;
        let mut j = sink_node;
        loop {
            let i = self.pred_demand[j];
            let k = i * n + j;
            self.flow[k] = (self.flow[k] + delta).min(problem.bound[k]);
            match self.pred_supply[i] {
                SupplyPred::Source => break,
                SupplyPred::Demand(prev) => {
                    let kb = i * n + prev;
                    self.flow[kb] = (self.flow[kb] - delta).max(0.0);
                    j = prev;
                }
            }
        }
    }

    /// Optimal duals for the last solve.
    ///
    /// Potentials are computed on the residual graph with source and sink
    /// merged into one ground node; optimality means that graph has no
    /// negative cycle. The potentials translate into nonnegative LP duals that
    /// satisfy complementary slackness with the stored flow.
    pub fn duals(&self, problem: &FlowProblem<'_>) -> Duals {
        let (m, n) = (self.m, self.n);
        let eps = self.cap_eps;
        let tol = 1e-12 * problem.profit_scale();
        let mut ground = 0.0f64;
        let mut pot_s = vec![0.0f64; m];
        let mut pot_d = vec![0.0f64; n];
        let relax = |target: &mut f64, cand: f64| -> bool {
            if cand < *target - tol {
                *target = cand;
                true
            } else {
                false
            }
        };
        for _pass in 0..(m + n + 2) {
            let mut changed = false;
            for i in 0..m {
                if problem.capacities[i] - self.out[i] > eps {
                    changed |= relax(&mut pot_s[i], ground);
                }
                if self.out[i] > eps {
                    changed |= relax(&mut ground, pot_s[i]);
                }
            }
            for j in 0..n {
                if problem.demand[j] - self.inflow[j] > eps {
                    changed |= relax(&mut ground, pot_d[j]);
                }
                if self.inflow[j] > eps {
                    changed |= relax(&mut pot_d[j], ground);
                }
            }
            for i in 0..m {
                for j in 0..n {
                    let k = i * n + j;
                    if problem.bound[k] - self.flow[k] > eps {
                        changed |= relax(&mut pot_d[j], pot_s[i] - problem.profit[k]);
                    }
                    if self.flow[k] > eps {
                        changed |= relax(&mut pot_s[i], pot_d[j] + problem.profit[k]);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let supply: Vec<f64> = pot_s.iter().map(|&p| (p - ground).max(0.0)).collect();
        let demand: Vec<f64> = pot_d.iter().map(|&p| (ground - p).max(0.0)).collect();
        let mut arc_bound = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let k = i * n + j;
                arc_bound[k] = (problem.profit[k] - supply[i] - demand[j]).max(0.0);
            }
        }
        Duals {
            supply,
            demand,
            arc_bound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(c: &[f64], d: &[f64], p: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
        let mut ws = FlowWorkspace::new();
        let prob = FlowProblem {
            capacities: c,
            demand: d,
            profit: p,
            bound: b,
        };
        let obj = ws.solve(&prob);
        (obj, ws.flow().to_vec())
    }

    #[test]
    fn two_by_two_diagonal_optimum() {
        let (obj, flow) = solve(&[1.0, 1.0], &[1.0, 1.0], &[2.0, 1.0, 1.0, 2.0], &[1.0; 4]);
        assert!((obj - 4.0).abs() < 1e-12);
        assert_eq!(flow, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rerouting_through_a_backward_arc() {
        // greedy first path takes (0,0); the optimum needs (0,1) + (1,0)
        let p = [3.0, 2.0, 2.0, 0.0];
        let (obj, flow) = solve(&[1.0, 1.0], &[1.0, 1.0], &p, &[1.0, 1.0, 1.0, 0.0]);
        assert!((obj - 4.0).abs() < 1e-12, "{obj} {flow:?}");
    }

    #[test]
    fn negative_profit_arcs_stay_empty() {
        let (obj, flow) = solve(&[5.0], &[5.0], &[-1.0], &[5.0]);
        assert_eq!(obj, 0.0);
        assert_eq!(flow, vec![0.0]);
    }

    #[test]
    fn empty_bounds_give_zero() {
        let (obj, _) = solve(&[3.0, 4.0], &[2.0, 2.0], &[1.0; 4], &[0.0; 4]);
        assert_eq!(obj, 0.0);
    }
}
