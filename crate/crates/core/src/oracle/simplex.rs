//! Dense tableau simplex for the allocation LP, used to cross-check the flow solver.
//!
//! All constraints are `<=` with nonnegative right-hand sides, so the slack
//! basis is feasible and no phase one is needed. Bland's rule guarantees
//! termination on degenerate problems.

use super::flow::{Duals, FlowProblem};

const PIVOT_TOL: f64 = 1e-12;

pub struct SimplexOutcome {
    pub objective: f64,
    pub flow: Vec<f64>,
    pub duals: Duals,
}

pub fn solve(problem: &FlowProblem<'_>) -> SimplexOutcome {
    let (m, n) = (problem.m(), problem.n());
    // only arcs with a positive bound can carry flow
    let vars: Vec<usize> = (0..m * n).filter(|&k| problem.bound[k] > 0.0).collect();
    let nv = vars.len();
    let rows = m + n + nv;
    let cols = nv + rows + 1; // structural, slack, rhs
    let rhs = cols - 1;
    let mut t = vec![0.0f64; (rows + 1) * cols];
    let at = |r: usize, c: usize| r * cols + c;

    for (v, &k) in vars.iter().enumerate() {
        let (i, j) = (k / n, k % n);
        t[at(i, v)] = 1.0;
        t[at(m + j, v)] = 1.0;
        t[at(m + n + v, v)] = 1.0;
    }
    for r in 0..rows {
        t[at(r, nv + r)] = 1.0;
    }
    for i in 0..m {
        t[at(i, rhs)] = problem.capacities[i];
    }
    for j in 0..n {
        t[at(m + j, rhs)] = problem.demand[j];
    }
    for (v, &k) in vars.iter().enumerate() {
        t[at(m + n + v, rhs)] = problem.bound[k];
        t[at(rows, v)] = -problem.profit[k];
    }
    let mut basis: Vec<usize> = (nv..nv + rows).collect();

    loop {
        // Bland: lowest-index column with negative reduced cost
        let Some(enter) = (0..cols - 1).find(|&c| t[at(rows, c)] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let a = t[at(r, enter)];
            if a > PIVOT_TOL {
                let ratio = t[at(r, rhs)] / a;
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - PIVOT_TOL
                            || (ratio <= lratio + PIVOT_TOL && basis[r] < basis[lr])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let (pr, _) = leave.expect("allocation LP is bounded");
        let piv = t[at(pr, enter)];
        for c in 0..cols {
            t[at(pr, c)] /= piv;
        }
        for r in 0..=rows {
            if r == pr {
                continue;
            }
            let factor = t[at(r, enter)];
            if factor != 0.0 {
                for c in 0..cols {
                    t[at(r, c)] -= factor * t[at(pr, c)];
                }
            }
        }
        basis[pr] = enter;
    }

    let mut x = vec![0.0; nv];
    for (r, &b) in basis.iter().enumerate() {
        if b < nv {
            x[b] = t[at(r, rhs)];
        }
    }
    let mut flow = vec![0.0; m * n];
    for (v, &k) in vars.iter().enumerate() {
        flow[k] = x[v];
    }
    // reduced costs of slack columns are the optimal duals
    let supply: Vec<f64> = (0..m).map(|i| t[at(rows, nv + i)].max(0.0)).collect();
    let demand: Vec<f64> = (0..n).map(|j| t[at(rows, nv + m + j)].max(0.0)).collect();
    let mut arc_bound: Vec<f64> = (0..m * n)
        .map(|k| (problem.profit[k] - supply[k / n] - demand[k % n]).max(0.0))
        .collect();
    for (v, &k) in vars.iter().enumerate() {
        arc_bound[k] = t[at(rows, nv + m + n + v)].max(0.0);
    }
    SimplexOutcome {
        objective: t[at(rows, rhs)],
        flow,
        duals: Duals {
            supply,
            demand,
            arc_bound,
        },
    }
}
