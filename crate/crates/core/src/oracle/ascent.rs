//! Projected supergradient ascent on the continuous design relaxation
//! `h(F) = mean_w P(d^w, F * M^w) - sum I_ij F_ij`.

use crate::instance::{DemandSample, Instance};
use crate::par;

/// Feasible set `{ lower <= F <= 1, sum F <= budget }`.
#[derive(Debug, Clone)]
pub struct RelaxationDomain {
    pub lower: Vec<f64>,
    pub budget: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AscentOptions {
    pub max_iterations: usize,
    /// Stop when the best value gained less than `rel_improvement` (relative) over this many iterations.
    pub window: usize,
    pub rel_improvement: f64,
    /// Step length in the sup-norm at iteration 0; decays as `1 / sqrt(1 + k)`.
    pub initial_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            max_iterations: 2000,
            window: 100,
            rel_improvement: 1e-5,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Smallest certified upper bound on `max h` seen along the way.
    pub upper_bound: f64,
    pub iterations: usize,
}

impl RelaxationDomain {
    /// Euclidean projection: coordinate clamp, then a water-filling shift if the sum is over budget.
    pub fn project(&self, x: &mut [f64]) {
        for (v, &lo) in x.iter_mut().zip(&self.lower) {
            *v = v.clamp(lo, 1.0);
        }
        let Some(budget) = self.budget else { return };
        let total: f64 = x.iter().sum();
        if total <= budget {
            return;
        }
        let shifted_sum = |tau: f64| -> f64 {
            x.iter()
                .zip(&self.lower)
                .map(|(&v, &lo)| (v - tau).clamp(lo, 1.0))
                .sum()
        };
        let (mut lo_tau, mut hi_tau) = (0.0, 1.0);
        while shifted_sum(hi_tau) > budget {
            hi_tau *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo_tau + hi_tau);
            if shifted_sum(mid) > budget {
                lo_tau = mid;
            } else {
                hi_tau = mid;
            }
        }
        for (v, &lo) in x.iter_mut().zip(&self.lower) {
            *v = (*v - hi_tau).clamp(lo, 1.0);
        }
    }

    /// `max g . F'` over the domain (a fractional knapsack with unit weights).
    pub fn linear_max(&self, g: &[f64]) -> f64 {
        let base: f64 = g.iter().zip(&self.lower).map(|(g, lo)| g * lo).sum();
        match self.budget {
            None => base + g.iter().zip(&self.lower).map(|(g, lo)| g.max(0.0) * (1.0 - lo)).sum::<f64>(),
            Some(budget) => {
                let mut room = budget - self.lower.iter().sum::<f64>();
                let mut order: Vec<usize> = (0..g.len()).filter(|&k| g[k] > 0.0).collect();
                order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
                let mut value = base;
                for k in order {
                    if room <= 0.0 {
                        break;
                    }
                    let take = (1.0 - self.lower[k]).min(room);
                    value += g[k] * take;
                    room -= take;
                }
                value
            }
        }
    }
}

/// Relaxation objective and supergradient at `point`.
pub(crate) fn evaluate(instance: &Instance, samples: &[DemandSample], point: &[f64]) -> (f64, Vec<f64>) {
    let per_sample = par::map(samples, |d| super::profit_and_subgradient(instance, d, point));
    let scale = 1.0 / samples.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; point.len()];
    for (v, g) in &per_sample {
        value += v;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    value *= scale;
    let cost = instance.arc_cost.as_slice();
    for (k, acc) in grad.iter_mut().enumerate() {
        *acc = *acc * scale - cost[k];
        value -= cost[k] * point[k];
    }
    (value, grad)
}

/// Maximizes the relaxation over `domain` starting from `start`.
pub fn maximize_relaxation(
    instance: &Instance,
    samples: &[DemandSample],
    domain: &RelaxationDomain,
    start: Vec<f64>,
    options: &AscentOptions,
) -> AscentResult {
    let mut point = start;
    domain.project(&mut point);
    let mut best_point = point.clone();
    let mut best_value = f64::NEG_INFINITY;
    let mut upper_bound = f64::INFINITY;
    let mut history: Vec<f64> = Vec::with_capacity(options.max_iterations);
    let mut iterations = 0;

    for k in 0..options.max_iterations {
        iterations = k + 1;
        let (value, grad) = evaluate(instance, samples, &point);
        if value > best_value {
            best_value = value;
            best_point.clone_from(&point);
        }
        let here: f64 = grad.iter().zip(&point).map(|(g, x)| g * x).sum();
        upper_bound = upper_bound.min(value + domain.linear_max(&grad) - here);
        history.push(best_value);

        let scale = best_value.abs().max(1e-12);
        if upper_bound - best_value <= 1e-9 * scale {
            break;
        }
        if k >= options.window && best_value - history[k - options.window] <= options.rel_improvement * scale {
            break;
        }
        let norm = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if norm == 0.0 {
            break;
        }
        let step = options.initial_step / ((1 + k) as f64).sqrt() / norm;
        for (x, g) in point.iter_mut().zip(&grad) {
            *x += step * g;
        }
        domain.project(&mut point);
    }

    AscentResult {
        best_point,
        best_value,
        upper_bound,
        iterations,
    }
}
