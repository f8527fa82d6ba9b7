//! Benchmark heuristics: greedy arc addition and the stochastic-programming (SP) relaxation heuristic.
//!
//! Both evaluate candidate designs on one fixed sample set, so every
//! comparison inside a run uses common random numbers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DemandSample, FlexNetwork, Instance, SampleSet};
use crate::oracle::{self, AscentOptions, RelaxationDomain};
use crate::par;

/// Default sample count for both heuristics.
pub const DEFAULT_OMEGA: usize = 1000;

/// Audit trail of a heuristic run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct HeuristicTrace {
    /// Network after each added arc.
    #[serde(serialize_with = "serialize_networks")]
    pub networks: Vec<FlexNetwork>,
    /// Estimated objective (mean profit on the decision samples minus arc cost) after each added arc.
    pub scores: Vec<f64>,
    pub added_arcs: Vec<(usize, usize)>,
    /// SP only: certified upper bound of the relaxation solved at each iteration.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub relaxation_bounds: Vec<f64>,
    /// SP only: best relaxation objective reached at each iteration.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub relaxation_values: Vec<f64>,
}

fn serialize_networks<S: serde::Serializer>(nets: &[FlexNetwork], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(nets.len()))?;
    for net in nets {
        seq.serialize_element(&net.arc_list())?;
    }
    seq.end()
}

fn decision_samples(samples: &SampleSet, omega: usize) -> Result<&[DemandSample]> {
    if omega == 0 {
        return Err(Error::invalid("omega", "must be at least 1"));
    }
    samples.head(omega)
}

fn mean_profit(instance: &Instance, net: &FlexNetwork, samples: &[DemandSample]) -> f64 {
    samples.iter().map(|d| oracle::profit(instance, d, net)).sum::<f64>() / samples.len() as f64
}

/// Greedy heuristic: repeatedly add the arc with the largest estimated
/// objective improvement (profit gain minus its installation cost). Stops at
/// the budget or when no arc improves the objective. Ties go to the lowest
/// flattened index.
pub fn greedy(instance: &Instance, samples: &SampleSet, omega: usize) -> Result<(FlexNetwork, HeuristicTrace)> {
    let head = decision_samples(samples, omega)?;
    let n = instance.n;
    let cost = instance.arc_cost.as_slice();
    let mut net = instance.empty_network();
    let mut profit = 0.0;
    let mut trace = HeuristicTrace::default();

    while net.arc_count() < instance.budget {
        let candidates: Vec<usize> = (0..instance.arcs()).filter(|&k| !net.has(k)).collect();
        let gains = par::map(&candidates, |&k| {
            let mut next = net.clone();
            next.insert(k);
            mean_profit(instance, &next, head)
        });
        let mut best: Option<(usize, f64, f64)> = None;
        for (&k, &p) in candidates.iter().zip(&gains) {
            let improvement = p - profit - cost[k];
            if best.is_none_or(|(_, b, _)| improvement > b) {
                best = Some((k, improvement, p));
            }
        }
        match best {
            Some((k, improvement, p)) if improvement > 0.0 => {
                net.insert(k);
                profit = p;
                trace.added_arcs.push((k / n, k % n));
                trace.scores.push(profit - net.installation_cost(&instance.arc_cost));
                trace.networks.push(net.clone());
            }
            _ => break,
        }
    }
    Ok((net, trace))
}

/// Ascent settings used by [`sp_heuristic`].
pub fn sp_ascent_options() -> AscentOptions {
    AscentOptions {
        max_iterations: 2000,
        window: 100,
        rel_improvement: 1e-5,
        ..AscentOptions::default()
    }
}

/// SP heuristic: for `K` rounds, solve the continuous relaxation with all
/// chosen arcs pinned to one and the sum of selections capped at `K`, then add
/// the unchosen arc with the largest fractional value (lowest index on ties).
pub fn sp_heuristic(instance: &Instance, samples: &SampleSet, omega: usize) -> Result<(FlexNetwork, HeuristicTrace)> {
    sp_heuristic_with(instance, samples, omega, &sp_ascent_options())
}

pub fn sp_heuristic_with(
    instance: &Instance,
    samples: &SampleSet,
    omega: usize,
    options: &AscentOptions,
) -> Result<(FlexNetwork, HeuristicTrace)> {
    let head = decision_samples(samples, omega)?;
    let n = instance.n;
    let arcs = instance.arcs();
    let budget = instance.budget as f64;
    let mut net = instance.empty_network();
    let mut trace = HeuristicTrace::default();
    // spread the budget evenly for the first relaxation
    let mut warm = vec![budget / arcs as f64; arcs];

    for _ in 0..instance.budget {
        let lower: Vec<f64> = net.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let domain = RelaxationDomain {
            lower,
            budget: Some(budget),
        };
        let res = oracle::maximize_relaxation(instance, head, &domain, warm, options);
        let mut pick: Option<(usize, f64)> = None;
        for k in (0..arcs).filter(|&k| !net.has(k)) {
            let v = res.best_point[k];
            if pick.is_none_or(|(_, b)| v > b) {
                pick = Some((k, v));
            }
        }
        let Some((k, _)) = pick else { break };
        net.insert(k);
        trace.added_arcs.push((k / n, k % n));
        trace
            .scores
            .push(mean_profit(instance, &net, head) - net.installation_cost(&instance.arc_cost));
        trace.networks.push(net.clone());
        trace.relaxation_bounds.push(res.upper_bound);
        trace.relaxation_values.push(res.best_value);
        warm = res.best_point;
    }
    Ok((net, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{DemandModel, Matrix};

    fn one_by_two() -> Instance {
        Instance::new(
            vec![1.0],
            DemandModel::deterministic(vec![1.0, 1.0]),
            Matrix::from_rows("p", &[vec![5.0, 3.0]], 1, 2).unwrap(),
            Matrix::filled(1, 2, 0.0),
            2,
        )
        .unwrap()
    }

    #[test]
    fn greedy_stops_when_capacity_is_exhausted() {
        let inst = one_by_two();
        let samples = inst.sample(0, 1);
        let (net, trace) = greedy(&inst, &samples, 1).unwrap();
        assert_eq!(net.arc_list(), vec![(0, 0)]);
        assert_eq!(trace.scores, vec![5.0]);
    }

    #[test]
    fn greedy_with_prohibitive_costs_adds_nothing() {
        let mut inst = one_by_two();
        inst.arc_cost = Matrix::filled(1, 2, 1e6);
        let samples = inst.sample(0, 1);
        let (net, trace) = greedy(&inst, &samples, 1).unwrap();
        assert_eq!(net.arc_count(), 0);
        assert!(trace.scores.is_empty());
        assert_eq!(oracle::fdp_objective_estimate(&inst, &net, &samples, 1).unwrap(), 0.0);
    }

    #[test]
    fn omega_larger_than_sample_set_is_an_error() {
        let inst = one_by_two();
        let samples = inst.sample(0, 3);
        assert!(matches!(greedy(&inst, &samples, 4), Err(Error::NotEnoughSamples { .. })));
        assert!(sp_heuristic(&inst, &samples, 0).is_err());
    }

    #[test]
    fn sp_with_full_budget_and_free_arcs_adds_in_index_order() {
        let inst = Instance::new(
            vec![2.0, 3.0],
            DemandModel::deterministic(vec![1.0, 2.0, 2.0]),
            Matrix::from_rows("p", &[vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 1.0]], 2, 3).unwrap(),
            Matrix::filled(2, 3, 0.0),
            6,
        )
        .unwrap();
        let samples = inst.sample(0, 1);
        let (net, trace) = sp_heuristic(&inst, &samples, 1).unwrap();
        assert_eq!(net.arc_count(), 6);
        let order: Vec<usize> = trace.added_arcs.iter().map(|(i, j)| i * 3 + j).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4, 5]);
        for w in trace.networks.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
            assert_eq!(w[0].arc_count() + 1, w[1].arc_count());
        }
    }
}
