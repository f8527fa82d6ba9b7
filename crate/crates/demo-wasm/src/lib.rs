//! Browser bindings: evaluate a hand-toggled network, trace the greedy
//! heuristic, and compare the plain and variance-reduced reward estimators.
//! Results cross the boundary as JSON strings.

use flexdesign::heuristics;
use flexdesign::instance::{build_scenario, synthetic_instance};
use flexdesign::oracle;
use flexdesign::{FlexNetwork, Instance};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    instance: Instance,
}

#[wasm_bindgen]
impl Demo {
    /// `auto`, `fashion`, or `synthetic` (4x4, seeded by `seed`).
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, budget: usize, seed: u64) -> Result<Demo, JsError> {
        let instance = match scenario {
            "synthetic" => synthetic_instance(4, 4, budget, seed),
            name => build_scenario(name, budget),
        }
        .map_err(js_err)?;
        Ok(Demo { instance })
    }

    #[wasm_bindgen(js_name = fromJson)]
    pub fn from_json(text: &str) -> Result<Demo, JsError> {
        Ok(Demo {
            instance: Instance::from_json(text).map_err(js_err)?,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn m(&self) -> usize {
        self.instance.m
    }

    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.instance.n
    }

    #[wasm_bindgen(getter)]
    pub fn budget(&self) -> usize {
        self.instance.budget
    }

    /// Capacities, mean demands, unit profits and arc costs for drawing.
    pub fn describe(&self) -> String {
        let inst = &self.instance;
        json!({
            "m": inst.m,
            "n": inst.n,
            "budget": inst.budget,
            "capacities": inst.capacities,
            "mu": inst.demand_model.mu,
            "unit_profit": inst.unit_profit.to_rows(),
            "arc_cost": inst.arc_cost.to_rows(),
        })
        .to_string()
    }

    fn network(&self, mask: &[u8]) -> Result<FlexNetwork, JsError> {
        if mask.len() != self.instance.arcs() {
            return Err(JsError::new(&format!(
                "mask has {} entries, expected {}",
                mask.len(),
                self.instance.arcs()
            )));
        }
        Ok(FlexNetwork::from_mask(
            self.instance.m,
            self.instance.n,
            mask.iter().map(|&b| b != 0).collect(),
        ))
    }

    /// Objective estimate of the network given as a row-major 0/1 mask, plus
    /// the optimal allocation for the first sample.
    pub fn evaluate(&self, mask: &[u8], samples: usize, seed: u64) -> Result<String, JsError> {
        let net = self.network(mask)?;
        let set = self.instance.sample(seed, samples.max(1));
        let (objective, stderr) = oracle::objective_with_stderr(&self.instance, &net, &set).map_err(js_err)?;
        let first = &set.samples[0];
        let sol = oracle::solve_profit(&self.instance, first, &net);
        Ok(json!({
            "objective": objective,
            "stderr": stderr,
            "arcs": net.arc_count(),
            "over_budget": net.arc_count() > self.instance.budget,
            "installation_cost": net.installation_cost(&self.instance.arc_cost),
            "example_demand": first.d,
            "example_flow": sol.flow.to_rows(),
            "example_profit": sol.objective,
        })
        .to_string())
    }

    /// Greedy heuristic on `omega` decision samples, with the score after every added arc.
    pub fn greedy(&self, omega: usize, seed: u64) -> Result<String, JsError> {
        let set = self.instance.sample(seed, omega.max(1));
        let (net, trace) = heuristics::greedy(&self.instance, &set, omega.max(1)).map_err(js_err)?;
        Ok(json!({
            "added_arcs": trace.added_arcs,
            "scores": trace.scores,
            "final_arcs": net.arc_list(),
        })
        .to_string())
    }

    /// Per-sample plain and variance-reduced reward terms on common samples.
    pub fn variance(&self, mask: &[u8], samples: usize, seed: u64) -> Result<String, JsError> {
        let net = self.network(mask)?;
        let set = self.instance.sample(seed, samples.max(2));
        let plain = oracle::estimator_terms(&self.instance, &net, &set.samples, false);
        let reduced = oracle::estimator_terms(&self.instance, &net, &set.samples, true);
        Ok(json!({
            "plain": plain,
            "reduced": reduced,
            "plain_variance": variance(&plain),
            "reduced_variance": variance(&reduced),
        })
        .to_string())
    }
}

fn variance(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_reduction_helps_on_a_chain() {
        let demo = Demo::new("fashion", 10, 0).unwrap();
        let mut mask = vec![0u8; 100];
        for i in 0..10 {
            mask[i * 10 + i] = 1;
            mask[i * 10 + (i + 1) % 10] = 1;
        }
        let out: serde_json::Value = serde_json::from_str(&demo.variance(&mask, 300, 1).unwrap()).unwrap();
        assert!(out["reduced_variance"].as_f64().unwrap() < out["plain_variance"].as_f64().unwrap());
    }

    #[test]
    fn empty_network_earns_nothing() {
        let demo = Demo::new("synthetic", 3, 5).unwrap();
        let out: serde_json::Value = serde_json::from_str(&demo.evaluate(&[0; 16], 50, 2).unwrap()).unwrap();
        assert_eq!(out["objective"], 0.0);
    }

    #[test]
    fn greedy_respects_the_budget() {
        let demo = Demo::new("synthetic", 3, 5).unwrap();
        let out: serde_json::Value = serde_json::from_str(&demo.greedy(100, 1).unwrap()).unwrap();
        assert!(out["final_arcs"].as_array().unwrap().len() <= 3);
    }
}
