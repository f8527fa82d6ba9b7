//! Problem data: instances, demand models, flexibility networks and demand samples.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Dense row-major `rows x cols` matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(field: &str, rows: &[Vec<f64>], expect_rows: usize, expect_cols: usize) -> Result<Self> {
        if rows.len() != expect_rows {
            return Err(Error::Dimension {
                field: field.to_string(),
                expected: expect_rows,
                found: rows.len(),
            });
        }
        let mut data = Vec::with_capacity(expect_rows * expect_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != expect_cols {
                return Err(Error::Dimension {
                    field: format!("{field}[{i}]"),
                    expected: expect_cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: expect_rows,
            cols: expect_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandKind {
    Deterministic,
    TruncatedIndependentNormal,
}

/// Independent per-demand-node distribution, clamped into `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    pub kind: DemandKind,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DemandModel {
    pub fn deterministic(mu: Vec<f64>) -> Self {
        let n = mu.len();
        DemandModel {
            kind: DemandKind::Deterministic,
            sigma: vec![0.0; n],
            lower: vec![0.0; n],
            upper: mu.clone(),
            mu,
        }
    }

    /// Normal demand truncated to `[0, mu + 2 sigma]`.
    pub fn truncated_normal(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        let upper = mu.iter().zip(&sigma).map(|(m, s)| m + 2.0 * s).collect();
        DemandModel {
            kind: DemandKind::TruncatedIndependentNormal,
            lower: vec![0.0; mu.len()],
            upper,
            mu,
            sigma,
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        for (field, v) in [("sigma", &self.sigma), ("lower", &self.lower), ("upper", &self.upper)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    field: format!("demand.{field}"),
                    expected: n,
                    found: v.len(),
                });
            }
        }
        check_nonnegative("demand.sigma", &self.sigma)?;
        check_finite("demand.mu", &self.mu)?;
        check_finite("demand.lower", &self.lower)?;
        check_finite("demand.upper", &self.upper)?;
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(Error::invalid(
                    "demand.lower",
                    format!("lower[{j}] = {} exceeds upper[{j}] = {}", self.lower[j], self.upper[j]),
                ));
            }
        }
        check_nonnegative("demand.lower", &self.lower)?;
        Ok(())
    }

    /// Draws one demand vector; a zero deviation yields the clamped mean.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DemandSample {
        let d = (0..self.len())
            .map(|j| {
                let raw = match self.kind {
                    DemandKind::Deterministic => self.mu[j],
                    DemandKind::TruncatedIndependentNormal => {
                        let z: f64 = rng.sample(StandardNormal);
                        self.mu[j] + self.sigma[j] * z
                    }
                };
                raw.clamp(self.lower[j], self.upper[j])
            })
            .collect();
        DemandSample { d }
    }
}

/// One realized demand vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSample {
    pub d: Vec<f64>,
}

/// An ordered list of demand samples together with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub seed: u64,
    pub samples: Vec<DemandSample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DemandSample> {
        self.samples.iter()
    }

    /// The first `count` samples, or an error if there are fewer.
    pub fn head(&self, count: usize) -> Result<&[DemandSample]> {
        if count > self.samples.len() {
            return Err(Error::NotEnoughSamples {
                needed: count,
                available: self.samples.len(),
            });
        }
        Ok(&self.samples[..count])
    }
}

/// Draws `count` i.i.d. samples from `model` on the ChaCha8 stream seeded by `seed`.
///
/// Coordinates are drawn in sample-major order, one standard normal per
/// coordinate, so the output is a pure function of `(model, seed, count)`.
pub fn sample_demand(model: &DemandModel, seed: u64, count: usize) -> SampleSet {
    let mut rng = rng::stream(seed);
    let samples = (0..count).map(|_| model.draw(&mut rng)).collect();
    SampleSet { seed, samples }
}

/// A flexibility network: the binary `m x n` arc-selection matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FlexNetwork {
    m: usize,
    n: usize,
    arcs: Vec<bool>,
    arc_count: usize,
}

impl FlexNetwork {
    pub fn empty(m: usize, n: usize) -> Self {
        FlexNetwork {
            m,
            n,
            arcs: vec![false; m * n],
            arc_count: 0,
        }
    }

    pub fn full(m: usize, n: usize) -> Self {
        FlexNetwork {
            m,
            n,
            arcs: vec![true; m * n],
            arc_count: m * n,
        }
    }

    pub fn from_arcs(m: usize, n: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        let mut net = FlexNetwork::empty(m, n);
        for &(i, j) in arcs {
            if i >= m || j >= n {
                return Err(Error::invalid(
                    "arcs",
                    format!("arc ({i}, {j}) outside a {m}x{n} network"),
                ));
            }
            net.insert(i * n + j);
        }
        Ok(net)
    }

    pub fn from_mask(m: usize, n: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), m * n, "mask length must be m*n");
        let arc_count = mask.iter().filter(|&&b| b).count();
        FlexNetwork {
            m,
            n,
            arcs: mask,
            arc_count,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn arc_count(&self) -> usize {
        self.arc_count
    }

    /// Membership by flattened index `i * n + j`.
    #[inline]
    pub fn has(&self, index: usize) -> bool {
        self.arcs[index]
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.arcs[i * self.n + j]
    }

    /// Returns true if the arc was absent.
    pub fn insert(&mut self, index: usize) -> bool {
        if self.arcs[index] {
            return false;
        }
        self.arcs[index] = true;
        self.arc_count += 1;
        true
    }

    /// Returns true if the arc was present.
    pub fn remove(&mut self, index: usize) -> bool {
        if !self.arcs[index] {
            return false;
        }
        self.arcs[index] = false;
        self.arc_count -= 1;
        true
    }

    pub fn mask(&self) -> &[bool] {
        &self.arcs
    }

    /// Flattened indices of present arcs, ascending.
    pub fn arc_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.arcs.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    pub fn arc_list(&self) -> Vec<(usize, usize)> {
        self.arc_indices().map(|k| (k / self.n, k % self.n)).collect()
    }

    pub fn is_subset_of(&self, other: &FlexNetwork) -> bool {
        self.arcs.iter().zip(&other.arcs).all(|(&a, &b)| !a || b)
    }

    /// Total installation cost of the present arcs.
    pub fn installation_cost(&self, arc_cost: &Matrix) -> f64 {
        self.arc_indices().map(|k| arc_cost.as_slice()[k]).sum()
    }
}

impl fmt::Debug for FlexNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FlexNetwork({}x{}, {:?})", self.m, self.n, self.arc_list())
    }
}

impl fmt::Display for FlexNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.m {
            let row: String = (0..self.n)
                .map(|j| if self.contains(i, j) { '1' } else { '.' })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// A flexibility design problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub m: usize,
    pub n: usize,
    pub capacities: Vec<f64>,
    pub demand_model: DemandModel,
    pub unit_profit: Matrix,
    pub arc_cost: Matrix,
    pub budget: usize,
}

impl Instance {
    /// Validates dimensions and signs; a budget above `m * n` is clamped.
    pub fn new(
        capacities: Vec<f64>,
        demand_model: DemandModel,
        unit_profit: Matrix,
        arc_cost: Matrix,
        budget: usize,
    ) -> Result<Self> {
        let m = capacities.len();
        let n = demand_model.len();
        let mut inst = Instance {
            m,
            n,
            capacities,
            demand_model,
            unit_profit,
            arc_cost,
            budget,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&mut self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("m", "at least one resource node is required"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "at least one demand node is required"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be at least 1"));
        }
        if self.capacities.len() != self.m {
            return Err(Error::Dimension {
                field: "capacities".into(),
                expected: self.m,
                found: self.capacities.len(),
            });
        }
        if self.demand_model.len() != self.n {
            return Err(Error::Dimension {
                field: "demand.mu".into(),
                expected: self.n,
                found: self.demand_model.len(),
            });
        }
        for (field, mat) in [("unit_profit", &self.unit_profit), ("arc_cost", &self.arc_cost)] {
            if mat.rows() != self.m {
                return Err(Error::Dimension {
                    field: field.into(),
                    expected: self.m,
                    found: mat.rows(),
                });
            }
            if mat.cols() != self.n {
                return Err(Error::Dimension {
                    field: format!("{field}[0]"),
                    expected: self.n,
                    found: mat.cols(),
                });
            }
            check_finite(field, mat.as_slice())?;
        }
        check_nonnegative("capacities", &self.capacities)?;
        check_nonnegative("arc_cost", self.arc_cost.as_slice())?;
        self.demand_model.validate()?;
        let arcs = self.m * self.n;
        if self.budget > arcs {
            log::warn!("budget {} exceeds the {arcs} possible arcs; clamping", self.budget);
            self.budget = arcs;
        }
        Ok(())
    }

    pub fn arcs(&self) -> usize {
        self.m * self.n
    }

    /// Same instance with a different arc budget (clamped to `m * n`).
    pub fn with_budget(&self, budget: usize) -> Result<Self> {
        let mut inst = self.clone();
        inst.budget = budget;
        inst.validate()?;
        Ok(inst)
    }

    pub fn empty_network(&self) -> FlexNetwork {
        FlexNetwork::empty(self.m, self.n)
    }

    pub fn full_network(&self) -> FlexNetwork {
        FlexNetwork::full(self.m, self.n)
    }

    pub fn sample(&self, seed: u64, count: usize) -> SampleSet {
        sample_demand(&self.demand_model, seed, count)
    }

    /// Checks that a network's shape matches this instance.
    pub fn check_network(&self, net: &FlexNetwork) -> Result<()> {
        if net.m() != self.m || net.n() != self.n {
            return Err(Error::invalid(
                "network",
                format!("{}x{} network for a {}x{} instance", net.m(), net.n(), self.m, self.n),
            ));
        }
        Ok(())
    }

    /// Checks shape and that a final design respects the budget.
    pub fn check_design(&self, net: &FlexNetwork) -> Result<()> {
        self.check_network(net)?;
        if net.arc_count() > self.budget {
            return Err(Error::BudgetExceeded {
                arcs: net.arc_count(),
                budget: self.budget,
            });
        }
        Ok(())
    }
}

fn check_nonnegative(field: &str, values: &[f64]) -> Result<()> {
    check_finite(field, values)?;
    match values.iter().position(|&v| v < 0.0) {
        Some(index) => Err(Error::Negative {
            field: field.to_string(),
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

fn check_finite(field: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::invalid(field, format!("non-finite value at index {index}"))),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Scenario builders

const AUTO_CAPACITY: [f64; 8] = [380.0, 230.0, 250.0, 230.0, 240.0, 230.0, 230.0, 240.0];
const AUTO_MEAN: [f64; 16] = [
    320.0, 150.0, 270.0, 110.0, 220.0, 110.0, 120.0, 80.0, 140.0, 160.0, 60.0, 35.0, 40.0, 35.0, 30.0, 180.0,
];

const FASHION_MEAN: [f64; 10] = [
    1017.0, 1042.0, 1358.0, 2525.0, 1100.0, 2150.0, 1113.0, 4017.0, 3296.0, 2383.0,
];
const FASHION_SIGMA: [f64; 10] = [194.0, 323.0, 248.0, 340.0, 381.0, 404.0, 524.0, 556.0, 1047.0, 697.0];
const FASHION_PRICE: [f64; 10] = [110.0, 99.0, 80.0, 90.0, 123.0, 173.0, 133.0, 73.0, 93.0, 148.0];
const FASHION_MARGIN: f64 = 0.24;

/// Coefficient of variation used by the auto and FCTP-derived scenarios.
pub const DEMAND_CV: f64 = 0.8;

/// The 8-plant, 16-model automotive scenario (unit profits, free arcs).
pub fn build_auto_scenario(budget: usize) -> Result<Instance> {
    let mu = AUTO_MEAN.to_vec();
    let sigma = mu.iter().map(|m| DEMAND_CV * m).collect();
    Instance::new(
        AUTO_CAPACITY.to_vec(),
        DemandModel::truncated_normal(mu, sigma),
        Matrix::filled(8, 16, 1.0),
        Matrix::filled(8, 16, 0.0),
        budget,
    )
}

/// The 10-facility, 10-style fashion scenario: `c = mu`, profit is 24% of price.
pub fn build_fashion_scenario(budget: usize) -> Result<Instance> {
    let profit = Matrix::from_fn(10, 10, |_, j| FASHION_MARGIN * FASHION_PRICE[j]);
    Instance::new(
        FASHION_MEAN.to_vec(),
        DemandModel::truncated_normal(FASHION_MEAN.to_vec(), FASHION_SIGMA.to_vec()),
        profit,
        Matrix::filled(10, 10, 0.0),
        budget,
    )
}

/// Converts a fixed-charge transportation instance into a flexibility design problem.
///
/// Fixed charges become arc costs, unit profit is `P - t_ij` with
/// `P = max_ij (fixed_ij + t_ij)`, and destination demands become normal means
/// with deviation `0.8 mu`.
pub fn fctp_to_fdp(
    capacities: &[f64],
    demands: &[f64],
    transport_cost: &[Vec<f64>],
    fixed_charge: &[Vec<f64>],
    budget: usize,
) -> Result<Instance> {
    let (m, n) = (capacities.len(), demands.len());
    let t = Matrix::from_rows("transport_cost", transport_cost, m, n)?;
    let fixed = Matrix::from_rows("fixed_charge", fixed_charge, m, n)?;
    check_nonnegative("transport_cost", t.as_slice())?;
    check_nonnegative("demands", demands)?;
    let p_const = fctp_profit_constant(&t, &fixed);
    let profit = Matrix::from_fn(m, n, |i, j| p_const - t.get(i, j));
    let mu = demands.to_vec();
    let sigma = mu.iter().map(|m| DEMAND_CV * m).collect();
    Instance::new(
        capacities.to_vec(),
        DemandModel::truncated_normal(mu, sigma),
        profit,
        fixed,
        budget,
    )
}

pub fn fctp_profit_constant(transport_cost: &Matrix, fixed_charge: &Matrix) -> f64 {
    transport_cost
        .as_slice()
        .iter()
        .zip(fixed_charge.as_slice())
        .map(|(t, i)| t + i)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// A random instance for small-scale experiments.
///
/// Capacities and mean demands are uniform on `[20, 60]`, deviations are half
/// the mean, unit profits uniform on `[1, 4]` and arc costs uniform on `[0, 15]`.
pub fn synthetic_instance(m: usize, n: usize, budget: usize, seed: u64) -> Result<Instance> {
    let mut rng = rng::stream(seed);
    let capacities: Vec<f64> = (0..m).map(|_| rng.random_range(20.0..60.0)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..60.0)).collect();
    let sigma = mu.iter().map(|m| 0.5 * m).collect();
    let profit = Matrix::from_fn(m, n, |_, _| rng.random_range(1.0..4.0));
    let cost = Matrix::from_fn(m, n, |_, _| rng.random_range(0.0..15.0));
    Instance::new(capacities, DemandModel::truncated_normal(mu, sigma), profit, cost, budget)
}

/// Names accepted by [`build_scenario`].
pub const SCENARIOS: [&str; 2] = ["auto", "fashion"];

pub fn build_scenario(name: &str, budget: usize) -> Result<Instance> {
    match name {
        "auto" => build_auto_scenario(budget),
        "fashion" => build_fashion_scenario(budget),
        other => Err(Error::invalid(
            "scenario",
            format!("unknown scenario `{other}`; valid names: {}", SCENARIOS.join(", ")),
        )),
    }
}

// ---------------------------------------------------------------------------
// JSON file format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    kind: DemandKind,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    m: usize,
    n: usize,
    capacities: Vec<f64>,
    demand: DemandFile,
    unit_profit: Vec<Vec<f64>>,
    arc_cost: Vec<Vec<f64>>,
    budget: usize,
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        let dm = &inst.demand_model;
        InstanceFile {
            m: inst.m,
            n: inst.n,
            capacities: inst.capacities.clone(),
            demand: DemandFile {
                kind: dm.kind,
                mu: dm.mu.clone(),
                sigma: dm.sigma.clone(),
                lower: Some(dm.lower.clone()),
                upper: Some(dm.upper.clone()),
            },
            unit_profit: inst.unit_profit.to_rows(),
            arc_cost: inst.arc_cost.to_rows(),
            budget: inst.budget,
        }
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = Error;

    fn try_from(file: InstanceFile) -> Result<Self> {
        let (m, n) = (file.m, file.n);
        if file.capacities.len() != m {
            return Err(Error::Dimension {
                field: "capacities".into(),
                expected: m,
                found: file.capacities.len(),
            });
        }
        let d = file.demand;
        if d.mu.len() != n {
            return Err(Error::Dimension {
                field: "demand.mu".into(),
                expected: n,
                found: d.mu.len(),
            });
        }
        if d.sigma.len() != n {
            return Err(Error::Dimension {
                field: "demand.sigma".into(),
                expected: n,
                found: d.sigma.len(),
            });
        }
        let lower = d.lower.unwrap_or_else(|| vec![0.0; n]);
        let upper = d
            .upper
            .unwrap_or_else(|| d.mu.iter().zip(&d.sigma).map(|(m, s)| m + 2.0 * s).collect());
        let demand_model = DemandModel {
            kind: d.kind,
            mu: d.mu,
            sigma: d.sigma,
            lower,
            upper,
        };
        let unit_profit = Matrix::from_rows("unit_profit", &file.unit_profit, m, n)?;
        let arc_cost = Matrix::from_rows("arc_cost", &file.arc_cost, m, n)?;
        Instance::new(file.capacities, demand_model, unit_profit, arc_cost, file.budget)
    }
}

impl Instance {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Instance::try_from(file)
    }
}

pub fn save_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, instance.to_json() + "\n")?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    Instance::from_json(&fs::read_to_string(path)?)
}
