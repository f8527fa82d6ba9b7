//! Dense tanh MLPs with hand-written reverse mode, a categorical policy head,
//! Adam, and a small binary checkpoint format.
//!
//! Batches are row-major: one sample per row. Layer weights are stored
//! `(fan_in, fan_out)` so a layer computes `X W + b`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Hidden sizes used when nothing else is configured.
pub const DEFAULT_HIDDEN: [usize; 2] = [1024, 128];
/// Init gain of the policy's output layer (keeps the initial policy near uniform).
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Tanh on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Gradient with the same shapes as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

/// Activations kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by the output of every layer (post-activation).
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input at least")
    }
}

fn orthogonal(fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Array2<f64> {
    // orthonormalize whichever side is shorter (modified Gram-Schmidt)
    let (rows, cols) = if fan_in >= fan_out { (fan_out, fan_in) } else { (fan_in, fan_out) };
    let mut q = Array2::<f64>::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal));
    for r in 0..rows {
        for prev in 0..r {
            let dot = q.row(r).dot(&q.row(prev));
            let p = q.row(prev).to_owned();
            q.row_mut(r).scaled_add(-dot, &p);
        }
        let norm = q.row(r).dot(&q.row(r)).sqrt();
        if norm > 0.0 {
            q.row_mut(r).mapv_inplace(|v| v / norm);
        }
    }
    q.mapv_inplace(|v| v * gain);
    if fan_in >= fan_out {
        q.reversed_axes().as_standard_layout().to_owned()
    } else {
        q
    }
}

impl Mlp {
    /// Orthogonal-initialized network with layer widths `sizes` (input first, output last).
    pub fn new(sizes: &[usize], output_gain: f64, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut rng = rng::stream(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Layer {
                weight: orthogonal(w[0], w[1], if l == last { output_gain } else { 1.0 }, &mut rng),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "at least one layer is required"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.ncols() {
                return Err(Error::Dimension {
                    field: format!("layers[{l}].bias"),
                    expected: layer.weight.ncols(),
                    found: layer.bias.len(),
                });
            }
            if l > 0 && layers[l - 1].weight.ncols() != layer.weight.nrows() {
                return Err(Error::Dimension {
                    field: format!("layers[{l}].weight"),
                    expected: layers[l - 1].weight.ncols(),
                    found: layer.weight.nrows(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, found: usize) -> Result<()> {
        if found != self.input_dim() {
            return Err(Error::Dimension {
                field: "input".into(),
                expected: self.input_dim(),
                found,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if l < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = activations[l].dot(&layer.weight) + &layer.bias;
            if l < last {
                h.mapv_inplace(f64::tanh);
            }
            activations.push(h);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradient of `sum_rows <output_row, cotangent_row>` with respect to every parameter.
    pub fn backward_batch(&self, cache: &ForwardCache, cotangent: ArrayView2<'_, f64>) -> Result<Gradient> {
        let out = cache.output();
        if cotangent.dim() != out.dim() {
            return Err(Error::Dimension {
                field: "cotangent".into(),
                expected: out.len(),
                found: cotangent.len(),
            });
        }
        let mut delta = cotangent.to_owned();
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            grads.push(Layer {
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].weight.t());
                // tanh' = 1 - tanh^2, using the stored post-activation
                prev.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                delta = prev;
            }
        }
        grads.reverse();
        Ok(Gradient { layers: grads })
    }

    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<Gradient> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let cache = self.forward_cached(x)?;
        let c = ArrayView2::from_shape((1, cotangent.len()), cotangent).map_err(|_| Error::Dimension {
            field: "cotangent".into(),
            expected: self.output_dim(),
            found: cotangent.len(),
        })?;
        self.backward_batch(&cache, c)
    }

    /// All parameters in layer order: weight (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                field: "parameters".into(),
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradient {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

/// `log softmax` with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// A categorical distribution over actions, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Self {
        Categorical {
            log_probs: log_softmax(logits),
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    /// Inverse-CDF draw from one uniform; the last action absorbs rounding.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, l) in self.log_probs.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return a;
            }
        }
        self.log_probs.len() - 1
    }

    /// Most likely action, lowest index on ties.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (a, &l) in self.log_probs.iter().enumerate() {
            if l > self.log_probs[best] {
                best = a;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self.log_probs.iter().map(|&l| l.exp() * l).sum::<f64>()
    }
}

pub fn policy_distribution(policy: &Mlp, observation: &[f64]) -> Result<Categorical> {
    Ok(Categorical::from_logits(&policy.forward(observation)?))
}

/// Adam with bias correction. Minimizes: pass the gradient of a loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_net(net: &Mlp) -> Self {
        Self::new(net.num_params())
    }

    pub fn step(&mut self, params: &mut Mlp, grad: &Gradient, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.params_mut().zip(grad.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

const CHECKPOINT_FORMAT: &str = "flexdesign-mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub name: String,
    pub sizes: Vec<usize>,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: String,
    pub networks: Vec<NetworkShape>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Layout: u64 little-endian header length, JSON header, then every network's
/// parameters (in [`Mlp::to_flat`] order) as little-endian f64.
pub fn write_checkpoint(mut w: impl Write, nets: &[(&str, &Mlp)], metadata: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        networks: nets
            .iter()
            .map(|(name, net)| NetworkShape {
                name: name.to_string(),
                sizes: net.sizes(),
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, net) in nets {
        for p in net.to_flat() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(CheckpointHeader, Vec<Mlp>)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 24 {
        return Err(Error::Checkpoint(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    let mut nets = Vec::with_capacity(header.networks.len());
    for shape in &header.networks {
        if shape.sizes.len() < 2 {
            return Err(Error::Checkpoint(format!("network {:?} has fewer than two sizes", shape.name)));
        }
        let mut net = Mlp::zeros(&shape.sizes);
        let mut buf = vec![0u8; 8 * net.num_params()];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("network {:?}: {e}", shape.name)))?;
        let flat: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_flat(&flat)?;
        nets.push(net);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, nets))
}

pub fn save_checkpoint(path: impl AsRef<Path>, nets: &[(&str, &Mlp)], metadata: serde_json::Value) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, nets, metadata)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Vec<Mlp>)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_net_gives_zero() {
        let net = Mlp::zeros(&[3, 5, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let net = Mlp::from_layers(vec![Layer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        }])
        .unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let net = Mlp::from_layers(vec![Layer {
            weight: array![[0.3], [-1.0]],
            bias: array![0.5],
        }])
        .unwrap();
        let g = net.backward(&[2.0, 7.0], &[1.0]).unwrap();
        assert_eq!(g.layers[0].weight, array![[2.0], [7.0]]);
        assert_eq!(g.layers[0].bias, array![1.0]);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_short_side() {
        let net = Mlp::new(&[6, 4, 9], 1.0, 3);
        let w0 = &net.layers()[0].weight; // 6x4: columns orthonormal
        let g = w0.t().dot(w0);
        let w1 = &net.layers()[1].weight; // 4x9: rows orthonormal
        let h = w1.dot(&w1.t());
        for (a, e) in g.iter().zip(Array2::<f64>::eye(4).iter()).chain(h.iter().zip(Array2::<f64>::eye(4).iter())) {
            assert!((a - e).abs() < 1e-12);
        }
        let p = Mlp::new(&[6, 4, 9], POLICY_OUTPUT_GAIN, 3);
        assert!(p.layers()[1].weight.iter().all(|w| w.abs() <= 0.01 + 1e-15));
    }

    #[test]
    fn softmax_saturates_and_normalizes() {
        let c = Categorical::from_logits(&[3.0, 3.0, 3.0, 3.0]);
        assert!(c.probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
        let c = Categorical::from_logits(&[10.0, 10.0 - 1000.0, -1e3]);
        assert!(c.probs()[0] >= 1.0 - 1e-12);
        assert!(c.log_probs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn adam_one_step_by_hand() {
        let mut net = Mlp::from_layers(vec![Layer {
            weight: array![[1.0, -2.0]],
            bias: array![0.5, 0.0],
        }])
        .unwrap();
        let grad = Gradient {
            layers: vec![Layer {
                weight: array![[0.5, -4.0]],
                bias: array![0.0, 2.0],
            }],
        };
        let mut adam = Adam::for_net(&net);
        adam.step(&mut net, &grad, 0.1);
        // first step: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let expect = |p: f64, g: f64| if g == 0.0 { p } else { p - 0.1 * g / (g.abs() + 1e-8) };
        let flat = net.to_flat();
        let want = [expect(1.0, 0.5), expect(-2.0, -4.0), expect(0.5, 0.0), expect(0.0, 2.0)];
        for (a, b) in flat.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{flat:?}");
        }
        // second step with g' = 0 on the first weight: m = 0.05, v = 0.00025 * 0.999
        let zero = Gradient::zeros_like(&net);
        adam.step(&mut net, &zero, 0.1);
        let m_hat = 0.9 * 0.05 / (1.0 - 0.81);
        let v_hat = 0.999 * 0.001 * 0.25 / (1.0 - 0.999f64.powi(2));
        let w = want[0] - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((net.to_flat()[0] - w).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut net = Mlp::new(&[3, 4, 2], 1.0, 1);
        let before = net.clone();
        let mut adam = Adam::for_net(&net);
        for _ in 0..5 {
            adam.step(&mut net, &Gradient::zeros_like(&before), 1e-2);
        }
        assert_eq!(net, before);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut net = Mlp::zeros(&[1, 1]);
        let mut grad = Gradient::zeros_like(&net);
        grad.layers[0].weight[[0, 0]] = 3.0;
        let mut adam = Adam::for_net(&net);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..2000 {
            adam.step(&mut net, &grad, 1e-3);
            let w = net.layers()[0].weight[[0, 0]];
            step = prev - w;
            prev = w;
        }
        assert!((step - 1e-3).abs() < 1e-9, "{step}");
    }

    #[test]
    fn flat_round_trip_and_checkpoint() {
        let a = Mlp::new(&[5, 7, 3], 0.01, 9);
        let b = Mlp::new(&[5, 4, 1], 1.0, 10);
        let mut c = Mlp::zeros(&[5, 7, 3]);
        c.set_flat(&a.to_flat()).unwrap();
        assert_eq!(a, c);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &[("policy", &a), ("value", &b)], serde_json::json!({"k": 3})).unwrap();
        let (header, nets) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(header.networks[1].name, "value");
        assert_eq!(header.metadata["k"], 3);
        assert_eq!(nets, vec![a, b]);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
