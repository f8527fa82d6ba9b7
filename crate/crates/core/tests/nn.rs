mod common;

use flexdesign::nn::{self, Categorical, Mlp};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn gradients_match_finite_differences() {
    let mut rng = common::rng(8);
    for _ in 0..50 {
        let net = common::random_mlp(&mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let c: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = common::finite_difference_error(&net, &x, &c);
        assert!(err < 1e-4, "relative error {err} for sizes {:?}", net.sizes());
    }
}

/// Straight loops over the flattened parameters.
fn naive_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut h = input.to_vec();
    let layers = net.layers().len();
    for (l, layer) in net.layers().iter().enumerate() {
        let (fan_in, fan_out) = layer.weight.dim();
        let mut out = vec![0.0; fan_out];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = layer.bias[o];
            for (i, hi) in h.iter().enumerate().take(fan_in) {
                acc += hi * layer.weight[[i, o]];
            }
            *slot = if l + 1 < layers { acc.tanh() } else { acc };
        }
        h = out;
    }
    h
}

#[test]
fn forward_matches_naive_loops() {
    let mut rng = common::rng(21);
    for _ in 0..100 {
        let net = common::random_mlp(&mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fast = net.forward(&x).unwrap();
        for (a, b) in fast.iter().zip(naive_forward(&net, &x)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn batched_backward_sums_per_row_gradients() {
    let mut rng = common::rng(5);
    let net = Mlp::new(&[3, 5, 2], 1.0, 4);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let cs: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let x = ndarray::Array2::from_shape_fn((4, 3), |(r, c)| xs[r][c]);
    let c = ndarray::Array2::from_shape_fn((4, 2), |(r, k)| cs[r][k]);
    let batched = net.backward_batch(&net.forward_cached(x.view()).unwrap(), c.view()).unwrap();
    let mut summed = nn::Gradient::zeros_like(&net);
    for (xi, ci) in xs.iter().zip(&cs) {
        summed.add_assign(&net.backward(xi, ci).unwrap());
    }
    for (a, b) in batched.to_flat().iter().zip(summed.to_flat()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_output_has_zero_gradient() {
    let net = Mlp::zeros(&[3, 4, 2]);
    let g = net.backward(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn softmax_normalizes_random_logits() {
    let mut rng = common::rng(99);
    for _ in 0..10_000 {
        let k = rng.random_range(1..20);
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let dist = Categorical::from_logits(&logits);
        let probs = dist.probs();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (p, l) in probs.iter().zip(&dist.log_probs) {
            if *p >= f64::MIN_POSITIVE {
                assert!((p.ln() - l).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn policy_distribution_of_identical_logits_is_uniform() {
    let dist = nn::policy_distribution(&Mlp::zeros(&[4, 6]), &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(dist.probs().iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
}

proptest! {
    #[test]
    fn flatten_round_trip(seed in any::<u64>(), a in 1usize..6, b in 1usize..6, c in 1usize..6) {
        let net = Mlp::new(&[a, b, c], 0.5, seed);
        let mut other = Mlp::zeros(&[a, b, c]);
        other.set_flat(&net.to_flat()).unwrap();
        prop_assert_eq!(&other, &net);
        prop_assert_eq!(other.to_flat(), net.to_flat());
    }
}
