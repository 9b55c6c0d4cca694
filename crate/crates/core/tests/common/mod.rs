#![allow(dead_code)]

use hfseq::models::{Batch, Inputs, Targets};
use hfseq::{init_params, Architecture, InitScheme, ModelConfig, OutputMode, Rng};
use ndarray::Array2;

/// Small config with the requested widths; stacked models get two layers.
pub fn small_config(arch: Architecture, v: usize, h: usize, mode: OutputMode) -> ModelConfig {
    let mut c = ModelConfig::text(arch, v, h).with_output_mode(mode);
    if arch == Architecture::StackedMrnn {
        c.hidden_sizes = vec![h, h - 1];
    }
    c
}

pub fn random_theta(config: &ModelConfig, std: f64, seed: u64) -> Vec<f64> {
    let mut theta = init_params(config, InitScheme::Dense { std }, &mut Rng::new(seed, 0))
        .unwrap()
        .theta;
    // Biases start at zero; give them values too so their gradients are exercised.
    let mut rng = Rng::new(seed, 1);
    for x in theta.iter_mut().filter(|x| **x == 0.0) {
        *x = std * rng.normal();
    }
    theta
}

pub fn random_batch(v: usize, t: usize, n: usize, seed: u64) -> Batch {
    let mut rng = Rng::new(seed, 7);
    let ids: Vec<u32> = (0..(t + 1) * n).map(|_| rng.below(v) as u32).collect();
    let inputs = ids[..t * n].to_vec();
    let targets = ids[n..].to_vec();
    Batch::symbols(t, n, inputs, targets).unwrap()
}

/// Dense-input regression batch with targets on every other step.
pub fn dense_batch(v: usize, o: usize, t: usize, n: usize, seed: u64) -> Batch {
    let mut rng = Rng::new(seed, 9);
    let mut mat = |rows: usize| Array2::from_shape_fn((rows, n), |_| rng.normal());
    let inputs = (0..t).map(|_| mat(v)).collect();
    let values = (0..t).map(|_| mat(o)).collect();
    Batch {
        steps: t,
        sequences: n,
        inputs: Inputs::Dense(inputs),
        targets: Targets::Dense {
            values,
            mask: (0..t).map(|s| s % 2 == 1).collect(),
        },
    }
}

pub fn random_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, 11);
    (0..len).map(|_| rng.normal()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
