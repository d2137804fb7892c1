//! Central finite differences for checking analytic gradients, plus random
//! small instances of every layer type checked against them.
//!
//! Only forward evaluations feed the numeric side, so the numbers are
//! independent of the backward code they are compared with.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvShape, PoolShape};
use super::{Mode, ModelParams, NetworkConfig};

/// `d f / d x_i ~ (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every `i`.
pub fn numerical_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / (|a| + |b|)` over whole vectors (Euclidean norms); the plain
/// difference when both are ~0.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checked {
    Conv,
    Dense,
    Relu,
    MaxPool,
    Dropout,
    SoftmaxCrossEntropy,
    /// Two conv blocks on 8x8 inputs, hidden dense layer, dropout.
    Network,
}

impl Checked {
    pub const ALL: [Checked; 7] = [
        Checked::Conv,
        Checked::Dense,
        Checked::Relu,
        Checked::MaxPool,
        Checked::Dropout,
        Checked::SoftmaxCrossEntropy,
        Checked::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Checked::Conv => "conv",
            Checked::Dense => "dense",
            Checked::Relu => "relu",
            Checked::MaxPool => "maxpool",
            Checked::Dropout => "dropout",
            Checked::SoftmaxCrossEntropy => "softmax-cross-entropy",
            Checked::Network => "network",
        }
    }

    /// Worst relative error over every gradient of one random instance.
    pub fn check(self, seed: u64) -> f64 {
        match self {
            Checked::Conv => conv(seed),
            Checked::Dense => dense(seed),
            Checked::Relu => relu(seed),
            Checked::MaxPool => maxpool(seed),
            Checked::Dropout => dropout(seed),
            Checked::SoftmaxCrossEntropy => softmax_cross_entropy(seed),
            Checked::Network => network(seed),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn worst(pairs: &[(&[f64], &[f64])]) -> f64 {
    pairs.iter().map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max)
}

/// Values bounded away from zero so no probe crosses the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

// Each check contracts the layer output with a random vector `r`, so the
// scalar being differentiated is `r . layer(x)`.

fn conv(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = ConvShape {
        in_channels: rng.random_range(1..=3),
        out_channels: rng.random_range(1..=3),
        height: rng.random_range(1..=5),
        width: rng.random_range(1..=5),
    };
    let batch = rng.random_range(1..=2);
    let x = uniform(&mut rng, batch * s.input_len());
    let w = uniform(&mut rng, s.weight_len());
    let b = uniform(&mut rng, s.out_channels);
    let r = uniform(&mut rng, batch * s.output_len());
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    let dx = layers::conv_backward(&x, &r, batch, &s, &w, &mut dw, &mut db, true).unwrap_or_default();
    let f = |x: &[f64], w: &[f64], b: &[f64]| dot(&layers::conv_forward(x, batch, &s, w, b), &r);
    let nx = numerical_gradient(&x, EPS, |v| f(v, &w, &b));
    let nw = numerical_gradient(&w, EPS, |v| f(&x, v, &b));
    let nb = numerical_gradient(&b, EPS, |v| f(&x, &w, v));
    worst(&[(&dx, &nx), (&dw, &nw), (&db, &nb)])
}

fn dense(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, n_in, n_out) = (
        rng.random_range(1..=3),
        rng.random_range(1..=6),
        rng.random_range(1..=5),
    );
    let x = uniform(&mut rng, batch * n_in);
    let w = uniform(&mut rng, n_in * n_out);
    let b = uniform(&mut rng, n_out);
    let r = uniform(&mut rng, batch * n_out);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    let dx = layers::dense_backward(&x, &r, batch, n_in, n_out, &w, &mut dw, &mut db);
    let f = |x: &[f64], w: &[f64], b: &[f64]| dot(&layers::dense_forward(x, batch, n_in, n_out, w, b), &r);
    let nx = numerical_gradient(&x, EPS, |v| f(v, &w, &b));
    let nw = numerical_gradient(&w, EPS, |v| f(&x, v, &b));
    let nb = numerical_gradient(&b, EPS, |v| f(&x, &w, v));
    worst(&[(&dx, &nx), (&dw, &nw), (&db, &nb)])
}

fn relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=30);
    let x = away_from_zero(&mut rng, n);
    let r = uniform(&mut rng, n);
    let mut y = x.clone();
    layers::relu_forward(&mut y);
    let mut g = r.clone();
    layers::relu_backward(&y, &mut g);
    let num = numerical_gradient(&x, EPS, |x| {
        let mut y = x.to_vec();
        layers::relu_forward(&mut y);
        dot(&y, &r)
    });
    relative_error(&g, &num)
}

fn maxpool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = PoolShape {
        channels: rng.random_range(1..=3),
        height: rng.random_range(2..=7),
        width: rng.random_range(2..=7),
    };
    let batch = rng.random_range(1..=2);
    // Distinct values spaced far beyond EPS so no argmax flips.
    let n = batch * s.input_len();
    let mut x: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        x.swap(i, rng.random_range(0..=i));
    }
    let r = uniform(&mut rng, batch * s.output_len());
    let (_, argmax) = layers::maxpool_forward(&x, batch, &s);
    let g = layers::maxpool_backward(&r, &argmax, n);
    let num = numerical_gradient(&x, EPS, |x| dot(&layers::maxpool_forward(x, batch, &s).0, &r));
    relative_error(&g, &num)
}

fn dropout(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=30);
    let x = uniform(&mut rng, n);
    let r = uniform(&mut rng, n);
    let mask: Vec<f64> = layers::dropout_mask(n, 0.3, &mut rng);
    let mut g = r.clone();
    layers::apply_mask(&mut g, &mask);
    let num = numerical_gradient(&x, EPS, |x| {
        let mut y = x.to_vec();
        layers::apply_mask(&mut y, &mask);
        dot(&y, &r)
    });
    relative_error(&g, &num)
}

fn softmax_cross_entropy(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let logits: Vec<f64> = uniform(&mut rng, batch * k).iter().map(|v| 3.0 * v).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..k)).collect();
    let loss = |z: &[f64]| layers::softmax_cross_entropy(z, &labels, k).map_or(f64::NAN, |r| r.0);
    let Ok((_, g)) = layers::softmax_cross_entropy(&logits, &labels, k) else {
        return f64::INFINITY;
    };
    relative_error(&g, &numerical_gradient(&logits, EPS, loss))
}

fn network(seed: u64) -> f64 {
    let config = NetworkConfig {
        input_channels: 2,
        input_height: 8,
        input_width: 8,
        conv_blocks: vec![vec![3], vec![4]],
        hidden_units: 6,
        num_classes: 3,
    };
    let Ok(mut model) = ModelParams::<f64>::init(config.clone(), seed) else {
        return f64::INFINITY;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Non-zero biases keep pre-activations away from exact zeros.
    for t in model.params.tensors.iter_mut().skip(1).step_by(2) {
        for v in &mut t.data {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let batch = 2;
    let input: Vec<f64> = (0..batch * config.input_len())
        .map(|_| rng.random_range(0.0..255.0))
        .collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
    // Reseeding fixes the dropout mask across probes.
    let loss_and_grads = |m: &ModelParams<f64>| {
        let mut drng = ChaCha8Rng::seed_from_u64(seed);
        let mode = Mode::Training {
            dropout_p: 0.25,
            rng: &mut drng,
        };
        m.loss_and_gradients(&input, &labels, mode)
    };
    let Ok((_, _, grads)) = loss_and_grads(&model) else {
        return f64::INFINITY;
    };
    let analytic: Vec<f64> = grads.tensors.iter().flat_map(|t| t.data.iter().copied()).collect();
    let flat: Vec<f64> = model
        .params
        .tensors
        .iter()
        .flat_map(|t| t.data.iter().copied())
        .collect();
    let mut probe = model.clone();
    let numeric = numerical_gradient(&flat, EPS, |p| {
        let mut off = 0;
        for t in &mut probe.params.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        loss_and_grads(&probe).map_or(f64::NAN, |r| r.0)
    });
    relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let g = numerical_gradient(&[1.0, -2.0, 0.5], 1e-5, |x| x.iter().map(|v| v * v * v).sum());
        let exact = [3.0, 12.0, 0.75];
        assert!(relative_error(&g, &exact) < 1e-9);
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert!(relative_error(&[1e-3, 2e-3], &[1e-3, 2e-3]) == 0.0);
        assert!((relative_error(&[1.0], &[3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let x = [0.3, -0.7, 1.1];
        let num = numerical_gradient(&x, EPS, |x| x.iter().map(|v| v.sin()).sum());
        let wrong: Vec<f64> = x.iter().map(|v| v.cos() * 1.01).collect();
        assert!(relative_error(&wrong, &num) > 1e-3);
    }
}
