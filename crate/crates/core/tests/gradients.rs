//! Analytic gradients against central finite differences, in f64.

use dctaug::nn::gradcheck::Checked;

const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn check_all(kind: Checked) {
    for seed in 0..INSTANCES {
        let err = kind.check(seed);
        assert!(err < TOL, "{} instance {seed}: relative error {err:e}", kind.name());
    }
}

#[test]
fn conv_layer() {
    check_all(Checked::Conv);
}

#[test]
fn dense_layer() {
    check_all(Checked::Dense);
}

#[test]
fn relu_layer() {
    check_all(Checked::Relu);
}

#[test]
fn maxpool_layer() {
    check_all(Checked::MaxPool);
}

#[test]
fn dropout_layer_with_fixed_mask() {
    check_all(Checked::Dropout);
}

#[test]
fn softmax_cross_entropy_layer() {
    check_all(Checked::SoftmaxCrossEntropy);
}

#[test]
fn tiny_network_end_to_end() {
    check_all(Checked::Network);
}
