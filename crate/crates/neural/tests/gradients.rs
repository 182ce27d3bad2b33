use canloc_neural::gradcheck::{layer_gradient_error, loss_gradient_error};
use canloc_neural::layers::{Activation, ActivationLayer, BatchNorm, Conv1d, Dense, Dropout, MaxPool1d};
use canloc_neural::{BinaryCrossEntropy, CategoricalCrossEntropy, Layer, Loss, Mse, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn assert_layer(mut layer: Box<dyn Layer>, shape: &[usize], seed: u64) {
    let x = random_tensor(shape, seed);
    let err = layer_gradient_error(layer.as_mut(), &x, seed + 1).unwrap();
    assert!(err < TOL, "{} gradient error {err:e}", layer.kind());
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

#[test]
fn dense_gradients() {
    assert_layer(Box::new(Dense::new(7, 5, &mut rng()).unwrap()), &[4, 7], 1);
}

#[test]
fn dense_flattens_conv_output() {
    assert_layer(Box::new(Dense::new(12, 3, &mut rng()).unwrap()), &[3, 4, 3], 2);
}

#[test]
fn conv_gradients_for_several_kernels() {
    for (k, seed) in [(1, 3), (2, 4), (3, 5), (5, 6)] {
        assert_layer(Box::new(Conv1d::new(2, 3, k, &mut rng()).unwrap()), &[2, 2, 9], seed);
    }
}

#[test]
fn maxpool_gradients() {
    assert_layer(Box::new(MaxPool1d::new(2).unwrap()), &[2, 3, 9], 7);
    assert_layer(Box::new(MaxPool1d::new(3).unwrap()), &[2, 2, 12], 8);
}

#[test]
fn batchnorm_gradients_both_ranks() {
    assert_layer(Box::new(BatchNorm::new(6, 1).unwrap()), &[5, 6], 9);
    assert_layer(Box::new(BatchNorm::new(3, 2).unwrap()), &[4, 3, 7], 10);
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    assert_layer(Box::new(Dropout::new(0.5).unwrap()), &[4, 10], 11);
}

#[test]
fn activation_gradients() {
    for (i, act) in [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Sigmoid,
        Activation::Softmax,
        Activation::Linear,
    ]
    .into_iter()
    .enumerate()
    {
        assert_layer(Box::new(ActivationLayer::new(act)), &[3, 8], 20 + i as u64);
    }
}

fn probs(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

fn one_hot(batch: usize, classes: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; batch * classes];
    for b in 0..batch {
        data[b * classes + rng.random_range(0..classes)] = 1.0;
    }
    Tensor::new(vec![batch, classes], data).unwrap()
}

#[test]
fn loss_gradients() {
    let cases: Vec<(Box<dyn Loss>, Tensor, Tensor)> = vec![
        (Box::new(Mse), random_tensor(&[4, 6], 30), random_tensor(&[4, 6], 31)),
        (Box::new(BinaryCrossEntropy::plain()), probs(&[6, 1], 32), one_hot(6, 1, 33)),
        (Box::new(BinaryCrossEntropy::weighted(0.7, 3.5)), probs(&[8, 1], 34), {
            let mut t = probs(&[8, 1], 35);
            t.data_mut().iter_mut().for_each(|v| *v = v.round());
            t
        }),
        (Box::new(CategoricalCrossEntropy), probs(&[5, 4], 36), one_hot(5, 4, 37)),
    ];
    for (loss, p, t) in cases {
        let err = loss_gradient_error(loss.as_ref(), &p, &t).unwrap();
        assert!(err < TOL, "{} gradient error {err:e}", loss.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_gradients_hold_for_random_shapes(
        cin in 1usize..4, cout in 1usize..4, k in 1usize..6, len in 1usize..12, n in 1usize..4, seed in 0u64..1000
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = Conv1d::new(cin, cout, k, &mut r).unwrap();
        let x = random_tensor(&[n, cin, len], seed);
        let err = layer_gradient_error(&mut layer, &x, seed).unwrap();
        prop_assert!(err < TOL, "error {err:e}");
    }

    #[test]
    fn dense_gradients_hold_for_random_shapes(
        inputs in 1usize..10, units in 1usize..10, n in 1usize..5, seed in 0u64..1000
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = Dense::new(inputs, units, &mut r).unwrap();
        let x = random_tensor(&[n, inputs], seed);
        let err = layer_gradient_error(&mut layer, &x, seed).unwrap();
        prop_assert!(err < TOL, "error {err:e}");
    }
}

/// Doubles its input but reports a gradient of one; the checker must notice.
#[derive(Debug, Clone)]
struct WrongGradient;

impl Layer for WrongGradient {
    fn kind(&self) -> canloc_neural::LayerKind {
        canloc_neural::LayerKind::Activation
    }
    fn output_shape(&self, input: &[usize]) -> canloc_neural::Result<Vec<usize>> {
        Ok(input.to_vec())
    }
    fn forward(&mut self, input: &Tensor, _: &mut canloc_neural::ForwardCtx<'_>) -> canloc_neural::Result<Tensor> {
        self.infer(input)
    }
    fn infer(&self, input: &Tensor) -> canloc_neural::Result<Tensor> {
        Tensor::new(input.shape().to_vec(), input.data().iter().map(|v| 2.0 * v).collect())
    }
    fn backward(&mut self, g: &Tensor) -> canloc_neural::Result<Tensor> {
        Ok(g.clone())
    }
    fn hyper(&self) -> Vec<f64> {
        Vec::new()
    }
    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[test]
fn checker_flags_a_wrong_gradient() {
    let err = layer_gradient_error(&mut WrongGradient, &random_tensor(&[2, 5], 0), 0).unwrap();
    assert!(err > 0.1, "error {err}");
}
