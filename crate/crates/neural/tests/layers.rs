use canloc_neural::layers::{Activation, ActivationLayer, BatchNorm, Conv1d, Dense, Dropout, MaxPool1d};
use canloc_neural::{ForwardCtx, Layer, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn train_forward(layer: &mut dyn Layer, x: &Tensor) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    layer
        .forward(x, &mut ForwardCtx { training: true, rng: &mut rng })
        .unwrap()
}

/// Direct "same" convolution: y[o,t] = b[o] + sum_c sum_j w[o,c,j] x[c, t + j - (k-1)/2].
fn naive_conv(x: &Tensor, w: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let (n, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let left = (k - 1) / 2;
    let mut y = vec![0.0; n * cout * len];
    for s in 0..n {
        for o in 0..cout {
            for t in 0..len {
                let mut acc = b[o];
                for c in 0..cin {
                    for j in 0..k {
                        let pos = t as isize + j as isize - left as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w[(o * cin + c) * k + j] * x.data()[(s * cin + c) * len + pos as usize];
                        }
                    }
                }
                y[(s * cout + o) * len + t] = acc;
            }
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_loops(
        cin in 1usize..5, cout in 1usize..5, k in 1usize..7, len in 1usize..20, n in 1usize..4, seed in 0u64..10_000
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Conv1d::new(cin, cout, k, &mut rng).unwrap();
        for v in conv.params_mut()[1].value.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let x = random_tensor(&[n, cin, len], seed + 1);
        let w = conv.params()[0].value.clone();
        let b = conv.params()[1].value.clone();
        let got = conv.infer(&x).unwrap();
        let want = naive_conv(&x, &w, &b, cout, k);
        for (g, e) in got.data().iter().zip(&want) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_matches_direct_loops(inputs in 1usize..12, units in 1usize..12, n in 1usize..5, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = Dense::new(inputs, units, &mut rng).unwrap();
        let x = random_tensor(&[n, inputs], seed + 1);
        let w = &dense.params()[0].value;
        let got = dense.infer(&x).unwrap();
        for s in 0..n {
            for u in 0..units {
                let e: f64 = (0..inputs).map(|i| w[u * inputs + i] * x.data()[s * inputs + i]).sum();
                prop_assert!((got.data()[s * units + u] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..10_000, scale in 0.1f64..500.0) {
        let mut x = random_tensor(&[3, 6], seed);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let y = ActivationLayer::new(Activation::Softmax).infer(&x).unwrap();
        for row in y.to_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn identity_kernel_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv1d::new(1, 1, 3, &mut rng).unwrap();
    conv.params_mut()[0].value.copy_from_slice(&[0.0, 1.0, 0.0]);
    let x = random_tensor(&[2, 1, 11], 5);
    assert_eq!(conv.infer(&x).unwrap().data(), x.data());
}

#[test]
fn sigmoid_is_stable_at_extremes() {
    let x = Tensor::new(vec![1, 4], vec![-1000.0, -40.0, 40.0, 1000.0]).unwrap();
    let y = ActivationLayer::new(Activation::Sigmoid).infer(&x).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
    assert_eq!(y.data()[0], 0.0);
    assert_eq!(y.data()[3], 1.0);
}

#[test]
fn activation_names_round_trip() {
    for a in [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Sigmoid,
        Activation::Softmax,
        Activation::Linear,
    ] {
        assert_eq!(Activation::from_name(a.name()), Some(a));
        assert_eq!(Activation::from_code(a.code()), Some(a));
    }
    assert_eq!(Activation::from_name("gelu"), None);
}

#[test]
fn maxpool_drops_remainder_and_picks_maxima() {
    let x = Tensor::new(vec![1, 1, 7], vec![1.0, 3.0, -2.0, -1.0, 5.0, 4.0, 9.0]).unwrap();
    let pool = MaxPool1d::new(2).unwrap();
    assert_eq!(pool.output_shape(&[1, 7]).unwrap(), vec![1, 3]);
    assert_eq!(pool.infer(&x).unwrap().data(), &[3.0, -1.0, 5.0]);
}

#[test]
fn dropout_is_identity_at_inference() {
    let x = random_tensor(&[4, 50], 3);
    let d = Dropout::new(0.5).unwrap();
    assert_eq!(d.infer(&x).unwrap(), x);
    assert!(Dropout::new(1.0).is_err());
    assert!(Dropout::new(-0.1).is_err());
}

#[test]
fn dropout_preserves_expectation_in_training() {
    let x = Tensor::new(vec![1, 20_000], vec![1.0; 20_000]).unwrap();
    let mut d = Dropout::new(0.5).unwrap();
    let y = train_forward(&mut d, &x);
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 20_000.0;
    let mean = y.data().iter().sum::<f64>() / 20_000.0;
    assert!((zeros - 0.5).abs() < 0.02, "zero fraction {zeros}");
    assert!((mean - 1.0).abs() < 0.04, "mean {mean}");
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn batchnorm_normalises_in_training_and_uses_running_stats_after() {
    let mut bn = BatchNorm::new(2, 1).unwrap();
    let x = Tensor::new(vec![4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
    let y = train_forward(&mut bn, &x);
    for f in 0..2 {
        let col: Vec<f64> = (0..4).map(|i| y.data()[i * 2 + f]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
    // Fresh layer: running mean 0, variance 1, so inference is ~identity.
    let fresh = BatchNorm::new(2, 1).unwrap();
    let z = fresh.infer(&x).unwrap();
    for (a, b) in z.data().iter().zip(x.data()) {
        assert!((a - b / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn layers_reject_wrong_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conv = Conv1d::new(2, 4, 3, &mut rng).unwrap();
    assert!(conv.infer(&random_tensor(&[1, 3, 5], 0)).is_err());
    let dense = Dense::new(5, 2, &mut rng).unwrap();
    assert!(dense.infer(&random_tensor(&[1, 4], 0)).is_err());
    assert!(Conv1d::new(0, 1, 3, &mut rng).is_err());
    assert!(MaxPool1d::new(0).is_err());
}

#[test]
fn backward_without_forward_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dense = Dense::new(3, 2, &mut rng).unwrap();
    assert!(dense.backward(&random_tensor(&[1, 2], 0)).is_err());
}
