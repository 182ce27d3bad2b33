use std::io::Cursor;

use canloc_neural::{
    read_model, train, write_model, Activation, Dataset, LayerSpec, LossArgs, LossRegistry, NeuralError,
    Sequential, SplitStrategy, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cnn(seed: u64) -> Sequential {
    Sequential::from_specs(
        &[1, 16],
        &[
            LayerSpec::Conv1d { filters: 4, kernel: 3 },
            LayerSpec::BatchNorm,
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::MaxPool1d { size: 2 },
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Dense { units: 3 },
            LayerSpec::Activation(Activation::Softmax),
        ],
        seed,
    )
    .unwrap()
}

/// Three separable classes: a bump at the start, middle or end of the window.
fn bump_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 3;
        let mut x: Vec<f64> = (0..16).map(|_| rng.random_range(-0.1..0.1)).collect();
        for v in &mut x[c * 5..c * 5 + 4] {
            *v += 1.0;
        }
        let mut y = vec![0.0; 3];
        y[c] = 1.0;
        xs.push(x);
        ys.push(y);
        labels.push(c);
    }
    Dataset::new(xs, ys).unwrap().with_labels(labels).unwrap()
}

fn classifier_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        learning_rate: 1e-2,
        optimizer: "adam".into(),
        loss: "cce".into(),
        split: SplitStrategy::PerClassChronological,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn output_shape_chains_through_layers() {
    let m = small_cnn(0);
    assert_eq!(m.output_shape(), vec![3]);
    assert!(m.trainable_count() > 0);
}

#[test]
fn training_learns_separable_classes() {
    let mut m = small_cnn(1);
    let data = bump_dataset(300, 2);
    let hist = train(&mut m, &data, &classifier_cfg(3)).unwrap();
    assert!(hist.val_loss[hist.best_epoch] < hist.val_loss[0]);
    let test = bump_dataset(90, 4);
    let pred = m.predict(&test.inputs).unwrap();
    let correct = pred
        .iter()
        .zip(test.labels.as_ref().unwrap())
        .filter(|(p, &c)| p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == c)
        .count();
    assert!(correct >= 85, "{correct}/90");
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = bump_dataset(120, 5);
    let mut cfg = classifier_cfg(6);
    cfg.epochs = 4;
    let mut a = small_cnn(7);
    let mut b = small_cnn(7);
    let ha = train(&mut a, &data, &cfg).unwrap();
    let hb = train(&mut b, &data, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.snapshot(), b.snapshot());
}

#[test]
fn serialization_round_trip_is_exact() {
    let mut m = small_cnn(8);
    let data = bump_dataset(60, 9);
    let mut cfg = classifier_cfg(10);
    cfg.epochs = 2;
    train(&mut m, &data, &cfg).unwrap();
    m.metadata.insert("classes".into(), "A,E,I".into());
    let mut buf = Vec::new();
    write_model(&m, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"CLOC");
    let back = read_model(&mut Cursor::new(&buf)).unwrap();
    assert_eq!(back.metadata, m.metadata);
    assert_eq!(back.snapshot(), m.snapshot());
    let x = Tensor::stack(&data.inputs[..5], &[1, 16]).unwrap();
    assert_eq!(back.infer(&x).unwrap(), m.infer(&x).unwrap());
}

#[test]
fn corrupt_model_files_are_rejected() {
    let m = small_cnn(11);
    let mut buf = Vec::new();
    write_model(&m, &mut buf).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_model(&mut Cursor::new(&bad)), Err(NeuralError::Format(_))));
    let cut = &buf[..buf.len() / 2];
    assert!(matches!(read_model(&mut Cursor::new(cut)), Err(NeuralError::Format(_))));
}

#[test]
fn dataset_edge_cases_fail_cleanly() {
    let mut m = small_cnn(12);
    let empty = Dataset::default();
    assert!(matches!(train(&mut m, &empty, &classifier_cfg(0)), Err(NeuralError::EmptyDataset)));
    let tiny = bump_dataset(10, 13);
    assert!(matches!(
        train(&mut m, &tiny, &classifier_cfg(0)),
        Err(NeuralError::DatasetTooSmall { .. })
    ));
}

#[test]
fn per_class_split_takes_the_tail_of_each_class() {
    let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 0];
    let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let data = Dataset::new(xs.clone(), xs).unwrap().with_labels(labels).unwrap();
    let (tr, val) = data.split(0.3, SplitStrategy::PerClassChronological).unwrap();
    // class 0 at 0,2,4,6,8,9 -> last 2; class 1 at 1,3,5,7 -> last 1
    let v: Vec<f64> = val.inputs.iter().map(|x| x[0]).collect();
    assert_eq!(v, vec![7.0, 8.0, 9.0]);
    assert_eq!(tr.len(), 7);
    let (_, gval) = data.split(0.3, SplitStrategy::Chronological).unwrap();
    assert_eq!(gval.inputs.iter().map(|x| x[0]).collect::<Vec<_>>(), vec![7.0, 8.0, 9.0]);
}

#[test]
fn loss_registry_validates_weights() {
    let reg = LossRegistry::default();
    assert!(reg.create("weighted_bce", &LossArgs { class_weights: Some(vec![1.0]) }).is_err());
    assert!(reg.create("weighted_bce", &LossArgs { class_weights: Some(vec![0.5, 2.0]) }).is_ok());
    assert!(reg.create("hinge", &LossArgs::default()).is_err());
}

#[test]
fn compiled_plan_tracks_double_precision_inference() {
    use canloc_neural::CompiledModel;
    let mut m = Sequential::from_specs(
        &[2, 24],
        &[
            LayerSpec::Conv1d { filters: 6, kernel: 3 },
            LayerSpec::BatchNorm,
            LayerSpec::Activation(Activation::LeakyRelu),
            LayerSpec::Conv1d { filters: 4, kernel: 4 },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::MaxPool1d { size: 3 },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: 10 },
            LayerSpec::BatchNorm,
            LayerSpec::Activation(Activation::Sigmoid),
            LayerSpec::Dense { units: 4 },
            LayerSpec::Activation(Activation::Softmax),
        ],
        3,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<Vec<f64>> = (0..40).map(|_| (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    // A few training steps so the normalisation statistics are not trivial.
    let x = Tensor::stack(&xs, &[2, 24]).unwrap();
    for _ in 0..3 {
        m.forward(&x, true).unwrap();
    }
    let plan = CompiledModel::compile(&m).unwrap();
    for s in &xs {
        let want = m.infer_one(s).unwrap();
        let got = plan.run(s).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
    assert!(plan.run(&xs[0][..10]).is_err());
}
