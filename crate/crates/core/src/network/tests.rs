use super::*;
use crate::autodiff::{grad_check, GradCheckConfig, Optimizer};
use crate::cloudio::{generate_dataset, generate_shape, DatasetSpec, ShapeKind};
use crate::structconv::KernelMode;
use crate::AscnError;

fn shape(kind: ShapeKind, n: usize, seed: u64) -> PointCloud {
    generate_shape(kind, n, 0.01, 1.0, seed).unwrap()
}

fn small_config(mode: KernelMode, neighborhood: Neighborhood) -> ModelConfig {
    ModelConfig {
        stages: vec![
            Stage::Conv { kernels: 4 },
            Stage::Pool,
            Stage::Conv { kernels: 6 },
            Stage::Pool,
            Stage::Conv { kernels: 5 },
        ],
        supports: 3,
        kernel_mode: mode,
        neighborhood,
        hidden: 7,
        ..ModelConfig::standard(3)
    }
    .with_seed(11)
}

#[test]
fn tape_forward_matches_reference() {
    let cloud = shape(ShapeKind::Sphere, 120, 4);
    for mode in [KernelMode::StrConv, KernelMode::DirOnly, KernelMode::DistOnly] {
        for nb in [Neighborhood::Adaptive, Neighborhood::Fixed(4)] {
            let model = build_model(&small_config(mode, nb)).unwrap();
            let pooling = Pooling::Seeded(99);
            let (tape, trace) = model.logits(&cloud, pooling).unwrap();
            let reference = model.reference_logits(&cloud, pooling).unwrap();
            assert_eq!(trace.kept.len(), 2);
            assert_eq!(trace.stage_sizes, vec![120, 120, 30, 30, 8]);
            for (a, b) in tape.iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-10, "{mode:?} {nb:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn standard_model_matches_reference() {
    let cloud = shape(ShapeKind::Plane, 300, 2);
    let model = build_model(&ModelConfig::standard(3).with_seed(5)).unwrap();
    let (tape, trace) = model.logits(&cloud, Pooling::Seeded(3)).unwrap();
    let reference = model.reference_logits(&cloud, Pooling::Seeded(3)).unwrap();
    assert_eq!(trace.stage_sizes, vec![300, 300, 75, 75, 19, 19, 5, 5]);
    for (a, b) in tape.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn layer_round_trips_through_params() {
    let model = build_model(&small_config(KernelMode::StrConv, Neighborhood::Adaptive)).unwrap();
    let expected = crate::structconv::init_layer(4, 3, 1, 4, crate::rng::derive_seed(11, &[0x4c41_5945, 0])).unwrap();
    assert_eq!(model.layer(0), expected);
}

#[test]
fn toy_model_gradients_match_finite_differences() {
    let model = build_model(&ModelConfig::toy(3).with_seed(2)).unwrap();
    let cloud = shape(ShapeKind::Box, 24, 8);
    let kept = vec![(0..24).step_by(2).collect::<Vec<_>>()];
    let build = loss_builder(&model, &cloud, 1, &kept);
    let report = grad_check(&build, &model.params, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    assert!(report.total_checked() > report.total_skipped() * 4);
}

#[test]
fn explicit_pooling_follows_permutation() {
    let model = build_model(&small_config(KernelMode::StrConv, Neighborhood::Adaptive)).unwrap();
    let cloud = shape(ShapeKind::Cylinder, 80, 6);
    let (_, trace) = model.logits(&cloud, Pooling::Seeded(1)).unwrap();
    let (base, _) = model.logits(&cloud, Pooling::Explicit(&trace.kept)).unwrap();

    let perm: Vec<usize> = (0..80).map(|i| (i * 37 + 11) % 80).collect();
    let permuted = cloud.select(&perm).unwrap();
    let mut inverse = vec![0; 80];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let mut kept0: Vec<usize> = trace.kept[0].iter().map(|&k| inverse[k]).collect();
    kept0.sort_unstable();
    // second-stage indices refer to the first stage's kept order
    let order0: Vec<usize> = kept0.iter().map(|&k| perm[k]).collect();
    let pos_in_original: Vec<usize> = order0
        .iter()
        .map(|o| trace.kept[0].iter().position(|k| k == o).unwrap())
        .collect();
    let mut inv0 = vec![0; pos_in_original.len()];
    for (new, &old) in pos_in_original.iter().enumerate() {
        inv0[old] = new;
    }
    let mut kept1: Vec<usize> = trace.kept[1].iter().map(|&k| inv0[k]).collect();
    kept1.sort_unstable();
    let (moved, _) = model.logits(&permuted, Pooling::Explicit(&[kept0, kept1])).unwrap();
    for (a, b) in base.iter().zip(&moved) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn small_and_nonfinite_clouds_are_degenerate() {
    let model = build_model(&ModelConfig::standard(3)).unwrap();
    let tiny = shape(ShapeKind::Sphere, 8, 1).select(&[0, 1, 2]).unwrap();
    assert!(matches!(model.predict(&tiny), Err(AscnError::DegenerateCloud(_))));
    // too small to survive three poolings
    let small = shape(ShapeKind::Sphere, 20, 1);
    assert!(matches!(model.predict(&small), Err(AscnError::DegenerateCloud(_))));
    assert_eq!(ModelConfig::standard(3).min_points(), 65);
    assert!(model.predict(&shape(ShapeKind::Sphere, 65, 1)).is_ok());
}

#[test]
fn model_bytes_round_trip_and_reject_damage() {
    let mut cfg = small_config(KernelMode::DirOnly, Neighborhood::Fixed(5));
    cfg.class_names = vec!["a".into(), "b".into(), "c".into()];
    let model = build_model(&cfg).unwrap();
    let bytes = model_to_bytes(&model).unwrap();
    let back = model_from_bytes(&bytes).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params.to_flat(), model.params.to_flat());

    let cloud = shape(ShapeKind::Line, 90, 3);
    assert_eq!(model.predict(&cloud).unwrap().logits, back.predict(&cloud).unwrap().logits);

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(model_from_bytes(&flipped), Err(AscnError::CorruptModel(_))));
    assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 3]), Err(AscnError::CorruptModel(_))));
    assert!(matches!(model_from_bytes(b"NOPE1234"), Err(AscnError::CorruptModel(_))));
    let mut versioned = bytes.clone();
    versioned[4] = 9;
    assert!(matches!(
        model_from_bytes(&versioned),
        Err(AscnError::Version { found: 9, expected: 1 })
    ));
}

fn tiny_dataset(count: usize, seed: u64) -> crate::cloudio::Dataset {
    let mut spec = DatasetSpec::three_class(count);
    for c in &mut spec.classes {
        c.points = (70, 90);
    }
    generate_dataset(&spec, seed).unwrap()
}

fn tiny_model_config(data: &crate::cloudio::Dataset) -> ModelConfig {
    ModelConfig {
        stages: vec![Stage::Conv { kernels: 6 }, Stage::Pool, Stage::Conv { kernels: 8 }],
        supports: 2,
        hidden: 8,
        ..ModelConfig::standard(3)
    }
    .with_classes(&data.class_names)
    .with_seed(3)
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data = tiny_dataset(4, 21);
    let cfg = tiny_model_config(&data);
    let tc = TrainConfig {
        epochs: 6,
        batch_size: 4,
        optimizer: Optimizer::default().with_lr(1e-2),
        seed: 9,
        ..TrainConfig::default()
    };
    let mut a = build_model(&cfg).unwrap();
    let log_a = train(&mut a, &data, &tc).unwrap();
    let mut b = build_model(&cfg).unwrap();
    let log_b = train_with(&mut b, &data, &tc, 3, |_| {}).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a.params.to_flat(), b.params.to_flat());
    assert_eq!(log_a.epochs.len(), 6);
    assert!(log_a.epochs[5].loss < log_a.epochs[0].loss, "{:?}", log_a.epochs);

    let eval = evaluate(&a, &data, 2).unwrap();
    assert_eq!(eval.accuracy.total, 12);
    assert_eq!(eval.confusion.iter().enumerate().map(|(i, r)| r[i]).sum::<usize>(), eval.accuracy.correct);
    assert_eq!(eval.confusion.iter().flatten().sum::<usize>(), 12);
    assert_eq!(eval, evaluate(&a, &data, 1).unwrap());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let data = tiny_dataset(2, 6);
    let mut model = build_model(&tiny_model_config(&data)).unwrap();
    let before = model.params.to_flat();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 2,
        optimizer: Optimizer::default().with_lr(0.0),
        seed: 1,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &data, &tc).unwrap();
    assert_eq!(model.params.to_flat(), before);
    // pooling subsets change per epoch, so only the parameters are pinned
    assert!(log.epochs.iter().all(|e| e.loss.is_finite()));
}

#[test]
fn directions_stay_unit_length_after_training() {
    let data = tiny_dataset(2, 5);
    let mut model = build_model(&tiny_model_config(&data)).unwrap();
    train(&mut model, &data, &TrainConfig { epochs: 2, batch_size: 3, ..TrainConfig::default() }).unwrap();
    let k = model.convs[1].dir_directions.unwrap();
    for row in model.params.value(k).data.chunks_exact(3) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn class_mismatch_is_reported() {
    let data = tiny_dataset(1, 5);
    let mut model = build_model(&ModelConfig::standard(2)).unwrap();
    assert!(matches!(
        train(&mut model, &data, &TrainConfig::default()),
        Err(AscnError::ClassMismatch(_))
    ));
    let mut cfg = ModelConfig::standard(3);
    cfg.class_names = vec!["x".into(), "y".into(), "z".into()];
    let model = build_model(&cfg).unwrap();
    assert!(matches!(evaluate(&model, &data, 1), Err(AscnError::ClassMismatch(_))));
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
    let p = prediction_from_logits(vec![0.0, 0.0, 0.0]);
    assert_eq!(p.label, 0);
    assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}
