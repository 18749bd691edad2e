use refaug_core::augment::{AugPipeline, Intensive, ModerateOp};
use refaug_core::data::{
    epoch_batches, generate_synthetic, one_hot, Dataset, Image, Sample, SyntheticSpec,
};
use refaug_core::metrics::{evaluate, Stage};
use refaug_core::nn::{Model, ModelSpec, OptimState};
use refaug_core::rng::path;
use refaug_core::train::*;
use refaug_core::{Error, RngStream};

fn tiny_data(seed: u64) -> (Dataset, Dataset) {
    generate_synthetic(
        &SyntheticSpec {
            num_classes: 3,
            per_class_train: 8,
            per_class_test: 4,
            height: 8,
            width: 8,
        },
        seed,
    )
    .unwrap()
}

fn conv_spec() -> ModelSpec {
    ModelSpec::small_convnet(vec![3, 4], 3, (3, 8, 8))
}

fn config(n: usize, m: usize) -> StageConfig {
    StageConfig {
        augment_epochs: n,
        refine_epochs: m,
        stage1_pipeline: AugPipeline::with_intensive(
            AugPipeline::standard(1),
            Intensive::Mixup { gamma: 1.0 },
        ),
        stage2_pipeline: AugPipeline::moderate_only(AugPipeline::standard(1)),
        stage1_schedule: LrSchedule::Step {
            lr0: 0.05,
            milestones: vec![2],
            factor: 0.1,
        },
        refine_lr: RefineLr::ContinueFinal,
        refine_mode: RefineMode::Clean,
        batch_size: 8,
        seed: 11,
        eval_every: 1,
        momentum: 0.9,
        weight_decay: 1e-4,
    }
}

fn params(model: &Model<f32>) -> Vec<Vec<f32>> {
    model.state().iter().map(|t| t.values().to_vec()).collect()
}

#[test]
fn records_cover_baseline_and_every_epoch() {
    let (train, test) = tiny_data(1);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let run = refined_training(config(3, 2), conv_spec(), data, &NoClock).unwrap();
    assert_eq!(run.records.len(), 6);
    for (i, r) in run.records.iter().enumerate() {
        assert_eq!(r.epoch, i);
        assert!(r.is_valid(), "{r:?}");
        assert_eq!(r.wall_seconds, 0.0);
    }
    let stages: Vec<Stage> = run.records.iter().map(|r| r.stage).collect();
    use Stage::*;
    assert_eq!(stages, [Augment, Augment, Augment, Augment, Refine, Refine]);
    assert_eq!(run.records[1].lr, 0.05);
    assert!((run.records[3].lr - 0.005).abs() < 1e-15);
    // ContinueFinal holds the epoch-N rate for every refinement epoch
    for r in &run.records[4..] {
        assert_eq!(r.lr, run.records[3].lr);
        assert_eq!(r.intensity_scale, 0.0);
    }
    assert!(run.records[..4].iter().all(|r| r.intensity_scale == 1.0));
    let best = run.records[run.best_epoch].test_acc;
    assert!(run.records.iter().all(|r| r.test_acc <= best));
    assert_eq!(evaluate(&run.best_model, &test).unwrap().accuracy, best);
    assert!(!run.notes.is_empty());
}

#[test]
fn same_seed_same_run() {
    let (train, test) = tiny_data(2);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let a = refined_training(config(2, 1), conv_spec(), data, &NoClock).unwrap();
    let b = refined_training(config(2, 1), conv_spec(), data, &NoClock).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(params(&a.final_model), params(&b.final_model));
    let mut other = config(2, 1);
    other.seed = 12;
    let c = refined_training(other, conv_spec(), data, &NoClock).unwrap();
    assert_ne!(params(&a.final_model), params(&c.final_model));
}

#[test]
fn no_refinement_keeps_the_stage_one_model() {
    let (train, test) = tiny_data(3);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let plain = refined_training(config(3, 0), conv_spec(), data, &NoClock).unwrap();
    assert!(plain.records.iter().all(|r| r.stage == Stage::Augment));
    let mut t = Trainer::new(config(3, 2), conv_spec()).unwrap();
    t.run_until(data, 3, &NoClock).unwrap();
    assert_eq!(params(t.model()), params(&plain.final_model));
    assert_eq!(t.records(), &plain.records[..]);
}

#[test]
fn zero_augmentation_epochs_is_plain_moderate_training() {
    let (train, test) = tiny_data(4);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let refine_only = refined_training(config(0, 3), conv_spec(), data, &NoClock).unwrap();
    let mut moderate = config(3, 0);
    moderate.stage1_pipeline = moderate.stage2_pipeline.clone();
    moderate.stage1_schedule = LrSchedule::Constant { lr: 0.05 };
    let moderate = refined_training(moderate, conv_spec(), data, &NoClock).unwrap();
    assert_eq!(
        params(&refine_only.final_model),
        params(&moderate.final_model)
    );
    for (a, b) in refine_only.records.iter().zip(&moderate.records) {
        assert_eq!(
            (a.risk_aug, a.risk_clean, a.test_loss, a.test_acc),
            (b.risk_aug, b.risk_clean, b.test_loss, b.test_acc)
        );
        assert_eq!(a.lr, b.lr);
    }
    assert!(refine_only.records[1..]
        .iter()
        .all(|r| r.stage == Stage::Refine));
}

#[test]
fn gradual_scales_are_linear() {
    let mut c = config(2, 4);
    c.refine_mode = RefineMode::Gradual {
        decay: Decay::Linear,
    };
    let scales: Vec<f64> = (3..=6).map(|e| c.pipeline_for(e).intensity_scale).collect();
    assert_eq!(scales, [0.75, 0.5, 0.25, 0.0]);
    assert!(!c.pipeline_for(6).has_intensive());
    match c.pipeline_for(4).intensive {
        Intensive::Mixup { gamma } => assert_eq!(gamma, 0.5),
        ref other => panic!("{other:?}"),
    }
    let mut one = config(2, 1);
    one.refine_mode = RefineMode::Gradual {
        decay: Decay::Linear,
    };
    assert_eq!(one.pipeline_for(3), one.stage2_pipeline);
}

#[test]
fn single_gradual_epoch_equals_clean_refinement() {
    let (train, test) = tiny_data(5);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let clean = refined_training(config(2, 1), conv_spec(), data, &NoClock).unwrap();
    let gradual =
        gradual_refined_training(config(2, 1), conv_spec(), data, Decay::Linear, &NoClock).unwrap();
    assert_eq!(clean.records, gradual.records);
    assert_eq!(params(&clean.final_model), params(&gradual.final_model));
    assert!(
        gradual_refined_training(config(2, 0), conv_spec(), data, Decay::Linear, &NoClock).is_err()
    );
}

#[test]
fn forks_share_stage_one() {
    let (train, test) = tiny_data(6);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let mut t = Trainer::new(config(2, 3), conv_spec()).unwrap();
    t.run_until(data, 2, &NoClock).unwrap();
    let gradual = t
        .fork_refinement(
            RefineMode::Gradual {
                decay: Decay::Linear,
            },
            RefineLr::ContinueFinal,
        )
        .unwrap()
        .finish(data, &NoClock)
        .unwrap();
    let mut direct = config(2, 3);
    direct.refine_mode = RefineMode::Gradual {
        decay: Decay::Linear,
    };
    let direct = refined_training(direct, conv_spec(), data, &NoClock).unwrap();
    assert_eq!(gradual.records, direct.records);
    let clean = t.clone().finish(data, &NoClock).unwrap();
    assert_eq!(clean.records[..3], gradual.records[..3]);
    let mut late = t.clone();
    late.step(data, &NoClock).unwrap();
    assert!(late
        .fork_refinement(RefineMode::Clean, RefineLr::ContinueFinal)
        .is_err());
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (train, test) = tiny_data(7);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let whole = refined_training(config(2, 2), conv_spec(), data, &NoClock).unwrap();
    let mut t = Trainer::new(config(2, 2), conv_spec()).unwrap();
    t.run_until(data, 3, &NoClock).unwrap();
    let resumed = Trainer::resume(t.state())
        .unwrap()
        .finish(data, &NoClock)
        .unwrap();
    assert_eq!(whole.records, resumed.records);
    assert_eq!(params(&whole.final_model), params(&resumed.final_model));
    assert_eq!(whole.best_epoch, resumed.best_epoch);
}

#[test]
fn fixed_refinement_rate() {
    let mut c = config(3, 2);
    c.refine_lr = RefineLr::Fixed { lr: Some(3e-4) };
    assert_eq!(c.refine_rate(), 3e-4);
    assert_eq!(c.lr_for(5), 3e-4);
    c.refine_lr = RefineLr::Fixed { lr: None };
    assert!((c.refine_rate() - 0.05 / 1000.0).abs() < 1e-18);
    assert!(c.notes().iter().any(|n| n.contains("lr0 / 1000")));
    c.refine_lr = RefineLr::ContinueFinal;
    c.augment_epochs = 0;
    assert_eq!(c.refine_rate(), 0.05);
}

#[test]
fn config_validation() {
    let mut c = config(0, 0);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    c = config(1, 1);
    c.stage2_pipeline = c.stage1_pipeline.clone();
    assert!(c.validate().is_err());
    c = config(1, 1);
    c.batch_size = 0;
    assert!(c.validate().is_err());
    c = config(1, 0);
    c.refine_mode = RefineMode::Gradual {
        decay: Decay::Linear,
    };
    assert!(c.validate().is_err());
}

#[test]
fn eval_every_repeats_measurements_between_checkpoints() {
    let (train, test) = tiny_data(8);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let mut c = config(3, 2);
    c.eval_every = 2;
    let sparse = refined_training(c, conv_spec(), data, &NoClock).unwrap();
    let dense = refined_training(config(3, 2), conv_spec(), data, &NoClock).unwrap();
    assert_eq!(params(&sparse.final_model), params(&dense.final_model));
    for e in [0, 2, 3, 4, 5] {
        assert_eq!(sparse.records[e], dense.records[e]);
    }
    assert_eq!(sparse.records[1].risk_clean, sparse.records[0].risk_clean);
}

#[test]
fn huge_learning_rate_aborts_with_a_diagnostic() {
    let (train, test) = tiny_data(9);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let mut c = config(3, 0);
    c.stage1_schedule = LrSchedule::Constant { lr: 1e30 };
    match refined_training(c, conv_spec(), data, &NoClock) {
        Err(Error::Aborted { epoch, lr, .. }) => {
            assert!(epoch >= 1);
            assert_eq!(lr, 1e30);
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

fn linear_spec(d: usize) -> ModelSpec {
    let mut spec = ModelSpec::mlp(vec![], 2, (1, 1, d));
    spec.eligible_mix_layers = vec![0];
    spec
}

#[test]
fn vanishing_step_leaves_parameters_and_matches_evaluate() {
    let (train, _) = tiny_data(10);
    let mut spec = ModelSpec::mlp(vec![6], 3, (3, 8, 8));
    spec.eligible_mix_layers = vec![0];
    let mut model = Model::<f32>::new(spec, &RngStream::new(0)).unwrap();
    let before = params(&model);
    let mut optim = OptimState::new(&model, 0.0, 0.0, 0.0);
    let plan = EpochPlan {
        epoch: 1,
        pipeline: &AugPipeline::identity(),
        lr: 1e-30,
        batch_size: 5,
    };
    let loss = train_epoch(&mut model, &mut optim, &train, &plan, &RngStream::new(1)).unwrap();
    for (a, b) in params(&model).iter().flatten().zip(before.iter().flatten()) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
    let eval = evaluate(&model, &train).unwrap();
    assert!((loss - eval.loss).abs() < 1e-6, "{loss} vs {}", eval.loss);
}

/// Softmax regression, batch size 1, two SGD steps with momentum and weight
/// decay, recomputed by hand in f64.
#[test]
fn two_sample_epoch_matches_a_hand_oracle() {
    let xs = [[0.2f32, 0.9, 0.4], [0.7, 0.1, 0.5]];
    let ys = [0usize, 1];
    let samples: Vec<Sample> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| Sample {
            image: Image::new(1, 1, 3, x.to_vec()).unwrap(),
            label: one_hot(y, 2).unwrap(),
        })
        .collect();
    let data = Dataset::new("two", 2, samples).unwrap();
    let mut model = Model::<f32>::new(linear_spec(3), &RngStream::new(0)).unwrap();
    let w0 = [0.3f32, -0.2, 0.1, -0.4, 0.25, 0.05];
    let b0 = [0.05f32, -0.1];
    {
        let mut p = model.params_mut();
        p[0].values_mut().copy_from_slice(&w0);
        p[1].values_mut().copy_from_slice(&b0);
    }
    let (lr, mu, wd) = (0.5, 0.9, 0.01);
    let mut optim = OptimState::new(&model, lr, mu, wd);
    let rng = RngStream::new(42).child(path::EPOCH).child(1);
    let order = epoch_batches(&data, 1, &rng).unwrap();
    let plan = EpochPlan {
        epoch: 1,
        pipeline: &AugPipeline::identity(),
        lr,
        batch_size: 1,
    };
    train_epoch(&mut model, &mut optim, &data, &plan, &rng).unwrap();

    let mut w: Vec<f64> = w0.iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = b0.iter().map(|&v| v as f64).collect();
    let (mut vw, mut vb) = (vec![0.0f64; 6], vec![0.0f64; 2]);
    for batch in order {
        let i = batch[0];
        let x: Vec<f64> = xs[i].iter().map(|&v| v as f64).collect();
        let z: Vec<f64> = (0..2)
            .map(|k| b[k] + (0..3).map(|j| w[k * 3 + j] * x[j]).sum::<f64>())
            .collect();
        let mx = z[0].max(z[1]);
        let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let p: Vec<f64> = e.iter().map(|v| v / (e[0] + e[1])).collect();
        for k in 0..2 {
            let dz = p[k] - if k == ys[i] { 1.0 } else { 0.0 };
            for j in 0..3 {
                let g = dz * x[j];
                vw[k * 3 + j] = mu * vw[k * 3 + j] + g + wd * w[k * 3 + j];
                w[k * 3 + j] -= lr * vw[k * 3 + j];
            }
            vb[k] = mu * vb[k] + dz;
            b[k] -= lr * vb[k];
        }
    }
    let got = params(&model);
    for (a, e) in got[0].iter().zip(&w) {
        assert!((*a as f64 - e).abs() < 1e-6, "{a} vs {e}");
    }
    for (a, e) in got[1].iter().zip(&b) {
        assert!((*a as f64 - e).abs() < 1e-6, "{a} vs {e}");
    }
}

#[test]
fn manifold_mixup_trains() {
    let (train, test) = tiny_data(11);
    let data = Splits {
        train: &train,
        test: &test,
    };
    let mut c = config(2, 1);
    c.stage1_pipeline = AugPipeline::with_intensive(
        vec![ModerateOp::HFlip { probability: 0.5 }],
        Intensive::ManifoldMixup {
            gamma: 0.5,
            eligible_layers: vec![0, 1, 2],
        },
    );
    assert!(matches!(
        Trainer::new(c.clone(), conv_spec()),
        Err(Error::Config(_))
    ));
    c.stage1_pipeline.intensive = Intensive::ManifoldMixup {
        gamma: 0.5,
        eligible_layers: vec![0, 1],
    };
    let run = refined_training(c, conv_spec(), data, &NoClock).unwrap();
    assert!(run.records.iter().all(|r| r.is_valid()));
}
