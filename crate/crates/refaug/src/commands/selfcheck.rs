//! Fast verification suite run by `refaug selfcheck`.

use refaug_core::augment::{
    apply_op, beta_sample, cutmix_masks, mix_pixel, mix_value, mixup_with, AugPipeline, Intensive,
    MixHook, OpKind,
};
use refaug_core::data::{generate_synthetic, one_hot, Image, Sample, SyntheticSpec};
use refaug_core::nn::gradcheck::{check_smooth_instance, compare, numeric_gradients, FD_STEP};
use refaug_core::nn::{Model, ModelSpec, Tensor};
use refaug_core::rng::path;
use refaug_core::train::{LrSchedule, NoClock, RefineLr, RefineMode, Splits, StageConfig, Trainer};
use refaug_core::RngStream;

pub const GRAD_INSTANCES: u64 = 20;
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Asymptotic Kolmogorov critical value at significance 0.01.
pub const KS_CRITICAL_001: f64 = 1.6276;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckOptions {
    /// Scale one backward tensor by 1.01 before comparing, to prove the
    /// gradient check can fail.
    pub inject_fault: bool,
}

type Check = fn(&SelfcheckOptions) -> Result<String, String>;

pub const CHECKS: [(&str, Check); 7] = [
    ("gradient", gradient),
    ("beta", beta),
    ("mixup", mixup),
    ("cutmix", cutmix),
    ("policy", policy),
    ("hook", hook),
    ("determinism", determinism),
];

pub fn run_checks(opts: &SelfcheckOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f(opts) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
            }
        })
        .collect()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient(opts: &SelfcheckOptions) -> Result<String, String> {
    let root = RngStream::new(0x5e1f);
    let mut worst = 0.0f64;
    for i in 0..GRAD_INSTANCES {
        let (inst, report, _) = check_smooth_instance(&root, i).map_err(err)?;
        let error = if opts.inject_fault {
            let trace = inst
                .model
                .forward_train_frozen(&inst.input, inst.hook.as_ref(), None)
                .map_err(err)?;
            let (_, mut grads) = inst.model.backward(&trace, &inst.labels).map_err(err)?;
            grads.0[0].values_mut().iter_mut().for_each(|g| *g *= 1.01);
            let numeric = numeric_gradients(
                &inst.model,
                &inst.input,
                &inst.labels,
                inst.hook.as_ref(),
                FD_STEP,
            )
            .map_err(err)?;
            compare(&grads, &numeric).max_rel_error
        } else {
            report.max_rel_error
        };
        worst = worst.max(error);
        if error.is_nan() || error >= GRAD_TOLERANCE {
            return Err(format!(
                "instance {i}: relative error {error:.3e} >= {GRAD_TOLERANCE:.0e}"
            ));
        }
    }
    Ok(format!(
        "{GRAD_INSTANCES} instances, max relative error {worst:.2e}"
    ))
}

fn beta(_: &SelfcheckOptions) -> Result<String, String> {
    let n = 10_000;
    let mut rng = RngStream::new(0xbe7a);
    let mut xs: Vec<f64> = (0..n)
        .map(|_| beta_sample(1.0, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    let critical = KS_CRITICAL_001 / (n as f64).sqrt();
    if d >= critical {
        return Err(format!(
            "KS statistic {d:.4} >= {critical:.4} for gamma = 1"
        ));
    }
    for gamma in [0.2, 0.5, 1.0] {
        let xs: Vec<f64> = (0..n)
            .map(|_| beta_sample(gamma, &mut rng))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 1.0 / (4.0 * (2.0 * gamma + 1.0));
        if (mean - 0.5).abs() > 0.02 || (var - want).abs() > 0.15 * want {
            return Err(format!(
                "gamma {gamma}: mean {mean:.4}, variance {var:.4} (want {want:.4})"
            ));
        }
    }
    Ok(format!(
        "KS D = {d:.4} < {critical:.4}; moments ok for gamma 0.2, 0.5, 1"
    ))
}

fn random_batch(
    rng: &mut RngStream,
    n: usize,
    shape: (usize, usize, usize),
    classes: usize,
) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let (c, h, w) = shape;
            let px = (0..c * h * w).map(|_| rng.uniform() as f32).collect();
            Sample {
                image: Image::new(c, h, w, px).unwrap(),
                label: one_hot(rng.below(classes), classes).unwrap(),
            }
        })
        .collect()
}

fn mixup(_: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = RngStream::new(0x31c5);
    let batch = random_batch(&mut rng, 8, (3, 6, 5), 4);
    let partners = rng.permutation(batch.len());
    for lambda in [0.0, 0.3, 0.5, 0.9, 1.0] {
        let mixed = mixup_with(&batch, lambda, &partners).map_err(err)?;
        let l = lambda as f32;
        for (i, m) in mixed.iter().enumerate() {
            let (a, b) = (&batch[i], &batch[partners[i]]);
            for ((&o, &x), &y) in m
                .image
                .pixels()
                .iter()
                .zip(a.image.pixels())
                .zip(b.image.pixels())
            {
                let want = l * x + (1.0 - l) * y;
                if (o - want).abs() > 4.0 * f32::EPSILON {
                    return Err(format!("lambda {lambda}: pixel {o} vs {want}"));
                }
            }
            for ((&o, &x), &y) in m
                .label
                .probs()
                .iter()
                .zip(a.label.probs())
                .zip(b.label.probs())
            {
                if (o - (l * x + (1.0 - l) * y)).abs() > 4.0 * f32::EPSILON {
                    return Err(format!("lambda {lambda}: label entry {o}"));
                }
            }
        }
    }
    Ok("pixels and labels equal lambda*a + (1-lambda)*b".into())
}

fn cutmix(_: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = RngStream::new(0xc07);
    for draw in 0..1000 {
        let (h, w) = (4 + rng.below(29), 4 + rng.below(29));
        let (mask, coef) = cutmix_masks(h, w, &mut rng).map_err(err)?;
        let hw = (h * w) as f64;
        let implied = (1.0 - coef.lambda) * hw;
        if (implied - mask.area() as f64).abs() > 1e-9 * hw
            || implied.round() as usize != mask.area()
        {
            return Err(format!(
                "draw {draw}: area {} vs (1 - lambda)HW = {implied}",
                mask.area()
            ));
        }
    }
    Ok("area = (1 - lambda)HW on 1000 draws".into())
}

fn policy(_: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = RngStream::new(0x9011);
    let tol = 1.0 / 255.0 + 1e-6;
    for trial in 0..20 {
        let img = &random_batch(&mut rng, 1, (3, 9, 11), 2)[0].image;
        let cases = [
            (
                "Invert twice",
                apply_op(&apply_op(img, OpKind::Invert, 0.0), OpKind::Invert, 0.0),
            ),
            ("Rotate 0", apply_op(img, OpKind::Rotate, 0.0)),
            ("Posterize 8", apply_op(img, OpKind::Posterize, 8.0)),
        ];
        for (name, out) in cases {
            let worst = out
                .pixels()
                .iter()
                .zip(img.pixels())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max);
            if worst as f64 > tol {
                return Err(format!("{name} (trial {trial}) moved a pixel by {worst}"));
            }
        }
    }
    Ok("Invert twice, Rotate 0, Posterize 8 are identities".into())
}

fn hook(_: &SelfcheckOptions) -> Result<String, String> {
    let spec = ModelSpec::small_convnet(vec![4, 6], 3, (3, 8, 8));
    let model = Model::<f32>::new(spec, &RngStream::new(3)).map_err(err)?;
    let mut rng = RngStream::new(0x4007);
    for b in 0..10 {
        let batch = random_batch(&mut rng, 6, (3, 8, 8), 3);
        let lambda = rng.uniform();
        let partners = rng.permutation(batch.len());
        let direct = Tensor::from_samples(&mixup_with(&batch, lambda, &partners).map_err(err)?)
            .map_err(err)?;
        let a = model.forward_eval(&direct, None).map_err(err)?;
        let hook = MixHook {
            layer: 0,
            lambda,
            partners,
        };
        let raw = Tensor::from_samples(&batch).map_err(err)?;
        let h = model.forward_eval(&raw, Some(&hook)).map_err(err)?;
        if a.values()
            .iter()
            .zip(h.values())
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Err(format!("batch {b}: layer-0 hook differs from input mixup"));
        }
    }
    // same expression on scalars, so the two paths cannot drift apart
    let (l, x, y) = (0.37f32, 0.2f32, 0.9f32);
    if mix_pixel(l, x, y) != mix_value(l, x, y) {
        return Err("mix_pixel and mix_value disagree inside [0, 1]".into());
    }
    Ok("layer-0 hook equals input mixup bit-for-bit on 10 batches".into())
}

fn tiny_run(seed: u64) -> Result<(Vec<String>, Vec<u32>), String> {
    let spec = SyntheticSpec {
        num_classes: 3,
        per_class_train: 8,
        per_class_test: 4,
        height: 8,
        width: 8,
    };
    let (train, test) = generate_synthetic(&spec, seed).map_err(err)?;
    let config = StageConfig {
        augment_epochs: 2,
        refine_epochs: 1,
        stage1_pipeline: AugPipeline::with_intensive(
            AugPipeline::standard(1),
            Intensive::Mixup { gamma: 1.0 },
        ),
        stage2_pipeline: AugPipeline::moderate_only(AugPipeline::standard(1)),
        stage1_schedule: LrSchedule::Constant { lr: 0.05 },
        refine_lr: RefineLr::ContinueFinal,
        refine_mode: RefineMode::Clean,
        batch_size: 8,
        seed,
        eval_every: 1,
        momentum: 0.9,
        weight_decay: 1e-4,
    };
    let model = ModelSpec::small_convnet(vec![4], 3, (3, 8, 8));
    let run = Trainer::new(config, model)
        .and_then(|t| {
            t.finish(
                Splits {
                    train: &train,
                    test: &test,
                },
                &NoClock,
            )
        })
        .map_err(err)?;
    let records = run.records.iter().map(|r| format!("{r:?}")).collect();
    let bits = run
        .final_model
        .state()
        .iter()
        .flat_map(|t| t.values().iter().map(|v| v.to_bits()))
        .collect();
    Ok((records, bits))
}

fn determinism(_: &SelfcheckOptions) -> Result<String, String> {
    let seed = RngStream::new(0xde7).child(path::CHECK).next_u64();
    let a = tiny_run(seed)?;
    let b = tiny_run(seed)?;
    if a != b {
        return Err("two runs with the same seed differ".into());
    }
    Ok(format!(
        "two 3-epoch runs match ({} records, {} weights)",
        a.0.len(),
        a.1.len()
    ))
}
