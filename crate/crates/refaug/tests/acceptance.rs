//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs as a plain binary so the lines always show.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use refaug::commands::{cmd_train, TrainArgs};
use refaug::config::RunConfig;
use refaug_core::augment::{
    apply_op, beta_sample, cutmix_masks, cutmix_with, mixup_with, CutMask, MixHook, OpKind,
};
use refaug_core::data::{one_hot, Image, Sample};
use refaug_core::metrics::{evaluate, median, EpochRecord};
use refaug_core::nn::gradcheck::check_smooth_instance;
use refaug_core::nn::gradcheck::TinyInstance;
use refaug_core::nn::{flat_labels, soft_ce_loss, Model, ModelSpec, Tensor};
use refaug_core::train::{Decay, LrSchedule, NoClock, RefineLr, RefineMode, Splits, Trainer};
use refaug_core::RngStream;

// Tolerances, as stated by the criteria.
const GRAD_INSTANCES: u64 = 100;
const GRAD_STEP: f64 = 1e-3;
const GRAD_MAX_REL: f64 = 1e-3;
const GRAD_SECONDS: f64 = 60.0;
const CUTMIX_DRAWS: usize = 1000;
const BETA_N: usize = 10_000;
/// Kolmogorov distribution quantile for significance 0.01.
const KS_C_001: f64 = 1.6276;
const BETA_MEAN_TOL: f64 = 0.02;
const BETA_VAR_REL: f64 = 0.15;
const COSINE_TOL: f64 = 1e-12;
const DESK_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DESK_MIN_SEEDS: usize = 4;
const DESK_SECONDS: f64 = 600.0;
const ACC_REGRESSION: f64 = 0.01;
const HOOK_BATCHES: usize = 50;
const GRADUAL_MAX_GAP: f64 = 0.02;
const POLICY_TOL: f64 = 1.0 / 255.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// ---------------------------------------------------------------- 1

/// Mean soft cross-entropy of a train-mode forward pass with frozen stats.
fn loss(model: &Model<f64>, inst: &TinyInstance) -> f64 {
    let trace = model
        .forward_train_frozen(&inst.input, inst.hook.as_ref(), None)
        .unwrap();
    soft_ce_loss(trace.logits(), &inst.labels).unwrap()
}

/// Central differences written out here rather than borrowed from the
/// library, so the oracle is independent of the code under test.
fn central_differences(inst: &TinyInstance) -> Vec<Vec<f64>> {
    let n = inst.model.params().len();
    (0..n)
        .map(|p| {
            let len = inst.model.params()[p].0.len();
            (0..len)
                .map(|i| {
                    let mut up = inst.model.clone();
                    up.params_mut()[p].values_mut()[i] += GRAD_STEP;
                    let mut down = inst.model.clone();
                    down.params_mut()[p].values_mut()[i] -= GRAD_STEP;
                    (loss(&up, inst) - loss(&down, inst)) / (2.0 * GRAD_STEP)
                })
                .collect()
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let root = RngStream::new(2024);
    let (mut worst, mut worst_entry, mut hooked) = (0.0f64, 0.0f64, 0);
    for i in 0..GRAD_INSTANCES {
        let (inst, _, _) = check_smooth_instance(&root, i).unwrap();
        hooked += inst.hook.is_some() as usize;
        let trace = inst
            .model
            .forward_train_frozen(&inst.input, inst.hook.as_ref(), None)
            .unwrap();
        let (_, grads) = inst.model.backward(&trace, &inst.labels).unwrap();
        for (a, n) in grads.0.iter().zip(central_differences(&inst)) {
            let a = a.values();
            let diff = norm(a.iter().zip(&n).map(|(x, y)| x - y));
            let scale = norm(a.iter().copied())
                .max(norm(n.iter().copied()))
                .max(1e-8);
            worst = worst.max(diff / scale);
            worst_entry = a
                .iter()
                .zip(&n)
                .map(|(x, y)| (x - y).abs())
                .fold(worst_entry, f64::max);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < GRAD_MAX_REL && secs < GRAD_SECONDS,
        format!(
            "{GRAD_INSTANCES} instances ({hooked} with a mixing hook), max relative error {worst:.2e} \
             (< {GRAD_MAX_REL:.0e}), max entry diff {worst_entry:.1e}, {secs:.1} s (< {GRAD_SECONDS} s)"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_batch(
    rng: &mut RngStream,
    n: usize,
    (c, h, w): (usize, usize, usize),
    classes: usize,
) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            image: Image::new(
                c,
                h,
                w,
                (0..c * h * w).map(|_| rng.uniform() as f32).collect(),
            )
            .unwrap(),
            label: one_hot(rng.below(classes), classes).unwrap(),
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let mut rng = RngStream::new(0xacc2);
    let mut mixup_worst = 0.0f64;
    for _ in 0..50 {
        let batch = random_batch(&mut rng, 6, (3, 5, 7), 5);
        let lambda = rng.uniform();
        let partners = rng.permutation(batch.len());
        let mixed = mixup_with(&batch, lambda, &partners).unwrap();
        let l = lambda as f32 as f64;
        for (i, m) in mixed.iter().enumerate() {
            let (a, b) = (&batch[i], &batch[partners[i]]);
            let pix = m
                .image
                .pixels()
                .iter()
                .zip(a.image.pixels().iter().zip(b.image.pixels()));
            let lab = m
                .label
                .probs()
                .iter()
                .zip(a.label.probs().iter().zip(b.label.probs()));
            for (&o, (&x, &y)) in pix.chain(lab) {
                let want = l * x as f64 + (1.0 - l) * y as f64;
                mixup_worst = mixup_worst.max((o as f64 - want).abs());
            }
        }
    }
    // a few f32 roundings of values in [0, 1]
    let mixup_ok = mixup_worst <= 4.0 * f32::EPSILON as f64;

    let mut identity_failures = 0;
    let mut paste_failures = 0;
    for _ in 0..CUTMIX_DRAWS {
        let (h, w) = (2 + rng.below(31), 2 + rng.below(31));
        let (mask, coef) = cutmix_masks(h, w, &mut rng).unwrap();
        let hw = h * w;
        let area = (mask.x1 - mask.x0) * (mask.y1 - mask.y0);
        // (1 - lambda) * H * W must be the integer mask area
        let implied = (1.0 - coef.lambda) * hw as f64;
        if implied.round() as usize != area
            || (implied - area as f64).abs() > 1e-9
            || coef.lambda != (hw - area) as f64 / hw as f64
        {
            identity_failures += 1;
        }
        if paste_failures == 0 && h <= 12 && w <= 12 {
            paste_failures += cutmix_paste_errors(&mut rng, h, w, &mask, coef.lambda);
        }
    }
    outcome(
        mixup_ok && identity_failures == 0 && paste_failures == 0,
        format!(
            "mixup max |out - (l*a + (1-l)*b)| = {mixup_worst:.1e} over 50 batches; cutmix area identity failed on \
             {identity_failures}/{CUTMIX_DRAWS} draws, pasted-pixel errors {paste_failures}"
        ),
    )
}

fn cutmix_paste_errors(
    rng: &mut RngStream,
    h: usize,
    w: usize,
    mask: &CutMask,
    lambda: f64,
) -> usize {
    let batch = random_batch(rng, 4, (2, h, w), 3);
    let partners = rng.permutation(4);
    let out = cutmix_with(&batch, mask, lambda, &partners).unwrap();
    let mut errors = 0;
    for (i, s) in out.iter().enumerate() {
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let src = if mask.contains(y, x) {
                        &batch[partners[i]]
                    } else {
                        &batch[i]
                    };
                    errors += (s.image.get(c, y, x) != src.image.get(c, y, x)) as usize;
                }
            }
        }
        let l = lambda as f32;
        let (a, b) = (batch[i].label.probs(), batch[partners[i]].label.probs());
        for k in 0..3 {
            let want = l * a[k] + (1.0 - l) * b[k];
            errors += ((s.label.probs()[k] - want).abs() > 4.0 * f32::EPSILON) as usize;
        }
    }
    errors
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = RngStream::new(0xacc3);
    let mut xs: Vec<f64> = (0..BETA_N)
        .map(|_| beta_sample(1.0, &mut rng).unwrap())
        .collect();
    xs.sort_by(f64::total_cmp);
    let n = BETA_N as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let critical = KS_C_001 / n.sqrt();
    let mut pass = d < critical;
    let mut parts = vec![format!("KS D = {d:.4} (< {critical:.4})")];
    for gamma in [0.2, 0.5, 1.0] {
        let v: Vec<f64> = (0..BETA_N)
            .map(|_| beta_sample(gamma, &mut rng).unwrap())
            .collect();
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = 1.0 / (4.0 * (2.0 * gamma + 1.0));
        pass &= (mean - 0.5).abs() <= BETA_MEAN_TOL && (var - want).abs() <= BETA_VAR_REL * want;
        parts.push(format!(
            "gamma {gamma}: mean {mean:.4}, var {var:.4} vs {want:.4}"
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let a = LrSchedule::Step {
        lr0: 0.1,
        milestones: vec![150, 275],
        factor: 0.1,
    };
    let b = LrSchedule::Step {
        lr0: 0.2,
        milestones: vec![120, 240, 320],
        factor: 0.2,
    };
    // "divided by 10 after 150, 275" and "divided by 5 after 120, 240, 320"
    let probes: [(&LrSchedule, usize, f64); 13] = [
        (&a, 0, 0.1),
        (&a, 149, 0.1),
        (&a, 150, 0.01),
        (&a, 274, 0.01),
        (&a, 275, 0.001),
        (&a, 399, 0.001),
        (&b, 0, 0.2),
        (&b, 119, 0.2),
        (&b, 120, 0.04),
        (&b, 239, 0.04),
        (&b, 240, 0.008),
        (&b, 320, 0.0016),
        (&b, 399, 0.0016),
    ];
    let step_misses = probes
        .iter()
        .filter(|(s, e, want)| s.lr_at(*e) != *want)
        .count();
    let c = LrSchedule::Cosine {
        lr0: 0.1,
        lr_min: 0.0,
        t_max: 200,
    };
    let cos_err = [(0, 0.1), (100, 0.05), (200, 0.0)]
        .iter()
        .map(|&(e, want)| (c.lr_at(e) - want).abs())
        .fold(0.0, f64::max);
    outcome(
        step_misses == 0 && cos_err <= COSINE_TOL,
        format!("{step_misses}/13 step probes differ from the protocol values; cosine endpoint/midpoint error {cos_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 5, 6, 9

struct DeskSeed {
    at_n: EpochRecord,
    at_end: EpochRecord,
    acc_n: f64,
    acc_end: f64,
    loss_n: f64,
    loss_end: f64,
    gradual_acc: f64,
}

fn desk_runs() -> (Vec<DeskSeed>, f64, f64) {
    // eval every 5 epochs: N and N+M are always measured and measurement
    // does not touch training state
    let config = RunConfig::load(
        &configs().join("desk_mixup.toml"),
        &["stage.eval_every=5".into()],
        None,
    )
    .unwrap();
    let n = config.file.stage.augment_epochs;
    let (mut out, mut main_secs, mut gradual_secs) = (Vec::new(), 0.0, 0.0);
    for seed in DESK_SEEDS {
        let start = Instant::now();
        let data = config.data_source(seed);
        let (train, test) = data.load().unwrap();
        let splits = Splits {
            train: &train,
            test: &test,
        };
        let mut t =
            Trainer::new(config.stage_config(seed), config.model_spec(&data, &train)).unwrap();
        t.run_until(splits, n, &NoClock).unwrap();
        let e_n = evaluate(t.model(), &test).unwrap();
        let fork_start = Instant::now();
        let gradual = t
            .fork_refinement(
                RefineMode::Gradual {
                    decay: Decay::Linear,
                },
                RefineLr::ContinueFinal,
            )
            .unwrap()
            .finish(splits, &NoClock)
            .unwrap();
        let fork_secs = fork_start.elapsed().as_secs_f64();
        let run = t.finish(splits, &NoClock).unwrap();
        let e_end = evaluate(&run.final_model, &test).unwrap();
        main_secs += start.elapsed().as_secs_f64() - fork_secs;
        gradual_secs += fork_secs;
        out.push(DeskSeed {
            at_n: run.records[n],
            at_end: *run.records.last().unwrap(),
            acc_n: e_n.accuracy,
            acc_end: e_end.accuracy,
            loss_n: e_n.loss,
            loss_end: e_end.loss,
            gradual_acc: evaluate(&gradual.final_model, &test).unwrap().accuracy,
        });
    }
    (out, main_secs, gradual_secs)
}

fn criterion_5(runs: &[DeskSeed], secs: f64) -> Outcome {
    let a = runs
        .iter()
        .filter(|r| r.at_n.risk_aug > r.at_n.risk_clean)
        .count();
    let b = runs
        .iter()
        .filter(|r| r.at_end.risk_clean < r.at_n.risk_clean)
        .count();
    let pairs: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "{:.0}/{:.0} -> {:.0}",
                r.at_n.risk_aug * 1e3,
                r.at_n.risk_clean * 1e3,
                r.at_end.risk_clean * 1e3
            )
        })
        .collect();
    outcome(
        a >= DESK_MIN_SEEDS && b >= DESK_MIN_SEEDS && secs < DESK_SECONDS,
        format!(
            "(a) risk_aug > risk_clean at N in {a}/5, (b) risk_clean falls N -> N+M in {b}/5 \
             [x1e-3 aug/clean at N -> clean at N+M: {}]; {secs:.0} s (< {DESK_SECONDS} s)",
            pairs.join(", ")
        ),
    )
}

fn criterion_6(runs: &[DeskSeed]) -> Outcome {
    let med = |f: fn(&DeskSeed) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>()).unwrap();
    let (acc_n, acc_end) = (med(|r| r.acc_n), med(|r| r.acc_end));
    let (loss_n, loss_end) = (med(|r| r.loss_n), med(|r| r.loss_end));
    // the independent evaluations must agree with what the runs recorded
    let consistent = runs.iter().all(|r| {
        r.acc_n == r.at_n.test_acc
            && r.acc_end == r.at_end.test_acc
            && r.loss_end == r.at_end.test_loss
    });
    outcome(
        consistent && acc_end >= acc_n - ACC_REGRESSION && loss_end <= loss_n && acc_end >= acc_n,
        format!(
            "median test accuracy {acc_n:.3} -> {acc_end:.3}, median test loss {loss_n:.4} -> {loss_end:.4}; \
             evaluate() matches the records: {consistent}"
        ),
    )
}

fn criterion_9(runs: &[DeskSeed], secs: f64) -> Outcome {
    let clean = median(&runs.iter().map(|r| r.acc_end).collect::<Vec<_>>()).unwrap();
    let gradual = median(&runs.iter().map(|r| r.gradual_acc).collect::<Vec<_>>()).unwrap();
    let gap = (clean - gradual).abs();
    outcome(
        gap <= GRADUAL_MAX_GAP,
        format!(
            "median accuracy refined {clean:.3} vs gradual {gradual:.3}, gap {:.1} points (<= {:.0}); {secs:.0} s",
            gap * 100.0,
            GRADUAL_MAX_GAP * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut rng = RngStream::new(0xacc7);
    let mut mismatches = 0;
    for b in 0..HOOK_BATCHES {
        let spec = if b % 2 == 0 {
            ModelSpec::small_convnet(vec![3, 5], 4, (3, 8, 8))
                .with_normalization(vec![0.4; 3], vec![0.25; 3])
        } else {
            ModelSpec::mlp(vec![10], 4, (3, 8, 8))
        };
        let model = Model::<f32>::new(spec, &rng.child(b as u64)).unwrap();
        let size = 2 + rng.below(6);
        let batch = random_batch(&mut rng, size, (3, 8, 8), 4);
        let lambda = rng.uniform();
        let partners = rng.permutation(batch.len());
        let mixed = mixup_with(&batch, lambda, &partners).unwrap();
        let direct = Tensor::from_samples(&mixed).unwrap();
        let raw = Tensor::from_samples(&batch).unwrap();
        let hook = MixHook {
            layer: 0,
            lambda,
            partners,
        };
        let same = |x: &Tensor<f32>, y: &Tensor<f32>| {
            x.values()
                .iter()
                .zip(y.values())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        };

        let eval_ok = same(
            &model.forward_eval(&direct, None).unwrap(),
            &model.forward_eval(&raw, Some(&hook)).unwrap(),
        );
        let ta = model.forward_train_frozen(&direct, None, None).unwrap();
        let tb = model.forward_train_frozen(&raw, Some(&hook), None).unwrap();
        let labels = flat_labels(&mixed);
        let (la, ga) = model.backward(&ta, &labels).unwrap();
        let (lb, gb) = model.backward(&tb, &labels).unwrap();
        let grads_ok = ga.0.iter().zip(&gb.0).all(|(x, y)| same(x, y));
        if !(eval_ok && same(ta.logits(), tb.logits()) && la.to_bits() == lb.to_bits() && grads_ok)
        {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches}/{HOOK_BATCHES} batches differ (eval logits, train logits, loss and parameter gradients compared bitwise)"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        cmd_train(&TrainArgs {
            config: configs().join("desk_mixup.toml"),
            seed: Some(1),
            out: Some(out.clone()),
            ..TrainArgs::default()
        })
        .unwrap();
        fs::read(out.join("metrics.csv")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    let rows = a.iter().filter(|&&c| c == b'\n').count();
    outcome(
        a == b,
        format!(
            "two full train runs (seed 1, {} records): metrics.csv byte-identical = {}",
            rows - 1,
            a == b
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let mut rng = RngStream::new(0xacc10);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let (h, w) = (3 + rng.below(14), 3 + rng.below(14));
        // 8-bit images, as policies operate on
        let px = (0..3 * h * w)
            .map(|_| rng.below(256) as f32 / 255.0)
            .collect();
        let img = Image::new(3, h, w, px).unwrap();
        let outs = [
            apply_op(&apply_op(&img, OpKind::Invert, 0.0), OpKind::Invert, 0.0),
            apply_op(&img, OpKind::Rotate, 0.0),
            apply_op(&img, OpKind::Posterize, 8.0),
        ];
        for (k, out) in outs.iter().enumerate() {
            for (a, b) in out.pixels().iter().zip(img.pixels()) {
                worst[k] = worst[k].max((a - b).abs() as f64);
            }
        }
    }
    outcome(
        worst.iter().all(|&d| d <= POLICY_TOL),
        format!(
            "max pixel change: Invert twice {:.1e}, Rotate 0 {:.1e}, Posterize 8 {:.1e} (<= 1/255)",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Option<Outcome> {
    let root = PathBuf::from(std::env::var_os("DATA_ROOT")?);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cifar");
    let trained = cmd_train(&TrainArgs {
        config: configs().join("cifar10_mixup.toml"),
        data_root: Some(root),
        out: Some(out.clone()),
        ..TrainArgs::default()
    });
    if let Err(e) = trained {
        return Some(outcome(false, format!("train failed: {e}")));
    }
    let report = refaug::commands::cmd_report(&refaug::commands::ReportArgs {
        runs: vec![out],
        out: tmp.path().join("report"),
    });
    Some(match report {
        Ok(r) => outcome(
            r.rows.len() == 1 && r.rows[0].refined.is_some(),
            format!("CIFAR-10 N=40, M=10 run: {}", r.cells()[0].join(" ")),
        ),
        Err(e) => outcome(false, format!("report failed: {e}")),
    })
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture or a filter;
    // honour a filter that excludes this target and ignore the rest.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut failed = Vec::new();
    let mut report = |id: &str, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {name}: {}", o.detail);
        std::io::stdout().flush().unwrap();
        if !o.pass {
            failed.push(id.to_string());
        }
    };
    report("1", "gradient correctness", criterion_1());
    report("2", "mix arithmetic", criterion_2());
    report("3", "beta sampler", criterion_3());
    report("4", "schedule values", criterion_4());
    let (runs, main_secs, gradual_secs) = desk_runs();
    report("5", "loss-gap pattern", criterion_5(&runs, main_secs));
    report(
        "6",
        "accuracy and loss after refinement",
        criterion_6(&runs),
    );
    report("7", "manifold mixup layer-0 equivalence", criterion_7());
    report("8", "determinism", criterion_8());
    report(
        "9",
        "gradual weakening ablation",
        criterion_9(&runs, gradual_secs),
    );
    report("10", "policy-op identities", criterion_10());
    match criterion_11() {
        Some(o) => report("11", "CIFAR-10 recipe (optional)", o),
        None => println!("SKIP [11] CIFAR-10 recipe (optional): DATA_ROOT not set"),
    }
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
