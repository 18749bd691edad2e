use std::fs;
use std::io::Write;
use std::path::PathBuf;

use refaug_core::augment::{augment_batch, AppliedOp, CutMask, MixHook};
use refaug_core::rng::path;
use refaug_core::RngStream;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::write_ppm;

pub const SIDECAR: &str = "preview.jsonl";

#[derive(Debug, Clone, Default)]
pub struct PreviewArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub data_root: Option<PathBuf>,
    pub count: usize,
    pub out: PathBuf,
    /// Preview the refinement pipeline instead of the augmentation one.
    pub refine: bool,
}

/// One line of the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewEntry {
    pub file: String,
    /// Index of the source image in the training set.
    pub source: usize,
    pub class: usize,
    /// Label after mixing.
    pub label: Vec<f32>,
    pub ops: Vec<AppliedOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<CutMask>,
    /// Set for Manifold Mixup, which mixes inside the network: the image is
    /// shown unmixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hook: Option<MixHook>,
}

pub fn cmd_preview(args: &PreviewArgs) -> CliResult<Vec<PreviewEntry>> {
    let config = RunConfig::load(&args.config, &args.overrides, args.data_root.as_deref())?;
    let seed = args.seed.unwrap_or(config.seeds()[0]);
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    if args.count == 0 {
        return Ok(Vec::new());
    }
    let (train, _) = config.data_source(seed).load()?;
    let (stage1, stage2) = config.pipelines();
    let pipeline = if args.refine { stage2 } else { stage1 };
    let rng = RngStream::new(seed).child(path::PREVIEW);
    let order = rng.child(path::SHUFFLE).permutation(train.len());
    let indices: Vec<usize> = (0..args.count).map(|i| order[i % order.len()]).collect();
    let batch = augment_batch(pipeline, &train, &indices, &rng, 0)?;

    let mut entries = Vec::with_capacity(args.count);
    for (i, (sample, ops)) in batch.samples.iter().zip(&batch.log).enumerate() {
        let file = format!("{i:04}.ppm");
        write_ppm(&args.out.join(&file), &sample.image)?;
        let (mut lambda, mut mask) = (None, None);
        for op in ops {
            match op {
                AppliedOp::Mixup { lambda: l, .. } | AppliedOp::ManifoldMixup { lambda: l, .. } => {
                    lambda = Some(*l)
                }
                AppliedOp::CutMix {
                    lambda: l, mask: m, ..
                } => {
                    lambda = Some(*l);
                    mask = Some(*m);
                }
                _ => {}
            }
        }
        entries.push(PreviewEntry {
            file,
            source: indices[i],
            class: train.get(indices[i]).label.argmax(),
            label: sample.label.probs().to_vec(),
            ops: ops.clone(),
            lambda,
            mask,
            hook: batch.hook.clone(),
        });
    }
    let side = args.out.join(SIDECAR);
    let mut f = fs::File::create(&side).map_err(|e| CliError::io(&side, e))?;
    for e in &entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes"))
            .map_err(|e| CliError::io(&side, e))?;
    }
    Ok(entries)
}
