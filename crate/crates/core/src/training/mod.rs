//! Optimizer, schedule, the pre-training loop, linear-probe evaluation and
//! the ablation harness.
//!
//! Randomness per step comes from one stream seeded by `(seed, step)` and
//! is drawn in a fixed order: the batch's clips (class and clip seed, or
//! corpus start offsets), then one forward seed, from which each sample
//! draws its mask seed and then its clip-order seed in batch order.

mod ablate;
mod config;
mod optim;
mod probe;

pub use ablate::{ablate, ablate_file, parse_grid, AblationRow};
pub use config::{ProbeConfig, TrainConfig};
pub use optim::{adamw_step, lr_at, scaled_lr, AdamHyper, AdamState, Schedule};
pub use probe::{leakage_probe, linear_probe, mean_pooled_features, ProbeReport};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{
    generate_moving_shapes, read_tensor, required_source_frames, sample_clip, Corpus, Split, TensorData, TensorValues,
    VideoClip, SHAPE_CLASSES,
};
use crate::error::{usage_err, Error, Result};
use crate::model::{load_checkpoint, mean_losses, save_checkpoint, sample_seeds, Model, MotionTargetKind, Sample};
use crate::numerics::Scalar;
use crate::rng;

pub const METRICS_HEADER: &str = "step,lr,L_app,L_mot,L_align,L_total";

/// Where training clips come from.
pub enum DataSource {
    /// Moving-shapes clips generated per step.
    Synthetic,
    /// Source videos (and optional flow fields) held in memory.
    Corpus { videos: Vec<VideoClip>, flows: Option<Vec<TensorData>> },
}

impl DataSource {
    pub fn open(cfg: &TrainConfig) -> Result<Self> {
        let Some(root) = &cfg.data else {
            if cfg.model.motion_target == MotionTargetKind::Flow {
                return usage_err("flow targets need a corpus with flow fields");
            }
            return Ok(DataSource::Synthetic);
        };
        let corpus = Corpus::open(root)?;
        let labels = corpus.labels(Split::Train)?;
        if labels.is_empty() {
            return usage_err(format!("{} has no training clips", root.display()));
        }
        let need = required_source_frames(0, cfg.stride, cfg.model.frames);
        let mut videos = Vec::with_capacity(labels.len());
        let mut flows = Vec::new();
        for &(i, class) in &labels {
            let v = VideoClip::from_tensor_data(&read_tensor(corpus.clip_path(Split::Train, i))?)?.with_label(class);
            if v.t < need {
                return Err(Error::Range { required: need, available: v.t });
            }
            videos.push(v);
            if cfg.model.motion_target == MotionTargetKind::Flow {
                flows.push(read_tensor(corpus.flow_path(Split::Train, i))?);
            }
        }
        let flows = (cfg.model.motion_target == MotionTargetKind::Flow).then_some(flows);
        Ok(DataSource::Corpus { videos, flows })
    }

    pub fn steps_per_epoch(&self, cfg: &TrainConfig) -> usize {
        let n = match self {
            DataSource::Synthetic => cfg.epoch_size,
            DataSource::Corpus { videos, .. } => videos.len(),
        };
        n.div_ceil(cfg.batch_size)
    }

    /// The batch for `step`, drawing from `r`.
    pub fn batch(&self, cfg: &TrainConfig, step: usize, r: &mut rng::Rng) -> Result<Vec<Sample>> {
        let m = &cfg.model;
        let need = required_source_frames(0, cfg.stride, m.frames);
        match self {
            DataSource::Synthetic => (0..cfg.batch_size)
                .map(|_| {
                    let class = r.random_range(0..SHAPE_CLASSES);
                    let seed: u64 = r.random();
                    let source = generate_moving_shapes(seed, class, need, m.height, m.width)?;
                    Ok(sample_clip(&source, 0, cfg.stride, m.frames)?.into())
                })
                .collect(),
            DataSource::Corpus { videos, flows } => {
                let spe = self.steps_per_epoch(cfg);
                let mut order: Vec<usize> = (0..videos.len()).collect();
                order.shuffle(&mut rng::stream(rng::derive(cfg.seed, (step / spe) as u64)));
                let first = (step % spe) * cfg.batch_size;
                (0..cfg.batch_size)
                    .map(|k| {
                        let i = order[(first + k) % order.len()];
                        let v = &videos[i];
                        let start = r.random_range(0..=v.t - need);
                        let clip = sample_clip(v, start, cfg.stride, m.frames)?;
                        let flow = match flows {
                            Some(f) => Some(sample_flow(&f[i], start, cfg.stride, m.frames)?),
                            None => None,
                        };
                        Ok(Sample { clip, flow })
                    })
                    .collect()
            }
        }
    }
}

/// Displacement between sampled frames: the sum of the per-frame fields
/// spanned by each stride.
pub fn sample_flow(flow: &TensorData, start: usize, stride: usize, frames: usize) -> Result<TensorData> {
    let &[steps, 2, h, w] = flow.shape.as_slice() else {
        return Err(Error::Format { field: "extents", detail: format!("flow must be (T−1)×2×H×W, got {:?}", flow.shape) });
    };
    let need = required_source_frames(start, stride, frames);
    if steps + 1 < need {
        return Err(Error::Range { required: need, available: steps + 1 });
    }
    let src = flow.values.to_f32();
    let plane = 2 * h * w;
    let mut out = vec![0f32; (frames - 1) * plane];
    for s in 0..frames - 1 {
        for k in 0..stride {
            let from = (start + s * stride + k) * plane;
            out[s * plane..(s + 1) * plane].iter_mut().zip(&src[from..from + plane]).for_each(|(o, v)| *o += v);
        }
    }
    Ok(TensorData { shape: vec![frames - 1, 2, h, w], values: TensorValues::F32(out) })
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub appearance: f64,
    pub motion: f64,
    pub alignment: f64,
    pub total: f64,
}

impl StepLog {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.lr, self.appearance, self.motion, self.alignment, self.total)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub log: Vec<StepLog>,
    pub metrics_csv: PathBuf,
    pub final_checkpoint: PathBuf,
    pub model: Model<f32>,
}

fn checkpoint_dirs(root: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    if root.is_dir() {
        for e in fs::read_dir(root)? {
            let p = e?.path();
            let step = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_prefix("step_")).and_then(|s| s.parse().ok());
            if let (Some(step), true) = (step, p.join(crate::model::MANIFEST).is_file()) {
                out.push((step, p));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Gradients of the batch-mean loss and the per-term batch means.
pub fn batch_gradients<F: Scalar>(
    model: &Model<F>,
    batch: &[Sample],
    seed: u64,
) -> Result<(Vec<Vec<F>>, crate::losses::LossBundle<f64>)> {
    let mut grads: Vec<Vec<F>> = model.params.tensors().iter().map(|t| vec![F::zero(); t.numel()]).collect();
    let mut bundles = Vec::with_capacity(batch.len());
    for ((ms, os), s) in sample_seeds(seed, batch.len()).into_iter().zip(batch) {
        let out = model.forward_sample(s, ms, os)?;
        let g = out.total.backward()?;
        for (acc, t) in grads.iter_mut().zip(model.params.tensors()) {
            if let Some(gt) = g.get(t) {
                acc.iter_mut().zip(gt).for_each(|(a, &b)| *a += b);
            }
        }
        bundles.push(out.losses);
    }
    let inv = F::of(1.0 / batch.len() as f64);
    grads.iter_mut().flatten().for_each(|v| *v = *v * inv);
    Ok((grads, mean_losses(&bundles)))
}

/// Runs pre-training, writing `metrics.csv`, periodic checkpoints under
/// `checkpoints/` (keeping the newest `keep_checkpoints`) and `final/`.
pub fn run_pretrain(cfg: &TrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    let data = DataSource::open(cfg)?;
    let spe = data.steps_per_epoch(cfg);
    let schedule = cfg.schedule(spe);
    let hp = cfg.hyper();
    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_root = cfg.out_dir.join("checkpoints");
    let metrics_csv = cfg.out_dir.join("metrics.csv");

    let mut model = Model::<f32>::init(cfg.model.clone(), rng::derive(cfg.seed, 0x1417))?;
    let mut state = AdamState::new(&model.params);
    let mut start = 0;
    let mut log = Vec::new();
    if cfg.resume {
        if let Some((_, dir)) = checkpoint_dirs(&ckpt_root)?.pop() {
            let c = load_checkpoint(&dir)?;
            if c.model.config != cfg.model {
                return Err(Error::Config(format!("{} was written for a different model", dir.display())));
            }
            model = c.model;
            state = c.optimizer.unwrap_or_else(|| AdamState::new(&model.params));
            start = c.step;
            log = read_metrics(&metrics_csv)?.into_iter().filter(|l| l.step < start).collect();
        }
    }
    let mut csv = fs::File::create(&metrics_csv)?;
    writeln!(csv, "{METRICS_HEADER}")?;
    for l in &log {
        writeln!(csv, "{}", l.csv_line())?;
    }

    for step in start..schedule.total_steps {
        let mut r = rng::stream(rng::derive(cfg.seed, step as u64 + 1));
        let batch = data.batch(cfg, step, &mut r)?;
        let fwd_seed: u64 = r.random();
        let (grads, losses) = batch_gradients(&model, &batch, fwd_seed)?;
        let lr = lr_at(step, &schedule);
        adamw_step(&mut model.params, &grads, &mut state, lr, &hp)?;
        let row = StepLog {
            step,
            lr,
            appearance: losses.appearance,
            motion: losses.motion,
            alignment: losses.alignment,
            total: losses.total,
        };
        writeln!(csv, "{}", row.csv_line())?;
        log.push(row);
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < schedule.total_steps {
            save_checkpoint(ckpt_root.join(format!("step_{done:06}")), &model, Some(&state), done)?;
            let existing = checkpoint_dirs(&ckpt_root)?;
            let excess = existing.len().saturating_sub(cfg.keep_checkpoints.max(1));
            for (_, dir) in existing.into_iter().take(excess) {
                fs::remove_dir_all(dir)?;
            }
        }
    }
    csv.flush()?;
    let final_checkpoint = cfg.out_dir.join("final");
    save_checkpoint(&final_checkpoint, &model, Some(&state), schedule.total_steps)?;
    Ok(PretrainReport { log, metrics_csv, final_checkpoint, model })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StepLog>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format { field: "payload", detail: format!("bad metrics row {rec:?}") })
        };
        out.push(StepLog {
            step: f(0)? as usize,
            lr: f(1)?,
            appearance: f(2)?,
            motion: f(3)?,
            alignment: f(4)?,
            total: f(5)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> TrainConfig {
        let mut c = TrainConfig::toy();
        c.model.dim = 16;
        c.model.heads = 2;
        c.model.encoder_depth = 1;
        c.model.regressor_depth = 1;
        c.model.appearance_depth = 1;
        c.model.frames = 4;
        c.model.height = 16;
        c.model.width = 16;
        c.batch_size = 2;
        c.epoch_size = 10;
        c.total_epochs = 2;
        c.checkpoint_every = 3;
        c.out_dir = out.to_path_buf();
        c
    }

    #[test]
    fn ten_steps_twice_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_pretrain(&small(&dir.path().join("a"))).unwrap();
        let b = run_pretrain(&small(&dir.path().join("b"))).unwrap();
        assert_eq!(a.log.len(), 10);
        assert_eq!(fs::read(&a.metrics_csv).unwrap(), fs::read(&b.metrics_csv).unwrap());
        let kept = checkpoint_dirs(&dir.path().join("a/checkpoints")).unwrap();
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![6, 9]);
        assert_eq!(read_metrics(&a.metrics_csv).unwrap(), a.log);
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let full = run_pretrain(&small(&dir.path().join("full"))).unwrap();
        let mut part = small(&dir.path().join("part"));
        part.total_epochs = 2;
        part.checkpoint_every = 6;
        let p = run_pretrain(&part).unwrap();
        // drop the tail after the step-6 checkpoint and resume
        let mut resumed = part.clone();
        resumed.resume = true;
        fs::remove_dir_all(&p.final_checkpoint).unwrap();
        let r = run_pretrain(&resumed).unwrap();
        assert_eq!(fs::read(&full.metrics_csv).unwrap(), fs::read(&r.metrics_csv).unwrap());
    }

    #[test]
    fn strided_flow_sums_fields() {
        let flow = TensorData { shape: vec![4, 2, 1, 1], values: TensorValues::F32(vec![1.0, 0.0, 2.0, 0.0, 3.0, 1.0, 4.0, 1.0]) };
        let s = sample_flow(&flow, 1, 2, 2).unwrap();
        assert_eq!(s.shape, vec![1, 2, 1, 1]);
        assert_eq!(s.values.to_f32(), vec![5.0, 1.0]);
        assert!(sample_flow(&flow, 1, 2, 3).is_err());
    }
}
