//! Linear readouts: the frozen-encoder linear probe and the clip-order
//! leakage probe on mask-query content.

use rand::Rng as _;

use super::config::ProbeConfig;
use super::optim::{adamw_step, AdamHyper, AdamState};
use crate::data::{required_source_frames, sample_clip, Corpus, Split, VideoClip};
use crate::error::{usage_err, Error, Result};
use crate::model::{sample_mask, Model};
use crate::numerics::{no_grad, Scalar, Tensor};
use crate::params::{ParamInit, ParamStore};
use crate::rng;
use crate::targets::ClipOrder;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub classes: usize,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub baseline_train_accuracy: f64,
    pub baseline_val_accuracy: f64,
}

/// Softmax regression on standardized features.
struct LinearClassifier {
    mean: Vec<f64>,
    std: Vec<f64>,
    params: ParamStore<f64>,
    classes: usize,
}

impl LinearClassifier {
    fn design(&self, x: &[Vec<f64>]) -> Result<Tensor<f64>> {
        let d = self.mean.len();
        let mut flat = Vec::with_capacity(x.len() * d);
        for row in x {
            flat.extend(row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s));
        }
        Tensor::new(&[x.len(), d], flat)
    }

    fn logits(&self, x: &[Vec<f64>]) -> Result<Tensor<f64>> {
        let ts = self.params.tensors();
        self.design(x)?.linear(&ts[0], Some(&ts[1]))
    }

    fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        if x.is_empty() {
            return Ok(0.0);
        }
        let logits = self.logits(x)?;
        let hits = logits
            .data()
            .chunks(self.classes)
            .zip(y)
            .filter(|(row, &label)| {
                let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
                best == Some(label)
            })
            .count();
        Ok(hits as f64 / x.len() as f64)
    }
}

/// Full-batch AdamW on the softmax cross-entropy of a linear map.
fn fit_linear(x: &[Vec<f64>], y: &[usize], classes: usize, steps: usize, lr: f64, wd: f64, seed: u64) -> Result<LinearClassifier> {
    let d = x.first().map(Vec::len).ok_or_else(|| Error::Usage("no training features".into()))?;
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-12)
        })
        .collect();
    let mut params = ParamStore::default();
    let mut r = rng::stream(seed);
    let mut init = ParamInit { store: &mut params, rng: &mut r };
    init.xavier("probe.weight", d, classes);
    init.zeros("probe.bias", &[classes]);
    let mut clf = LinearClassifier { mean, std, params, classes };
    let xs = clf.design(x)?;
    let mut state = AdamState::new(&clf.params);
    let hp = AdamHyper { weight_decay: wd, ..AdamHyper::default() };
    for _ in 0..steps {
        let ts = clf.params.tensors();
        let loss = xs.linear(&ts[0], Some(&ts[1]))?.cross_entropy(y)?;
        let g = loss.backward()?;
        let grads: Vec<Vec<f64>> = ts.iter().map(|t| g.get_or_zeros(t)).collect();
        adamw_step(&mut clf.params, &grads, &mut state, lr, &hp)?;
    }
    Ok(clf)
}

/// Encoder latents of the full grid, averaged over all tokens.
pub fn mean_pooled_features<F: Scalar>(model: &Model<F>, clips: &[VideoClip]) -> Result<Vec<Vec<f64>>> {
    no_grad(|| {
        clips
            .iter()
            .map(|c| {
                let z = model.encode_full(c)?;
                let d = model.config.dim;
                let rows = z.numel() / d;
                let mut f = vec![0.0; d];
                for row in z.data().chunks(d) {
                    f.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64());
                }
                f.iter_mut().for_each(|a| *a /= rows as f64);
                Ok(f)
            })
            .collect()
    })
}

/// Probe clips of one split: the centered window at the probe stride.
fn probe_clips(corpus: &Corpus, split: Split, model: &Model<f32>, stride: usize) -> Result<(Vec<VideoClip>, Vec<usize>)> {
    let m = &model.config;
    let mut clips = Vec::new();
    let mut labels = Vec::new();
    for (i, class) in corpus.labels(split)? {
        let v = corpus.load(split, i)?;
        if (v.h, v.w, v.c) != (m.height, m.width, m.channels) {
            return usage_err(format!("corpus clips are {}×{}×{}, model expects {}×{}×{}", v.c, v.h, v.w, m.channels, m.height, m.width));
        }
        let need = required_source_frames(0, stride, m.frames);
        if v.t < need {
            return Err(Error::Range { required: need, available: v.t });
        }
        clips.push(sample_clip(&v, (v.t - need) / 2, stride, m.frames)?);
        labels.push(class);
    }
    Ok((clips, labels))
}

/// Trains a linear classifier on mean-pooled latents of the frozen
/// encoder (train split) and reports accuracies on both splits, next to
/// the same probe on a randomly initialized encoder.
pub fn linear_probe(model: &Model<f32>, corpus: &Corpus, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let (train, ytr) = probe_clips(corpus, Split::Train, model, cfg.stride)?;
    let (val, yva) = probe_clips(corpus, Split::Val, model, cfg.stride)?;
    if train.is_empty() {
        return usage_err("probe needs training clips");
    }
    let classes = ytr.iter().max().map_or(0, |m| m + 1);
    if let Some(&bad) = yva.iter().find(|&&c| c >= classes) {
        return usage_err(format!("validation class {bad} does not occur among {classes} training classes"));
    }
    let baseline = Model::<f32>::init(model.config.clone(), rng::derive(cfg.seed, 0xba5e))?;
    let run = |m: &Model<f32>| -> Result<(f64, f64)> {
        let ftr = mean_pooled_features(m, &train)?;
        let fva = mean_pooled_features(m, &val)?;
        let clf = fit_linear(&ftr, &ytr, classes, cfg.steps, cfg.lr, cfg.weight_decay, cfg.seed)?;
        Ok((clf.accuracy(&ftr, &ytr)?, clf.accuracy(&fva, &yva)?))
    };
    let (train_accuracy, val_accuracy) = run(model)?;
    let (baseline_train_accuracy, baseline_val_accuracy) = run(&baseline)?;
    Ok(ProbeReport { classes, train_accuracy, val_accuracy, baseline_train_accuracy, baseline_val_accuracy })
}

/// Accuracy of a linear readout predicting the clip-order label from the
/// reordered mask-query content of each masked tube. Features come from
/// `train_masks` random masks and orders; accuracy is measured on as many
/// fresh ones.
pub fn leakage_probe(model: &Model<f64>, train_masks: usize, steps: usize, lr: f64, seed: u64) -> Result<(f64, f64)> {
    let mut r = rng::stream(seed);
    let mut draw = |count: usize| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let mask = sample_mask(&model.config, r.random())?;
            let order = ClipOrder::sample(&mut r);
            let f = no_grad(|| model.order_query_features(&mask, order))?;
            let width = f.shape()[1];
            for row in f.data().chunks(width) {
                x.push(row.to_vec());
                y.push(order.label());
            }
        }
        Ok((x, y))
    };
    let (xtr, ytr) = draw(train_masks)?;
    let (xte, yte) = draw(train_masks)?;
    let clf = fit_linear(&xtr, &ytr, 2, steps, lr, 0.0, seed)?;
    Ok((clf.accuracy(&xtr, &ytr)?, clf.accuracy(&xte, &yte)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_task_is_learned() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64 * 2.0 - 1.0 + 0.01 * i as f64, 0.3]).collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let clf = fit_linear(&x, &y, 2, 100, 0.1, 0.0, 1).unwrap();
        assert_eq!(clf.accuracy(&x, &y).unwrap(), 1.0);
    }
}
