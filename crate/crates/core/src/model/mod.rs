//! The full pre-training network: patch embedding, factorized encoder,
//! cross-attention regressor, alignment targets, and the appearance and
//! motion decoders with their heads.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MANIFEST};
pub use config::{ModelConfig, MotionTargetKind};

use rand::Rng as _;

use crate::blocks::{cross_attn_block, factorized_block, factorized_block_with_cls, CrossBlockParams, FactorizedBlockParams};
use crate::data::{TensorData, VideoClip};
use crate::error::{dim_err, usage_err, Error, Result};
use crate::losses::{alignment_loss, appearance_loss, hybrid_loss_tensor, motion_loss, LossBundle};
use crate::masking::{cube_mask, partition, tube_mask, MaskKind, MaskSpec};
use crate::numerics::{concat, no_grad, Scalar, Tensor};
use crate::params::{ParamId, ParamInit, ParamStore};
use crate::patch_embed::{add_pos, embed, patchify, position_sum};
use crate::rng;
use crate::targets::{flow_target, rgb_diff_target, token_targets, tokenizer_by_name, ClipOrder, MotionTarget, TokenTargets};

pub const POS_INIT_STD: f64 = 0.02;

/// Parameters of the clip-order classifier on the motion decoder.
#[derive(Debug, Clone, Copy)]
pub struct OrderHead {
    pub cls: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

/// Where each named part of the network lives in the parameter store.
#[derive(Debug, Clone)]
pub struct Layout {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub pos_t: ParamId,
    pub pos_s: ParamId,
    pub encoder: Vec<FactorizedBlockParams>,
    /// Encoder-to-regressor width projection, when the widths differ.
    pub projection: Option<(ParamId, ParamId)>,
    pub mask_query: ParamId,
    pub regressor: Vec<CrossBlockParams>,
    pub appearance: Vec<FactorizedBlockParams>,
    pub appearance_head: ParamId,
    pub motion: Vec<FactorizedBlockParams>,
    pub motion_head: Option<(ParamId, ParamId)>,
    pub order_head: Option<OrderHead>,
}

impl Layout {
    fn build<F: Scalar>(cfg: &ModelConfig, init: &mut ParamInit<'_, F>) -> Self {
        let (d, dr) = (cfg.dim, cfg.decoder_dim());
        let g = cfg.geometry().expect("validated config");
        let pd = g.patch_dim();
        let patch_w = init.xavier("patch_embed.weight", pd, d);
        let patch_b = init.zeros("patch_embed.bias", &[d]);
        let pos_t = init.normal("pos.temporal", &[cfg.frames, d], POS_INIT_STD);
        let pos_s = init.normal("pos.spatial", &[g.n(), d], POS_INIT_STD);
        let encoder = (0..cfg.encoder_depth)
            .map(|i| FactorizedBlockParams::init(init, &format!("encoder.{i}"), d, cfg.mlp_ratio * d))
            .collect();
        let projection = (dr != d).then(|| (init.xavier("projection.weight", d, dr), init.zeros("projection.bias", &[dr])));
        let mask_query = init.normal("regressor.mask_query", &[dr], POS_INIT_STD);
        let regressor = (0..cfg.regressor_depth)
            .map(|i| CrossBlockParams::init(init, &format!("regressor.{i}"), dr, cfg.mlp_ratio * dr))
            .collect();
        let appearance = (0..cfg.appearance_depth)
            .map(|i| FactorizedBlockParams::init(init, &format!("appearance.{i}"), dr, cfg.mlp_ratio * dr))
            .collect();
        let appearance_head = init.xavier("appearance.head", dr, cfg.vocab);
        let motion_depth = if cfg.motion_target == MotionTargetKind::None { 0 } else { cfg.motion_depth };
        let motion = (0..motion_depth)
            .map(|i| FactorizedBlockParams::init(init, &format!("motion.{i}"), dr, cfg.mlp_ratio * dr))
            .collect();
        let motion_head = cfg.motion_target.regresses().then(|| {
            (init.xavier("motion.head.weight", dr, cfg.motion_dim()), init.zeros("motion.head.bias", &[cfg.motion_dim()]))
        });
        let order_head = (cfg.motion_target == MotionTargetKind::ClipOrder).then(|| OrderHead {
            cls: init.normal("motion.cls", &[dr], POS_INIT_STD),
            w: init.xavier("motion.order.weight", dr, 2),
            b: init.zeros("motion.order.bias", &[2]),
        });
        Layout {
            patch_w,
            patch_b,
            pos_t,
            pos_s,
            encoder,
            projection,
            mask_query,
            regressor,
            appearance,
            appearance_head,
            motion,
            motion_head,
            order_head,
        }
    }

    /// Output projections of every residual sublayer; zeroing them turns
    /// each block into the identity.
    pub fn sublayer_outputs(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for b in self.encoder.iter().chain(&self.appearance).chain(&self.motion) {
            ids.extend(b.output_projections());
        }
        for b in &self.regressor {
            ids.extend(b.output_projections());
        }
        ids
    }

    /// Parameters of the encoder and the patch/position embeddings.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.patch_w, self.patch_b, self.pos_t, self.pos_s];
        for b in &self.encoder {
            ids.extend(b.all());
        }
        ids
    }
}

impl FactorizedBlockParams {
    /// Every parameter id of the block.
    pub fn all(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(22);
        for n in [self.norm_t, self.norm_s, self.norm_mlp] {
            ids.extend([n.gamma, n.beta]);
        }
        for a in [self.attn_t, self.attn_s] {
            ids.extend([a.wq, a.bq, a.wk, a.bk, a.wv, a.bv, a.wo, a.bo]);
        }
        ids.extend([self.mlp.w1, self.mlp.b1, self.mlp.w2, self.mlp.b2]);
        ids
    }
}

/// One clip and, for flow targets, its displacement field.
#[derive(Debug, Clone)]
pub struct Sample {
    pub clip: VideoClip,
    pub flow: Option<TensorData>,
}

impl From<VideoClip> for Sample {
    fn from(clip: VideoClip) -> Self {
        Sample { clip, flow: None }
    }
}

/// Latents of one clip: visible encodings, regressed masked latents `r`
/// and their alignment targets `r̂` (cut off from the graph).
#[derive(Debug, Clone)]
pub struct LatentBatch<F: Scalar> {
    pub visible: Tensor<F>,
    pub regressed: Tensor<F>,
    pub targets: Tensor<F>,
}

/// Reconstruction targets for one clip under one mask.
#[derive(Debug, Clone)]
pub struct ClipTargets {
    pub tokens: TokenTargets,
    pub motion: Option<MotionTarget>,
    pub order: ClipOrder,
}

#[derive(Debug, Clone)]
pub struct ClipOutput<F: Scalar> {
    /// Differentiable total loss.
    pub total: Tensor<F>,
    pub losses: LossBundle<F>,
    pub latents: LatentBatch<F>,
    /// Named output shapes along the pipeline.
    pub trace: Vec<(&'static str, Vec<usize>)>,
}

/// Output of a batched forward pass.
#[derive(Debug, Clone)]
pub struct PretrainOutput<F: Scalar> {
    pub clips: Vec<ClipOutput<F>>,
    /// Per-term means over the batch.
    pub mean: LossBundle<f64>,
}

/// Per-sample `(mask seed, clip-order seed)` pairs drawn in batch order
/// from a single stream.
pub fn sample_seeds(seed: u64, batch: usize) -> Vec<(u64, u64)> {
    let mut r = rng::stream(seed);
    (0..batch).map(|_| (r.random(), r.random())).collect()
}

pub fn sample_mask(cfg: &ModelConfig, seed: u64) -> Result<MaskSpec> {
    let g = cfg.geometry()?;
    match cfg.mask_kind {
        MaskKind::Tube => tube_mask(g.n(), cfg.frames, cfg.mask_ratio, seed),
        MaskKind::Cube => cube_mask(g.grid_h(), g.grid_w(), cfg.frames, cfg.mask_ratio, cfg.cube_block, seed),
    }
}

/// Mean of each loss term over clips.
pub fn mean_losses<F: Scalar>(bundles: &[LossBundle<F>]) -> LossBundle<f64> {
    let n = bundles.len().max(1) as f64;
    let mean = |f: fn(&LossBundle<F>) -> F| bundles.iter().map(|b| f(b).as_f64()).sum::<f64>() / n;
    LossBundle {
        appearance: mean(|b| b.appearance),
        motion: mean(|b| b.motion),
        alignment: mean(|b| b.alignment),
        total: mean(|b| b.total),
        alpha: bundles.first().map_or(0.0, |b| b.alpha.as_f64()),
    }
}

/// Applies encoder blocks in order.
pub fn encode_with<F: Scalar>(
    ps: &ParamStore<F>,
    blocks: &[FactorizedBlockParams],
    x: &Tensor<F>,
    heads: usize,
) -> Result<Tensor<F>> {
    let mut h = x.clone();
    for b in blocks {
        h = factorized_block(ps, b, &h, heads)?;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    pub layout: Layout,
}

impl<F: Scalar> Model<F> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut r = rng::stream(seed);
        let layout = Layout::build(&config, &mut ParamInit { store: &mut params, rng: &mut r });
        Ok(Model { config, params, layout })
    }

    /// Same architecture over another set of parameter tensors.
    pub fn with_tensors(&self, tensors: Vec<Tensor<F>>) -> Result<Self> {
        Ok(Model { config: self.config.clone(), params: self.params.with_tensors(tensors)?, layout: self.layout.clone() })
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    fn p(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id]
    }

    /// Patches (`T×N×P²C`) → embedded tokens with positions, `T×N×D`.
    pub fn embed_patches(&self, patches: &Tensor<F>) -> Result<Tensor<F>> {
        let tokens = embed(patches, self.p(self.layout.patch_w), self.p(self.layout.patch_b))?;
        add_pos(&tokens, self.p(self.layout.pos_t), self.p(self.layout.pos_s))
    }

    pub fn embed_clip(&self, clip: &VideoClip) -> Result<Tensor<F>> {
        self.embed_patches(&patchify(clip, self.config.patch)?)
    }

    /// Encoder over `T×N_v×D` tokens that already carry positions.
    pub fn encode(&self, visible: &Tensor<F>) -> Result<Tensor<F>> {
        encode_with(&self.params, &self.layout.encoder, visible, self.config.heads)
    }

    /// Encoder over the full, unmasked grid of a clip.
    pub fn encode_full(&self, clip: &VideoClip) -> Result<Tensor<F>> {
        self.encode(&self.embed_clip(clip)?)
    }

    fn project(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self.layout.projection {
            Some((w, b)) => x.linear(self.p(w), Some(self.p(b))),
            None => Ok(x.clone()),
        }
    }

    /// `e^t + e^s` per position, mapped into regressor width (`|P|×D_r`).
    pub fn positions(&self, positions: &[(usize, usize)]) -> Result<Tensor<F>> {
        let pos = position_sum(self.p(self.layout.pos_t), self.p(self.layout.pos_s), positions)?;
        match self.layout.projection {
            Some((w, _)) => pos.matmul(self.p(w)),
            None => Ok(pos),
        }
    }

    /// Shared mask query plus the positions: `|P|×D_r`.
    pub fn mask_queries(&self, positions: &[(usize, usize)]) -> Result<Tensor<F>> {
        self.positions(positions)?.add_bias(self.p(self.layout.mask_query))
    }

    /// Encoder over the ground-truth masked tokens (with positions), one
    /// tube per masked spatial index, outside the graph: `|M|×D_r`.
    pub fn encode_alignment_targets(&self, grid: &Tensor<F>, mask: &MaskSpec) -> Result<Tensor<F>> {
        let &[t, n, d] = grid.shape() else {
            return dim_err(format!("alignment targets expect T×N×D, got {:?}", grid.shape()));
        };
        let masked = mask.masked_spatial()?;
        if t != mask.t() || n != mask.n {
            return dim_err(format!("grid {t}×{n} vs mask {}×{}", mask.t(), mask.n));
        }
        let rows: Vec<usize> = (0..t).flat_map(|i| masked.iter().map(move |&j| i * n + j)).collect();
        let out = no_grad(|| -> Result<Tensor<F>> {
            let tokens = grid.reshape(&[t * n, d])?.index_rows(&rows)?.reshape(&[t, masked.len(), d])?;
            let enc = self.project(&self.encode(&tokens)?)?;
            enc.reshape(&[t * masked.len(), self.config.decoder_dim()])
        })?;
        Ok(out.detach())
    }

    /// Cross-attention of the masked positions' queries over all visible
    /// latents: `|M|×D_r`, frame-major.
    pub fn regress(&self, visible_latents: &Tensor<F>, mask: &MaskSpec) -> Result<Tensor<F>> {
        let &[t, nv, _] = visible_latents.shape() else {
            return dim_err(format!("regress expects T×N_v×D latents, got {:?}", visible_latents.shape()));
        };
        if t * nv == 0 {
            return usage_err("regress needs at least one visible token");
        }
        let positions = mask.masked_positions();
        if positions.is_empty() {
            return usage_err("regress needs at least one masked position");
        }
        let dr = self.config.decoder_dim();
        let kv = self.project(visible_latents)?.reshape(&[t * nv, dr])?;
        let mut q = self.mask_queries(&positions)?;
        for b in &self.layout.regressor {
            q = cross_attn_block(&self.params, b, &q, &kv, self.config.decoder_heads())?;
        }
        Ok(q)
    }

    /// `r` plus positions, arranged `T×N_m×D_r`.
    fn decoder_input(&self, r: &Tensor<F>, mask: &MaskSpec) -> Result<Tensor<F>> {
        let nm = mask.per_frame()?;
        let x = r.add(&self.positions(&mask.masked_positions())?)?;
        x.reshape(&[mask.t(), nm, self.config.decoder_dim()])
    }

    fn run_blocks(&self, blocks: &[FactorizedBlockParams], x: &Tensor<F>) -> Result<Tensor<F>> {
        encode_with(&self.params, blocks, x, self.config.decoder_heads())
    }

    /// Appearance decoder and token head: `T×N_m×K` logits.
    pub fn decode_appearance(&self, r: &Tensor<F>, mask: &MaskSpec) -> Result<Tensor<F>> {
        let h = self.run_blocks(&self.layout.appearance, &self.decoder_input(r, mask)?)?;
        h.linear(self.p(self.layout.appearance_head), None)
    }

    /// Motion decoder and regression head over `M′`:
    /// `(T−1)×N_m×(P²·C_target)`.
    pub fn decode_motion(&self, r: &Tensor<F>, mask: &MaskSpec) -> Result<Tensor<F>> {
        let t = mask.t();
        if t < 2 {
            return usage_err("motion decoding needs at least two frames");
        }
        let Some((w, b)) = self.layout.motion_head else {
            return Err(Error::Config(format!("motion target {} has no regression head", self.config.motion_target.name())));
        };
        let h = self.run_blocks(&self.layout.motion, &self.decoder_input(r, mask)?)?;
        h.narrow(0, 0, t - 1)?.linear(self.p(w), Some(self.p(b)))
    }

    /// Reorders the temporal halves of every masked tube of `r`, re-adds
    /// positions for the new slots, prepends the class token and runs the
    /// motion decoder. Returns `N_m×2` logits and the order label.
    pub fn decode_clip_order(&self, r: &Tensor<F>, mask: &MaskSpec, order: ClipOrder) -> Result<(Tensor<F>, usize)> {
        let Some(head) = self.layout.order_head else {
            return Err(Error::Config(format!("motion target {} has no order head", self.config.motion_target.name())));
        };
        let (t, nm, dr) = (mask.t(), mask.per_frame()?, self.config.decoder_dim());
        let slots = order.frame_order(t)?;
        let shuffled = r.reshape(&[t, nm * dr])?.index_rows(&slots)?.reshape(&[t * nm, dr])?;
        let x = shuffled.add(&self.positions(&mask.masked_positions())?)?.reshape(&[t, nm, dr])?;
        let cls = Tensor::zeros(&[nm, dr])?.add_bias(self.p(head.cls))?.reshape(&[1, nm, dr])?;
        let mut h = concat(&[cls, x], 0)?;
        for b in &self.layout.motion {
            h = factorized_block_with_cls(&self.params, b, &h, self.config.decoder_heads())?;
        }
        let logits = h.narrow(0, 0, 1)?.reshape(&[nm, dr])?.linear(self.p(head.w), Some(self.p(head.b)))?;
        Ok((logits, order.label()))
    }

    /// Query content fed to the clip-order branch before any learned
    /// decoding: for each masked tube, its `T` mask queries reordered by
    /// `order`, flattened to `N_m×(T·D_r)`.
    pub fn order_query_features(&self, mask: &MaskSpec, order: ClipOrder) -> Result<Tensor<F>> {
        let (t, nm, dr) = (mask.t(), mask.per_frame()?, self.config.decoder_dim());
        let q = self.mask_queries(&mask.masked_positions())?;
        let shuffled = q.reshape(&[t, nm * dr])?.index_rows(&order.frame_order(t)?)?;
        shuffled.reshape(&[t, nm, dr])?.permute(&[1, 0, 2])?.reshape(&[nm, t * dr])
    }

    /// Targets for one clip under `mask`.
    pub fn targets(&self, sample: &Sample, mask: &MaskSpec, order: ClipOrder) -> Result<ClipTargets> {
        let tok = tokenizer_by_name(&self.config.tokenizer)?;
        if tok.vocab_size() != self.config.vocab {
            return Err(Error::Config(format!(
                "tokenizer {} has {} tokens but vocab is {}",
                self.config.tokenizer,
                tok.vocab_size(),
                self.config.vocab
            )));
        }
        let tokens = token_targets(&sample.clip, self.config.patch, tok.as_ref())?;
        let motion = match self.config.motion_target {
            MotionTargetKind::RgbDiff => Some(rgb_diff_target(&sample.clip, mask, self.config.patch)?),
            MotionTargetKind::Flow => {
                let flow = sample.flow.as_ref().ok_or_else(|| Error::Usage("flow targets need a flow field per clip".into()))?;
                Some(flow_target(flow, mask, self.config.patch)?)
            }
            MotionTargetKind::ClipOrder | MotionTargetKind::None => None,
        };
        Ok(ClipTargets { tokens, motion, order })
    }

    /// Full pipeline for one clip given its patches, mask and targets.
    pub fn forward_clip(&self, patches: &Tensor<F>, mask: &MaskSpec, targets: &ClipTargets) -> Result<ClipOutput<F>> {
        self.forward_clip_inner(patches, mask, targets, None)
    }

    /// [`Model::forward_clip`] with the alignment targets supplied instead
    /// of recomputed, so they stay fixed while parameters are perturbed.
    pub fn forward_clip_with_alignment_targets(
        &self,
        patches: &Tensor<F>,
        mask: &MaskSpec,
        targets: &ClipTargets,
        r_hat: &Tensor<F>,
    ) -> Result<ClipOutput<F>> {
        self.forward_clip_inner(patches, mask, targets, Some(r_hat))
    }

    fn forward_clip_inner(
        &self,
        patches: &Tensor<F>,
        mask: &MaskSpec,
        targets: &ClipTargets,
        fixed_r_hat: Option<&Tensor<F>>,
    ) -> Result<ClipOutput<F>> {
        let cfg = &self.config;
        let mut trace = vec![("patches", patches.shape().to_vec())];
        let grid = self.embed_patches(patches)?;
        trace.push(("tokens", grid.shape().to_vec()));
        let (visible, positions) = partition(&grid, mask)?;
        trace.push(("visible", visible.shape().to_vec()));
        let latents = self.encode(&visible)?;
        trace.push(("encoder", latents.shape().to_vec()));
        let r = self.regress(&latents, mask)?;
        let (t, nm, dr) = (mask.t(), mask.per_frame()?, cfg.decoder_dim());
        trace.push(("regressor", vec![t, nm, dr]));
        let r_hat = match fixed_r_hat {
            Some(t) => t.detach(),
            None => self.encode_alignment_targets(&grid, mask)?,
        };
        trace.push(("alignment_targets", vec![t, nm, r_hat.shape()[1]]));
        let align = alignment_loss(&r, &r_hat)?;

        let logits = self.decode_appearance(&r, mask)?;
        trace.push(("appearance_logits", logits.shape().to_vec()));
        let app = appearance_loss(&logits.reshape(&[t * nm, cfg.vocab])?, &targets.tokens.gather(&positions))?;
        drop(logits);

        let mot = match cfg.motion_target {
            MotionTargetKind::RgbDiff | MotionTargetKind::Flow => {
                let pred = self.decode_motion(&r, mask)?;
                trace.push(("motion", pred.shape().to_vec()));
                let target = targets.motion.as_ref().ok_or_else(|| Error::Usage("missing motion target".into()))?;
                let tt = Tensor::new(&target.shape, target.values.iter().map(|&v| F::of(v as f64)).collect())?;
                motion_loss(&pred, &tt, cfg.mse_reduction)?
            }
            MotionTargetKind::ClipOrder => {
                let (logits, label) = self.decode_clip_order(&r, mask, targets.order)?;
                trace.push(("clip_order_logits", logits.shape().to_vec()));
                logits.cross_entropy(&vec![label; nm])?
            }
            MotionTargetKind::None => Tensor::scalar(F::zero()),
        };
        let (total, losses) = hybrid_loss_tensor(&app, &mot, &align, F::of(cfg.alpha))?;
        Ok(ClipOutput { total, losses, latents: LatentBatch { visible: latents, regressed: r, targets: r_hat }, trace })
    }

    /// Samples the mask and clip order from the two seeds, builds targets
    /// and runs [`Model::forward_clip`].
    pub fn forward_sample(&self, sample: &Sample, mask_seed: u64, order_seed: u64) -> Result<ClipOutput<F>> {
        let mask = sample_mask(&self.config, mask_seed)?;
        let order = ClipOrder::sample(&mut rng::stream(order_seed));
        let targets = self.targets(sample, &mask, order)?;
        self.forward_clip(&patchify(&sample.clip, self.config.patch)?, &mask, &targets)
    }

    /// Forward pass over a batch; seeds per sample come from
    /// [`sample_seeds`].
    pub fn forward_pretrain(&self, batch: &[Sample], seed: u64) -> Result<PretrainOutput<F>> {
        if batch.is_empty() {
            return usage_err("empty batch");
        }
        let clips = sample_seeds(seed, batch.len())
            .into_iter()
            .zip(batch)
            .map(|((ms, os), s)| self.forward_sample(s, ms, os))
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_losses(&clips.iter().map(|c| c.losses).collect::<Vec<_>>());
        Ok(PretrainOutput { clips, mean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_moving_shapes;
    use crate::masking::tube_mask;

    fn tiny() -> Model<f64> {
        Model::init(ModelConfig::tiny(), 5).unwrap()
    }

    fn zero_outputs(m: &mut Model<f64>) {
        for id in m.layout.sublayer_outputs() {
            let n = m.params[id].numel();
            m.params.set(id, vec![0.0; n]).unwrap();
        }
    }

    fn clip(cfg: &ModelConfig, class: usize, seed: u64) -> VideoClip {
        let c = generate_moving_shapes(seed, class, cfg.frames, 16, 16).unwrap();
        // crop to the configured frame size
        let (h, w) = (cfg.height, cfg.width);
        let mut frames = Vec::new();
        for t in 0..c.t {
            for ch in 0..3 {
                for y in 0..h {
                    let row = t * 3 * 256 + ch * 256 + y * 16;
                    frames.extend_from_slice(&c.frames[row..row + w]);
                }
            }
        }
        VideoClip::new(frames, c.t, 3, h, w).unwrap()
    }

    #[test]
    fn layout_names_are_unique() {
        let m = Model::<f32>::init(ModelConfig::toy(), 0).unwrap();
        let mut names = m.params.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), m.params.len());
        assert!(m.params.find("appearance.head").is_some());
        assert!(m.params.find("motion.cls").is_none());
    }

    #[test]
    fn zeroed_encoder_is_identity() {
        let mut m = tiny();
        zero_outputs(&mut m);
        let x = Tensor::new(&[4, 2, 8], (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(m.encode(&x).unwrap().data(), x.data());
        assert_eq!(encode_with(&m.params, &[], &x, 2).unwrap().data(), x.data());
    }

    #[test]
    fn zeroed_regressor_returns_queries() {
        let mut m = tiny();
        zero_outputs(&mut m);
        let mask = tube_mask(4, 4, 0.5, 1).unwrap();
        let lat = Tensor::full(&[4, 2, 8], 0.3).unwrap();
        let r = m.regress(&lat, &mask).unwrap();
        assert_eq!(r.data(), m.mask_queries(&mask.masked_positions()).unwrap().data());
    }

    #[test]
    fn equal_position_sums_give_equal_regressions() {
        let mut m = tiny();
        let pt = m.params[m.layout.pos_t].to_vec();
        let ps = m.params[m.layout.pos_s].to_vec();
        // make frame 1 share frame 0's temporal embedding
        let mut pt2 = pt.clone();
        pt2[8..16].copy_from_slice(&pt[..8]);
        m.params.set(m.layout.pos_t, pt2).unwrap();
        m.params.set(m.layout.pos_s, ps).unwrap();
        let mask = tube_mask(4, 4, 0.5, 2).unwrap();
        let lat = Tensor::new(&[4, 2, 8], (0..64).map(|i| (i as f64).cos()).collect()).unwrap();
        let r = m.regress(&lat, &mask).unwrap();
        let nm = mask.per_frame().unwrap();
        assert_eq!(r.data()[..nm * 8], r.data()[nm * 8..2 * nm * 8]);
    }

    #[test]
    fn alignment_targets_match_full_grid_when_all_masked() {
        let m = tiny();
        let mask = MaskSpec::from_frame_sets(4, MaskKind::Tube, vec![(0..4).collect(); 4]).unwrap();
        let grid = Tensor::new(&[4, 4, 8], (0..128).map(|i| (i as f64 * 0.11).sin()).collect()).unwrap();
        let r_hat = m.encode_alignment_targets(&grid, &mask).unwrap();
        assert!(!r_hat.requires_grad());
        assert_eq!(r_hat.data(), m.encode(&grid).unwrap().data());
        let varying = MaskSpec::from_frame_sets(4, MaskKind::Tube, vec![vec![0], vec![1], vec![0], vec![0]]).unwrap();
        assert!(matches!(m.encode_alignment_targets(&grid, &varying), Err(Error::Structure(_))));
    }

    #[test]
    fn decoder_shapes_and_zero_heads() {
        let mut m = tiny();
        let mask = tube_mask(4, 4, 0.5, 3).unwrap();
        let r = Tensor::full(&[8, 8], 0.1).unwrap();
        assert_eq!(m.decode_appearance(&r, &mask).unwrap().shape(), &[4, 2, 8]);
        assert_eq!(m.decode_motion(&r, &mask).unwrap().shape(), &[3, 2, 12]);
        let head = m.layout.appearance_head;
        m.params.set(head, vec![0.0; 64]).unwrap();
        assert!(m.decode_appearance(&r, &mask).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_order_shapes_and_labels() {
        let cfg = ModelConfig { motion_target: MotionTargetKind::ClipOrder, ..ModelConfig::tiny() };
        let m = Model::<f64>::init(cfg, 1).unwrap();
        let mask = tube_mask(4, 4, 0.5, 3).unwrap();
        let r = Tensor::new(&[8, 8], (0..64).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let (logits, label) = m.decode_clip_order(&r, &mask, ClipOrder::Identity).unwrap();
        assert_eq!((logits.shape(), label), (&[2usize, 2][..], 0));
        assert_eq!(m.decode_clip_order(&r, &mask, ClipOrder::Swapped).unwrap().1, 1);
        assert_eq!(m.order_query_features(&mask, ClipOrder::Swapped).unwrap().shape(), &[2, 32]);
        let odd = tube_mask(4, 3, 0.5, 3).unwrap();
        assert!(m.decode_clip_order(&Tensor::zeros(&[6, 8]).unwrap(), &odd, ClipOrder::Identity).is_err());
    }

    #[test]
    fn static_clip_with_zero_heads_gives_closed_form_losses() {
        let cfg = ModelConfig { vocab: crate::targets::GRID_VOCAB, alpha: 0.0, ..ModelConfig::tiny() };
        let mut m = Model::<f64>::init(cfg.clone(), 2).unwrap();
        let ah = m.layout.appearance_head;
        let n = m.params[ah].numel();
        m.params.set(ah, vec![0.0; n]).unwrap();
        let (mw, mb) = m.layout.motion_head.unwrap();
        for id in [mw, mb] {
            let n = m.params[id].numel();
            m.params.set(id, vec![0.0; n]).unwrap();
        }
        let out = m.forward_pretrain(&[clip(&cfg, 3, 9).into()], 4).unwrap();
        let l = out.mean;
        assert_eq!(l.motion, 0.0);
        assert!((l.appearance - (cfg.vocab as f64).ln()).abs() < 1e-9);
        assert_eq!(l.total, l.appearance + l.motion);
    }

    #[test]
    fn identical_clips_give_identical_losses() {
        let cfg = ModelConfig { vocab: crate::targets::GRID_VOCAB, ..ModelConfig::tiny() };
        let m = Model::<f64>::init(cfg.clone(), 2).unwrap();
        let c = clip(&cfg, 0, 1);
        let a = m.forward_sample(&c.clone().into(), 7, 8).unwrap();
        let b = m.forward_sample(&c.into(), 7, 8).unwrap();
        assert_eq!(a.losses, b.losses);
    }
}
