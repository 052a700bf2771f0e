use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{MseReduction, DEFAULT_ALPHA};
use crate::masking::MaskKind;
use crate::patch_embed::PatchGeometry;
use crate::targets::GRID_VOCAB;

/// What the motion branch reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionTargetKind {
    /// Pixel difference between adjacent frames.
    RgbDiff,
    /// Two-way order classification of shuffled tube halves.
    ClipOrder,
    /// Precomputed two-channel displacement fields.
    Flow,
    /// No motion branch.
    None,
}

impl MotionTargetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb-diff" => Ok(Self::RgbDiff),
            "clip-order" => Ok(Self::ClipOrder),
            "flow" => Ok(Self::Flow),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown motion target {other:?} (rgb-diff|clip-order|flow|none)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RgbDiff => "rgb-diff",
            Self::ClipOrder => "clip-order",
            Self::Flow => "flow",
            Self::None => "none",
        }
    }

    /// Whether the motion decoder ends in a per-patch regression head.
    pub fn regresses(self) -> bool {
        matches!(self, Self::RgbDiff | Self::Flow)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Encoder width `D`.
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub encoder_depth: usize,
    pub regressor_depth: usize,
    pub appearance_depth: usize,
    pub motion_depth: usize,
    /// Width of regressor and decoders; 0 means the encoder width.
    pub regressor_dim: usize,
    /// Appearance vocabulary size `K`.
    pub vocab: usize,
    pub tokenizer: String,
    pub patch: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mask_ratio: f64,
    pub mask_kind: MaskKind,
    pub cube_block: usize,
    pub motion_target: MotionTargetKind,
    pub mse_reduction: MseReduction,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::vit_b()
    }
}

fn heads_for(width: usize) -> usize {
    (width / 64).max(1)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl ModelConfig {
    /// ViT-B pre-training configuration: 16×224² clips, 16² patches.
    pub fn vit_b() -> Self {
        ModelConfig {
            dim: 768,
            heads: 12,
            mlp_ratio: 4,
            encoder_depth: 12,
            regressor_depth: 4,
            appearance_depth: 4,
            motion_depth: 2,
            regressor_dim: 0,
            vocab: GRID_VOCAB,
            tokenizer: "grid16384".into(),
            patch: 16,
            frames: 16,
            height: 224,
            width: 224,
            channels: 3,
            mask_ratio: 0.75,
            mask_kind: MaskKind::Tube,
            cube_block: 4,
            motion_target: MotionTargetKind::RgbDiff,
            mse_reduction: MseReduction::PatchMean,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn vit_l() -> Self {
        ModelConfig { dim: 1024, heads: 16, encoder_depth: 24, ..Self::vit_b() }
    }

    /// Desk-scale model: 8×32² clips, 8² patches, width 64.
    pub fn toy() -> Self {
        ModelConfig {
            dim: 64,
            heads: 2,
            encoder_depth: 4,
            regressor_depth: 2,
            appearance_depth: 2,
            motion_depth: 1,
            patch: 8,
            frames: 8,
            height: 32,
            width: 32,
            cube_block: 2,
            ..Self::vit_b()
        }
    }

    /// Smallest useful model for finite-difference checks: width 8,
    /// 4 frames of 2×2 patches, vocabulary 8.
    pub fn tiny() -> Self {
        ModelConfig {
            dim: 8,
            heads: 2,
            mlp_ratio: 2,
            encoder_depth: 1,
            regressor_depth: 1,
            appearance_depth: 1,
            motion_depth: 1,
            vocab: 8,
            patch: 2,
            frames: 4,
            height: 4,
            width: 4,
            mask_ratio: 0.5,
            cube_block: 1,
            ..Self::vit_b()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vit-b" => Ok(Self::vit_b()),
            "vit-l" => Ok(Self::vit_l()),
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset {other:?} (vit-b|vit-l|toy|tiny)"))),
        }
    }

    pub fn decoder_dim(&self) -> usize {
        if self.regressor_dim == 0 {
            self.dim
        } else {
            self.regressor_dim
        }
    }

    pub fn decoder_heads(&self) -> usize {
        if self.decoder_dim() == self.dim {
            self.heads
        } else {
            heads_for(self.decoder_dim())
        }
    }

    pub fn geometry(&self) -> Result<PatchGeometry> {
        PatchGeometry::new(self.frames, self.channels, self.height, self.width, self.patch)
    }

    /// Patches per frame `N`.
    pub fn tokens_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Per-patch width of the motion regression target.
    pub fn motion_dim(&self) -> usize {
        let ch = if self.motion_target == MotionTargetKind::Flow { 2 } else { self.channels };
        self.patch * self.patch * ch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.geometry().map_err(|e| Error::Config(e.to_string()))?;
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.decoder_dim() % self.decoder_heads() != 0 {
            return bad(format!("regressor_dim {} is not divisible into heads", self.decoder_dim()));
        }
        if self.dim < 2 || self.decoder_dim() < 2 {
            return bad("widths must be at least 2".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        let depths = [self.encoder_depth, self.regressor_depth, self.appearance_depth];
        if depths.contains(&0) || (self.motion_target != MotionTargetKind::None && self.motion_depth == 0) {
            return bad("depths must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio));
        }
        if self.vocab < 2 {
            return bad("vocab must be at least 2".into());
        }
        if self.frames < 2 && self.motion_target != MotionTargetKind::None {
            return bad("motion targets need at least 2 frames".into());
        }
        if self.motion_target == MotionTargetKind::ClipOrder && self.frames % 2 != 0 {
            return bad(format!("clip-order prediction needs an even frame count, got {}", self.frames));
        }
        if self.mask_kind == MaskKind::Cube && self.cube_block == 0 {
            return bad("cube_block must be positive".into());
        }
        Ok(())
    }

    /// Sets one field from its textual value. Setting `dim` also resets
    /// `heads` to `dim / 64` (at least 1); set `heads` afterwards to
    /// override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key.replace('-', "_").as_str() {
            "dim" => {
                self.dim = parse_num(key, v)?;
                self.heads = heads_for(self.dim);
            }
            "heads" => self.heads = parse_num(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse_num(key, v)?,
            "encoder_depth" => self.encoder_depth = parse_num(key, v)?,
            "regressor_depth" => self.regressor_depth = parse_num(key, v)?,
            "appearance_depth" => self.appearance_depth = parse_num(key, v)?,
            "motion_depth" => self.motion_depth = parse_num(key, v)?,
            "regressor_dim" => self.regressor_dim = parse_num(key, v)?,
            "vocab" => self.vocab = parse_num(key, v)?,
            "tokenizer" => self.tokenizer = v.to_string(),
            "patch" => self.patch = parse_num(key, v)?,
            "frames" => self.frames = parse_num(key, v)?,
            "height" => self.height = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "channels" => self.channels = parse_num(key, v)?,
            "mask_ratio" => self.mask_ratio = parse_num(key, v)?,
            "mask_kind" => self.mask_kind = MaskKind::parse(v)?,
            "cube_block" => self.cube_block = parse_num(key, v)?,
            "motion_target" => self.motion_target = MotionTargetKind::parse(v)?,
            "mse_reduction" => self.mse_reduction = MseReduction::parse(v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field as `(key, value)` text, in a fixed order that
    /// [`ModelConfig::set`] reads back.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dim", self.dim.to_string()),
            ("heads", self.heads.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("encoder_depth", self.encoder_depth.to_string()),
            ("regressor_depth", self.regressor_depth.to_string()),
            ("appearance_depth", self.appearance_depth.to_string()),
            ("motion_depth", self.motion_depth.to_string()),
            ("regressor_dim", self.regressor_dim.to_string()),
            ("vocab", self.vocab.to_string()),
            ("tokenizer", self.tokenizer.clone()),
            ("patch", self.patch.to_string()),
            ("frames", self.frames.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("mask_ratio", self.mask_ratio.to_string()),
            ("mask_kind", self.mask_kind.name().to_string()),
            ("cube_block", self.cube_block.to_string()),
            ("motion_target", self.motion_target.name().to_string()),
            ("mse_reduction", self.mse_reduction.name().to_string()),
            ("alpha", self.alpha.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["vit-b", "vit-l", "toy", "tiny"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        let b = ModelConfig::vit_b();
        assert_eq!((b.tokens_per_frame(), b.motion_dim(), b.decoder_heads()), (196, 768, 12));
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = ModelConfig::toy();
        c.motion_target = MotionTargetKind::ClipOrder;
        c.regressor_dim = 32;
        c.alpha = 0.5;
        let mut d = ModelConfig::vit_b();
        for (k, v) in c.pairs() {
            assert!(d.set(k, &v).unwrap());
        }
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::toy();
        assert!(!c.set("nope", "1").unwrap());
        assert!(c.set("alpha", "x").is_err());
        c.alpha = -1.0;
        assert!(c.validate().is_err());
        let odd = ModelConfig { frames: 5, motion_target: MotionTargetKind::ClipOrder, ..ModelConfig::toy() };
        assert!(odd.validate().is_err());
    }
}
