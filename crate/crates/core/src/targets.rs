//! Supervision signals: discrete appearance tokens, RGB-difference and
//! flow motion targets, and clip-order labels.

use std::path::Path;

use rand::Rng as _;

use crate::data::{read_tensor, TensorData, VideoClip};
use crate::error::{usage_err, Error, Result};
use crate::masking::MaskSpec;
use crate::patch_embed::{patchify_raw, PatchGeometry};
use crate::rng::Rng;

/// Maps a `C×P×P` patch (channel-major, values in `[0, 1]`) to a token id.
pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn name(&self) -> &'static str;
    fn token(&self, patch: &[f32], channels: usize, p: usize) -> usize;
}

/// Fixed hue/luminance code with 16384 ids.
///
/// Four 3-bit luminance levels, one per 2×2 sub-cell, plus a 2-bit hue:
/// `hue·4096 + l0·512 + l1·64 + l2·8 + l3`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridTokenizer;

pub const GRID_VOCAB: usize = 16384;

impl Tokenizer for GridTokenizer {
    fn vocab_size(&self) -> usize {
        GRID_VOCAB
    }

    fn name(&self) -> &'static str {
        "grid16384"
    }

    fn token(&self, patch: &[f32], channels: usize, p: usize) -> usize {
        quantize_patch(patch, channels, p)
    }
}

pub fn tokenizer_by_name(name: &str) -> Result<Box<dyn Tokenizer>> {
    match name {
        "grid16384" => Ok(Box::new(GridTokenizer)),
        other => Err(Error::Config(format!("unknown tokenizer {other:?}"))),
    }
}

/// Token of one patch under the grid code. Sub-cells are taken in raster
/// order (top-left, top-right, bottom-left, bottom-right). Means are
/// accumulated in f64 in a fixed order so ids agree across platforms.
pub fn quantize_patch(patch: &[f32], channels: usize, p: usize) -> usize {
    debug_assert_eq!(patch.len(), channels * p * p);
    let half = p / 2;
    let bounds = [(0, half.max(1)), (half.max(1), p)];
    let mut levels = [0usize; 4];
    for (cell, level) in levels.iter_mut().enumerate() {
        let (y0, y1) = bounds[cell / 2];
        let (x0, x1) = bounds[cell % 2];
        let mut sum = 0f64;
        let mut count = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let luma: f64 = (0..channels).map(|c| patch[c * p * p + y * p + x] as f64).sum::<f64>()
                    / channels as f64;
                sum += luma;
                count += 1;
            }
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        *level = ((8.0 * mean).floor().max(0.0) as usize).min(7);
    }
    let means: Vec<f64> = (0..channels)
        .map(|c| patch[c * p * p..(c + 1) * p * p].iter().map(|&v| v as f64).sum::<f64>() / (p * p) as f64)
        .collect();
    let (mut argmax, mut max, mut min) = (0usize, f64::NEG_INFINITY, f64::INFINITY);
    for (c, &m) in means.iter().enumerate() {
        if m > max {
            max = m;
            argmax = c;
        }
        min = min.min(m);
    }
    let hue = if max - min < 0.05 { 3 } else { argmax.min(2) };
    hue * 4096 + levels[0] * 512 + levels[1] * 64 + levels[2] * 8 + levels[3]
}

/// Token ids of every patch, `T×N` frame-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTargets {
    pub tokens: Vec<usize>,
    pub t: usize,
    pub n: usize,
    pub vocab: usize,
}

impl TokenTargets {
    pub fn at(&self, t: usize, j: usize) -> usize {
        self.tokens[t * self.n + j]
    }

    /// Ids at the given `(t, j)` positions, in order.
    pub fn gather(&self, positions: &[(usize, usize)]) -> Vec<usize> {
        positions.iter().map(|&(t, j)| self.at(t, j)).collect()
    }
}

pub fn token_targets(clip: &VideoClip, p: usize, tokenizer: &dyn Tokenizer) -> Result<TokenTargets> {
    let g = PatchGeometry::of_clip(clip, p)?;
    let patches = patchify_raw(&clip.frames, &g);
    let tokens: Vec<usize> = patches.chunks_exact(g.patch_dim()).map(|pt| tokenizer.token(pt, g.c, p)).collect();
    debug_assert!(tokens.iter().all(|&k| k < tokenizer.vocab_size()));
    Ok(TokenTargets { tokens, t: g.t, n: g.n(), vocab: tokenizer.vocab_size() })
}

/// Per-patch motion targets at the masked positions of frames `0..T−1`:
/// shape `(T−1) × |masked per frame| × patch_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTarget {
    pub values: Vec<f32>,
    pub shape: [usize; 3],
}

impl MotionTarget {
    pub fn patch(&self, t: usize, k: usize) -> &[f32] {
        let d = self.shape[2];
        let i = (t * self.shape[1] + k) * d;
        &self.values[i..i + d]
    }
}

fn masked_patch_diffs(
    patches: &[f32],
    next_offset: usize,
    steps: usize,
    n: usize,
    pd: usize,
    masked: &[usize],
) -> Vec<f32> {
    let mut values = Vec::with_capacity(steps * masked.len() * pd);
    for t in 0..steps {
        for &j in masked {
            let a = (t * n + j) * pd;
            let b = a + next_offset;
            values.extend(patches[b..b + pd].iter().zip(&patches[a..a + pd]).map(|(&x, &y)| x - y));
        }
    }
    values
}

/// Raw RGB difference `patch(frame t+1) − patch(frame t)` at each masked
/// spatial index, for `t = 0..T−2`; the prediction for step `t` belongs to
/// the masked token of frame `t`.
pub fn rgb_diff_target(clip: &VideoClip, mask: &MaskSpec, p: usize) -> Result<MotionTarget> {
    if clip.t < 2 {
        return usage_err("RGB difference needs at least two frames");
    }
    let masked = mask.masked_spatial()?;
    let g = PatchGeometry::of_clip(clip, p)?;
    if mask.t() != g.t || mask.n != g.n() {
        return Err(Error::Dimension(format!("mask {}×{} vs clip grid {}×{}", mask.t(), mask.n, g.t, g.n())));
    }
    let patches = patchify_raw(&clip.frames, &g);
    let pd = g.patch_dim();
    let values = masked_patch_diffs(&patches, g.n() * pd, g.t - 1, g.n(), pd, masked);
    Ok(MotionTarget { values, shape: [g.t - 1, masked.len(), pd] })
}

/// Patchifies a `(T−1)×2×H×W` flow field at the masked positions.
pub fn flow_target(flow: &TensorData, mask: &MaskSpec, p: usize) -> Result<MotionTarget> {
    let &[steps, ch, h, w] = flow.shape.as_slice() else {
        return Err(Error::Format { field: "extents", detail: format!("flow must be rank 4, got {:?}", flow.shape) });
    };
    if ch != 2 || steps + 1 != mask.t() {
        return Err(Error::Format {
            field: "extents",
            detail: format!("flow shape {:?} does not fit a {}-frame mask (need {}×2×H×W)", flow.shape, mask.t(), mask.t() - 1),
        });
    }
    let g = PatchGeometry::new(steps, 2, h, w, p)
        .map_err(|e| Error::Format { field: "extents", detail: e.to_string() })?;
    if g.n() != mask.n {
        return Err(Error::Format { field: "extents", detail: format!("flow grid has {} patches, mask {}", g.n(), mask.n) });
    }
    let masked = mask.masked_spatial()?;
    let patches = patchify_raw(&flow.values.to_f32(), &g);
    let pd = g.patch_dim();
    let mut values = Vec::with_capacity(steps * masked.len() * pd);
    for t in 0..steps {
        for &j in masked {
            let a = (t * g.n() + j) * pd;
            values.extend_from_slice(&patches[a..a + pd]);
        }
    }
    Ok(MotionTarget { values, shape: [steps, masked.len(), pd] })
}

pub fn load_flow_target(path: impl AsRef<Path>, mask: &MaskSpec, p: usize) -> Result<MotionTarget> {
    flow_target(&read_tensor(path)?, mask, p)
}

/// Order of the two temporal halves of a masked tube.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipOrder {
    Identity,
    Swapped,
}

impl ClipOrder {
    pub fn label(self) -> usize {
        match self {
            ClipOrder::Identity => 0,
            ClipOrder::Swapped => 1,
        }
    }

    /// Fair coin.
    pub fn sample(rng: &mut Rng) -> Self {
        if rng.random_bool(0.5) {
            ClipOrder::Swapped
        } else {
            ClipOrder::Identity
        }
    }

    /// Frame index placed at each slot after reordering `t` frames.
    pub fn frame_order(self, t: usize) -> Result<Vec<usize>> {
        if t % 2 != 0 {
            return usage_err(format!("clip order needs an even frame count, got {t}"));
        }
        Ok(match self {
            ClipOrder::Identity => (0..t).collect(),
            ClipOrder::Swapped => (t / 2..t).chain(0..t / 2).collect(),
        })
    }
}

/// Label of a permutation of the two halves: `[0, 1]` → 0, `[1, 0]` → 1.
pub fn clip_order_label(halves: [usize; 2], t: usize) -> Result<usize> {
    if t % 2 != 0 {
        return usage_err(format!("clip order needs an even frame count, got {t}"));
    }
    match halves {
        [0, 1] => Ok(0),
        [1, 0] => Ok(1),
        other => usage_err(format!("{other:?} is not a permutation of two halves")),
    }
}
