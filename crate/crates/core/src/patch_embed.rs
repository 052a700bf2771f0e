//! Spatio-temporal patch extraction, linear patch embedding and separable
//! positional embeddings.
//!
//! A patch is flattened channel-major (`C×P×P`), matching the weight layout
//! of a stride-`P` convolution, so the embedding is a plain matmul.

use crate::data::VideoClip;
use crate::error::{dim_err, usage_err, Result};
use crate::numerics::{Scalar, Tensor};

/// Grid geometry of a clip cut into `P×P` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub p: usize,
}

impl PatchGeometry {
    pub fn new(t: usize, c: usize, h: usize, w: usize, p: usize) -> Result<Self> {
        if p == 0 || h % p != 0 || w % p != 0 {
            return usage_err(format!("{h}×{w} frames are not divisible into {p}×{p} patches"));
        }
        Ok(PatchGeometry { t, c, h, w, p })
    }

    pub fn of_clip(clip: &VideoClip, p: usize) -> Result<Self> {
        Self::new(clip.t, clip.c, clip.h, clip.w, p)
    }

    pub fn grid_h(&self) -> usize {
        self.h / self.p
    }

    pub fn grid_w(&self) -> usize {
        self.w / self.p
    }

    /// Patches per frame.
    pub fn n(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    pub fn patch_dim(&self) -> usize {
        self.p * self.p * self.c
    }
}

/// `T×C×H×W` → `T×N×(C·P·P)`, spatial patches in raster order.
pub fn patchify_raw<T: Copy + Default>(frames: &[T], g: &PatchGeometry) -> Vec<T> {
    let (gh, gw, p, hw) = (g.grid_h(), g.grid_w(), g.p, g.h * g.w);
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..g.t {
        let frame = &frames[t * g.c * hw..(t + 1) * g.c * hw];
        for py in 0..gh {
            for px in 0..gw {
                for c in 0..g.c {
                    for y in 0..p {
                        let row = c * hw + (py * p + y) * g.w + px * p;
                        out.extend_from_slice(&frame[row..row + p]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify_raw`].
pub fn unpatchify_raw<T: Copy + Default>(patches: &[T], g: &PatchGeometry) -> Vec<T> {
    let (gh, gw, p, hw) = (g.grid_h(), g.grid_w(), g.p, g.h * g.w);
    let mut out = vec![T::default(); patches.len()];
    let mut src = 0;
    for t in 0..g.t {
        let frame = &mut out[t * g.c * hw..(t + 1) * g.c * hw];
        for py in 0..gh {
            for px in 0..gw {
                for c in 0..g.c {
                    for y in 0..p {
                        let row = c * hw + (py * p + y) * g.w + px * p;
                        frame[row..row + p].copy_from_slice(&patches[src..src + p]);
                        src += p;
                    }
                }
            }
        }
    }
    out
}

/// Clip → `T×N×(P²·C)` tensor of raw patches.
pub fn patchify<F: Scalar>(clip: &VideoClip, p: usize) -> Result<Tensor<F>> {
    let g = PatchGeometry::of_clip(clip, p)?;
    let data = patchify_raw(&clip.frames, &g).into_iter().map(|v| F::of(v as f64)).collect();
    Tensor::new(&[g.t, g.n(), g.patch_dim()], data)
}

/// Patches → clip frames (`T×C×H×W`).
pub fn unpatchify<F: Scalar>(patches: &Tensor<F>, g: &PatchGeometry) -> Result<Vec<F>> {
    if patches.shape() != [g.t, g.n(), g.patch_dim()] {
        return dim_err(format!("unpatchify: {:?} does not match {g:?}", patches.shape()));
    }
    Ok(unpatchify_raw(patches.data(), g))
}

/// Per-patch linear embedding: `tokens[t][j] = patches[t][j] · W + b`.
pub fn embed<F: Scalar>(patches: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    if patches.rank() != 3 {
        return dim_err(format!("embed expects T×N×(P²C) patches, got {:?}", patches.shape()));
    }
    patches.linear(weight, Some(bias))
}

/// Sum of temporal and spatial embeddings for each `(t, j)` position:
/// an `L×D` tensor.
pub fn position_sum<F: Scalar>(
    temporal: &Tensor<F>,
    spatial: &Tensor<F>,
    positions: &[(usize, usize)],
) -> Result<Tensor<F>> {
    let ts: Vec<usize> = positions.iter().map(|&(t, _)| t).collect();
    let js: Vec<usize> = positions.iter().map(|&(_, j)| j).collect();
    temporal.index_rows(&ts)?.add(&spatial.index_rows(&js)?)
}

/// `out[i][j] = grid[i][j] + temporal[i] + spatial[j]`.
pub fn add_pos<F: Scalar>(grid: &Tensor<F>, temporal: &Tensor<F>, spatial: &Tensor<F>) -> Result<Tensor<F>> {
    let &[t, n, d] = grid.shape() else {
        return dim_err(format!("add_pos expects T×N×D, got {:?}", grid.shape()));
    };
    if temporal.shape() != [t, d] || spatial.shape() != [n, d] {
        return dim_err(format!(
            "add_pos: grid {:?}, temporal {:?}, spatial {:?}",
            grid.shape(),
            temporal.shape(),
            spatial.shape()
        ));
    }
    let positions: Vec<(usize, usize)> = (0..t).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    grid.add(&position_sum(temporal, spatial, &positions)?.reshape(&[t, n, d])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_clip(t: usize, h: usize, w: usize) -> VideoClip {
        let n = t * 3 * h * w;
        VideoClip::new((0..n).map(|i| i as f32 / n as f32).collect(), t, 3, h, w).unwrap()
    }

    #[test]
    fn small_patch_grid_shape() {
        let clip = ramp_clip(1, 4, 4);
        let p = patchify::<f32>(&clip, 2).unwrap();
        assert_eq!(p.shape(), &[1, 4, 12]);
        // first patch, channel 0, top row = pixels (0,0),(0,1)
        assert_eq!(&p.data()[..2], &clip.frames[..2]);
        // second patch starts at column 2
        assert_eq!(p.data()[12], clip.frames[2]);
    }

    #[test]
    fn roundtrip_is_exact() {
        let clip = ramp_clip(3, 8, 12);
        let g = PatchGeometry::of_clip(&clip, 4).unwrap();
        let p = patchify::<f32>(&clip, 4).unwrap();
        assert_eq!(unpatchify(&p, &g).unwrap(), clip.frames);
    }

    #[test]
    fn indivisible_is_usage_error() {
        let clip = ramp_clip(1, 6, 6);
        assert!(matches!(patchify::<f32>(&clip, 4), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn identity_embedding_and_zero_patches() {
        let clip = ramp_clip(2, 4, 4);
        let p = patchify::<f64>(&clip, 2).unwrap();
        let d = 12;
        let eye: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        let w = Tensor::new(&[d, d], eye).unwrap();
        let tokens = embed(&p, &w, &Tensor::zeros(&[d]).unwrap()).unwrap();
        assert_eq!(tokens.data(), p.data());

        let bias = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let w3 = Tensor::new(&[12, 3], (0..36).map(f64::from).collect()).unwrap();
        let zero = Tensor::zeros(&[2, 4, 12]).unwrap();
        let out = embed(&zero, &w3, &bias).unwrap();
        for row in out.data().chunks(3) {
            assert_eq!(row, bias.data());
        }
    }
}
