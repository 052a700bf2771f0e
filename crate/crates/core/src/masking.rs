//! Tube and cube masks over a `T × N` token grid.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{dim_err, usage_err, Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// A uniformly random 2-D mask broadcast over time.
    Tube,
    /// A block-wise 2-D mask broadcast over time.
    Cube,
}

impl MaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tube" => Ok(MaskKind::Tube),
            "cube" => Ok(MaskKind::Cube),
            other => Err(Error::Config(format!("unknown mask kind {other:?} (tube|cube)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Tube => "tube",
            MaskKind::Cube => "cube",
        }
    }
}

/// Masked token sets of one clip.
///
/// `frames[t]` holds the sorted masked spatial indices of frame `t`. Masks
/// built by [`tube_mask`] and [`cube_mask`] use the same set for every
/// frame; [`MaskSpec::from_frame_sets`] admits arbitrary per-frame sets,
/// which the factorized decoders refuse.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub rho: f64,
    pub kind: MaskKind,
    pub n: usize,
    frames: Vec<Vec<usize>>,
}

/// `round(ρ·N)`, half away from zero.
pub fn masked_count(n: usize, rho: f64) -> usize {
    ((rho * n as f64).round() as usize).min(n)
}

fn check_ratio(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return usage_err(format!("mask ratio {rho} outside [0, 1]"));
    }
    Ok(())
}

pub fn tube_mask(n: usize, t: usize, rho: f64, seed: u64) -> Result<MaskSpec> {
    check_ratio(rho)?;
    if n == 0 || t == 0 {
        return usage_err("mask over an empty grid");
    }
    let mut rng = rng::stream(seed);
    let mut picked = index::sample(&mut rng, n, masked_count(n, rho)).into_vec();
    picked.sort_unstable();
    Ok(MaskSpec { rho, kind: MaskKind::Tube, n, frames: vec![picked; t] })
}

/// Block-wise mask on an `nh × nw` grid, repeated over `t` frames.
///
/// Blocks of random height and width in `1..=block_size` are placed at
/// random positions until at least `⌈ρ·N⌉` cells are covered, so the count
/// lands in `[ρ·N, ρ·N + block_size²)`.
pub fn cube_mask(nh: usize, nw: usize, t: usize, rho: f64, block_size: usize, seed: u64) -> Result<MaskSpec> {
    check_ratio(rho)?;
    if nh == 0 || nw == 0 || t == 0 {
        return usage_err("mask over an empty grid");
    }
    if block_size == 0 || block_size > nh.min(nw) {
        return usage_err(format!("block size {block_size} does not fit a {nh}×{nw} grid"));
    }
    let n = nh * nw;
    let target = (((rho * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n);
    let mut rng = rng::stream(seed);
    let mut cells = BTreeSet::new();
    let mut attempts = 0usize;
    while cells.len() < target {
        attempts += 1;
        if attempts > 100 * n {
            // Placement stalls only when the few free cells are hard to hit;
            // finish with single cells, which keeps the overshoot bound.
            let free: Vec<usize> = (0..n).filter(|c| !cells.contains(c)).collect();
            for i in index::sample(&mut rng, free.len(), target - cells.len()) {
                cells.insert(free[i]);
            }
            break;
        }
        let bh = rng.random_range(1..=block_size);
        let bw = rng.random_range(1..=block_size);
        let top = rng.random_range(0..=nh - bh);
        let left = rng.random_range(0..=nw - bw);
        for y in top..top + bh {
            for x in left..left + bw {
                cells.insert(y * nw + x);
            }
        }
    }
    let picked: Vec<usize> = cells.into_iter().collect();
    Ok(MaskSpec { rho, kind: MaskKind::Cube, n, frames: vec![picked; t] })
}

impl MaskSpec {
    /// Arbitrary per-frame masked sets (each sorted and deduplicated here).
    pub fn from_frame_sets(n: usize, kind: MaskKind, frames: Vec<Vec<usize>>) -> Result<Self> {
        if frames.is_empty() {
            return usage_err("mask needs at least one frame");
        }
        let mut sets = Vec::with_capacity(frames.len());
        for mut f in frames {
            f.sort_unstable();
            f.dedup();
            if f.last().is_some_and(|&j| j >= n) {
                return dim_err(format!("masked index out of range for N = {n}"));
            }
            sets.push(f);
        }
        let total: usize = sets.iter().map(Vec::len).sum();
        let rho = total as f64 / (n * sets.len()) as f64;
        Ok(MaskSpec { rho, kind, n, frames: sets })
    }

    pub fn t(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_set(&self, t: usize) -> &[usize] {
        &self.frames[t]
    }

    /// True when every frame masks the same spatial set.
    pub fn is_tube_structured(&self) -> bool {
        self.frames.windows(2).all(|w| w[0] == w[1])
    }

    /// The masked spatial set shared by all frames.
    pub fn masked_spatial(&self) -> Result<&[usize]> {
        if !self.is_tube_structured() {
            return Err(Error::Structure("masked set differs across frames".into()));
        }
        Ok(&self.frames[0])
    }

    pub fn visible_spatial(&self) -> Result<Vec<usize>> {
        let masked = self.masked_spatial()?;
        Ok((0..self.n).filter(|j| masked.binary_search(j).is_err()).collect())
    }

    /// Masked tokens per frame (tube-structured masks).
    pub fn per_frame(&self) -> Result<usize> {
        Ok(self.masked_spatial()?.len())
    }

    /// `M`: every masked `(t, j)`, frame-major.
    pub fn masked_positions(&self) -> Vec<(usize, usize)> {
        self.frames.iter().enumerate().flat_map(|(t, f)| f.iter().map(move |&j| (t, j))).collect()
    }

    /// `M′`: masked positions outside the last frame.
    pub fn masked_positions_except_last(&self) -> Vec<(usize, usize)> {
        let last = self.t() - 1;
        self.masked_positions().into_iter().filter(|&(t, _)| t < last).collect()
    }

    pub fn num_masked(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// Renders the mask as an ASCII PPM (P3) image: frames side by side,
    /// masked cells red and visible cells gray, `cell` pixels per token.
    pub fn to_ppm(&self, grid_h: usize, grid_w: usize, cell: usize) -> Result<String> {
        if grid_h * grid_w != self.n || cell == 0 {
            return dim_err(format!("{grid_h}×{grid_w} grid does not hold N = {}", self.n));
        }
        let gap = 1;
        let width = self.t() * (grid_w * cell + gap) - gap;
        let height = grid_h * cell;
        let mut out = format!("P3\n{width} {height}\n255\n");
        for y in 0..height {
            let mut row = Vec::with_capacity(width);
            for t in 0..self.t() {
                if t > 0 {
                    row.push("255 255 255");
                }
                for x in 0..grid_w * cell {
                    let j = (y / cell) * grid_w + x / cell;
                    let masked = self.frames[t].binary_search(&j).is_ok();
                    row.push(if masked { "220 30 30" } else { "160 160 160" });
                }
            }
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        Ok(out)
    }
}

/// Visible tokens of a `T×N×D` grid plus the masked `(t, j)` list.
///
/// Visible tokens keep frame-major, raster order.
pub fn partition<F: Scalar>(grid: &Tensor<F>, mask: &MaskSpec) -> Result<(Tensor<F>, Vec<(usize, usize)>)> {
    let &[t, n, d] = grid.shape() else {
        return dim_err(format!("partition expects T×N×D, got {:?}", grid.shape()));
    };
    if t != mask.t() || n != mask.n {
        return dim_err(format!("grid {t}×{n} vs mask {}×{}", mask.t(), mask.n));
    }
    let visible = mask.visible_spatial()?;
    if visible.is_empty() {
        return usage_err("every token is masked; nothing visible to encode");
    }
    let rows: Vec<usize> = (0..t).flat_map(|i| visible.iter().map(move |&j| i * n + j)).collect();
    let vis = grid.reshape(&[t * n, d])?.index_rows(&rows)?.reshape(&[t, visible.len(), d])?;
    Ok((vis, mask.masked_positions()))
}

/// Flat row indices into a `T×N` grid for `(t, j)` positions.
pub fn flat_rows(positions: &[(usize, usize)], n: usize) -> Vec<usize> {
    positions.iter().map(|&(t, j)| t * n + j).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vitb_tube_counts() {
        let m = tube_mask(196, 16, 0.75, 42).unwrap();
        assert!(m.is_tube_structured());
        assert_eq!(m.per_frame().unwrap(), 147);
        assert_eq!(m.visible_spatial().unwrap().len(), 49);
        assert_eq!(m.num_masked(), 16 * 147);
        assert_eq!(m.masked_positions_except_last().len(), 15 * 147);
    }

    #[test]
    fn ratio_boundaries() {
        let none = tube_mask(16, 4, 0.0, 1).unwrap();
        assert_eq!(none.num_masked(), 0);
        let all = tube_mask(16, 4, 1.0, 1).unwrap();
        assert_eq!(all.num_masked(), 64);
        assert_eq!(all.masked_positions_except_last().len(), 3 * 16);
        assert!(tube_mask(16, 4, 1.5, 1).is_err());
    }

    #[test]
    fn cube_whole_grid_block() {
        let m = cube_mask(4, 4, 3, 1.0, 4, 9).unwrap();
        assert_eq!(m.per_frame().unwrap(), 16);
        assert!(cube_mask(4, 4, 3, 0.5, 5, 9).is_err());
    }

    #[test]
    fn cube_overshoot_bound() {
        for seed in 0..50 {
            let m = cube_mask(14, 14, 4, 0.4, 4, seed).unwrap();
            let c = m.per_frame().unwrap();
            assert!(c as f64 >= 0.4 * 196.0 && (c as f64) < 0.4 * 196.0 + 16.0, "seed {seed}: {c}");
            assert!(m.is_tube_structured());
        }
    }

    #[test]
    fn frame_varying_masks_are_not_tubes() {
        let m = MaskSpec::from_frame_sets(4, MaskKind::Cube, vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert!(!m.is_tube_structured());
        assert!(matches!(m.masked_spatial(), Err(Error::Structure(_))));
    }

    #[test]
    fn partition_identity() {
        let (t, n, d) = (3, 5, 2);
        let grid = Tensor::<f64>::new(&[t, n, d], (0..t * n * d).map(|i| i as f64).collect()).unwrap();
        let mask = tube_mask(n, t, 0.4, 5).unwrap();
        let (vis, masked) = partition(&grid, &mask).unwrap();
        assert_eq!(vis.shape(), &[t, 3, d]);
        let visible = mask.visible_spatial().unwrap();
        let mut rebuilt = vec![f64::NAN; t * n * d];
        for i in 0..t {
            for (k, &j) in visible.iter().enumerate() {
                let src = (i * visible.len() + k) * d;
                rebuilt[(i * n + j) * d..(i * n + j + 1) * d].copy_from_slice(&vis.data()[src..src + d]);
            }
        }
        for &(i, j) in &masked {
            let r = (i * n + j) * d;
            rebuilt[r..r + d].copy_from_slice(&grid.data()[r..r + d]);
        }
        assert_eq!(rebuilt, grid.data());

        let open = tube_mask(n, t, 0.0, 5).unwrap();
        let (vis, masked) = partition(&grid, &open).unwrap();
        assert_eq!(vis.data(), grid.data());
        assert!(masked.is_empty());
    }
}
