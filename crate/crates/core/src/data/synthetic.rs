use rand::Rng as _;

use super::VideoClip;
use crate::error::{usage_err, Result};
use crate::rng;

/// Motion classes of the synthetic corpus. All classes draw shape, color,
/// texture and mean position from the same distributions, so only the
/// direction of motion tells them apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionClass {
    RightDrift = 0,
    LeftDrift = 1,
    DownDrift = 2,
    Static = 3,
}

pub const SHAPE_CLASSES: usize = 4;

impl MotionClass {
    pub fn from_id(id: usize) -> Result<Self> {
        Ok(match id {
            0 => MotionClass::RightDrift,
            1 => MotionClass::LeftDrift,
            2 => MotionClass::DownDrift,
            3 => MotionClass::Static,
            _ => return usage_err(format!("unknown motion class {id} (expected 0..=3)")),
        })
    }

    pub fn id(self) -> usize {
        self as usize
    }

    /// Pixels per frame along (x, y).
    pub fn velocity(self) -> (i64, i64) {
        match self {
            MotionClass::RightDrift => (1, 0),
            MotionClass::LeftDrift => (-1, 0),
            MotionClass::DownDrift => (0, 1),
            MotionClass::Static => (0, 0),
        }
    }
}

/// Start coordinate along one axis so the whole trajectory stays inside
/// `[0, extent - size]` whenever the travel fits.
fn start_coord(slack: i64, velocity: i64, frames: usize) -> i64 {
    let travel = frames as i64 - 1;
    match velocity {
        1 => slack,
        -1 => slack + travel,
        _ => slack + travel / 2,
    }
}

/// A colored rectangle over a static textured background, translating one
/// pixel per frame in the direction given by `class_id`.
pub fn generate_moving_shapes(seed: u64, class_id: usize, t: usize, h: usize, w: usize) -> Result<VideoClip> {
    let class = MotionClass::from_id(class_id)?;
    if h < 16 || w < 16 {
        return usage_err(format!("frames must be at least 16×16, got {h}×{w}"));
    }
    if t < 2 {
        return usage_err(format!("need at least 2 frames, got {t}"));
    }
    let mut rng = rng::stream(seed);
    let c = 3;

    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.55));
    let mut background = vec![0f32; c * h * w];
    for ch in 0..c {
        for px in &mut background[ch * h * w..(ch + 1) * h * w] {
            *px = (base[ch] + rng.random_range(-0.1f32..0.1)).clamp(0.0, 1.0);
        }
    }
    let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
    let rw = rng.random_range(w / 4..=w / 2) as i64;
    let rh = rng.random_range(h / 4..=h / 2) as i64;
    let travel = t as i64 - 1;
    let slack_x = (w as i64 - rw - travel).max(0);
    let slack_y = (h as i64 - rh - travel).max(0);
    let (dx, dy) = class.velocity();
    let x0 = start_coord(rng.random_range(0..=slack_x), dx, t);
    let y0 = start_coord(rng.random_range(0..=slack_y), dy, t);

    let mut frames = Vec::with_capacity(t * c * h * w);
    for s in 0..t as i64 {
        let (x, y) = (x0 + dx * s, y0 + dy * s);
        let start = frames.len();
        frames.extend_from_slice(&background);
        let frame = &mut frames[start..];
        for yy in y.max(0)..(y + rh).min(h as i64) {
            for xx in x.max(0)..(x + rw).min(w as i64) {
                for (ch, &col) in color.iter().enumerate() {
                    frame[ch * h * w + yy as usize * w + xx as usize] = col;
                }
            }
        }
    }
    Ok(VideoClip::new(frames, t, c, h, w)?.with_label(class.id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_class_repeats_first_frame() {
        let clip = generate_moving_shapes(7, 3, 6, 16, 16).unwrap();
        for t in 1..6 {
            assert_eq!(clip.frame(t), clip.frame(0));
        }
    }

    /// Most frequent RGB triple of a frame: the rectangle, since the
    /// background is per-pixel noise.
    fn shape_color(frame: &[f32], hw: usize) -> [u32; 3] {
        let mut counts: std::collections::HashMap<[u32; 3], usize> = Default::default();
        for i in 0..hw {
            *counts.entry([0, 1, 2].map(|c| frame[c * hw + i].to_bits())).or_default() += 1;
        }
        counts.into_iter().max_by_key(|&(_, n)| n).unwrap().0
    }

    #[test]
    fn right_drift_shifts_the_shape_support() {
        let (t, h, w) = (5, 24, 24);
        let clip = generate_moving_shapes(11, 0, t, h, w).unwrap();
        let f0 = clip.frame(0);
        let color = shape_color(f0, h * w);
        let support: Vec<(usize, usize)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| [0, 1, 2].map(|c| f0[c * h * w + y * w + x].to_bits()) == color)
            .collect();
        assert!(support.len() >= 36);
        // interior: the shifted support never leaves the frame
        assert!(support.iter().all(|&(_, x)| x + t - 1 < w));
        for s in 1..t {
            let fs = clip.frame(s);
            for &(y, x) in &support {
                for c in 0..3 {
                    assert_eq!(fs[c * h * w + y * w + x + s], f0[c * h * w + y * w + x]);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = generate_moving_shapes(3, 1, 8, 32, 32).unwrap();
        let b = generate_moving_shapes(3, 1, 8, 32, 32).unwrap();
        assert_eq!(a, b);
        assert!(a.frames.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, generate_moving_shapes(4, 1, 8, 32, 32).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_moving_shapes(0, 4, 4, 16, 16).is_err());
        assert!(generate_moving_shapes(0, 0, 1, 16, 16).is_err());
        assert!(generate_moving_shapes(0, 0, 4, 8, 16).is_err());
    }
}
