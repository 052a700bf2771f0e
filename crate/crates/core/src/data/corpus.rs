//! On-disk corpus of labeled source videos:
//!
//! ```text
//! <root>/clips/<split>/<index>.tnsr     source video, f32 T×3×H×W
//! <root>/clips/<split>/labels.csv       header `index,class_id`
//! <root>/flow/<split>/<index>.tnsr      optional, f32 (T−1)×2×H×W
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{generate_moving_shapes, read_tensor, write_tensor, TensorData, TensorValues, VideoClip, SHAPE_CLASSES};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7261_696e,
            Split::Val => 0x7661_6c00,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
}

impl Corpus {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.join("clips").is_dir() {
            return Err(Error::Usage(format!("{} has no clips/ directory", root.display())));
        }
        Ok(Corpus { root })
    }

    /// Writes a balanced synthetic corpus (class = index mod 4). With
    /// `with_flow`, also writes the exact per-frame displacement field of
    /// each video.
    #[allow(clippy::too_many_arguments)]
    pub fn create_synthetic(
        root: impl AsRef<Path>,
        train: usize,
        val: usize,
        frames: usize,
        height: usize,
        width: usize,
        seed: u64,
        with_flow: bool,
    ) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for (split, count) in [(Split::Train, train), (Split::Val, val)] {
            let dir = root.join("clips").join(split.name());
            fs::create_dir_all(&dir)?;
            if with_flow {
                fs::create_dir_all(root.join("flow").join(split.name()))?;
            }
            let mut labels = csv::Writer::from_path(dir.join("labels.csv"))?;
            labels.write_record(["index", "class_id"])?;
            for i in 0..count {
                let class = i % SHAPE_CLASSES;
                let clip_seed = synthetic_seed(seed, split, i);
                let clip = generate_moving_shapes(clip_seed, class, frames, height, width)?;
                write_tensor(dir.join(format!("{i}.tnsr")), &clip.to_tensor_data())?;
                if with_flow {
                    let flow = displacement_field(&clip, class)?;
                    write_tensor(root.join("flow").join(split.name()).join(format!("{i}.tnsr")), &flow)?;
                }
                labels.write_record([i.to_string(), class.to_string()])?;
            }
            labels.flush()?;
        }
        Ok(Corpus { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn labels(&self, split: Split) -> Result<Vec<(usize, usize)>> {
        let path = self.root.join("clips").join(split.name()).join("labels.csv");
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize, field: &'static str| -> Result<usize> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Format { field, detail: format!("bad labels.csv row {rec:?}") })
            };
            out.push((parse(0, "index")?, parse(1, "class_id")?));
        }
        Ok(out)
    }

    pub fn load(&self, split: Split, index: usize) -> Result<VideoClip> {
        let path = self.clip_path(split, index);
        let clip = VideoClip::from_tensor_data(&read_tensor(path)?)?;
        let label = self.labels(split)?.into_iter().find(|&(i, _)| i == index).map(|(_, c)| c);
        Ok(match label {
            Some(c) => clip.with_label(c),
            None => clip,
        })
    }

    pub fn clip_path(&self, split: Split, index: usize) -> PathBuf {
        self.root.join("clips").join(split.name()).join(format!("{index}.tnsr"))
    }

    pub fn flow_path(&self, split: Split, index: usize) -> PathBuf {
        self.root.join("flow").join(split.name()).join(format!("{index}.tnsr"))
    }
}

pub(crate) fn synthetic_seed(seed: u64, split: Split, index: usize) -> u64 {
    rng::derive(rng::derive(seed, split.tag()), index as u64)
}

/// Per-pixel displacement (u, v) between consecutive frames: the class
/// velocity where the rectangle sits in the earlier frame, zero elsewhere.
fn displacement_field(clip: &VideoClip, class: usize) -> Result<TensorData> {
    let (dx, dy) = super::MotionClass::from_id(class)?.velocity();
    let (t, h, w) = (clip.t, clip.h, clip.w);
    let mut out = vec![0f32; (t - 1) * 2 * h * w];
    for s in 0..t - 1 {
        let (a, b) = (clip.frame(s), clip.frame(s + 1));
        for i in 0..h * w {
            // pixels that differ between frames lie on the moving rectangle's path
            let moving = (0..clip.c).any(|c| a[c * h * w + i] != b[c * h * w + i]);
            if moving {
                out[(s * 2) * h * w + i] = dx as f32;
                out[(s * 2 + 1) * h * w + i] = dy as f32;
            }
        }
    }
    Ok(TensorData { shape: vec![t - 1, 2, h, w], values: TensorValues::F32(out) })
}
