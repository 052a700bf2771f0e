//! Video clips, the synthetic moving-shapes generator and on-disk formats.

mod corpus;
mod synthetic;
mod tensor_file;

pub use corpus::{Corpus, Split};
pub use synthetic::{generate_moving_shapes, MotionClass, SHAPE_CLASSES};
pub use tensor_file::{read_tensor, write_tensor, DType, TensorData, TensorValues, MAGIC, VERSION};

use crate::error::{usage_err, Error, Result};

/// Frames stored `T×C×H×W`, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<f32>,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub label: Option<usize>,
    pub source_stride: usize,
}

impl VideoClip {
    pub fn new(frames: Vec<f32>, t: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || c == 0 || h == 0 || w == 0 {
            return usage_err(format!("empty clip {t}×{c}×{h}×{w}"));
        }
        if frames.len() != t * c * h * w {
            return Err(Error::Dimension(format!(
                "clip {t}×{c}×{h}×{w} needs {} values, got {}",
                t * c * h * w,
                frames.len()
            )));
        }
        if frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return usage_err("clip values must lie in [0, 1]");
        }
        Ok(VideoClip { frames, t, c, h, w, label: None, source_stride: 1 })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, self.c, self.h, self.w]
    }

    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn to_tensor_data(&self) -> TensorData {
        TensorData {
            shape: self.shape().to_vec(),
            values: TensorValues::F32(self.frames.clone()),
        }
    }

    pub fn from_tensor_data(data: &TensorData) -> Result<Self> {
        let &[t, c, h, w] = data.shape.as_slice() else {
            return Err(Error::Format {
                field: "rank",
                detail: format!("clip tensor must be rank 4, got {:?}", data.shape),
            });
        };
        VideoClip::new(data.values.to_f32(), t, c, h, w)
    }
}

/// Frame indices `start, start+stride, …` (`frames` of them).
pub fn clip_indices(start: usize, stride: usize, frames: usize) -> Vec<usize> {
    (0..frames).map(|i| start + i * stride).collect()
}

/// Source frames needed for a clip of `frames` at `stride`.
pub fn required_source_frames(start: usize, stride: usize, frames: usize) -> usize {
    start + (frames - 1) * stride + 1
}

/// Dense temporal sampling: picks frames `start + i·stride` for `i < frames`.
pub fn sample_clip(source: &VideoClip, start: usize, stride: usize, frames: usize) -> Result<VideoClip> {
    if stride == 0 || frames == 0 {
        return usage_err("sample_clip needs stride ≥ 1 and at least one frame");
    }
    let required = required_source_frames(start, stride, frames);
    if required > source.t {
        return Err(Error::Range { required, available: source.t });
    }
    let mut out = Vec::with_capacity(frames * source.frame_len());
    for i in clip_indices(start, stride, frames) {
        out.extend_from_slice(source.frame(i));
    }
    Ok(VideoClip {
        frames: out,
        t: frames,
        c: source.c,
        h: source.h,
        w: source.w,
        label: source.label,
        source_stride: stride * source.source_stride,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting_clip(t: usize) -> VideoClip {
        // every pixel of frame i holds i / t so the source index is recoverable
        let frames = (0..t).flat_map(|i| std::iter::repeat(i as f32 / t as f32).take(3 * 2 * 2)).collect();
        VideoClip::new(frames, t, 3, 2, 2).unwrap()
    }

    fn source_index(clip: &VideoClip, i: usize, src_t: usize) -> usize {
        (clip.frame(i)[0] * src_t as f32).round() as usize
    }

    #[test]
    fn stride_one_picks_consecutive_frames() {
        let src = counting_clip(10);
        let c = sample_clip(&src, 0, 1, 4).unwrap();
        let idx: Vec<_> = (0..4).map(|i| source_index(&c, i, 10)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(c.source_stride, 1);
    }

    #[test]
    fn stride_four_with_offset() {
        let src = counting_clip(12);
        let c = sample_clip(&src, 2, 4, 3).unwrap();
        let idx: Vec<_> = (0..3).map(|i| source_index(&c, i, 12)).collect();
        assert_eq!(idx, vec![2, 6, 10]);
        assert_eq!(c.source_stride, 4);
    }

    #[test]
    fn sixteen_frames_at_stride_four_need_61() {
        assert_eq!(required_source_frames(0, 4, 16), 61);
        let short = counting_clip(60);
        match sample_clip(&short, 0, 4, 16) {
            Err(Error::Range { required, available }) => assert_eq!((required, available), (61, 60)),
            other => panic!("expected range error, got {other:?}"),
        }
        assert!(sample_clip(&counting_clip(61), 0, 4, 16).is_ok());
    }
}
