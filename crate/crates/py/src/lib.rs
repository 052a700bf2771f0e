//! Python module `mam2`: synthetic clips, masks, tokens, tensor files, the
//! learning-rate schedule and a pre-training forward pass.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use mam2_core::data::{generate_moving_shapes, read_tensor, write_tensor, TensorData, TensorValues, VideoClip};
use mam2_core::masking::{cube_mask, tube_mask, MaskSpec};
use mam2_core::model::{Model as CoreModel, ModelConfig, Sample};
use mam2_core::numerics::no_grad;
use mam2_core::targets::{token_targets, GridTokenizer};
use mam2_core::training::{lr_at as core_lr_at, Schedule};
use mam2_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A `T×C×H×W` clip of values in `[0, 1]`.
#[pyclass(name = "Clip", from_py_object)]
#[derive(Clone)]
struct PyClip {
    inner: VideoClip,
}

#[pymethods]
impl PyClip {
    #[new]
    fn new(frames: Vec<f32>, t: usize, c: usize, h: usize, w: usize) -> PyResult<Self> {
        Ok(PyClip { inner: VideoClip::new(frames, t, c, h, w).map_err(py_err)? })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let [t, c, h, w] = self.inner.shape();
        (t, c, h, w)
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.inner.label
    }

    /// Flat frame-major values.
    fn values(&self) -> Vec<f32> {
        self.inner.frames.clone()
    }

    fn __repr__(&self) -> String {
        let [t, c, h, w] = self.inner.shape();
        format!("Clip({t}×{c}×{h}×{w}, label={:?})", self.inner.label)
    }
}

/// Moving-shapes clip of one motion class (0 right, 1 left, 2 down,
/// 3 static).
#[pyfunction]
#[pyo3(signature = (seed, class_id, frames=8, height=32, width=32))]
fn generate_clip(seed: u64, class_id: usize, frames: usize, height: usize, width: usize) -> PyResult<PyClip> {
    Ok(PyClip { inner: generate_moving_shapes(seed, class_id, frames, height, width).map_err(py_err)? })
}

fn frame_sets(m: &MaskSpec) -> Vec<Vec<usize>> {
    (0..m.t()).map(|t| m.frame_set(t).to_vec()).collect()
}

/// Masked spatial indices per frame of a random tube mask.
#[pyfunction]
fn tube_mask_indices(n: usize, frames: usize, ratio: f64, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(frame_sets(&tube_mask(n, frames, ratio, seed).map_err(py_err)?))
}

/// Masked spatial indices per frame of a random cube mask over an
/// `grid_h×grid_w` patch grid.
#[pyfunction]
fn cube_mask_indices(grid_h: usize, grid_w: usize, frames: usize, ratio: f64, block: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(frame_sets(&cube_mask(grid_h, grid_w, frames, ratio, block, seed).map_err(py_err)?))
}

/// Appearance token ids of every patch, frame-major.
#[pyfunction]
fn tokenize(clip: &PyClip, patch: usize) -> PyResult<Vec<usize>> {
    Ok(token_targets(&clip.inner, patch, &GridTokenizer).map_err(py_err)?.tokens)
}

/// Reads a tensor file as `(shape, values)` with values widened to float.
#[pyfunction]
fn load_tensor(path: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let t = read_tensor(path).map_err(py_err)?;
    Ok((t.shape, t.values.to_f64()))
}

/// Writes a float32 tensor file.
#[pyfunction]
fn save_tensor(path: &str, shape: Vec<usize>, values: Vec<f32>) -> PyResult<()> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(PyValueError::new_err(format!("{} values for shape {shape:?}", values.len())));
    }
    write_tensor(path, &TensorData { shape, values: TensorValues::F32(values) }).map_err(py_err)
}

/// Learning rate at `step`: linear warmup to `peak`, then half-cosine decay.
#[pyfunction]
fn lr_at(step: usize, peak: f64, warmup_steps: usize, total_steps: usize) -> f64 {
    core_lr_at(step, &Schedule { peak, warmup_steps, total_steps })
}

/// Pre-training network in 32-bit. The autodiff tape is single-threaded,
/// so instances stay on the thread that created them.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    inner: CoreModel<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset="toy", seed=0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::preset(preset).map_err(py_err)?;
        Ok(PyModel { inner: CoreModel::init(cfg, seed).map_err(py_err)? })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Config as `(key, value)` pairs.
    fn config(&self) -> Vec<(String, String)> {
        self.inner.config.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Forward pass over a batch of clips without recording gradients.
    /// Returns the mean losses and the per-stage shapes of the first clip.
    #[pyo3(signature = (clips, seed=0))]
    fn forward(&self, clips: Vec<PyClip>, seed: u64) -> PyResult<(Vec<(String, f64)>, Vec<(String, Vec<usize>)>)> {
        let batch: Vec<Sample> = clips.into_iter().map(|c| Sample::from(c.inner)).collect();
        let out = no_grad(|| self.inner.forward_pretrain(&batch, seed)).map_err(py_err)?;
        let m = out.mean;
        let losses = vec![
            ("appearance".to_string(), m.appearance),
            ("motion".to_string(), m.motion),
            ("alignment".to_string(), m.alignment),
            ("total".to_string(), m.total),
        ];
        let trace = out.clips[0].trace.iter().map(|(n, s)| (n.to_string(), s.clone())).collect();
        Ok((losses, trace))
    }
}

#[pymodule]
fn mam2(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClip>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_clip, m)?)?;
    m.add_function(wrap_pyfunction!(tube_mask_indices, m)?)?;
    m.add_function(wrap_pyfunction!(cube_mask_indices, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(load_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(save_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    Ok(())
}
