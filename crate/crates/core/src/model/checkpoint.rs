//! Checkpoint directories:
//!
//! ```text
//! <dir>/manifest.toml        config, step, parameter names/shapes/files
//! <dir>/params/<i>.tnsr      one tensor file per parameter
//! <dir>/adam_m/<i>.tnsr      optimizer moments, when saved
//! <dir>/adam_v/<i>.tnsr
//! ```

use std::fs;
use std::path::Path;

use toml::{Table, Value};

use super::{Model, ModelConfig};
use crate::data::{read_tensor, write_tensor, TensorData, TensorValues};
use crate::error::{Error, Result};
use crate::training::AdamState;

pub const MANIFEST: &str = "manifest.toml";
const FORMAT: i64 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub step: usize,
}

fn manifest_err(detail: impl Into<String>) -> Error {
    Error::Format { field: "manifest", detail: detail.into() }
}

fn vector(shape: &[usize], values: &[f32]) -> TensorData {
    TensorData { shape: shape.to_vec(), values: TensorValues::F32(values.to_vec()) }
}

/// Writes the checkpoint to a sibling temporary directory and renames it
/// into place, so `dir` is either the old or the new checkpoint.
pub fn save_checkpoint(dir: impl AsRef<Path>, model: &Model<f32>, optimizer: Option<&AdamState<f32>>, step: usize) -> Result<()> {
    let dir = dir.as_ref();
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("params"))?;

    let mut cfg = Table::new();
    for (k, v) in model.config.pairs() {
        cfg.insert(k.into(), Value::String(v));
    }
    let mut params = Vec::new();
    for (i, (name, t)) in model.params.names().iter().zip(model.params.tensors()).enumerate() {
        let file = format!("params/{i:04}.tnsr");
        write_tensor(tmp.join(&file), &TensorData::from_tensor(t))?;
        let mut entry = Table::new();
        entry.insert("name".into(), Value::String(name.clone()));
        entry.insert("shape".into(), Value::Array(t.shape().iter().map(|&e| Value::Integer(e as i64)).collect()));
        entry.insert("file".into(), Value::String(file));
        params.push(Value::Table(entry));
    }

    let mut root = Table::new();
    root.insert("format".into(), Value::Integer(FORMAT));
    root.insert("step".into(), Value::Integer(step as i64));
    root.insert("model".into(), Value::Table(cfg));
    root.insert("params".into(), Value::Array(params));
    if let Some(opt) = optimizer {
        fs::create_dir_all(tmp.join("adam_m"))?;
        fs::create_dir_all(tmp.join("adam_v"))?;
        for (i, t) in model.params.tensors().iter().enumerate() {
            write_tensor(tmp.join(format!("adam_m/{i:04}.tnsr")), &vector(t.shape(), &opt.m[i]))?;
            write_tensor(tmp.join(format!("adam_v/{i:04}.tnsr")), &vector(t.shape(), &opt.v[i]))?;
        }
        let mut o = Table::new();
        o.insert("step".into(), Value::Integer(opt.step as i64));
        o.insert("decay".into(), Value::Array(opt.decay.iter().map(|&d| Value::Boolean(d)).collect()));
        root.insert("optimizer".into(), Value::Table(o));
    }
    fs::write(tmp.join(MANIFEST), toml::to_string(&root).map_err(|e| manifest_err(e.to_string()))?)?;

    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

fn get<'a>(t: &'a Table, key: &str) -> Result<&'a Value> {
    t.get(key).ok_or_else(|| manifest_err(format!("missing key {key:?}")))
}

fn get_usize(t: &Table, key: &str) -> Result<usize> {
    get(t, key)?
        .as_integer()
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| manifest_err(format!("{key:?} must be a non-negative integer")))
}

fn load_values(dir: &Path, file: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let data = read_tensor(dir.join(file))?;
    if data.shape != shape {
        return Err(Error::Format { field: "extents", detail: format!("{file}: {:?}, manifest says {shape:?}", data.shape) });
    }
    Ok(data.values.to_f32())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let root: Table = text.parse().map_err(|e: toml::de::Error| manifest_err(e.to_string()))?;
    if get(&root, "format")?.as_integer() != Some(FORMAT) {
        return Err(Error::Format { field: "version", detail: format!("unsupported checkpoint format in {}", dir.display()) });
    }
    let step = get_usize(&root, "step")?;
    let mut config = ModelConfig::vit_b();
    let cfg = get(&root, "model")?.as_table().ok_or_else(|| manifest_err("[model] must be a table"))?;
    for (k, v) in cfg {
        let text = v.as_str().ok_or_else(|| manifest_err(format!("model.{k} must be a string")))?;
        if !config.set(k, text)? {
            return Err(manifest_err(format!("unknown model key {k:?}")));
        }
    }
    let mut model = Model::<f32>::init(config, 0)?;
    let entries = get(&root, "params")?.as_array().ok_or_else(|| manifest_err("params must be an array"))?;
    if entries.len() != model.params.len() {
        return Err(manifest_err(format!("{} parameters listed, architecture has {}", entries.len(), model.params.len())));
    }
    for e in entries {
        let e = e.as_table().ok_or_else(|| manifest_err("params entries must be tables"))?;
        let name = get(e, "name")?.as_str().ok_or_else(|| manifest_err("name must be a string"))?;
        let file = get(e, "file")?.as_str().ok_or_else(|| manifest_err("file must be a string"))?;
        let id = model.params.find(name).ok_or_else(|| manifest_err(format!("unknown parameter {name:?}")))?;
        let shape = model.params[id].shape().to_vec();
        let values = load_values(dir, file, &shape)?;
        model.params.set(id, values)?;
    }
    let optimizer = match root.get("optimizer") {
        None => None,
        Some(o) => {
            let o = o.as_table().ok_or_else(|| manifest_err("[optimizer] must be a table"))?;
            let decay = get(o, "decay")?
                .as_array()
                .ok_or_else(|| manifest_err("optimizer.decay must be an array"))?
                .iter()
                .map(|v| v.as_bool().ok_or_else(|| manifest_err("optimizer.decay holds booleans")))
                .collect::<Result<Vec<_>>>()?;
            let mut st = AdamState::with_decay(&model.params, decay);
            st.step = get_usize(o, "step")? as u64;
            for (i, t) in model.params.tensors().iter().enumerate() {
                st.m[i] = load_values(dir, &format!("adam_m/{i:04}.tnsr"), t.shape())?;
                st.v[i] = load_values(dir, &format!("adam_v/{i:04}.tnsr"), t.shape())?;
            }
            Some(st)
        }
    };
    Ok(Checkpoint { model, optimizer, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{adamw_step, AdamHyper};

    #[test]
    fn round_trip_with_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::<f32>::init(ModelConfig::tiny(), 3).unwrap();
        let mut st = AdamState::new(&m.params);
        let grads: Vec<Vec<f32>> = m.params.tensors().iter().map(|t| vec![0.01; t.numel()]).collect();
        adamw_step(&mut m.params, &grads, &mut st, 1e-3, &AdamHyper::default()).unwrap();
        let path = dir.path().join("ckpt");
        save_checkpoint(&path, &m, Some(&st), 17).unwrap();
        let c = load_checkpoint(&path).unwrap();
        assert_eq!(c.step, 17);
        assert_eq!(c.model.config, m.config);
        for (a, b) in c.model.params.tensors().iter().zip(m.params.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(c.optimizer.unwrap(), st);
        // overwrite in place
        save_checkpoint(&path, &m, None, 18).unwrap();
        assert!(load_checkpoint(&path).unwrap().optimizer.is_none());
    }
}
