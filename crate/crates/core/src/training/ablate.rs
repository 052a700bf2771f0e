//! Grid runs of pre-training plus linear probe.
//!
//! A grid file is a flat config with an extra `[grid]` table mapping keys
//! to lists of values; every combination is one cell:
//!
//! ```toml
//! preset = "toy"
//! total_epochs = 2
//! [grid]
//! mask_ratio = [0.75, 0.9]
//! decoder_depths = ["4,4", "4,2", "2,2"]
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use toml::Table;

use super::config::{value_text, TrainConfig};
use super::{linear_probe, run_pretrain, ProbeReport};
use crate::data::{required_source_frames, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `(key, value)` of each grid axis, in axis order.
    pub settings: Vec<(String, String)>,
    pub final_loss: f64,
    pub probe: ProbeReport,
}

fn cells(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut out = vec![Vec::new()];
    for (key, values) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    out
}

fn probe_corpus(cfg: &TrainConfig, root: &Path) -> Result<Corpus> {
    if let Some(data) = &cfg.data {
        return Corpus::open(data);
    }
    let m = &cfg.model;
    let frames = required_source_frames(0, cfg.probe.stride, m.frames);
    let dir = root.join(format!("probe_corpus_{frames}x{}x{}", m.height, m.width));
    if dir.join("clips").is_dir() {
        return Corpus::open(dir);
    }
    Corpus::create_synthetic(&dir, cfg.probe.train_clips, cfg.probe.val_clips, frames, m.height, m.width, cfg.probe.seed, false)
}

/// Runs every cell of the grid and writes `ablation.csv` into the base
/// `out_dir`.
pub fn ablate(base: &TrainConfig, axes: &[(String, Vec<String>)]) -> Result<(Vec<AblationRow>, PathBuf)> {
    if axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Config("grid axes need at least one value".into()));
    }
    let root = base.out_dir.clone();
    fs::create_dir_all(&root)?;
    let mut rows = Vec::new();
    for (i, cell) in cells(axes).into_iter().enumerate() {
        let mut cfg = base.clone();
        for (k, v) in &cell {
            cfg.set(k, v)?;
        }
        cfg.out_dir = root.join(format!("cell_{i:03}"));
        cfg.validate()?;
        let report = run_pretrain(&cfg)?;
        let final_loss = report.log.last().map_or(f64::NAN, |l| l.total);
        let probe = linear_probe(&report.model, &probe_corpus(&cfg, &root)?, &cfg.probe)?;
        rows.push(AblationRow { settings: cell, final_loss, probe });
    }
    let path = root.join("ablation.csv");
    let mut f = fs::File::create(&path)?;
    let keys: Vec<&str> = axes.iter().map(|(k, _)| k.as_str()).collect();
    writeln!(f, "{},final_loss,probe_train_acc,probe_val_acc,baseline_val_acc", keys.join(","))?;
    for r in &rows {
        let vals: Vec<String> = r.settings.iter().map(|(_, v)| format!("\"{v}\"")).collect();
        writeln!(
            f,
            "{},{},{},{},{}",
            vals.join(","),
            r.final_loss,
            r.probe.train_accuracy,
            r.probe.val_accuracy,
            r.probe.baseline_val_accuracy
        )?;
    }
    Ok((rows, path))
}

/// Parses a grid file into the base config and its axes.
pub fn parse_grid(text: &str) -> Result<(TrainConfig, Vec<(String, Vec<String>)>)> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let grid = match table.remove("grid") {
        Some(toml::Value::Table(g)) => g,
        Some(_) => return Err(Error::Config("[grid] must be a table".into())),
        None => return Err(Error::Config("grid file needs a [grid] table".into())),
    };
    let mut base = TrainConfig::default();
    base.apply_table(&table)?;
    let mut axes = Vec::new();
    for (k, v) in grid {
        let values = match v {
            toml::Value::Array(a) => a.iter().map(|x| value_text(&k, x)).collect::<Result<Vec<_>>>()?,
            scalar => vec![value_text(&k, &scalar)?],
        };
        axes.push((k, values));
    }
    Ok((base, axes))
}

pub fn ablate_file(path: impl AsRef<Path>) -> Result<(Vec<AblationRow>, PathBuf)> {
    let (base, axes) = parse_grid(&fs::read_to_string(path)?)?;
    ablate(&base, &axes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cells_are_the_cartesian_product() {
        let (base, axes) = parse_grid(
            "preset = \"toy\"\n[grid]\nmask_ratio = [0.75, 0.9]\ndecoder_depths = [\"4,4\", \"4,2\", \"2,2\"]\n",
        )
        .unwrap();
        assert_eq!(base.model.dim, 64);
        let c = cells(&axes);
        assert_eq!(c.len(), 6);
        assert!(c.iter().all(|cell| cell.len() == 2));
        let (_, axes) = parse_grid("[grid]\nmotion_target = [\"rgb-diff\", \"clip-order\", \"none\"]\n").unwrap();
        assert_eq!(cells(&axes).len(), 3);
        assert!(parse_grid("a = 1").is_err());
    }
}
