use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mam2_core::data::Corpus;
use mam2_core::gradsuite;
use mam2_core::masking::MaskKind;
use mam2_core::model::load_checkpoint;
use mam2_core::model::{sample_mask, ModelConfig};
use mam2_core::training::{ablate_file, linear_probe, run_pretrain, ProbeConfig, TrainConfig};
use mam2_core::Result;

#[derive(Parser)]
#[command(name = "mam2", version, about = "Masked video pre-training with appearance and motion targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train from a flat key/value config; flags override file values.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Linear probe of a checkpoint's frozen encoder on a labeled corpus.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = ProbeConfig::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = ProbeConfig::default().weight_decay)]
        weight_decay: f64,
        #[arg(long, default_value_t = ProbeConfig::default().stride)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs every cell of a grid file and writes ablation.csv.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Renders a sampled mask as a PPM image, one panel per frame.
    DumpMask {
        #[arg(long, default_value = "tube")]
        kind: String,
        #[arg(long, default_value_t = 0.75)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "vit-b")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pixels per patch cell.
        #[arg(long, default_value_t = 8)]
        cell: usize,
    },
    /// Finite-difference checks of every differentiable piece.
    Gradcheck,
    /// Writes a labeled synthetic moving-shapes corpus.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        val: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write per-frame displacement fields for flow targets.
        #[arg(long)]
        flow: bool,
    },
}

macro_rules! overrides {
    ($($field:ident),* $(,)?) => {
        /// One optional flag per config key.
        #[derive(Args, Default)]
        struct Overrides {
            $(#[arg(long)] $field: Option<String>,)*
        }

        impl Overrides {
            /// Set flags in application order.
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(if let Some(v) = &self.$field { out.push((stringify!($field), v.as_str())); })*
                out
            }
        }
    };
}

// `preset` first and `heads` last: both reset other fields when set.
overrides!(
    preset, base_lr, batch_size, total_epochs, warmup_epochs, epoch_size, beta1, beta2, eps, weight_decay, seed, data,
    stride, out_dir, checkpoint_every, keep_checkpoints, resume, probe_steps, probe_lr, probe_weight_decay, probe_seed,
    probe_stride, probe_train_clips, probe_val_clips, decoder_depths, dim, mlp_ratio, encoder_depth, regressor_depth,
    appearance_depth, motion_depth, regressor_dim, vocab, tokenizer, patch, frames, height, width, channels, mask_ratio,
    mask_kind, cube_block, motion_target, mse_reduction, alpha, heads,
);

fn pretrain(config: Option<PathBuf>, overrides: &Overrides) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    for (k, v) in overrides.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let report = run_pretrain(&cfg)?;
    if let Some(last) = report.log.last() {
        println!("{}", mam2_core::training::METRICS_HEADER);
        println!("{}", last.csv_line());
    }
    println!("metrics: {}", report.metrics_csv.display());
    println!("checkpoint: {}", report.final_checkpoint.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Pretrain { config, overrides } => pretrain(config, &overrides)?,
        Command::Probe { ckpt, data, steps, lr, weight_decay, stride, seed } => {
            let model = load_checkpoint(ckpt)?.model;
            let cfg = ProbeConfig { steps, lr, weight_decay, stride, seed, ..ProbeConfig::default() };
            let r = linear_probe(&model, &Corpus::open(data)?, &cfg)?;
            println!("classes {}", r.classes);
            println!("probe     train {:.4} val {:.4}", r.train_accuracy, r.val_accuracy);
            println!("baseline  train {:.4} val {:.4}", r.baseline_train_accuracy, r.baseline_val_accuracy);
        }
        Command::Ablate { grid } => {
            let (rows, path) = ablate_file(grid)?;
            println!("{} cells written to {}", rows.len(), path.display());
        }
        Command::DumpMask { kind, ratio, out, preset, seed, cell } => {
            let mut cfg = ModelConfig::preset(&preset)?;
            cfg.mask_kind = MaskKind::parse(&kind)?;
            cfg.mask_ratio = ratio;
            cfg.validate()?;
            let g = cfg.geometry()?;
            let mask = sample_mask(&cfg, seed)?;
            std::fs::write(&out, mask.to_ppm(g.grid_h(), g.grid_w(), cell)?)?;
            println!("{} masked of {} tokens -> {}", mask.num_masked(), g.n() * g.t, out.display());
        }
        Command::Gradcheck => {
            let mut ok = true;
            for (name, r) in gradsuite::run()? {
                let pass = r.max_rel_err < gradsuite::TOLERANCE;
                ok &= pass;
                println!("{} {name:28} {:6} entries, max rel err {:.3e}", if pass { "ok  " } else { "FAIL" }, r.checked, r.max_rel_err);
            }
            return Ok(ok);
        }
        Command::MakeCorpus { out, train, val, frames, height, width, seed, flow } => {
            Corpus::create_synthetic(&out, train, val, frames, height, width, seed, flow)?;
            println!("wrote {train} train and {val} val clips to {}", out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
