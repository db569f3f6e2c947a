//! The `ldgnet` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ldg_tensor::{DType, Element};
use ldgnet::{LdgNet, ModelConfig};

use crate::checkpoint::Checkpoint;
use crate::data::{load_dataset, load_splits, save_dataset};
use crate::error::Result;
use crate::infer::infer_files;
use crate::perturb::{perturb, PerturbKind};
use crate::profile::{profile, reference_note, sweep, SWEEP_SIZES};
use crate::settings::{RunConfig, TrainSettings};
use crate::synth::{synth_generate, SynthOptions};
use crate::trainer::{evaluate, train, OutputDir};

#[derive(Debug, Parser)]
#[command(
    name = "ldgnet",
    about = "Train and run the bi-temporal change detection network",
    after_help = "Any model or training setting can be overridden with --key value, e.g. --dadf false --lr 1e-3."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural dataset in A/, B/, label/ layout.
    Synth {
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.10)]
        change_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset folder, writing metrics.csv and checkpoints.
    Train {
        /// Config file, or a preset name (tiny, default, large).
        #[arg(long, default_value = "tiny")]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(skip)]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on every pair of a dataset folder.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        perturb: Option<PerturbKind>,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
    },
    /// Predict the change map of one pair.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the raw [1, 2, H, W] logits (little-endian).
        #[arg(long)]
        logits: Option<PathBuf>,
    },
    /// Report parameters, FLOPs and peak tensor memory.
    Profile {
        #[arg(long, default_value = "large")]
        config: PathBuf,
        #[arg(long, default_value_t = 256)]
        input_size: usize,
        /// Also report every size from 256 to 1024.
        #[arg(long)]
        sweep: bool,
        #[arg(skip)]
        overrides: Vec<String>,
    },
}

fn config_keys() -> impl Iterator<Item = &'static str> {
    ModelConfig::KEYS.into_iter().chain(TrainSettings::KEYS)
}

/// Splits `--key value` pairs naming config settings (that are not also
/// flags of the subcommand) out of `args`.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    const FLAGS: [&str; 9] = ["config", "data", "epochs", "out", "n", "size", "seed", "input_size", "sweep"];
    let sub = args.get(1).cloned().unwrap_or_default();
    if sub != "train" && sub != "profile" {
        return (args, Vec::new());
    }
    let mut keep = Vec::new();
    let mut over = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").map(|k| k.split('=').next().unwrap_or("").replace('-', "_"));
        match key {
            Some(k) if !FLAGS.contains(&k.as_str()) && config_keys().any(|c| c == k) => {
                let inline = a.contains('=');
                over.push(a);
                if !inline {
                    if let Some(v) = it.next() {
                        over.push(v);
                    }
                }
            }
            _ => keep.push(a),
        }
    }
    (keep, over)
}

pub fn parse_args(args: Vec<String>) -> std::result::Result<Cli, clap::Error> {
    let (keep, over) = split_overrides(args);
    let mut cli = Cli::try_parse_from(keep)?;
    match &mut cli.command {
        Command::Train { overrides, .. } | Command::Profile { overrides, .. } => *overrides = over,
        _ => {}
    }
    Ok(cli)
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn run_train<T: Element>(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (tr, va) = load_splits(data)?;
    let model = LdgNet::<T>::new(&cfg.model)?;
    let report = train(&model, cfg, &tr, &va, Some(&OutputDir(out.to_path_buf())))?;
    println!(
        "best val F1 {:.4} at epoch {} of {}",
        report.best_f1,
        report.best_epoch,
        report.epochs.len()
    );
    Ok(())
}

fn run_eval<T: Element>(ck: &Checkpoint, path: &Path, data: &Path, pk: Option<PerturbKind>, sigma: f64, bs: usize) -> Result<()> {
    let model = ck.build::<T>(path)?;
    let mut ds = load_dataset(data)?;
    if let Some(kind) = pk {
        ds = perturb(&ds, kind, sigma, 0)?;
    }
    let c = evaluate(&model, &ds, bs)?;
    let m = c.metrics();
    println!("pairs,rec,pre,oa,f1,iou");
    println!("{},{:.6},{:.6},{:.6},{:.6},{:.6}", ds.len(), m.rec, m.pre, m.oa, m.f1, m.iou);
    Ok(())
}

fn run_infer<T: Element>(ck: &Checkpoint, path: &Path, pre: &Path, post: &Path, out: &Path, logits: Option<&Path>) -> Result<()> {
    let model = ck.build::<T>(path)?;
    let p = infer_files(&model, pre, post, out, logits)?;
    let changed = p.mask.iter().filter(|&&v| v != 0).count();
    println!("{}: {:.2}% changed", out.display(), 100.0 * changed as f64 / p.mask.len() as f64);
    Ok(())
}

fn run_profile<T: Element>(cfg: &ModelConfig, size: usize, do_sweep: bool) -> Result<()> {
    let model = LdgNet::<T>::new(cfg)?;
    let r = profile(&model, size)?;
    println!("{r}");
    println!("{}", reference_note(&r));
    if do_sweep {
        for r in sweep(&model, &SWEEP_SIZES)? {
            println!("{r}");
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            n,
            size,
            seed,
            change_fraction,
            out,
        } => {
            let ds = synth_generate(&SynthOptions {
                n,
                size,
                seed,
                change_fraction,
                ..SynthOptions::default()
            })?;
            save_dataset(&ds, &out)?;
            println!("wrote {} pairs of {size}x{size} to {} ({:.1}% changed)", n, out.display(), 100.0 * ds.change_fraction());
        }
        Command::Train {
            config,
            data,
            epochs,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config, &overrides)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            match cfg.model.dtype {
                DType::F32 => run_train::<f32>(&cfg, &data, &out)?,
                DType::F64 => run_train::<f64>(&cfg, &data, &out)?,
            }
        }
        Command::Eval {
            ckpt,
            data,
            perturb,
            sigma,
            batch_size,
        } => {
            let ck = Checkpoint::read(&ckpt)?;
            match ck.config.dtype {
                DType::F32 => run_eval::<f32>(&ck, &ckpt, &data, perturb, sigma, batch_size)?,
                DType::F64 => run_eval::<f64>(&ck, &ckpt, &data, perturb, sigma, batch_size)?,
            }
        }
        Command::Infer {
            ckpt,
            pre,
            post,
            out,
            logits,
        } => {
            let ck = Checkpoint::read(&ckpt)?;
            match ck.config.dtype {
                DType::F32 => run_infer::<f32>(&ck, &ckpt, &pre, &post, &out, logits.as_deref())?,
                DType::F64 => run_infer::<f64>(&ck, &ckpt, &pre, &post, &out, logits.as_deref())?,
            }
        }
        Command::Profile {
            config,
            input_size,
            sweep,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            match cfg.model.dtype {
                DType::F32 => run_profile::<f32>(&cfg.model, input_size, sweep)?,
                DType::F64 => run_profile::<f64>(&cfg.model, input_size, sweep)?,
            }
        }
    }
    Ok(())
}
