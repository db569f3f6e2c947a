//! Training loop, evaluation and the pre-flight memory check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ldg_tensor::nn::init::rng_for;
use ldg_tensor::nn::{for_each_entry, Entry};
use ldg_tensor::{no_grad, stats, Element, Tensor};
use ldgnet::loss::total_loss;
use ldgnet::{ConfusionCounts, LdgNet, Metrics};
use rand::seq::SliceRandom;

use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{io_err, Result, TrainError};
use crate::optim::AdamW;
use crate::settings::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub skipped_steps: u64,
    /// Set when the run stopped early at the target F1.
    pub reached_target: bool,
}

/// Where a run writes `metrics.csv`, `best.ckpt`, `last.ckpt` and
/// `config.txt`.
#[derive(Debug, Clone)]
pub struct OutputDir(pub PathBuf);

impl OutputDir {
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.csv")
    }
    pub fn best(&self) -> PathBuf {
        self.0.join("best.ckpt")
    }
    pub fn last(&self) -> PathBuf {
        self.0.join("last.ckpt")
    }
}

/// Confusion counts of the model's argmax predictions over `ds`, in eval
/// mode without recording gradients.
pub fn evaluate<T: Element>(model: &LdgNet<T>, ds: &Dataset, batch_size: usize) -> Result<ConfusionCounts> {
    model.set_training(false);
    let mut counts = ConfusionCounts::default();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = ds.batch::<T>(chunk)?;
        let logits = no_grad(|| model.forward(&b.pre, &b.post))?;
        counts.add(&ConfusionCounts::from_logits(&logits.value(), &b.labels)?);
    }
    Ok(counts)
}

/// Measures the tensor high-water mark of one training step on a single
/// sample of `h x w` and scales it to the batch, adding optimizer state.
pub fn estimate_train_bytes<T: Element>(model: &LdgNet<T>, h: usize, w: usize, batch: usize) -> Result<f64> {
    let x = ldg_tensor::Var::constant(Tensor::<T>::zeros(&[1, 3, h, w]));
    model.set_training(true);
    let (r, _, peak) = stats::measure(|| -> Result<()> {
        let y = model.forward(&x, &x)?;
        y.sum_all()?.backward()?;
        Ok(())
    });
    r?;
    for p in ldg_tensor::nn::parameters(model) {
        p.zero_grad();
    }
    let state = (model.param_count() * (2 * 8 + 2 * T::DTYPE.size_of())) as f64;
    Ok(peak as f64 * batch as f64 + state)
}

fn snapshot<T: Element>(model: &LdgNet<T>) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    for_each_entry(model, |_, e| match e {
        Entry::Param(p) => out.push(p.value().clone()),
        Entry::Buffer(b) => out.push(b.borrow().clone()),
    });
    out
}

fn restore<T: Element>(model: &LdgNet<T>, snap: Vec<Tensor<T>>) {
    let mut it = snap.into_iter();
    for_each_entry(model, |_, e| {
        let v = it.next().expect("snapshot of the same model");
        match e {
            Entry::Param(p) => p.update_value(|t| *t = v),
            Entry::Buffer(b) => *b.borrow_mut() = v,
        }
    });
}

fn meta(cfg: &RunConfig, epoch: usize, m: &Metrics) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = cfg.train.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)).collect();
    out.insert("epoch".into(), epoch.to_string());
    out.insert("val_f1".into(), m.f1.to_string());
    out.insert("lr_schedule".into(), "constant".into());
    out
}

/// Trains `model` on `train`, evaluating on `val` after every epoch. With
/// `out`, writes the metric log and checkpoints there.
///
/// On return the model holds the weights of the best validation epoch.
pub fn train<T: Element>(
    model: &LdgNet<T>,
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    out: Option<&OutputDir>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Dataset("training set is empty".into()));
    }
    let s = &cfg.train;
    let estimate = estimate_train_bytes(model, train.h, train.w, s.batch_size.min(train.len()))?;
    let estimate_mb = estimate / (1024.0 * 1024.0);
    if estimate_mb > s.memory_budget_mb {
        return Err(TrainError::Budget {
            estimate_mb,
            budget_mb: s.memory_budget_mb,
        });
    }
    log::info!(
        "training {} params on {} pairs ({} val), batch {}, constant lr {}, est. {estimate_mb:.0} MB",
        model.param_count(),
        train.len(),
        val.len(),
        s.batch_size,
        s.lr
    );

    let mut writer = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.0).map_err(io_err(&o.0))?;
            let cfg_path = o.0.join("config.txt");
            std::fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;
            let mut w = csv::Writer::from_path(o.metrics())?;
            w.write_record(["epoch", "loss", "rec", "pre", "oa", "f1", "iou"])?;
            w.flush().map_err(io_err(o.metrics()))?;
            Some(w)
        }
        None => None,
    };

    let mut opt = AdamW::new(ldg_tensor::nn::parameters(model), s.into());
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_f1: f64::NEG_INFINITY,
        skipped_steps: 0,
        reached_target: false,
    };
    let mut best = None;
    for epoch in 1..=s.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(s.shuffle_seed, &format!("shuffle.{epoch}")));
        model.set_training(true);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(s.batch_size) {
            let b = train.batch::<T>(chunk)?;
            let logits = model.forward(&b.pre, &b.post)?;
            let loss = total_loss(&logits, &b.labels)?;
            loss_sum += loss.value().item()?.f64();
            batches += 1;
            loss.backward()?;
            drop(loss);
            drop(logits);
            opt.step()?;
            opt.zero_grad();
        }
        let metrics = evaluate(model, val, s.batch_size)?.metrics();
        let entry = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            metrics,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val F1 {:.4} IoU {:.4} OA {:.4}",
            entry.loss,
            metrics.f1,
            metrics.iou,
            metrics.oa
        );
        let improved = metrics.f1 > report.best_f1;
        if improved {
            report.best_f1 = metrics.f1;
            report.best_epoch = epoch;
            best = Some(snapshot(model));
        }
        if let (Some(w), Some(o)) = (writer.as_mut(), out) {
            let m = &metrics;
            w.write_record([
                epoch.to_string(),
                entry.loss.to_string(),
                m.rec.to_string(),
                m.pre.to_string(),
                m.oa.to_string(),
                m.f1.to_string(),
                m.iou.to_string(),
            ])?;
            w.flush().map_err(io_err(o.metrics()))?;
            let meta = meta(cfg, epoch, &metrics);
            if improved {
                checkpoint::save(model, &meta, &o.best())?;
            }
            checkpoint::save(model, &meta, &o.last())?;
        }
        report.epochs.push(entry);
        if s.target_f1 > 0.0 && metrics.f1 >= s.target_f1 {
            report.reached_target = true;
            break;
        }
    }
    report.skipped_steps = opt.skipped;
    if report.skipped_steps > 0 {
        log::warn!("{} optimizer steps skipped on non-finite gradients", report.skipped_steps);
    }
    if let Some(b) = best {
        restore(model, b);
    }
    model.set_training(false);
    Ok(report)
}

/// Reads back a metric log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| TrainError::Dataset(format!("{}: bad metrics row {rec:?}", path.display())))
        };
        out.push(EpochLog {
            epoch: f(0)? as usize,
            loss: f(1)?,
            metrics: Metrics {
                rec: f(2)?,
                pre: f(3)?,
                oa: f(4)?,
                f1: f(5)?,
                iou: f(6)?,
            },
        });
    }
    Ok(out)
}
