//! Optimizer plumbing, loss logs and checkpoint I/O shared by the training stages.

use std::path::Path;

use dawp_nn::{AdamW, AdamWConfig, CosineSchedule, ParamId, ParamStore, Tensor};

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::obsio::{self, NamedArray};

/// AdamW plus the warmup/cosine schedule, counting steps from 1.
pub struct Optim {
    opt: AdamW<f32>,
    pub sched: CosineSchedule,
    pub step: u64,
}

impl Optim {
    pub fn new(cfg: &RunConfig, total_steps: usize, store: &ParamStore<f32>) -> Self {
        let adam = AdamWConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        };
        Self {
            opt: AdamW::new(adam, store),
            sched: CosineSchedule {
                peak_lr: cfg.lr,
                warmup_lr: cfg.warmup_lr,
                min_lr: cfg.min_lr,
                total_steps: total_steps as u64,
                warmup_frac: cfg.warmup_frac,
            },
            step: 0,
        }
    }

    /// Applies one update from `grads`; returns the learning rate used.
    pub fn apply(&mut self, store: &mut ParamStore<f32>, grads: Vec<(ParamId, Vec<f32>)>) -> f64 {
        self.step += 1;
        store.zero_grads();
        store.accumulate_grads(grads);
        let lr = self.sched.lr(self.step);
        self.opt.step(store, self.step, lr);
        lr
    }
}

pub fn check_finite(stage: &str, step: u64, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Numeric(format!("{stage}: loss is {loss} at step {step}")))
    }
}

/// In-memory CSV, written at the end of a run.
#[derive(Clone, Debug)]
pub struct CsvLog {
    text: String,
}

impl CsvLog {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        obsio::write_text(path, &self.text)
    }
}

/// Fixed-precision float for CSV cells, so reruns compare byte for byte.
pub fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

pub const META: &str = "meta.";

/// Model parameters followed by `meta.*` arrays (normalization stats and the like).
pub fn save_params(path: &Path, store: &ParamStore<f32>, meta: &[NamedArray]) -> Result<()> {
    let mut arrays: Vec<NamedArray> = store
        .to_named()
        .into_iter()
        .map(|(name, t)| NamedArray {
            name,
            shape: t.shape().to_vec(),
            data: t.into_data(),
        })
        .collect();
    for m in meta {
        arrays.push(NamedArray {
            name: format!("{META}{}", m.name),
            ..m.clone()
        });
    }
    obsio::write_checkpoint(path, &arrays)
}

/// Loads parameters into `store` (names and shapes must match) and returns the meta arrays.
pub fn load_params(path: &Path, store: &mut ParamStore<f32>) -> Result<Vec<NamedArray>> {
    let arrays = obsio::read_checkpoint(path)?;
    let (meta, params): (Vec<_>, Vec<_>) = arrays.into_iter().partition(|a| a.name.starts_with(META));
    let named = params
        .into_iter()
        .map(|a| Ok((a.name, Tensor::new(&a.shape, a.data)?)))
        .collect::<std::result::Result<Vec<_>, dawp_nn::NnError>>()
        .map_err(|e| CoreError::Checkpoint(format!("{}: {e}", path.display())))?;
    store
        .load_from(&named)
        .map_err(|e| CoreError::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(meta
        .into_iter()
        .map(|a| NamedArray {
            name: a.name[META.len()..].to_string(),
            ..a
        })
        .collect())
}

pub fn meta<'a>(arrays: &'a [NamedArray], name: &str) -> Result<&'a NamedArray> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| CoreError::Checkpoint(format!("checkpoint lacks `{name}`")))
}
