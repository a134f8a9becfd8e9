//! Adam training loop with deterministic batching, checkpointing and a
//! JSON-lines metric log.
//!
//! Every random choice of iteration `i` (batch membership, masks) is drawn
//! from a stream derived from `(seed, i)`, so a run resumed from a checkpoint
//! at iteration `k` replays iterations `k+1..` exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use promode_tensor::{Gradients, ParamId, ParamStore};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::UtteranceRecord;
use crate::masking::{sample_mask, MaskError};
use crate::model::{
    save_checkpoint, Checkpoint, CheckpointError, ModelConfig, ModelError, ProMode, COMPONENTS,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Linear warmup length; 0 disables.
    pub warmup_iterations: u64,
    /// Checkpoint cadence in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Dev-loss cadence in iterations; 0 disables dev evaluation.
    pub dev_every: u64,
    /// Upper bound on dev utterances scored per evaluation.
    pub dev_utterances: usize,
    pub early_stopping: bool,
    /// Dev evaluations without improvement before stopping.
    pub patience: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            iterations: 5000,
            seed: 0,
            clip_norm: 1.0,
            warmup_iterations: 0,
            checkpoint_every: 500,
            dev_every: 500,
            dev_utterances: 16,
            early_stopping: false,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.iterations > 0
            && self.clip_norm >= 0.0
            && self.patience > 0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "rates, counts and batch size must be positive: {self:?}"
            )))
        }
    }

    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        if self.warmup_iterations == 0 || iteration >= self.warmup_iterations {
            self.learning_rate
        } else {
            self.learning_rate * iteration as f64 / self.warmup_iterations as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("train split is empty")]
    EmptyTrainSet,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error(
        "training diverged at iteration {iteration} ({detail}); last good checkpoint: {checkpoint}"
    )]
    Diverged {
        iteration: u64,
        detail: String,
        checkpoint: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Bias-corrected Adam update at step `t ≥ 1`, moments kept in the store.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &Gradients<f32>,
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    assert!(t >= 1, "adam step counter starts at 1");
    for (i, p) in params.iter().enumerate() {
        if grads.get(ParamId(i)).iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads.get(ParamId(i));
        let values = p.value.data_mut();
        for j in 0..values.len() {
            let gj = f64::from(g[j]);
            let m = b1 * f64::from(p.first_moment[j]) + (1.0 - b1) * gj;
            let v = b2 * f64::from(p.second_moment[j]) + (1.0 - b2) * gj * gj;
            p.first_moment[j] = m as f32;
            p.second_moment[j] = v as f32;
            let update = lr * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
            values[j] = (f64::from(values[j]) - update) as f32;
        }
    }
    Ok(())
}

/// One iteration's logged values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
}

/// Batch indices and per-item mask seeds of iteration `iteration`.
pub fn batch_plan(cfg: &TrainConfig, train_len: usize, iteration: u64) -> Vec<(usize, u64)> {
    let mut rng = seed::rng(cfg.seed, &[seed::tag("batch"), iteration]);
    let k = cfg.batch_size.min(train_len);
    let mut picks = index::sample(&mut rng, train_len, k).into_vec();
    if cfg.batch_size > train_len {
        // Small corpora: wrap around so the batch size stays fixed.
        let extra: Vec<usize> = (0..cfg.batch_size - train_len)
            .map(|i| picks[i % train_len])
            .collect();
        picks.extend(extra);
    }
    picks
        .into_iter()
        .enumerate()
        .map(|(j, r)| {
            (
                r,
                seed::derive(cfg.seed, &[seed::tag("mask"), iteration, j as u64]),
            )
        })
        .collect()
}

/// Mean loss and gradient over a batch. Per-item work runs in parallel;
/// reduction is sequential in batch order.
pub fn batch_gradient(
    model: &ProMode<f32>,
    items: &[(&UtteranceRecord, u64)],
) -> Result<(f64, BTreeMap<String, f64>, Gradients<f32>), TrainError> {
    let ratio = model.config().mask_ratio;
    let results: Vec<_> = items
        .par_iter()
        .map(|&(r, mask_seed)| -> Result<_, TrainError> {
            let mask = sample_mask(&r.durations_frames, ratio, mask_seed)?;
            let (report, g) = model.loss(r, &mask, true)?;
            Ok((report, g.expect("gradients requested")))
        })
        .collect();
    let n = items.len() as f64;
    let mut total = 0.0;
    let mut components = BTreeMap::new();
    let mut grads = Gradients::zeros_like(&model.params);
    for res in results {
        let (report, g) = res?;
        total += report.total / n;
        for (name, v) in report.components {
            *components.entry(name).or_insert(0.0) += v / n;
        }
        grads.add_assign(&g);
    }
    grads.scale(1.0 / n as f32);
    if model.config().ablations.disable_aol {
        for name in COMPONENTS {
            components.insert(format!("pd1.{name}"), 0.0);
        }
    }
    Ok((total, components, grads))
}

/// Mean masked loss over (at most `limit`) dev records with fixed masks.
pub fn dev_loss(
    model: &ProMode<f32>,
    dev: &[UtteranceRecord],
    limit: usize,
    seed_value: u64,
) -> Result<f64, TrainError> {
    let ratio = model.config().mask_ratio;
    let take = dev.len().min(limit.max(1));
    let losses: Vec<Result<f64, TrainError>> = dev[..take]
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mask = sample_mask(
                &r.durations_frames,
                ratio,
                seed::derive(seed_value, &[seed::tag("dev"), i as u64]),
            )?;
            Ok(model.loss(r, &mask, false)?.0.total)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / take as f64)
}

/// Where a run writes its artifacts. All fields optional.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

pub const LATEST_CHECKPOINT: &str = "latest.pmc";
pub const BEST_CHECKPOINT: &str = "best.pmc";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: ProMode<f32>,
    pub iteration: u64,
    pub history: Vec<StepLog>,
    pub stopped_early: bool,
}

fn checkpoint_of(model: &ProMode<f32>, iteration: u64, cfg: &TrainConfig) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        iteration,
        optimizer_state: true,
        metadata: BTreeMap::from([(
            "train_config".to_string(),
            toml::to_string(cfg).expect("train config serializes"),
        )]),
    }
}

fn write_checkpoint(
    dir: Option<&Path>,
    name: &str,
    model: &ProMode<f32>,
    iteration: u64,
    cfg: &TrainConfig,
) -> Result<Option<String>, TrainError> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            save_checkpoint(&checkpoint_of(model, iteration, cfg), &path)?;
            Ok(Some(path.display().to_string()))
        }
        None => Ok(None),
    }
}

/// Fresh model for `model_cfg`, initialized from the training seed.
pub fn init_model(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<ProMode<f32>, TrainError> {
    Ok(ProMode::new(
        model_cfg,
        seed::derive(cfg.seed, &[seed::tag("model")]),
    )?)
}

/// Trains `model`, whose parameters and moments are those after `start`
/// completed iterations, until `cfg.iterations`.
pub fn train(
    mut model: ProMode<f32>,
    start: u64,
    train_set: &[UtteranceRecord],
    dev_set: &[UtteranceRecord],
    cfg: &TrainConfig,
    out: &RunOutputs,
) -> Result<TrainSummary, TrainError> {
    cfg.check()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let dir = out.checkpoint_dir.as_deref();
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|source| TrainError::Io {
            path: d.display().to_string(),
            source,
        })?;
    }
    let mut log = match &out.log_path {
        Some(p) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| TrainError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
        ),
        None => None,
    };
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0u32;
    let mut stopped_early = false;
    let mut iteration = start;
    // The on-disk latest checkpoint always holds a state with finite loss history.
    let mut last_good = write_checkpoint(dir, LATEST_CHECKPOINT, &model, start, cfg)?;
    let diverged = |it: u64, detail: String, last: &Option<String>| TrainError::Diverged {
        iteration: it,
        detail,
        checkpoint: last.clone().unwrap_or_else(|| "none written".into()),
    };
    while iteration < cfg.iterations {
        let it = iteration + 1;
        let plan = batch_plan(cfg, train_set.len(), it);
        let items: Vec<(&UtteranceRecord, u64)> =
            plan.iter().map(|&(r, s)| (&train_set[r], s)).collect();
        let (loss, components, mut grads) = batch_gradient(&model, &items)?;
        if !loss.is_finite() {
            return Err(diverged(it, format!("loss = {loss}"), &last_good));
        }
        let norm = f64::from(grads.global_norm());
        if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            grads.scale((cfg.clip_norm / norm) as f32);
        }
        let lr = cfg.learning_rate_at(it);
        match adam_step(&mut model.params, &grads, it, lr, cfg) {
            Err(TrainError::NonFiniteGradient(name)) => {
                return Err(diverged(
                    it,
                    format!("non-finite gradient in {name}"),
                    &last_good,
                ))
            }
            other => other?,
        }
        iteration = it;

        let dev_loss =
            if cfg.dev_every > 0 && it.is_multiple_of(cfg.dev_every) && !dev_set.is_empty() {
                Some(dev_loss(&model, dev_set, cfg.dev_utterances, cfg.seed)?)
            } else {
                None
            };
        let entry = StepLog {
            iteration: it,
            lr,
            loss,
            components,
            grad_norm: norm,
            dev_loss,
        };
        if let Some(f) = log.as_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(f, "{line}").map_err(|source| TrainError::Io {
                path: out
                    .log_path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                source,
            })?;
        }
        history.push(entry);
        if cfg.checkpoint_every > 0 && it.is_multiple_of(cfg.checkpoint_every) {
            last_good = write_checkpoint(dir, LATEST_CHECKPOINT, &model, it, cfg)?;
        }
        if let Some(d) = dev_loss {
            if d < best {
                best = d;
                stale = 0;
                if cfg.early_stopping {
                    write_checkpoint(dir, BEST_CHECKPOINT, &model, it, cfg)?;
                }
            } else {
                stale += 1;
                if cfg.early_stopping && stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    write_checkpoint(dir, LATEST_CHECKPOINT, &model, iteration, cfg)?;
    Ok(TrainSummary {
        model,
        iteration,
        history,
        stopped_early,
    })
}
