//! Deterministic AdamW mini-batch training with length-bucketed batches.

use std::fmt::Write as _;
use std::path::Path;

use emg2artic_nn::{adamw_step, derive_seed, seeded_rng, AdamState, AdamWConfig};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, Utterance};
use crate::error::{invalid, CoreError, Result};
use crate::eval_metrics::evaluate;
use crate::model::{eval_loss, forward_backward, Batch, EncoderConfig, LossBreakdown, LossWeights, Model, BN_MOMENTUM, CONFIG_VERSION};

pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FINAL_DIR: &str = "final";
pub const BEST_DIR: &str = "best";
pub const HISTORY_HEADER: &str = "epoch,l_total,l_ema,l_pitch,l_loud,l_phon,\
val_total,val_ema,val_pitch,val_loud,val_phon,val_r_ema,val_r_loud,val_r_pitch";

/// Batches are drawn from pools of this many batches, sorted by length.
const BUCKET_POOL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub n_epochs: usize,
    pub seed: u64,
    /// Validation correlations are computed at epoch 1, every
    /// `eval_every` epochs and at the last epoch.
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.0005,
            weight_decay: 1e-7,
            n_epochs: 80,
            seed: 0,
            eval_every: 5,
            clip_grad_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    /// Shorter schedule and smaller batches for the synthetic corpus.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 8,
            n_epochs: 30,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("train config", "batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return invalid("train config", "learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return invalid("train config", "weight_decay must be finite and non-negative");
        }
        if self.eval_every == 0 {
            return invalid("train config", "eval_every must be at least 1");
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return invalid("train config", "clip_grad_norm must be positive");
            }
        }
        Ok(())
    }

    fn wants_correlations(&self, epoch: usize) -> bool {
        epoch == 1 || epoch.is_multiple_of(self.eval_every) || epoch == self.n_epochs
    }
}

/// Contents of `train_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigFile {
    pub config_version: u32,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValCorrelations {
    pub ema: f64,
    pub loudness: f64,
    pub pitch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_r: Option<ValCorrelations>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let (t, v) = (&r.train, &r.val);
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch, t.total, t.ema, t.pitch, t.loudness, t.phoneme, v.total, v.ema, v.pitch, v.loudness, v.phoneme
            );
            match r.val_r {
                Some(c) => {
                    let _ = writeln!(s, ",{},{},{}", c.ema, c.loudness, c.pitch);
                }
                None => s.push_str(",,,\n"),
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| CoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub struct TrainOutcome {
    pub final_model: Model,
    pub best_model: Model,
    /// Epoch of the best validation loss; 0 when no epoch ran.
    pub best_epoch: usize,
    pub history: TrainHistory,
}

/// Batch composition for one epoch, as indices into the corpus.
///
/// Items are shuffled by `(seed, epoch)`, cut into pools of
/// `BUCKET_POOL` batches, sorted by length within each pool and chunked,
/// and the batch order is shuffled again.
pub fn make_batches(lengths: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = seeded_rng(derive_seed(seed, &format!("epoch-{epoch}")));
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(batch_size.max(1) * BUCKET_POOL) {
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        total: sum(|l| l.total),
        ema: sum(|l| l.ema),
        pitch: sum(|l| l.pitch),
        loudness: sum(|l| l.loudness),
        phoneme: sum(|l| l.phoneme),
    }
}

/// Mean eval-mode loss over utterances, one utterance per batch.
pub fn validation_loss(model: &Model, utts: &[Utterance], weights: &LossWeights) -> Result<LossBreakdown> {
    let losses = utts
        .iter()
        .map(|u| eval_loss(model, &Batch::collate(&[u], &model.cfg)?, weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_breakdown(&losses))
}

fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
}

fn rounded(model: &Model) -> Model {
    let mut m = model.clone();
    m.params.round_to_f32();
    m
}

pub fn train(
    train: &[Utterance],
    val: &[Utterance],
    model_cfg: &EncoderConfig,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    if train.is_empty() || val.is_empty() {
        return invalid("train", "train and validation splits must be nonempty");
    }
    if let Some(u) = train.iter().chain(val).find(|u| u.n_channels != model_cfg.n_emg_channels) {
        return invalid(
            "train",
            format!("{} has {} channels, model expects {}", u.id, u.n_channels, model_cfg.n_emg_channels),
        );
    }
    let mut model = Model::init(model_cfg, cfg.seed)?;
    let ids = model.trainable_ids();
    let mut states: Vec<AdamState> = ids.iter().map(|&id| AdamState::new(model.params.get(id).len())).collect();
    let adam = AdamWConfig::new(cfg.learning_rate, cfg.weight_decay);
    let lengths: Vec<usize> = train.iter().map(|u| u.emg_len).collect();

    let mut history = TrainHistory::default();
    let mut best = (rounded(&model), 0usize, f64::INFINITY);
    for epoch in 1..=cfg.n_epochs {
        let mut losses = Vec::new();
        for (b, idx) in make_batches(&lengths, cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let items: Vec<&Utterance> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::collate(&items, model_cfg)?;
            let mut step = forward_backward(&model, &batch, weights)?;
            if !step.loss.total.is_finite() || step.grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(CoreError::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(max) = cfg.clip_grad_norm {
                clip_global_norm(&mut step.grads, max);
            }
            for ((&id, grad), state) in ids.iter().zip(&step.grads).zip(&mut states) {
                adamw_step(model.params.get_mut(id).data_mut(), grad, state, &adam)?;
            }
            model.update_running_stats(&step.bn_stats, BN_MOMENTUM)?;
            losses.push(step.loss);
        }
        let snapshot = rounded(&model);
        let val_loss = validation_loss(&snapshot, val, weights)?;
        let val_r = if cfg.wants_correlations(epoch) {
            evaluate(&snapshot, val, cfg.seed).ok().map(|r| ValCorrelations {
                ema: r.ema_mean(),
                loudness: r.loudness(),
                pitch: r.pitch(),
            })
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train: mean_breakdown(&losses),
            val: val_loss,
            val_r,
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4}{}",
            record.train.total,
            record.val.total,
            val_r.map_or(String::new(), |c| format!(
                " r_ema {:.3} r_loud {:.3} r_pitch {:.3}",
                c.ema, c.loudness, c.pitch
            ))
        );
        history.records.push(record);
        if val_loss.total < best.2 {
            best = (snapshot, epoch, val_loss.total);
        }
    }
    Ok(TrainOutcome {
        final_model: rounded(&model),
        best_model: best.0,
        best_epoch: best.1,
        history,
    })
}

/// Writes checkpoints, configs and history into a run directory.
pub fn write_run(dir: &Path, outcome: &TrainOutcome, weights: &LossWeights, cfg: &TrainConfig) -> Result<()> {
    outcome.final_model.save(&dir.join(FINAL_DIR), weights)?;
    outcome.best_model.save(&dir.join(BEST_DIR), weights)?;
    write_json(
        &dir.join(crate::model::MODEL_CONFIG_FILE),
        &crate::model::ModelConfigFile {
            config_version: CONFIG_VERSION,
            encoder: outcome.final_model.cfg.clone(),
            loss_weights: *weights,
        },
    )?;
    write_json(
        &dir.join(TRAIN_CONFIG_FILE),
        &TrainConfigFile {
            config_version: CONFIG_VERSION,
            train: cfg.clone(),
        },
    )?;
    outcome.history.write_csv(&dir.join(HISTORY_FILE))
}

pub fn read_train_config(dir: &Path) -> Result<TrainConfig> {
    let file: TrainConfigFile = read_json(&dir.join(TRAIN_CONFIG_FILE))?;
    if file.config_version != CONFIG_VERSION {
        return invalid("train config", format!("unsupported config_version {}", file.config_version));
    }
    Ok(file.train)
}
