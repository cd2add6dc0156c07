use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{build_graph, update_running_stats, Mode};
use crate::semantic::{embed_source, EmbedderConfig};
use crate::uast::{parse_to_uast, Language};

use super::loss::{batch_forward_backward, LossComponents, PreparedSample};
use super::optim::{model_step, AdamState};
use super::{detect_graph, evaluate_metrics, FusionError, FusionModel, Metrics};

pub const CHECKPOINT_VERSION: &str = "vlf-fusion/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub lambda_nce: f64,
    pub lambda_lap: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            tau: 0.07,
            lambda_nce: 0.1,
            lambda_lap: 0.01,
            patience_epochs: 5,
            max_epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive =
            self.lr > 0.0 && self.tau > 0.0 && self.batch_size > 0 && self.max_epochs > 0;
        let non_negative =
            self.weight_decay >= 0.0 && self.lambda_nce >= 0.0 && self.lambda_lap >= 0.0;
        if !positive || !non_negative {
            return Err("training hyperparameters out of range".into());
        }
        if self.patience_epochs < 1 {
            return Err("patience must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub language: Language,
    pub source: String,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossComponents,
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience counter over a validation score; strictly higher is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the score of `epoch` and reports whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ epoch as u64) ^ index as u64)
}

/// Parses, builds graphs and embeds in parallel; output order follows input.
pub fn prepare_samples(
    samples: &[LabeledSample],
    embedder: &EmbedderConfig,
) -> Result<Vec<PreparedSample>, FusionError> {
    samples
        .par_iter()
        .map(|s| {
            let doc = parse_to_uast(s.source.as_bytes(), s.language)?;
            let h_l = embed_source(&s.source, embedder)?.vector;
            Ok(PreparedSample {
                graph: build_graph(&doc),
                h_l: super::l2_normalize(&h_l),
                label: s.label,
            })
        })
        .collect()
}

fn check_classes(samples: &[PreparedSample]) -> Result<(), FusionError> {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    if pos == 0 || pos == samples.len() {
        return Err(FusionError::DegenerateDataset(format!(
            "{pos} of {} training samples are vulnerable",
            samples.len()
        )));
    }
    Ok(())
}

pub(crate) fn predict(
    model: &FusionModel,
    samples: &[PreparedSample],
) -> Result<Vec<u8>, FusionError> {
    samples
        .par_iter()
        .map(|s| detect_graph(&s.graph, &s.h_l, model).map(|r| r.flag))
        .collect()
}

pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    embedder: &EmbedderConfig,
) -> Result<(FusionModel, TrainHistory), FusionError> {
    let train = prepare_samples(&dataset.train, embedder)?;
    let val = prepare_samples(&dataset.val, embedder)?;
    train_prepared(&train, &val, cfg, embedder)
}

pub fn train_prepared(
    train: &[PreparedSample],
    val: &[PreparedSample],
    cfg: &TrainConfig,
    embedder: &EmbedderConfig,
) -> Result<(FusionModel, TrainHistory), FusionError> {
    cfg.validate().map_err(FusionError::DegenerateDataset)?;
    check_classes(train)?;
    if val.is_empty() {
        return Err(FusionError::DegenerateDataset(
            "validation split is empty".into(),
        ));
    }
    let mut model = FusionModel::init(cfg.seed, embedder.clone());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed));
    let mut adam = AdamState::default();
    let mut step = 0u64;
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let val_labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossComponents {
            total: 0.0,
            ce: 0.0,
            nce: 0.0,
            lap: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<Option<u64>> = chunk
                .iter()
                .map(|&i| Some(sample_seed(cfg.seed, epoch, i)))
                .collect();
            let out = batch_forward_backward(&model, &batch, cfg, Mode::Train, &seeds, true)?;
            update_running_stats(&mut model.sage, &out.cache);
            let mut grads = out.grads.expect("gradients requested");
            step += 1;
            model_step(&mut model, &mut grads, &mut adam, cfg, step);
            sum.total += out.components.total;
            sum.ce += out.components.ce;
            sum.nce += out.components.nce;
            sum.lap += out.components.lap;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let loss = LossComponents {
            total: sum.total / n,
            ce: sum.ce / n,
            nce: sum.nce / n,
            lap: sum.lap / n,
        };
        let metrics = evaluate_metrics(&predict(&model, val)?, &val_labels)?;
        log::info!(
            "epoch {epoch}: loss {:.4} (ce {:.4}, nce {:.4}, lap {:.4}), val acc {:.4}, f1 {:.4}",
            loss.total,
            loss.ce,
            loss.nce,
            loss.lap,
            metrics.accuracy,
            metrics.f1
        );
        epochs.push(EpochRecord {
            epoch,
            loss,
            val: metrics,
        });
        if stopper.observe(epoch, metrics.f1) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    let stopped_early = stopper.should_stop();
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch: stopper.best_epoch(),
            stopped_early,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: FusionModel,
    #[serde(default)]
    train_config: Option<TrainConfig>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &FusionModel,
    cfg: Option<&TrainConfig>,
) -> Result<(), FusionError> {
    let ck = Checkpoint {
        format: CHECKPOINT_VERSION.into(),
        model: model.clone(),
        train_config: cfg.cloned(),
    };
    let bytes = serde_json::to_vec(&ck).map_err(|e| FusionError::Checkpoint(e.to_string()))?;
    std::fs::write(path, bytes)
        .map_err(|e| FusionError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<FusionModel, FusionError> {
    let bytes = std::fs::read(path)
        .map_err(|e| FusionError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| FusionError::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_VERSION {
        return Err(FusionError::Checkpoint(format!(
            "unsupported format {}",
            ck.format
        )));
    }
    ck.model.check_shapes()?;
    Ok(ck.model)
}
