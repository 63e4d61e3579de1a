use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::loss::{jcce_loss, jcce_loss_value, RegScope};
use super::sampler::{exhaustive_batches, sample_batch, GenreIndex};
use super::{EncoderConfig, JcceModel, ModelError, Result};
use crate::features::{to_rows, FeatureSpace, SparseVec, ViewingEvent};
use crate::tensor::{AdamState, ParamStore, RngState, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pairs per batch; `None` means `min(64, distinct genres)`.
    pub batch_pairs: Option<usize>,
    pub lambda: f64,
    pub reg_scope: RegScope,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_pairs: None,
            lambda: 1e-3,
            reg_scope: RegScope::Mean,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.batch_pairs {
            if n < 2 {
                return Err(ModelError::Config("batch_pairs must be at least 2".into()));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(ModelError::Config("lambda must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ModelError::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(ModelError::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().rev().find(|e| e.is_best)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "is_best"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.is_best.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Encoded training data: context inputs per event and content id per event.
struct Encoded {
    contexts: Vec<SparseVec>,
    content_ids: Vec<usize>,
}

fn encode(space: &FeatureSpace, events: &[&ViewingEvent]) -> Result<Encoded> {
    let mut contexts = Vec::with_capacity(events.len());
    let mut content_ids = Vec::with_capacity(events.len());
    for e in events {
        contexts.push(space.encode_context(*e)?);
        let id = space.catalog().id_of(&e.genre).ok_or_else(|| {
            ModelError::Config(format!("training genre {:?} is not in the catalog", e.genre))
        })?;
        content_ids.push(id);
    }
    Ok(Encoded { contexts, content_ids })
}

pub fn train(
    events: &[ViewingEvent],
    space: FeatureSpace,
    content_cfg: EncoderConfig,
    context_cfg: EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(JcceModel, TrainLog)> {
    train_with_progress(events, space, content_cfg, context_cfg, cfg, |_| {})
}

/// Trains with Adam and early stopping on a temporal validation tail.
///
/// The training events are ordered by time; the last `validation_fraction`
/// of them are held out. Each epoch runs `⌈|fit| / N⌉` batches of
/// [`sample_batch`]. The parameters with the lowest validation loss are
/// returned, and training stops after `patience` epochs without improvement.
pub fn train_with_progress(
    events: &[ViewingEvent],
    space: FeatureSpace,
    content_cfg: EncoderConfig,
    context_cfg: EncoderConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(JcceModel, TrainLog)> {
    cfg.validate()?;
    let mut ordered: Vec<&ViewingEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.timestamp);
    let n_fit = ((1.0 - cfg.validation_fraction) * ordered.len() as f64).floor() as usize;
    let (fit_events, val_events) = ordered.split_at(n_fit);
    if val_events.is_empty() || fit_events.is_empty() {
        return Err(ModelError::Config(format!(
            "{} events are too few to hold out a validation fraction of {}",
            ordered.len(),
            cfg.validation_fraction
        )));
    }

    let fit = encode(&space, fit_events)?;
    let val = encode(&space, val_events)?;
    let fit_index = GenreIndex::new(&fit.content_ids);
    let distinct = fit_index.distinct_genres();
    let n = cfg.batch_pairs.unwrap_or(distinct.min(64));
    if n < 2 {
        return Err(ModelError::Config("need at least two distinct training genres".into()));
    }
    if n > distinct {
        return Err(ModelError::Config(format!(
            "batch size {n} exceeds the {distinct} distinct training genres; lower batch_pairs"
        )));
    }
    let catalog_inputs: Vec<SparseVec> = (0..space.catalog().len())
        .map(|id| space.encode_catalog_item(id))
        .collect::<std::result::Result<_, _>>()?;

    let mut init_rng = RngState::derived(cfg.seed, "train/init");
    let mut model = JcceModel::new(space, content_cfg, context_cfg, &mut init_rng)?;
    let mut sample_rng = RngState::derived(cfg.seed, "train/batches");
    let mut dropout_rng = RngState::derived(cfg.seed, "train/dropout");
    let mut adam = AdamState::new(cfg.learning_rate);

    let val_batches = exhaustive_batches(&GenreIndex::new(&val.content_ids), n);
    if val_batches.is_empty() {
        return Err(ModelError::Config(
            "validation split has fewer than two distinct genres".into(),
        ));
    }
    let batches_per_epoch = fit.contexts.len().div_ceil(n);

    let mut log = TrainLog::default();
    let mut best_loss = f64::INFINITY;
    let mut best: Option<ParamStore> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        for _ in 0..batches_per_epoch {
            let batch = sample_batch(&fit_index, n, &mut sample_rng)?;
            let loss = {
                let mut tape = Tape::new(&model.store);
                let content_rows = to_rows(
                    model.content.input_dim,
                    batch.iter().map(|&k| &catalog_inputs[fit.content_ids[k]]),
                )?;
                let context_rows = to_rows(model.context.input_dim, batch.iter().map(|&k| &fit.contexts[k]))?;
                let ce = model.content.forward(&mut tape, content_rows, true, &mut dropout_rng)?;
                let cx = model.context.forward(&mut tape, context_rows, true, &mut dropout_rng)?;
                let loss = jcce_loss(&mut tape, ce, cx, cfg.lambda, cfg.reg_scope)?;
                let value = tape.value(loss).item()?;
                if !value.is_finite() {
                    return Err(ModelError::Divergence {
                        epoch,
                        learning_rate: cfg.learning_rate,
                    });
                }
                let grads = tape.backward(loss)?;
                drop(tape);
                model.store.set_grads(grads)?;
                value
            };
            adam.step(&mut model.store)?;
            total += loss;
        }
        let train_loss = total / batches_per_epoch as f64;
        let val_loss = validation_loss(&model, &catalog_inputs, &val, &val_batches, cfg)?;
        if !val_loss.is_finite() {
            return Err(ModelError::Divergence {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        let is_best = val_loss < best_loss;
        if is_best {
            best_loss = val_loss;
            best = Some(model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            is_best,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
        if since_best >= cfg.patience {
            break;
        }
    }
    if let Some(best) = best {
        model.store.copy_values_from(&best)?;
    }
    model.store.zero_grads();
    Ok((model, log))
}

fn validation_loss(
    model: &JcceModel,
    catalog_inputs: &[SparseVec],
    val: &Encoded,
    batches: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in batches {
        let contents: Vec<&SparseVec> = batch.iter().map(|&k| &catalog_inputs[val.content_ids[k]]).collect();
        let contexts: Vec<&SparseVec> = batch.iter().map(|&k| &val.contexts[k]).collect();
        let ce = model.embed_contents(&contents)?;
        let cx = model.embed_contexts(&contexts)?;
        total += jcce_loss_value(&ce, &cx, cfg.lambda, cfg.reg_scope)?;
    }
    Ok(total / batches.len() as f64)
}
