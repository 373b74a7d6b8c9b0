use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{argmax, DayBatch, Model, ModelConfig};
use super::select::{EpochRecord, Selection, SelectionRule};
use crate::category::Category;
use crate::encoder::{EmbeddingStore, Provenance};
use crate::error::{Error, Result};
use crate::ingest::DayExample;
use crate::nn::{AdamWConfig, Gradients, OptimizerState, ParamStore, Schedule};
use crate::seed::mix_seed;

/// Random access to training examples, materialized lazily so that only the
/// examples of the current minibatch are held as padded tensors.
pub trait BatchSource: Sync {
    fn len(&self) -> usize;
    fn batch(&self, index: usize) -> Result<DayBatch>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BatchSource for [DayBatch] {
    fn len(&self) -> usize {
        <[DayBatch]>::len(self)
    }

    fn batch(&self, index: usize) -> Result<DayBatch> {
        Ok(self[index].clone())
    }
}

impl BatchSource for Vec<DayBatch> {
    fn len(&self) -> usize {
        <[DayBatch]>::len(self)
    }

    fn batch(&self, index: usize) -> Result<DayBatch> {
        Ok(self[index].clone())
    }
}

/// Day examples backed by an embedding store and a headline → category map.
pub struct ExampleSet<'a> {
    pub examples: &'a [DayExample],
    pub store: &'a EmbeddingStore,
    pub categories: &'a HashMap<String, Category>,
    pub cap: usize,
}

impl BatchSource for ExampleSet<'_> {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn batch(&self, index: usize) -> Result<DayBatch> {
        let lookup = |id: &str| self.categories.get(id).copied().unwrap_or(Category::Unclassified);
        DayBatch::from_example(&self.examples[index], self.store, &lookup, self.cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub optimizer: AdamWConfig,
    pub selection: SelectionRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 15,
            seed: 0,
            warmup_fraction: 0.1,
            optimizer: AdamWConfig::default(),
            selection: SelectionRule::default(),
        }
    }
}

/// Everything needed to rebuild and describe a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub model: ModelConfig,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub selection: Option<Selection>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    #[serde(default)]
    pub encoder: Option<Provenance>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub metadata: ModelMetadata,
}

impl TrainedModel {
    pub fn untrained(model: Model) -> Self {
        let metadata = ModelMetadata {
            model: model.config().clone(),
            training: None,
            selection: None,
            history: Vec::new(),
            encoder: None,
        };
        TrainedModel { model, metadata }
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let meta = serde_json::to_string(&self.metadata)?;
        self.model
            .params()
            .write_to(out, &meta)
            .map_err(|e| Error::io(Path::new("<checkpoint>"), e))
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let (params, meta) = ParamStore::read_from(input)?;
        let metadata: ModelMetadata = serde_json::from_str(&meta)?;
        let model = Model::from_params(metadata.model.clone(), params)?;
        Ok(TrainedModel { model, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        TrainedModel::read_from(std::io::BufReader::new(file))
    }
}

/// Per-epoch parameters kept so that the selection rule can pick one.
#[derive(Clone, Debug)]
pub struct EpochCheckpoint {
    pub record: EpochRecord,
    pub params: ParamStore,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub history: Vec<EpochRecord>,
    pub checkpoints: Vec<EpochCheckpoint>,
    pub selected: TrainedModel,
}

/// Mean loss and accuracy of the model over `source`, dropout off.
pub fn evaluate(model: &Model, source: &dyn BatchSource) -> Result<(f64, f64)> {
    if source.is_empty() {
        return Err(Error::InvalidArgument("evaluation over an empty split".into()));
    }
    let per: Vec<(f64, bool)> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let batch = source.batch(i)?;
            let label = batch
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("example {i} has no label")))?;
            let out = model.forward_day(&batch)?;
            let loss = crate::nn::cross_entropy(&crate::nn::Tensor::vector(out.probs.clone()), label.index())?;
            Ok((loss, argmax(&out.probs) == label.index()))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Minibatch AdamW training with per-epoch validation, checkpointing and
/// selection. Per-example gradients run in parallel and are summed in
/// example order, so results do not depend on the thread count.
// Weights blown up by a bad step surface as non-finite activations.
fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence {
            epoch,
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

pub fn train(
    mut model: Model,
    train_set: &dyn BatchSource,
    val_set: &dyn BatchSource,
    config: &TrainConfig,
) -> Result<TrainingRun> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
    }
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let schedule = Schedule::with_warmup_fraction(steps_per_epoch * config.epochs, config.warmup_fraction);
    let mut optimizer = OptimizerState::new(config.optimizer.clone(), schedule, model.params())?;

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut checkpoints = Vec::new();
    for epoch in 1..=config.epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, Gradients)> = chunk
                .par_iter()
                .map(|&i| {
                    let batch = train_set.batch(i)?;
                    model.loss_and_gradients(&batch, Some(mix_seed(epoch_seed, i as u64)))
                })
                .collect::<Result<_>>()
                .map_err(|e| diverged(e, epoch, step + 1))?;
            let mut total = Gradients::zeros_like(model.params());
            let mut batch_loss = 0.0;
            for (loss, grads) in &results {
                batch_loss += loss;
                total.add_assign(grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: step + 1,
                    loss: batch_loss / chunk.len() as f64,
                });
            }
            loss_sum += batch_loss;
            let params = model.params_mut();
            params.zero_grads();
            params.accumulate(&total, 1.0 / chunk.len() as f64)?;
            optimizer.step(params)?;
        }

        let (val_loss, val_acc) = evaluate(&model, val_set).map_err(|e| diverged(e, epoch, steps_per_epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: steps_per_epoch,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_acc
        );
        history.push(record.clone());
        checkpoints.push(EpochCheckpoint {
            record,
            params: model.params().clone(),
        });
        if config.selection.should_stop(&history) {
            break;
        }
    }

    let selection = config.selection.select(&history)?;
    let chosen = checkpoints[selection.epoch - 1].params.clone();
    let metadata = ModelMetadata {
        model: model.config().clone(),
        training: Some(config.clone()),
        selection: Some(selection),
        history: history.clone(),
        encoder: None,
    };
    let selected = TrainedModel {
        model: Model::from_params(metadata.model.clone(), chosen)?,
        metadata,
    };
    Ok(TrainingRun {
        history,
        checkpoints,
        selected,
    })
}
