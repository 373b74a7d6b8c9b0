//! The relevance network, its training loop and epoch selection.

mod model;
mod select;
mod train;

pub use model::{argmax, DayBatch, DayOutput, Model, ModelConfig};
pub use select::{select_max_accuracy, select_min_loss_patience, EpochRecord, Selection, SelectionRule};
pub use train::{
    evaluate, train, BatchSource, EpochCheckpoint, ExampleSet, ModelMetadata, TrainConfig, TrainedModel, TrainingRun,
};
