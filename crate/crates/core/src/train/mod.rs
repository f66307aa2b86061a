//! Supervised training, autoencoder pretraining and transfer learning.

mod config;
mod data;
mod history;
mod protocols;

pub use config::TrainConfig;
pub use data::{
    prepare, split_labeled_fraction, split_labeled_indices, stratified_validation_split,
    PreparedSet,
};
pub use history::{EpochRecord, History, HISTORY_HEADER};
pub use protocols::{
    evaluate_classifier, evaluate_reconstruction, finetune_rates, finetune_transfer,
    pretrain_autoencoder, pretrain_rates, supervised_rates, train_supervised, ClassifierScore,
    ReconstructionScore,
};
