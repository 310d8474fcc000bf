//! Tensor containers, datasets, checkpoints and the synthetic scene generator.

mod checkpoint;
mod container;
mod dataset;
mod pairs;
mod synthetic;

pub use checkpoint::{checkpoint_records, load_checkpoint, model_from_records, save_checkpoint};
pub use container::{decode, encode, read_container, write_container, DType, TensorRecord, MAGIC, VERSION};
pub use dataset::SceneDataset;
pub use pairs::{load_feature_pairs, pairs_from_records, pairs_to_records, write_feature_pairs, FeaturePair};
pub use synthetic::{generate_synthetic, CooccurrenceSpec, PresenceLayout, DEFAULT_CLASSES};
