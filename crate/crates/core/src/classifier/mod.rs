//! Recognition head, loss, optimizer, and the training loop.

mod check;
mod model;
mod sgd;
mod train;

pub use check::{gradcheck_model, GradcheckSetup};
pub use model::{
    argmax, cross_entropy, Aggregator, AggregatorKind, FlattenLinear, ModelConfig, OtsModel,
};
pub use sgd::{Sgd, SgdConfig};
pub use train::{evaluate, evaluate_sharded, train, EpochStats, Evaluation, TrainReport};
