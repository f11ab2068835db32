//! Neural parameterization of the joint model and the variational heads.

pub mod checkpoint;
pub mod encoder;
pub mod loss;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod train;

pub use checkpoint::Checkpoint;
pub use encoder::{encode, Reps, TokenFeatures};
pub use loss::{
    compute_potentials, compute_variational, gold_assignment, grad, hard_predictions, loss, loss_terms,
    predict_tables, LossTerms, Prepared, QDist, Variant,
};
pub use params::{EncoderConfig, Gradients, ModelParams};
pub use train::{predict_all, predict_and_evaluate, train, Adam, EpochLog, TrainConfig, TrainOutput};
