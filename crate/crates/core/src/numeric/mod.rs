//! Dense matrix arithmetic, trainable parameters, the MLP tower and the
//! optimizers. No attention or model semantics live here.

pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod param;

pub use matrix::{dot, max_rel_error, Matrix};
pub use mlp::{sigmoid, Dense, Mlp, MlpCache};
pub use optim::{adam_step, sgd_step, AdamHyper, Optimizer, OptimizerKind};
pub use param::{GradPair, ParamId, ParamStore};
