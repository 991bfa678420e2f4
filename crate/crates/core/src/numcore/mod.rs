//! Tensors, reverse-mode differentiation, initialisation and optimisation.

mod graph;
mod init;
mod linalg;
mod optim;
mod tensor;

pub use graph::{Activation, AttentionLayout, Gradients, Graph, Var};
pub use init::{reparam_sample, reparam_sample_log_std, rng_from_seed, standard_normal, xavier_init, Rng};
pub use linalg::{gemm, SparseRows};
pub use optim::{clip_global_norm, BoundParams, GradMap, ParamEntry, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tensor::Tensor;
