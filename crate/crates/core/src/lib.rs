//! Graph-convolutional collaborative filtering on user–item interaction
//! graphs: single- and twin-network CF-LGCN variants, LightGCN and matrix
//! factorization, trained with BPR and evaluated by full ranking.

pub mod datasets;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod inductive;
pub mod propagation;
pub mod training;
pub mod verify;

pub use eval::{evaluate_embeddings, evaluate_model, EvalError, EvalResult};
pub use exec::Exec;
pub use graph::{GraphError, InteractionGraph, Normalization, NormalizedGraph};
pub use propagation::{
    EmbeddingTable, FusionMode, FusionSpec, Model, ModelError, Network, NetworkSpec, TwinModel,
    Variant,
};
pub use training::{fit, TrainConfig, TrainError, TrainOutcome};
