//! Convolutional Lasso for spike sorting.
//!
//! Estimates sparse neuron activations from a multichannel recording given
//! known action-potential templates, by solving
//! `min_a ||y - H a||^2 + 2 lambda ||a||_1` where `H` convolves each
//! activation train with its neuron's templates.

pub mod bench;
pub mod cluster;
pub mod dense;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod lasso;
pub mod metrics;
pub mod operator;
pub mod pool;
pub mod signal;
pub mod simulator;
pub mod sliding;
pub mod working_set;

pub use cluster::{
    cluster_neurons, cluster_neurons_with_threshold, neuron_independence, solve_clustered,
    solve_partitioned, Cluster, ClusterPartition, ClusterSolver,
};
pub use error::{Error, Result};
pub use lasso::{kkt_check, objective, soft_threshold, solve_subproblem, KktReport, LassoConfig};
pub use operator::{adjoint_apply, forward_model, gram_band, gram_entry_bordered, GramBand};
pub use signal::{DenseActivation, MultichannelSignal, ShapeBank, SparseActivation, Spike, Window};
pub use sliding::{
    classify_support, solve_sliding, solve_sliding_with, SlidingOptions, SlidingOutput, SupportClass,
    TraceRecord, WindowAction, WindowTrace,
};
pub use working_set::{solve_global, solve_working_set, Variant, WorkingSetOutput, WorkingSetSolver};
