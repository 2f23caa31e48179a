//! Graph neural tangent kernels for graph classification.
//!
//! The crate computes the exact kernel induced by an infinitely wide GNN
//! (configurable depth, per-block MLP width, aggregation scaling, jumping
//! knowledge), validates it against a finite-width Monte Carlo oracle, and
//! turns gram matrices into predictions via kernel regression and a
//! precomputed-kernel C-SVM. A `theory` module evaluates the
//! generalization-bound quantities associated with the single-block
//! norm-scaled kernel.
//!
//! Pairwise gram computation is data-parallel with rayon when the default
//! `parallel` feature is enabled; disabling it yields a dependency-free
//! sequential build with identical results.

pub mod classifier;
pub mod error;
pub mod graph;
pub mod kernel;
pub mod oracle;
pub mod theory;

pub use error::{DataError, KernelError, OracleError, SolveError};
pub use graph::{featurize, make_folds, parse_dataset, FeatureMode, Graph, LabeledDataset};
pub use kernel::{
    gram_matrix, gram_matrix_sequential, normalize_gram, pair_kernel, ArchConfig, GramMatrix,
    Scaling,
};
