//! Linear-complexity direct solver for symmetric kernel matrices in H²
//! (strong admissibility) format.
//!
//! The pipeline is: points → [`ClusterTree`] → [`BlockPartition`] →
//! [`H2Matrix`] (Chebyshev construction plus algebraic recompression) →
//! [`Factorization`] (strong recursive skeletonization with graph-colored
//! batches) → [`solve`]. The [`oracle`] module is an independent dense
//! reference used for validation, and [`harness`] drives experiments.

pub mod dense;
pub mod error;
pub mod factorization;
pub mod geometry;
pub mod h2;
pub mod harness;
pub mod kernels;
pub mod oracle;
pub mod rng;
pub mod schedule;
pub mod solve;
pub mod structure;

pub use error::{H2Error, Result};
pub use factorization::{factorize, ClusterFactor, Factorization, FactorStats};
pub use geometry::{generate_uniform_grid, BoundingBox, Cluster, ClusterTree, PointSet};
pub use h2::H2Matrix;
pub use kernels::{KernelFamily, KernelSpec, LowRankFactor};
pub use solve::{solve, solve_many, TreeVector};
pub use structure::{
    Admissibility, BlockKind, BlockPartition, Coloring, DistanceMetric, LevelGraph,
};
