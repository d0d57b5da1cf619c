//! User-level metric differential privacy under the earth mover's distance.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod budget;
pub mod error;
pub mod experiment;
pub mod frequency;
pub mod io;
pub mod linear;
pub mod mechanism;
pub mod metric;
pub mod norms;
pub mod reduction;
pub mod rng;
pub mod shuffle;
pub mod transport;

pub use budget::{DiscreteBudget, MetricBudget, Model, Requirement};
pub use error::{Error, Result};
pub use metric::{build_clustered, build_embedding, ClusteredSpace, EmbeddingTable, MetricSpace};
pub use transport::{bvn_matching, emd, emd_cost, sample_coupling, Coupling, Histogram, Matching, Multiset};
