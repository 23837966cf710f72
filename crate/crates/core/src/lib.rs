//! Balanced-tree fast multipole method for the 3D Laplace kernel, with a
//! serial engine and a rank-parallel engine over in-memory or TCP transports.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::single_range_in_vec_init, clippy::type_complexity)]

pub mod datasets;
pub mod direct;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod harmonics;
pub mod transport;
pub mod treebuild;

pub use error::{FmmError, Result};
pub use geometry::{Connection, FmmBox, PartitionScheme, Source, TargetPoint, Vec3};
pub use treebuild::{HaloWait, SplitParams};
