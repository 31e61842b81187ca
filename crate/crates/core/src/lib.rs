//! Point-cloud compression core: balanced k-d partitioning, ε-auction
//! matching, Chamfer and approximate Earth Mover's metrics, assignment-aware
//! correspondence refinement, and a folding autodecoder with hand-written
//! backpropagation.
//!
//! `no_std` with `alloc`; the default `parallel` feature pulls in `std` and
//! rayon for per-leaf and per-instance parallelism.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod cloud;
pub mod error;
pub mod experiments;
pub mod kdpartition;
pub mod lap;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod net;
mod par;
pub mod rng;
pub mod sampling;
pub mod spatial;
pub mod synth;
pub mod trainer;

pub use cloud::{Dataset, Point3, PointCloud};
pub use error::{Error, Result};
pub use kdpartition::{build_partition, KdPartition};
pub use lap::{auction_assign, hungarian_assign, AuctionSolution, HungarianSolution};
pub use matching::{qaad_greedy, qaad_reassignment, MatchingState};
pub use metrics::{aug_chamfer, chamfer, emd_exact_mean, emkd, EmkdParams, MetricKind, MetricReport};
pub use net::{FoldingNet, NetConfig, Params};
pub use trainer::{TrainConfig, TrainReport, Trainer};
