//! Multi-graph fusion networks for urban region embedding.
//!
//! The pipeline turns a time-series of mobility graphs (one origin-destination
//! matrix per time bin) into a small set of fused mobility patterns, learns a
//! region embedding from those patterns with attention-based message passing,
//! and scores the embedding on downstream regression and clustering tasks.
//!
//! Stages, in order:
//!
//! * [`ingest`]: trip records to a [`ingest::MobilityMultiGraph`] and an aggregate flow matrix.
//! * [`mgd`]: pairwise mobility graph distance between every two time bins.
//! * [`fusion`]: agglomerative clustering of time bins and fusion into patterns.
//! * [`model`]: intra-pattern message passing, inter-pattern cross attention, output layer.
//! * [`training`]: flow-distribution objective, analytic gradients, optimizers.
//! * [`eval`]: Lasso regression and k-means with MAE/RMSE/R² and NMI/ARI.
//! * [`synth`]: a synthetic city with planted temporal regimes and region functions.
//! * [`pipeline`]: on-disk stages driven by a [`config::PipelineConfig`].

pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod io;
mod linalg;
pub mod mgd;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
