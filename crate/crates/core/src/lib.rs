//! Nonparametric generative modeling with sliced-Wasserstein particle flows.
//!
//! The building blocks are deliberately small: one-dimensional optimal
//! transport on empirical CDFs ([`sliced_ot`]), random projection
//! generation including locally-connected image patches and pyramidal
//! schedules ([`projections`]), the particle-system drivers ([`flow`]),
//! dataset ingestion and persistence ([`data_io`]), and desk-scale
//! evaluation helpers ([`eval`]).

pub mod data_io;
pub mod error;
pub mod eval;
pub mod flow;
pub mod mat;
pub mod projections;
pub mod rng;
pub mod sliced_ot;

pub use error::{Error, Result};
pub use mat::Matrix;
