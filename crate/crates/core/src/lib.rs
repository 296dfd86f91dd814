//! Stereo-temporal depth, egomotion and intrinsics recovery from photometric
//! reconstruction losses.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod observability;
pub mod optim;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
