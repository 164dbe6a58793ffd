//! Disk IO, streaming data loading, training and the command-line workflow
//! around `lumos-core`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod io;
pub mod loader;
pub mod train;
