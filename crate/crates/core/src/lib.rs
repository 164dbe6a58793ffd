//! Core numerics for the LUMOS user-behaviour transformer.
//!
//! Everything in this crate is allocation-only and free of IO so it builds
//! with `no_std` + `alloc` (disable the default `std` feature). The `lumos`
//! crate layers partitioned storage, streaming loaders, the training loop and
//! the command-line interface on top.
//!
//! Module map:
//!
//! * [`tensor`] and [`tape`]: dense row-major matrices and a reverse-mode
//!   autodiff tape over them.
//! * [`datamodel`]: feature scalers, user records, event calendars and
//!   window/sample assembly with learned-pad and zero-fill semantics.
//! * [`synthgen`]: deterministic synthetic calendar and user population.
//! * [`model`]: token embedding pathways, positional tables, pre-norm SwiGLU
//!   encoder, cross-attention-only decoder and per-dimension heads.
//! * [`loss`]: BCE, zero-masked MSE and uncertainty-weighted combination.
//! * [`optim`], [`metrics`], [`gradcheck`]: training-side helpers;
//!   [`ddouble`] is the extended-precision scalar behind the gradient check.
//! * [`embeddings`]: user/static/supply embedding extraction and probes.
//! * [`scaling`]: log-log power-law fits.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod datamodel;
pub mod ddouble;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod scaling;
pub mod synthgen;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Mat, Scalar};
