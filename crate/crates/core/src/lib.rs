//! Nucleus center detection in microscopy images with a regression CNN
//! regularized by nucleus shape priors.
//!
//! Pipeline: [`edges::canny`] edge maps and [`shapes`] sets feed the training
//! objective in [`network`]; inference is [`network::forward`] followed by
//! [`detect_eval::detect`].

// `!(x > 0.0)` style checks are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod detect_eval;
pub mod edges;
pub mod error;
pub mod io;
pub mod network;
pub mod numerics;
pub mod shapes;
pub mod synth;

pub use error::{Error, Result};
