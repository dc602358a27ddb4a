// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod config;
pub mod denoise;
pub mod error;
pub mod harness;
pub mod instance;
pub mod operators;
pub mod oracle;
pub mod outer;
pub mod plot;
pub mod rng;
pub mod trace;
pub mod vecops;

pub use error::{Error, Result};
