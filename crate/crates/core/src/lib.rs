// `!(x > 0.0)` is used on purpose so NaN is rejected with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod io;
pub mod loss;
pub mod model;
pub mod repr;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../docs/worked-examples.md")]
pub struct WorkedExamples;
