// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cmab;
pub mod demo;
pub mod env;
pub mod error;
pub mod exec;
pub mod harness;
pub mod io_util;
pub mod policy;
pub mod prompt;
pub mod seeding;
pub mod selftest;
pub mod zoopt;

pub use error::{Error, Result};
