// Validation is written as `!(x > 0.0)` so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod al_loop;
pub mod api;
pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod loss_head;
pub mod model;
pub mod run;
pub mod segmenter;
pub mod stats;
pub mod strategies;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
