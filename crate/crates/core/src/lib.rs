//! Visual-tempo hierarchical contrastive learning for video, at desk scale.
//!
//! Slow and fast clips re-sampled from the same raw clip form a positive
//! pair. Two 3D-convolutional encoders are trained so that each pathway's
//! embedding picks out its counterpart from momentum memory banks, at several
//! network depths at once. Linear probes and instance correspondence maps
//! evaluate what the slow encoder learned.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod icm;
pub mod memory_bank;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod seed;
pub mod synth_data;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
