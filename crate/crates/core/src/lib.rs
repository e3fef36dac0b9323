#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod buffer;
pub mod checkpoint;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod risk;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
