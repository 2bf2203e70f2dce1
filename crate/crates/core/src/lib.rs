// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod error;
pub mod functionals;
pub mod measures;
pub mod transport;
pub mod mvmetric;
pub mod polymer;
pub mod quantize;
pub mod serialize;

pub use error::{Error, Result};
