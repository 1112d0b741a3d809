//! Multi-feedback successive interference cancellation for multiuser MIMO.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod airlink;
pub mod bench;
pub mod detect;
pub mod error;
pub mod fec;
pub mod idd;
pub mod numerics;
pub mod par;

pub use error::{Error, LinalgError, Result};
