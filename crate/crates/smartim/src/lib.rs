//! File formats, reports, parallel drivers and workflows for [`smartim_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod parallel;
pub mod report;
pub mod workflow;

pub use error::{Error, Result};
pub use smartim_core as core;
