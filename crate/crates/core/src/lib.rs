//! Directed spanning forests on perturbed lattices.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsf;
pub mod error;
pub mod field;
pub mod geom;

pub use dsf::{h_step, trace_path, DsfPath, Polyline, Stop};
pub use error::{DsfError, Result};
pub use field::{derive_seed, FieldConfig, SitePoint};
pub use geom::{AxisBox, LatticeSite, Point};
pub mod cli;
pub mod dual;
pub mod explore;
pub mod scaling;
pub mod stats;
