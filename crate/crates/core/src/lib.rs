//! Krasnosel'skii–Mann iterations with summable errors, explicit convergence
//! bounds and optimality certificates for splitting methods.
//!
//! Layers, bottom up:
//!
//! * [`spaces`]: points, weighted product spaces and metrics.
//! * [`operators`]: operator specifications, averagedness, resolvents and sampling checks.
//! * [`km`]: the inexact KM engine, error models and traces.
//! * [`bounds`]: empirical constants, rate bounds and trace verification.
//! * [`splitting`]: forward–backward type methods built as fixed-point operators.
//! * [`problems`]: reproducible problem instances.

// `!(a <= b)` is deliberate: NaN must fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod km;
pub mod operators;
pub mod problems;
pub mod spaces;
pub mod splitting;

pub use error::{Error, Result};
pub use km::{run_km, IterationTrace, KmConfig};
pub use operators::{Averagedness, OperatorSpec};
pub use spaces::{Point, ProductPoint, Shape, Weights};
