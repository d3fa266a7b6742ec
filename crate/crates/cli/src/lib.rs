//! Scenario files, task pipelines and output writers of the `wienerlab`
//! command-line tool.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod plot;
pub mod run;
pub mod suite;
pub mod table;
