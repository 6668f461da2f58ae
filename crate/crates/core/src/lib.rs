//! Placement and evaluation toolkit for multi-camera robot perception.
//!
//! - [`topology`]: sensor/device/link graph, file format and constraint checks.
//! - [`selection`]: recursive best-fit assignment of sensors to devices.
//! - [`oracle`]: exhaustive reference search used to check the assignment.
//! - [`balance_sim`]: discrete-event simulation of load-aware frame dispatch.
//! - [`eval_metrics`]: IoU, TP/FP matching, AP, mAP and the IoU sweep.
//! - [`depth`]: object depth from a centre window of a depth image.
//! - [`stats`]: frame-rate confidence intervals.
//! - [`cli`]: the `percept-place` command line.

pub mod balance_sim;
pub mod cli;
pub mod depth;
pub mod eval_metrics;
pub mod oracle;
pub mod selection;
pub mod stats;
pub mod topology;

pub use eval_metrics::BBox;
pub use selection::{select, Configuration, SelectionResult};
pub use topology::{parse_topology, validate, Topology};
