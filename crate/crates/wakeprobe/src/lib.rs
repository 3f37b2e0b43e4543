//! Campaign runner around `wakeprobe-core`: flow-generator backends, the
//! CSV evidence store, the planner/analyst/critic/writer loop, report
//! rendering and the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod campaign;
pub mod cli;
pub mod evidence;
pub mod http;
pub mod lab;
pub mod llm;
pub mod remote;
pub mod replay;
pub mod report;
pub mod stub;
pub mod surrogate;
pub mod svg;

pub use wakeprobe_core as core;
