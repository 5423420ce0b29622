//! Evidence-driven multi-agent orchestration for fetal ultrasound
//! interpretation.

pub mod arbitration;
pub mod bench;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod deliberation;
pub mod error;
pub mod evidence;
pub mod fusion;
pub mod orchestration;
pub mod reporting;
pub mod synth;
pub mod toolkit;
pub mod types;
pub mod workflows;

pub use error::{Error, Result};
