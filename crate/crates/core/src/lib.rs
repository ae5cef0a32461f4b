//! Sequential, anytime-valid comparison of two or more policies from paired
//! bounded progress scores.
//!
//! The main entry points are [`evidence::run`] for a finished pair of logs,
//! [`evidence::EvidenceState`] for live streaming, [`wsr`] for the
//! betting-confidence-sequence baseline, [`compare::multi_compare`] for more
//! than two policies and [`simlab::run_experiment`] for simulation studies.

pub mod compare;
pub mod error;
pub mod evidence;
pub mod metrics;
pub mod sequential;
pub mod simlab;
pub mod wsr;
pub mod xi_opt;

pub use error::{Error, Result};
