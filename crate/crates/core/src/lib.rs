//! Time-domain simulation of a droop-controlled grid-forming converter with
//! pluggable current saturation, plus a quasi-static transient-stability
//! analyzer.
//!
//! The module layout follows the signal chain:
//!
//! * [`signal`]: abc / alpha-beta / dq transforms.
//! * [`plant`]: averaged converter, LC filter, load, grid impedance and fault
//!   injection, integrated in the stationary frame with fixed-step RK4.
//! * [`control`]: droop, cascaded PI loops and the three saturation strategies.
//! * [`vflux`]: virtual-flux estimation and the filtered current phase angle.
//! * [`stability`]: P(delta) curves, equilibrium angles and critical clearing.
//! * [`harness`]: scenario configuration, orchestration, metrics and output.

// Validation uses `!(x > 0.0)` style checks so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod harness;
pub mod plant;
pub mod signal;
pub mod stability;
pub mod vflux;

pub use harness::config::ScenarioConfig;
pub use harness::run::{run_scenario, RunMetrics, RunOutput};
