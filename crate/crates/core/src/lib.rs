//! Sparse-recovery initial ranging for OFDMA uplinks.

pub mod channel;
pub mod codes;
pub mod config;
pub mod detector;
pub mod error;
pub mod handover;
pub mod harness;
pub mod isl0;
pub mod l1;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod scenario;

pub use config::{SubcarrierLayout, SystemConfig};
pub use error::{RangingError, Result};
pub use model::{build_a, MeasurementModel};
pub use operator::{DenseOperator, SensingOperator};
pub use scenario::{simulate_received, simulate_time_domain, RangingScenario, Terminal};
