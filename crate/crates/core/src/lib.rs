//! Quantifies side-channel leakage of memoryless protection schemes and
//! computes cost-optimal protection under a maximal-leakage bound.

pub mod casegen;
pub mod channel;
pub mod determinize;
pub mod error;
pub mod greedy;
pub mod io;
pub mod metrics;
pub mod optimize;
pub mod simplex;

pub use channel::{total_cost, validate_scheme, Channel, CostMatrix, Matrix, Pmf, ProtectionScheme};
pub use error::{LeakError, Result};
pub use metrics::{exp_leak, leakage_report, LeakageReport};
pub use optimize::{build_curve, min_cost_for_leak, min_leak_for_cost, Mixture, TradeoffCurve, TradeoffPoint};
