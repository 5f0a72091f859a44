pub mod analytics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod montecarlo;
pub mod poweropt;
pub mod quadrature;
pub mod rng;

pub use analytics::{theta_eff, Analytics, BoostForm, MetricKind, MetricResult, PowerAllocation, Scheme};
pub use error::{Error, Result};
pub use geometry::{NetworkConfig, TierParams};
