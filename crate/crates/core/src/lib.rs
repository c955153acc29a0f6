//! Sequential lending simulator under selective labels.
//!
//! A synthetic applicant population with tunable historical and measurement
//! bias is split into quarters. Each quarter a lender scores applicants with a
//! logistic model, grants loans under a budget using one of five decision
//! methods, observes repayment only for granted loans, and updates the model.
//! Fairness gaps and profit are measured against the ground-truth labels.
//!
//! The numerical core ([`glm`], [`linalg`], [`metrics`], [`policies`]) is
//! generic over the floating-point type through [`Scalar`]; the simulation
//! driver and file formats work in `f64`. Concrete aliases for both widths are
//! exported below.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod format;
pub mod glm;
pub mod linalg;
pub mod metrics;
pub mod policies;
pub mod record;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod sweep;
pub mod synthgen;

pub use config::RunParams;
pub use error::{Result, SimError};
pub use glm::{LogisticModel, UtilityParams};
pub use metrics::MetricRow;
pub use policies::{Method, PolicyConfig, PolicyDecision, Provenance};
pub use record::RunRecord;
pub use scalar::Scalar;
pub use simulator::{QuarterOutcome, SimConfig};
pub use sweep::SweepGrid;
pub use synthgen::{Applicant, BiasConfig, Cohort};

pub type LogisticModel64 = glm::LogisticModel<f64>;
pub type LogisticModel32 = glm::LogisticModel<f32>;
pub type UtilityParams64 = glm::UtilityParams<f64>;
pub type UtilityParams32 = glm::UtilityParams<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type PolicyConfig64 = policies::PolicyConfig<f64>;
pub type PolicyDecision64 = policies::PolicyDecision<f64>;
