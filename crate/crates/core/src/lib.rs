//! Online control of linear systems with disturbance-action policies, an
//! optimistic follow-the-regularized-leader learner that uses cost forecasts,
//! and the baselines and harness used to measure its policy regret.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod costs;
pub mod dac;
pub mod error;
pub mod harness;
pub mod optftrl;
pub mod oracle;
pub mod plant;

pub use error::{Error, Result};
