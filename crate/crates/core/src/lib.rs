//! Online linear classification against strategic agents.
//!
//! Negative-label agents see the deployed classifier and move their features
//! to maximize `⟨β, x̂⟩ − (1/r)‖A(x̂ − x)‖_p^r`. The learner never sees the
//! true features or the cost, only the reported point and the label, so on
//! strategic rounds it falls back to one-point bandit feedback while
//! non-strategic rounds still yield exact subgradients.
//!
//! - [`costs`]: manipulation costs, conjugates, closed-form best responses
//! - [`losses`]: logistic and hinge losses and their regret constants
//! - [`optimizer`]: the mixture-feedback projected descent learner
//! - [`environment`]: agents, streams and the learner-facing oracle
//! - [`baseline`]: the best classifier in hindsight and numeric oracles
//! - [`harness`]: experiment configs, the round loop, reports and output

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod costs;
pub mod environment;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod optimizer;

pub use error::{Error, Result};
