//! The learner's side of the protocol. Everything here is driven by
//! [`Observation`]s alone; no agent profile is reachable from this module.

use serde::{Deserialize, Serialize};

use crate::environment::{AgentOracle, Observation};
use crate::error::{Error, Result};
use crate::losses::{nonstrategic_subgradient, observed_loss, LossKind};
use crate::optimizer::{Feedback, OptimizerState, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    NonStrategic,
    Strategic,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackKind::NonStrategic => "nonstrategic",
            FeedbackKind::Strategic => "strategic",
        }
    }
}

/// One logged round. `loss` is recomputable as
/// `observed_loss(kind, xhat, y, beta_plus)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub t: usize,
    pub y: i8,
    pub loss: f64,
    pub cum_loss: f64,
    pub feedback: FeedbackKind,
    pub beta_plus: Vec<f64>,
    pub xhat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Learner {
    kind: LossKind,
    schedule: Schedule,
    state: OptimizerState,
    cum_loss: f64,
}

impl Learner {
    pub fn new(kind: LossKind, schedule: Schedule, seed: u64) -> Self {
        Self {
            kind,
            schedule,
            state: OptimizerState::new(schedule.d, seed),
            cum_loss: 0.0,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn beta(&self) -> &[f64] {
        self.state.beta()
    }

    /// Commits to this round's classifier `β⁺`.
    pub fn deploy(&mut self) -> Vec<f64> {
        self.state.propose(&self.schedule)
    }

    /// Suffers the loss of the observed report at `beta_plus` and updates.
    pub fn learn(&mut self, beta_plus: &[f64], obs: &Observation) -> Result<RoundRecord> {
        let loss = observed_loss(self.kind, &obs.xhat, obs.y, beta_plus)?;
        let (feedback, kind) = if obs.y == 1 {
            // truthful report: x̂ = x, so the exact subgradient at β_t is computable
            let subgradient = nonstrategic_subgradient(self.kind, &obs.xhat, self.state.beta())?;
            (Feedback::NonStrategic { subgradient }, FeedbackKind::NonStrategic)
        } else {
            (Feedback::Strategic { loss_at_plus: loss }, FeedbackKind::Strategic)
        };
        self.state.update(&self.schedule, &feedback)?;
        self.cum_loss += loss;
        Ok(RoundRecord {
            t: self.state.round(),
            y: obs.y,
            loss,
            cum_loss: self.cum_loss,
            feedback: kind,
            beta_plus: beta_plus.to_vec(),
            xhat: obs.xhat.clone(),
        })
    }
}

/// A run that stopped early, with the rounds completed before the failure.
#[derive(Debug)]
pub struct Aborted {
    pub records: Vec<RoundRecord>,
    pub error: Error,
}

impl From<Error> for Aborted {
    fn from(error: Error) -> Self {
        Self {
            records: Vec::new(),
            error,
        }
    }
}

/// Plays every round of `oracle` against `learner`.
pub fn play<O: AgentOracle + ?Sized>(
    oracle: &mut O,
    learner: &mut Learner,
) -> std::result::Result<Vec<RoundRecord>, Aborted> {
    let mut records = Vec::with_capacity(oracle.len());
    for t in 0..oracle.len() {
        let beta_plus = learner.deploy();
        let step = oracle
            .respond(t, &beta_plus)
            .and_then(|obs| learner.learn(&beta_plus, &obs));
        match step {
            Ok(rec) => records.push(rec),
            Err(error) => return Err(Aborted { records, error }),
        }
    }
    Ok(records)
}
