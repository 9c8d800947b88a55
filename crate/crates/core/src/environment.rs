//! Agents, agent streams and the learner-facing response interface.
//!
//! The learner never holds an [`AgentProfile`]. It talks to an
//! [`AgentOracle`], which hands back an [`Observation`] carrying only the
//! reported features and the label. Full-information quantities
//! ([`ground_truth_loss`] and friends) exist for the offline baseline and for
//! tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm2, scale};
use crate::losses::{
    nonstrategic_subgradient, observed_loss, strategic_exact_subgradient, strategic_loss_closed_form, LossKind,
};
use crate::optimizer::sample_unit_sphere;

/// Slack when checking `‖x‖₂ ≤ R1` on user-supplied points.
const RADIUS_SLACK: f64 = 1e-12;

/// One round's hidden agent. Label `+1` agents report truthfully, label `−1`
/// agents best-respond under their cost.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    x: Vec<f64>,
    y: i8,
    cost: Option<CostSpec>,
}

impl AgentProfile {
    pub fn non_strategic(x: Vec<f64>) -> Self {
        Self { x, y: 1, cost: None }
    }

    pub fn strategic(x: Vec<f64>, cost: CostSpec) -> Result<Self> {
        check_dim(cost.dim(), x.len())?;
        Ok(Self {
            x,
            y: -1,
            cost: Some(cost),
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> i8 {
        self.y
    }

    pub fn cost(&self) -> Option<&CostSpec> {
        self.cost.as_ref()
    }

    pub fn is_strategic(&self) -> bool {
        self.y == -1
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// All the learner gets to see of an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub xhat: Vec<f64>,
    pub y: i8,
}

/// Agent's reply to the deployed classifier.
pub fn respond(agent: &AgentProfile, beta: &[f64]) -> Result<Observation> {
    check_dim(agent.dim(), beta.len())?;
    let xhat = match &agent.cost {
        Some(cost) => cost.best_response(&agent.x, beta)?.xhat,
        None => agent.x.clone(),
    };
    Ok(Observation { xhat, y: agent.y })
}

/// Loss the agent induces at `β` once it has best-responded to `β`.
pub fn ground_truth_loss(agent: &AgentProfile, kind: LossKind, beta: &[f64]) -> Result<f64> {
    match &agent.cost {
        Some(cost) => strategic_loss_closed_form(cost, kind, &agent.x, beta),
        None => observed_loss(kind, &agent.x, agent.y, beta),
    }
}

/// Subgradient of [`ground_truth_loss`] in `β`.
pub fn ground_truth_subgradient(agent: &AgentProfile, kind: LossKind, beta: &[f64]) -> Result<Vec<f64>> {
    match &agent.cost {
        Some(cost) => strategic_exact_subgradient(cost, kind, &agent.x, beta),
        None => nonstrategic_subgradient(kind, &agent.x, beta),
    }
}

/// Per-round response channel used by the learner loop.
pub trait AgentOracle {
    /// Horizon.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reply of the round-`t` agent (0-based) to `beta`.
    fn respond(&mut self, t: usize, beta: &[f64]) -> Result<Observation>;
}

/// An oracle backed by a materialized stream.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    agents: &'a [AgentProfile],
}

impl<'a> Environment<'a> {
    pub fn new(agents: &'a [AgentProfile]) -> Self {
        Self { agents }
    }
}

impl AgentOracle for Environment<'_> {
    fn len(&self) -> usize {
        self.agents.len()
    }

    fn respond(&mut self, t: usize, beta: &[f64]) -> Result<Observation> {
        let agent = self
            .agents
            .get(t)
            .ok_or_else(|| Error::LengthMismatch(format!("round {t} beyond stream of {}", self.agents.len())))?;
        respond(agent, beta)
    }
}

/// How feature vectors are drawn in a stochastic stream. These are harness
/// conveniences, not part of the learning model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSampler {
    /// Uniform in the radius-`R1` ball.
    UniformBall,
    /// `x = y·center·e₁ + spread·N(0, I)`, brought back inside the
    /// radius-`R1` ball per the bound policy.
    TwoClusters { center: f64, spread: f64 },
}

/// What to do with sampled points outside the radius-`R1` ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundPolicy {
    /// Radially rescale onto the sphere of radius `R1`.
    #[default]
    Clip,
    /// Redraw until inside.
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticStream {
    pub n: usize,
    pub d: usize,
    pub r1: f64,
    /// Probability that a round is strategic.
    pub theta: f64,
    pub sampler: FeatureSampler,
    pub bound: BoundPolicy,
    /// Shared cost of every strategic agent; required when `theta > 0`.
    pub cost: Option<CostSpec>,
    pub seed: u64,
}

/// An oblivious adversary: the whole sequence is fixed before round 1.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentStream {
    Scripted { profiles: Vec<AgentProfile>, r1: f64 },
    Stochastic(StochasticStream),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizedStream {
    pub profiles: Vec<AgentProfile>,
    /// `#{t : y_t = −1} / n`
    pub theta_realized: f64,
}

pub fn strategic_fraction(profiles: &[AgentProfile]) -> f64 {
    if profiles.is_empty() {
        return 0.0;
    }
    profiles.iter().filter(|a| a.is_strategic()).count() as f64 / profiles.len() as f64
}

/// Materializes a stream. Deterministic given the stream's seed.
pub fn realize_stream(stream: &AgentStream) -> Result<RealizedStream> {
    let profiles = match stream {
        AgentStream::Scripted { profiles, r1 } => {
            if let Some(first) = profiles.first() {
                let d = first.dim();
                for (t, a) in profiles.iter().enumerate() {
                    if a.dim() != d {
                        return Err(Error::Config(format!(
                            "agent {t} has dimension {}, expected {d}",
                            a.dim()
                        )));
                    }
                    if norm2(&a.x) > r1 + RADIUS_SLACK {
                        return Err(Error::Config(format!(
                            "agent {t} has ||x||_2 = {} > R1 = {r1}",
                            norm2(&a.x)
                        )));
                    }
                }
            }
            profiles.clone()
        }
        AgentStream::Stochastic(s) => sample_stream(s)?,
    };
    let theta_realized = strategic_fraction(&profiles);
    Ok(RealizedStream {
        profiles,
        theta_realized,
    })
}

fn sample_stream(s: &StochasticStream) -> Result<Vec<AgentProfile>> {
    if !(0.0..=1.0).contains(&s.theta) {
        return Err(Error::Config(format!(
            "strategic probability {} must lie in [0, 1]",
            s.theta
        )));
    }
    if s.d == 0 {
        return Err(Error::Config("d must be positive".into()));
    }
    match &s.cost {
        Some(cost) if cost.dim() != s.d => {
            return Err(Error::Config(format!(
                "cost dimension {} does not match d = {}",
                cost.dim(),
                s.d
            )));
        }
        None if s.theta > 0.0 => return Err(Error::Config("strategic rounds need a cost".into())),
        _ => {}
    }
    if !(s.r1 > 0.0) {
        return Err(Error::Config(format!("R1 = {} must be positive", s.r1)));
    }
    if let FeatureSampler::TwoClusters { center, spread } = s.sampler {
        if !(spread >= 0.0) || !center.is_finite() {
            return Err(Error::Config(
                "two-cluster sampler needs finite center and spread >= 0".into(),
            ));
        }
        if s.bound == BoundPolicy::Reject && center.abs() > s.r1 && spread == 0.0 {
            return Err(Error::Config(
                "cluster center lies outside R1 with zero spread; rejection would never end".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut out = Vec::with_capacity(s.n);
    for _ in 0..s.n {
        let strategic = rng.random::<f64>() < s.theta;
        let y: i8 = if strategic { -1 } else { 1 };
        let x = sample_features(&mut rng, s, y);
        out.push(if let (true, Some(cost)) = (strategic, &s.cost) {
            AgentProfile::strategic(x, cost.clone())?
        } else {
            AgentProfile::non_strategic(x)
        });
    }
    Ok(out)
}

fn sample_features(rng: &mut ChaCha8Rng, s: &StochasticStream, y: i8) -> Vec<f64> {
    match s.sampler {
        FeatureSampler::UniformBall => {
            let dir = sample_unit_sphere(rng, s.d);
            let radius = s.r1 * rng.random::<f64>().powf(1.0 / s.d as f64);
            scale(&dir, radius)
        }
        FeatureSampler::TwoClusters { center, spread } => loop {
            let mut x: Vec<f64> = (0..s.d)
                .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            x[0] += f64::from(y) * center;
            let n = norm2(&x);
            if n <= s.r1 {
                break x;
            }
            if s.bound == BoundPolicy::Clip {
                break scale(&x, s.r1 / n);
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad() -> CostSpec {
        CostSpec::identity(2, 2.0, 2.0).unwrap()
    }

    fn stochastic(theta: f64, n: usize, sampler: FeatureSampler) -> StochasticStream {
        StochasticStream {
            n,
            d: 2,
            r1: 1.0,
            theta,
            sampler,
            bound: BoundPolicy::Clip,
            cost: Some(quad()),
            seed: 17,
        }
    }

    #[test]
    fn non_strategic_passthrough() {
        let a = AgentProfile::non_strategic(vec![1.0, 1.0]);
        let obs = respond(&a, &[5.0, -3.0]).unwrap();
        assert_eq!(
            obs,
            Observation {
                xhat: vec![1.0, 1.0],
                y: 1
            }
        );
    }

    #[test]
    fn strategic_moves_along_beta() {
        let a = AgentProfile::strategic(vec![1.0, 0.0], quad()).unwrap();
        assert_eq!(respond(&a, &[0.0, 2.0]).unwrap().xhat, vec![1.0, 2.0]);
        assert_eq!(respond(&a, &[0.0, 0.0]).unwrap().xhat, vec![1.0, 0.0]);
        assert_eq!(respond(&a, &[0.0, 0.0]).unwrap().y, -1);
    }

    #[test]
    fn degenerate_agent_propagates_unbounded() {
        let a = AgentProfile::strategic(vec![0.0, 0.0], CostSpec::identity(2, 2.0, 1.0).unwrap()).unwrap();
        assert!(respond(&a, &[0.5, 0.5]).is_ok());
        assert!(matches!(respond(&a, &[1.0, 1.0]), Err(Error::UnboundedResponse { .. })));
    }

    #[test]
    fn ground_truth_losses() {
        let pos = AgentProfile::non_strategic(vec![1.0, 0.0]);
        assert_eq!(ground_truth_loss(&pos, LossKind::Hinge, &[2.0, 0.0]).unwrap(), 0.0);
        let neg = AgentProfile::strategic(vec![1.0, 0.0], quad()).unwrap();
        assert_abs_diff_eq!(
            ground_truth_loss(&neg, LossKind::Hinge, &[-0.5, 0.0]).unwrap(),
            0.75,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ground_truth_loss(&neg, LossKind::Logistic, &[0.0, 0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn observation_matches_ground_truth() {
        let neg = AgentProfile::strategic(vec![0.3, -0.6], quad()).unwrap();
        let beta = [0.7, 1.1];
        let obs = respond(&neg, &beta).unwrap();
        let seen = observed_loss(LossKind::Logistic, &obs.xhat, obs.y, &beta).unwrap();
        let truth = ground_truth_loss(&neg, LossKind::Logistic, &beta).unwrap();
        assert!((seen - truth).abs() < 1e-12);
    }

    #[test]
    fn scripted_stream_in_order() {
        let profiles = vec![
            AgentProfile::non_strategic(vec![0.1, 0.0]),
            AgentProfile::strategic(vec![0.0, 0.2], quad()).unwrap(),
            AgentProfile::non_strategic(vec![0.0, 0.3]),
        ];
        let real = realize_stream(&AgentStream::Scripted {
            profiles: profiles.clone(),
            r1: 1.0,
        })
        .unwrap();
        assert_eq!(real.profiles, profiles);
        assert_abs_diff_eq!(real.theta_realized, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn scripted_stream_checks_radius_and_dims() {
        let far = vec![AgentProfile::non_strategic(vec![2.0, 0.0])];
        assert!(matches!(
            realize_stream(&AgentStream::Scripted { profiles: far, r1: 1.0 }),
            Err(Error::Config(_))
        ));
        let mixed = vec![
            AgentProfile::non_strategic(vec![0.0, 0.0]),
            AgentProfile::non_strategic(vec![0.0]),
        ];
        assert!(matches!(
            realize_stream(&AgentStream::Scripted {
                profiles: mixed,
                r1: 1.0
            }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_theta_stream_is_truthful() {
        let real = realize_stream(&AgentStream::Stochastic(stochastic(
            0.0,
            100,
            FeatureSampler::UniformBall,
        )))
        .unwrap();
        assert_eq!(real.profiles.len(), 100);
        assert!(real.profiles.iter().all(|a| a.y() == 1));
        assert_eq!(real.theta_realized, 0.0);
    }

    #[test]
    fn strategic_fraction_concentrates() {
        let real = realize_stream(&AgentStream::Stochastic(stochastic(
            0.5,
            10_000,
            FeatureSampler::UniformBall,
        )))
        .unwrap();
        let band = 3.0 * 10_000f64.powf(-0.5) * 0.5;
        assert!((real.theta_realized - 0.5).abs() < band);
    }

    #[test]
    fn samples_respect_radius() {
        for bound in [BoundPolicy::Clip, BoundPolicy::Reject] {
            let mut s = stochastic(
                0.5,
                2000,
                FeatureSampler::TwoClusters {
                    center: 0.8,
                    spread: 0.5,
                },
            );
            s.bound = bound;
            let real = realize_stream(&AgentStream::Stochastic(s)).unwrap();
            assert!(real.profiles.iter().all(|a| norm2(a.x()) <= 1.0 + 1e-12));
        }
        let real = realize_stream(&AgentStream::Stochastic(stochastic(
            0.5,
            2000,
            FeatureSampler::UniformBall,
        )))
        .unwrap();
        assert!(real.profiles.iter().all(|a| norm2(a.x()) <= 1.0));
    }

    #[test]
    fn stochastic_stream_is_deterministic() {
        let s = AgentStream::Stochastic(stochastic(
            0.3,
            500,
            FeatureSampler::TwoClusters {
                center: 0.5,
                spread: 0.2,
            },
        ));
        assert_eq!(realize_stream(&s).unwrap(), realize_stream(&s).unwrap());
    }

    #[test]
    fn bad_theta_rejected() {
        let s = AgentStream::Stochastic(stochastic(1.5, 5, FeatureSampler::UniformBall));
        assert!(matches!(realize_stream(&s), Err(Error::Config(_))));
    }

    #[test]
    fn environment_oracle_bounds() {
        let agents = vec![AgentProfile::non_strategic(vec![1.0])];
        let mut env = Environment::new(&agents);
        assert_eq!(env.len(), 1);
        assert!(env.respond(0, &[0.0]).is_ok());
        assert!(matches!(env.respond(1, &[0.0]), Err(Error::LengthMismatch(_))));
    }
}
