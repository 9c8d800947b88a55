//! Projected subgradient descent with mixture feedback.
//!
//! Each round the learner deploys `β⁺ = β + δ·S` with `S` uniform on the unit
//! sphere. Non-strategic rounds hand back an exact subgradient at `β`;
//! strategic rounds only reveal the loss at `β⁺`, turned into the one-point
//! estimate `(d/δ)·c(β⁺)·S` of the gradient of the δ-smoothed loss. The
//! iterate is then projected onto `K_δ`, the ℓ₂ ball of radius `(1 − δ)·R`,
//! which keeps every deployed `β⁺` inside the radius-`R` ball.
//!
//! Randomness comes from a `ChaCha8Rng` seeded with `seed_from_u64`, so a
//! seed fixes the whole perturbation sequence on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, norm2, project_ball};

/// Step-size and smoothing schedule, fixed for the whole horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n: usize,
    pub d: usize,
    /// Radius of the feasible ball `K`.
    pub radius: f64,
    pub m: f64,
    pub l: f64,
    pub theta_hat: f64,
    pub delta: f64,
    pub eta: f64,
}

impl Schedule {
    /// `δ = θ̂^{1/4}·sqrt(dMR / (L(R+3)))·n^{−1/4}` and
    /// `η = R / sqrt(n·(θ̂·d²M²/δ² + (1−θ̂)·L²))`.
    pub fn new(n: usize, d: usize, radius: f64, m: f64, l: f64, theta_hat: f64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidSchedule("horizon and dimension must be positive".into()));
        }
        if !(radius >= 1.0 && radius.is_finite()) {
            return Err(Error::InvalidSchedule(format!("radius {radius} must be >= 1")));
        }
        if !(m > 0.0 && m.is_finite() && l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "loss constants M = {m}, L = {l} must be positive"
            )));
        }
        if !(0.0..=1.0).contains(&theta_hat) {
            return Err(Error::InvalidSchedule(format!(
                "theta_hat {theta_hat} must lie in [0, 1]"
            )));
        }
        let nf = n as f64;
        let df = d as f64;
        let (delta, eta) = if theta_hat == 0.0 {
            (0.0, radius / (l * nf.sqrt()))
        } else {
            let delta = theta_hat.powf(0.25) * (df * m * radius / (l * (radius + 3.0))).sqrt() * nf.powf(-0.25);
            let var = theta_hat * df * df * m * m / (delta * delta) + (1.0 - theta_hat) * l * l;
            (delta, radius / (nf * var).sqrt())
        };
        if delta >= 1.0 {
            return Err(Error::ScheduleInfeasible { delta });
        }
        Ok(Self {
            n,
            d,
            radius,
            m,
            l,
            theta_hat,
            delta,
            eta,
        })
    }

    /// Radius of `K_δ`.
    pub fn shrunk_radius(&self) -> f64 {
        (1.0 - self.delta) * self.radius
    }

    /// Expected-regret bound for a stream whose strategic fraction is
    /// `theta`, evaluated with this schedule's `δ` and `η`:
    /// `η/2·[nθ·d²M²/δ² + n(1−θ)L²] + R²/(2η) + 3nLδ + nLRδ`.
    pub fn regret_bound(&self, theta: f64) -> f64 {
        let n = self.n as f64;
        let d = self.d as f64;
        let strategic = if theta == 0.0 {
            0.0
        } else if self.delta == 0.0 {
            return f64::INFINITY;
        } else {
            n * theta * d * d * self.m * self.m / (self.delta * self.delta)
        };
        let variance = strategic + n * (1.0 - theta) * self.l * self.l;
        self.eta / 2.0 * variance
            + self.radius * self.radius / (2.0 * self.eta)
            + 3.0 * n * self.l * self.delta
            + n * self.l * self.radius * self.delta
    }
}

/// What the learner hands back after a round.
#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    /// Exact subgradient of the round loss at the undeployed iterate `β_t`.
    NonStrategic { subgradient: Vec<f64> },
    /// Loss value observed at the deployed point `β_t⁺`.
    Strategic { loss_at_plus: f64 },
}

impl Feedback {
    pub fn kind(&self) -> &'static str {
        match self {
            Feedback::NonStrategic { .. } => "nonstrategic",
            Feedback::Strategic { .. } => "strategic",
        }
    }
}

/// Uniform draw from the unit sphere in `R^d` via a normalized Gaussian.
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm2(&g);
        if n > 0.0 && n.is_finite() {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Learner iterate plus its private randomness. Single owner; move it
/// between threads freely but never share it mutably.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    beta: Vec<f64>,
    t: usize,
    last_perturbation: Option<Vec<f64>>,
    proposed: bool,
    rng: ChaCha8Rng,
}

impl OptimizerState {
    /// Starts at the origin, the center of `K_δ`.
    pub fn new(d: usize, seed: u64) -> Self {
        Self {
            beta: vec![0.0; d],
            t: 0,
            last_perturbation: None,
            proposed: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Starts from an arbitrary point, projected into `K_δ`.
    pub fn with_start(beta: Vec<f64>, schedule: &Schedule, seed: u64) -> Result<Self> {
        check_dim(schedule.d, beta.len())?;
        let mut state = Self::new(schedule.d, seed);
        state.beta = project_ball(&beta, schedule.shrunk_radius());
        Ok(state)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.t
    }

    pub fn last_perturbation(&self) -> Option<&[f64]> {
        self.last_perturbation.as_deref()
    }

    /// Draws this round's direction and returns the point to deploy. With
    /// `δ = 0` no direction is drawn and `β` itself is deployed.
    pub fn propose(&mut self, schedule: &Schedule) -> Vec<f64> {
        self.proposed = true;
        if schedule.delta == 0.0 {
            self.last_perturbation = None;
            return self.beta.clone();
        }
        let dir = sample_unit_sphere(&mut self.rng, schedule.d);
        let plus = axpy(&self.beta, schedule.delta, &dir);
        self.last_perturbation = Some(dir);
        plus
    }

    /// Takes the projected step `β ← Π_{K_δ}(β − η·g)`.
    pub fn update(&mut self, schedule: &Schedule, feedback: &Feedback) -> Result<()> {
        if !self.proposed {
            return Err(Error::MissingProposal);
        }
        let g = match feedback {
            Feedback::NonStrategic { subgradient } => {
                check_dim(schedule.d, subgradient.len())?;
                subgradient.clone()
            }
            Feedback::Strategic { loss_at_plus } => {
                let dir = match (&self.last_perturbation, schedule.delta > 0.0) {
                    (Some(dir), true) => dir,
                    _ => return Err(Error::ZeroSmoothingStrategicRound { t: self.t + 1 }),
                };
                let k = schedule.d as f64 / schedule.delta * loss_at_plus;
                dir.iter().map(|s| k * s).collect()
            }
        };
        let stepped = axpy(&self.beta, -schedule.eta, &g);
        self.beta = project_ball(&stepped, schedule.shrunk_radius());
        self.t += 1;
        self.last_perturbation = None;
        self.proposed = false;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn schedule(d: usize, delta: f64, eta: f64, radius: f64) -> Schedule {
        Schedule {
            n: 1,
            d,
            radius,
            m: 1.0,
            l: 1.0,
            theta_hat: if delta > 0.0 { 1.0 } else { 0.0 },
            delta,
            eta,
        }
    }

    #[test]
    fn schedule_formula() {
        let s = Schedule::new(10_000, 2, 2.0, 7.0, 5.0, 1.0).unwrap();
        // independent recomputation
        let delta = (2.0_f64 * 7.0 * 2.0 / (5.0 * 5.0)).sqrt() * 10_000f64.powf(-0.25);
        assert_abs_diff_eq!(s.delta, delta, epsilon = 1e-15);
        assert_abs_diff_eq!(s.delta, 0.105_830_052_442_583_6, epsilon = 1e-12);
        let eta = 2.0 / (10_000.0 * (4.0 * 49.0 / (delta * delta))).sqrt();
        assert_abs_diff_eq!(s.eta, eta, epsilon = 1e-15);
    }

    #[test]
    fn zero_theta_is_plain_gradient_descent() {
        let s = Schedule::new(400, 3, 2.0, 7.0, 5.0, 0.0).unwrap();
        assert_eq!(s.delta, 0.0);
        assert_eq!(s.eta, 2.0 / (5.0 * 20.0));
    }

    #[test]
    fn infeasible_schedule() {
        assert!(matches!(
            Schedule::new(1, 10, 1.0, 100.0, 1.0, 1.0),
            Err(Error::ScheduleInfeasible { .. })
        ));
    }

    #[test]
    fn invalid_inputs() {
        assert!(Schedule::new(0, 2, 2.0, 1.0, 1.0, 0.5).is_err());
        assert!(Schedule::new(10, 2, 0.5, 1.0, 1.0, 0.5).is_err());
        assert!(Schedule::new(10, 2, 2.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn one_sphere_is_plus_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut plus = 0;
        for _ in 0..2000 {
            let s = sample_unit_sphere(&mut rng, 1);
            assert!(s[0] == 1.0 || s[0] == -1.0);
            if s[0] > 0.0 {
                plus += 1;
            }
        }
        // 2000 fair coin flips: 4.5 sigma band
        assert!((plus as f64 - 1000.0).abs() < 4.5 * 22.37);
    }

    #[test]
    fn sphere_samples_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in [2, 3, 7, 50] {
            let s = sample_unit_sphere(&mut rng, d);
            assert!((norm2(&s) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut mean = [0.0; 2];
        let mut second = [0.0; 2];
        for _ in 0..n {
            let s = sample_unit_sphere(&mut rng, 2);
            for i in 0..2 {
                mean[i] += s[i] / n as f64;
                second[i] += s[i] * s[i] / n as f64;
            }
        }
        let band = 3.0 * (n as f64).powf(-0.5) * 0.5_f64.sqrt();
        for i in 0..2 {
            assert!(mean[i].abs() < band, "coordinate {i} mean {}", mean[i]);
            assert!((second[i] - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn propose_without_smoothing_is_identity() {
        let s = schedule(2, 0.0, 0.1, 2.0);
        let mut st = OptimizerState::with_start(vec![0.3, -0.4], &s, 0).unwrap();
        assert_eq!(st.propose(&s), vec![0.3, -0.4]);
        assert!(st.last_perturbation().is_none());
    }

    #[test]
    fn propose_from_origin_has_length_delta() {
        let s = schedule(2, 0.1, 0.1, 2.0);
        let mut st = OptimizerState::new(2, 5);
        let plus = st.propose(&s);
        assert_abs_diff_eq!(norm2(&plus), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(norm2(st.last_perturbation().unwrap()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn proposals_from_boundary_stay_in_ball() {
        let s = schedule(3, 0.2, 0.1, 1.5);
        let edge = vec![(1.0 - 0.2) * 1.5, 0.0, 0.0];
        let mut st = OptimizerState::with_start(edge, &s, 1).unwrap();
        for _ in 0..200 {
            let plus = st.propose(&s);
            assert!(norm2(&plus) <= 1.5 + 1e-12);
            st.update(
                &s,
                &Feedback::NonStrategic {
                    subgradient: vec![-100.0, 0.0, 0.0],
                },
            )
            .unwrap();
        }
    }

    #[test]
    fn strategic_update_uses_stored_direction() {
        let s = schedule(2, 0.1, 0.01, 2.0);
        let mut st = OptimizerState::new(2, 0);
        st.propose(&s);
        st.last_perturbation = Some(vec![1.0, 0.0]);
        st.update(&s, &Feedback::Strategic { loss_at_plus: 0.5 }).unwrap();
        assert_abs_diff_eq!(st.beta()[0], -0.1, epsilon = 1e-15);
        assert_eq!(st.beta()[1], 0.0);
        assert_eq!(st.round(), 1);
        assert!(st.last_perturbation().is_none());
    }

    #[test]
    fn nonstrategic_update_is_gradient_step() {
        let s = schedule(2, 0.0, 0.5, 2.0);
        let mut st = OptimizerState::new(2, 0);
        st.propose(&s);
        st.update(
            &s,
            &Feedback::NonStrategic {
                subgradient: vec![1.0, 0.0],
            },
        )
        .unwrap();
        assert_eq!(st.beta(), &[-0.5, 0.0]);
    }

    #[test]
    fn update_projects_onto_shrunk_ball() {
        let s = schedule(2, 0.1, 1.0, 2.0);
        let mut st = OptimizerState::new(2, 0);
        st.propose(&s);
        st.update(
            &s,
            &Feedback::NonStrategic {
                subgradient: vec![-10.0, 0.0],
            },
        )
        .unwrap();
        assert_abs_diff_eq!(st.beta()[0], 1.8, epsilon = 1e-15);
        assert_eq!(st.beta()[1], 0.0);
    }

    #[test]
    fn strategic_round_without_smoothing_fails() {
        let s = schedule(2, 0.0, 0.1, 2.0);
        let mut st = OptimizerState::new(2, 0);
        st.propose(&s);
        assert!(matches!(
            st.update(&s, &Feedback::Strategic { loss_at_plus: 1.0 }),
            Err(Error::ZeroSmoothingStrategicRound { t: 1 })
        ));
    }

    #[test]
    fn update_requires_propose() {
        let s = schedule(2, 0.1, 0.1, 2.0);
        let mut st = OptimizerState::new(2, 0);
        assert!(matches!(
            st.update(&s, &Feedback::Strategic { loss_at_plus: 1.0 }),
            Err(Error::MissingProposal)
        ));
    }

    #[test]
    fn regret_bound_matches_simplified_form_at_tuned_schedule() {
        // with θ̂ = θ the bound collapses to
        // sqrt(θd²M²/δ² + (1−θ)L²)·sqrt(n)·R + nδL(R+3)
        let s = Schedule::new(10_000, 2, 2.0, 7.0, 5.0, 0.5).unwrap();
        let n = 10_000.0_f64;
        let var = 0.5 * 4.0 * 49.0 / (s.delta * s.delta) + 0.5 * 25.0;
        let simplified = var.sqrt() * n.sqrt() * 2.0 + n * s.delta * 5.0 * 5.0;
        assert_abs_diff_eq!(s.regret_bound(0.5), simplified, epsilon = 1e-6 * simplified);
    }
}
