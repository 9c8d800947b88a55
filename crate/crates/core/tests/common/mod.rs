#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stratlearn::costs::CostSpec;
use stratlearn::environment::{AgentOracle, AgentProfile, Observation};
use stratlearn::harness::RoundRecord;
use stratlearn::{Error, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `I + 0.4·U/√d` with `U` uniform in `[−1, 1]`; retried until the smallest
/// singular value clears 0.2.
pub fn well_conditioned(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    loop {
        let scale = 0.4 / (d as f64).sqrt();
        let a = DMatrix::from_fn(d, d, |i, j| {
            f64::from(u8::from(i == j)) + scale * rng.random_range(-1.0..1.0)
        });
        let sv = a.singular_values();
        if sv.min() > 0.2 {
            return a;
        }
    }
}

pub fn random_spec(rng: &mut ChaCha8Rng, p: f64, r: f64, d: usize) -> CostSpec {
    CostSpec::new(p, r, well_conditioned(rng, d), 0.2).expect("well-conditioned transform")
}

pub fn uniform_cube(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-half..half)).collect()
}

/// Uniform in the radius-`radius` ℓ₂ ball by rejection from the cube.
pub fn in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let v = uniform_cube(rng, d, radius);
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius {
            return v;
        }
    }
}

/// Random direction scaled to a norm drawn from `[lo, hi]`.
pub fn with_norm(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    let v = in_ball(rng, d, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let target = rng.random_range(lo..hi);
    v.iter().map(|x| x / n * target).collect()
}

/// `sup_w ⟨β, w⟩ − (1/r)‖A w‖_p^r` over the square of half-width
/// `10·‖β‖₂` in `d = 2`, by a coarse grid followed by repeated local zooms.
/// Uses nothing from the crate but the raw transform.
pub fn grid_conjugate(a: &DMatrix<f64>, p: f64, r: f64, beta: &[f64]) -> f64 {
    assert_eq!(a.nrows(), 2);
    let norm_p = |z: [f64; 2]| -> f64 {
        if p.is_infinite() {
            z[0].abs().max(z[1].abs())
        } else {
            (z[0].abs().powf(p) + z[1].abs().powf(p)).powf(1.0 / p)
        }
    };
    let value = |w0: f64, w1: f64| {
        let z = [a[(0, 0)] * w0 + a[(0, 1)] * w1, a[(1, 0)] * w0 + a[(1, 1)] * w1];
        beta[0] * w0 + beta[1] * w1 - norm_p(z).powf(r) / r
    };
    let half = 10.0 * (beta[0] * beta[0] + beta[1] * beta[1]).sqrt();
    let (mut c0, mut c1, mut h) = (0.0, 0.0, half);
    let steps = 400;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..8 {
        let cell = 2.0 * h / steps as f64;
        let (mut b0, mut b1) = (c0, c1);
        for i in 0..=steps {
            let w0 = c0 - h + cell * i as f64;
            for j in 0..=steps {
                let w1 = c1 - h + cell * j as f64;
                let v = value(w0, w1);
                if v > best {
                    best = v;
                    b0 = w0;
                    b1 = w1;
                }
            }
        }
        c0 = b0;
        c1 = b1;
        h = 4.0 * cell;
    }
    best
}

/// Plays back recorded observations. Holds no agent profiles, so a learner
/// that reproduces a run against it cannot have read anything else. Panics
/// if the learner deploys a point other than the recorded one.
pub struct ReplayOracle {
    pub observations: Vec<Observation>,
    pub deployed: Vec<Vec<f64>>,
    pub calls: usize,
}

impl ReplayOracle {
    pub fn from_records(records: &[RoundRecord]) -> Self {
        Self {
            observations: records
                .iter()
                .map(|r| Observation {
                    xhat: r.xhat.clone(),
                    y: r.y,
                })
                .collect(),
            deployed: records.iter().map(|r| r.beta_plus.clone()).collect(),
            calls: 0,
        }
    }
}

impl AgentOracle for ReplayOracle {
    fn len(&self) -> usize {
        self.observations.len()
    }

    fn respond(&mut self, t: usize, beta: &[f64]) -> Result<Observation> {
        self.calls += 1;
        let expected = &self.deployed[t];
        assert!(
            expected.iter().zip(beta).all(|(a, b)| a.to_bits() == b.to_bits()),
            "round {t}: deployed {beta:?}, recorded {expected:?}"
        );
        self.observations
            .get(t)
            .cloned()
            .ok_or_else(|| Error::LengthMismatch(format!("round {t}")))
    }
}

/// One negative agent at `x = (1, 0)` with `p = r = 2`, `A = I`. Its hinge
/// loss is `1 + β₁ + ‖β‖²`, minimized at `β = (−1/2, 0)` with value 3/4.
pub fn single_strategic() -> Vec<AgentProfile> {
    let spec = CostSpec::identity(2, 2.0, 2.0).unwrap();
    vec![AgentProfile::strategic(vec![1.0, 0.0], spec).unwrap()]
}
