//! Experiment orchestration: config → stream → learner rounds → hindsight
//! baseline → Stackelberg regret report.
//!
//! Seeds. A config's `seed` is split per sweep cell and replicate with
//! [`derive_seed`]: the stream of cell `c` uses lane 0 and replicate `k`'s
//! learner uses lane `k + 1`. A plain `run` is cell 0, replicate 0. The
//! stream therefore does not depend on the replicate, so replicates of one
//! cell share their hindsight baseline and differ only in the learner's
//! perturbations.

pub mod config;
pub mod emit;
pub mod learner;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{hindsight_optimum, HindsightSolution};
use crate::costs::CostSpec;
use crate::environment::{realize_stream, AgentProfile, AgentStream, Environment, StochasticStream};
use crate::error::{Error, Result};
use crate::losses::{constants_with_floor, LossConstants, LossKind};
use crate::optimizer::Schedule;

pub use config::{ExperimentConfig, StreamConfig};
pub use learner::{play, Aborted, FeedbackKind, Learner, RoundRecord};

/// Smallest checkpoint used by the per-run log-log slope fit.
const SLOPE_MIN_T: usize = 16;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(seed) ^ cell) ^ lane)`
pub fn derive_seed(seed: u64, cell: u64, lane: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ cell) ^ lane)
}

/// Everything fixed before round 1.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kind: LossKind,
    pub n: usize,
    pub d: usize,
    /// Feasible radius `R2`.
    pub radius: f64,
    pub agents: Vec<AgentProfile>,
    pub theta_realized: f64,
    pub constants: LossConstants,
    pub schedule: Schedule,
    pub seed: u64,
    pub cell: u64,
    pub budget: config::BaselineBudget,
}

impl Prepared {
    pub fn learner_seed(&self, replicate: u64) -> u64 {
        derive_seed(self.seed, self.cell, replicate + 1)
    }

    /// Expected-regret bound at the realized strategic fraction.
    pub fn regret_bound(&self) -> f64 {
        self.schedule.regret_bound(self.theta_realized)
    }
}

/// Realizes the stream, checks cost admissibility, derives the loss
/// constants and the schedule.
pub fn prepare(config: &ExperimentConfig, cell: u64) -> Result<Prepared> {
    config.check()?;
    let d = config.d;
    let stream_seed = derive_seed(config.seed, cell, 0);
    let config_cost = match &config.cost {
        Some(c) => Some(c.build(d)?),
        None => None,
    };

    let stream = match &config.stream {
        StreamConfig::Scripted(_) => {
            let path = config.scripted_path().expect("scripted stream");
            let profiles = config::load_scripted(&path, d)?;
            if let Some(n) = config.n {
                if n != profiles.len() {
                    return Err(Error::Config(format!(
                        "n = {n} but {} holds {} agents",
                        path.display(),
                        profiles.len()
                    )));
                }
            }
            AgentStream::Scripted {
                profiles,
                r1: config.r1,
            }
        }
        StreamConfig::Stochastic(st) => AgentStream::Stochastic(StochasticStream {
            n: config.n.expect("checked"),
            d,
            r1: config.r1,
            theta: st.theta,
            sampler: st.sampler.clone(),
            bound: st.bound,
            cost: config_cost.clone(),
            seed: stream_seed,
        }),
    };
    let realized = realize_stream(&stream)?;
    let agents = realized.profiles;
    if agents.is_empty() {
        return Err(Error::Config("stream has no agents".into()));
    }
    let n = agents.len();

    // distinct cost specs that can show up in a strategic round
    let mut specs: Vec<&CostSpec> = Vec::new();
    let stochastic_strategic = matches!(&config.stream, StreamConfig::Stochastic(st) if st.theta > 0.0);
    let candidates = agents
        .iter()
        .filter_map(AgentProfile::cost)
        .chain(config_cost.as_ref().filter(|_| stochastic_strategic));
    for spec in candidates {
        if !specs.iter().rev().any(|s| *s == spec) {
            specs.push(spec);
        }
    }
    if !config.allow_degenerate && specs.iter().any(|s| s.is_degenerate()) {
        return Err(Error::Config(
            "cost power r = 1 needs \"allow_degenerate\": true".into(),
        ));
    }
    let floor = config
        .eps_floor
        .unwrap_or_else(|| specs.iter().map(|s| s.eps()).fold(f64::INFINITY, f64::min));
    if let Some(s) = specs.iter().find(|s| s.eps() < floor) {
        return Err(Error::Config(format!(
            "cost declares eps = {} below the experiment floor {floor}",
            s.eps()
        )));
    }
    let mut constants = LossConstants::non_strategic(config.r1, config.r2)?;
    for spec in specs.iter().filter(|s| !s.is_degenerate()) {
        constants = constants.max(constants_with_floor(spec, config.loss, config.r1, config.r2, floor)?);
    }

    let theta_hat = match (config.theta_hat, &config.stream) {
        (Some(th), _) => th,
        (None, StreamConfig::Scripted(_)) => realized.theta_realized,
        (None, StreamConfig::Stochastic(st)) => (st.theta * config.theta_slack).min(1.0),
    };
    let schedule = Schedule::new(n, d, config.r2, constants.m, constants.l, theta_hat)?;

    Ok(Prepared {
        kind: config.loss,
        n,
        d,
        radius: config.r2,
        agents,
        theta_realized: realized.theta_realized,
        constants,
        schedule,
        seed: config.seed,
        cell,
        budget: config.baseline,
    })
}

/// Plays replicate `replicate` of a prepared experiment.
pub fn run_learner(prep: &Prepared, replicate: u64) -> std::result::Result<Vec<RoundRecord>, Aborted> {
    let mut learner = Learner::new(prep.kind, prep.schedule, prep.learner_seed(replicate));
    let mut env = Environment::new(&prep.agents);
    play(&mut env, &mut learner)
}

/// Hindsight solutions over the full stream and over every checkpoint prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub full: HindsightSolution,
    /// `(t, solution over the first t agents)` for checkpoint rounds.
    pub prefixes: Vec<(usize, HindsightSolution)>,
}

/// Powers of two up to `n`, plus `n` itself.
pub fn checkpoint_rounds(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |t| t.checked_mul(2))
        .take_while(|&t| t <= n)
        .collect();
    if out.last() != Some(&n) && n > 0 {
        out.push(n);
    }
    out
}

pub fn solve_baselines(prep: &Prepared) -> Result<Baselines> {
    let solve = |t: usize| {
        hindsight_optimum(
            &prep.agents[..t],
            prep.kind,
            prep.radius,
            prep.d,
            prep.budget.iterations,
            prep.budget.tol,
        )
    };
    let rounds = checkpoint_rounds(prep.n);
    let mut prefixes: Vec<(usize, HindsightSolution)> = rounds
        .par_iter()
        .map(|&t| solve(t).map(|s| (t, s)))
        .collect::<Result<_>>()?;
    let full = prefixes.last().expect("n >= 1").1.clone();
    prefixes.sort_by_key(|(t, _)| *t);
    Ok(Baselines { full, prefixes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub cum_loss: f64,
    pub baseline_loss: f64,
    pub baseline_gap: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub n: usize,
    pub d: usize,
    pub theta_realized: f64,
    pub theta_hat: f64,
    pub delta: f64,
    pub eta: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub cum_loss: f64,
    pub baseline_loss: f64,
    pub baseline_gap: f64,
    pub regret: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub gamma_fit: Option<f64>,
    pub seed: u64,
}

/// `Σ_t loss_t − min_K Σ_t c_t(β)`.
pub fn stackelberg_regret(records: &[RoundRecord], baseline: &HindsightSolution) -> Result<f64> {
    if records.len() != baseline.rounds {
        return Err(Error::LengthMismatch(format!(
            "{} records against a baseline over {} rounds",
            records.len(),
            baseline.rounds
        )));
    }
    if let Some((i, r)) = records.iter().enumerate().find(|(i, r)| r.t != i + 1) {
        return Err(Error::LengthMismatch(format!("record {i} is round {}", r.t)));
    }
    Ok(records.iter().map(|r| r.loss).sum::<f64>() - baseline.total_loss)
}

/// Least-squares slope of `ln y` against `ln x` over points with `x, y > 0`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

pub fn assemble_report(prep: &Prepared, records: &[RoundRecord], baselines: &Baselines) -> Result<RegretReport> {
    let regret = stackelberg_regret(records, &baselines.full)?;
    let checkpoints: Vec<Checkpoint> = baselines
        .prefixes
        .iter()
        .map(|(t, sol)| {
            let cum_loss = records[t - 1].cum_loss;
            Checkpoint {
                t: *t,
                cum_loss,
                baseline_loss: sol.total_loss,
                baseline_gap: sol.certified_gap,
                regret: cum_loss - sol.total_loss,
            }
        })
        .collect();
    let slope_points: Vec<(f64, f64)> = checkpoints
        .iter()
        .filter(|c| c.t >= SLOPE_MIN_T)
        .map(|c| (c.t as f64, c.regret))
        .collect();
    Ok(RegretReport {
        n: prep.n,
        d: prep.d,
        theta_realized: prep.theta_realized,
        theta_hat: prep.schedule.theta_hat,
        delta: prep.schedule.delta,
        eta: prep.schedule.eta,
        m: prep.constants.m,
        l: prep.constants.l,
        c: prep.constants.c,
        cum_loss: records.last().map_or(0.0, |r| r.cum_loss),
        baseline_loss: baselines.full.total_loss,
        baseline_gap: baselines.full.certified_gap,
        regret,
        checkpoints,
        gamma_fit: log_log_slope(&slope_points),
        seed: prep.seed,
    })
}

/// One full run: cell 0, replicate 0. On failure the rounds completed so far
/// come back with the error.
pub fn run_experiment(config: &ExperimentConfig) -> std::result::Result<(Vec<RoundRecord>, RegretReport), Aborted> {
    let prep = prepare(config, 0)?;
    let records = run_learner(&prep, 0)?;
    let report = solve_baselines(&prep).and_then(|b| assemble_report(&prep, &records, &b));
    match report {
        Ok(report) => Ok((records, report)),
        Err(error) => Err(Aborted { records, error }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub theta: f64,
    pub n: usize,
    pub reports: Vec<RegretReport>,
    pub mean_regret: Option<f64>,
    pub std_regret: Option<f64>,
    /// Expected-regret bound at the cell's realized strategic fraction.
    pub regret_bound: Option<f64>,
    pub baseline_loss: Option<f64>,
    pub baseline_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSlope {
    pub theta: f64,
    /// Slope of `ln(mean regret)` against `ln n` across the cells of this θ.
    pub gamma_fit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub slopes: Vec<ThetaSlope>,
}

/// Runs every `(θ, n)` cell with `replicates` learner seeds each. Cells are
/// numbered θ-major; a failing cell records its error and the sweep goes on.
/// An explicit `theta_hat` in the config applies to every cell, so cells
/// with θ above it fail.
pub fn sweep(
    config: &ExperimentConfig,
    n_values: &[usize],
    theta_values: &[f64],
    replicates: usize,
) -> Result<SweepTable> {
    let StreamConfig::Stochastic(base_stream) = &config.stream else {
        return Err(Error::Config("sweeps need a stochastic stream".into()));
    };
    if n_values.is_empty() || theta_values.is_empty() || replicates == 0 {
        return Err(Error::Config("sweep grid and replicate count must be non-empty".into()));
    }

    let mut cells = Vec::new();
    for (i, &theta) in theta_values.iter().enumerate() {
        for (j, &n) in n_values.iter().enumerate() {
            let cell = (i * n_values.len() + j) as u64;
            let mut cfg = config.clone();
            cfg.n = Some(n);
            cfg.stream = StreamConfig::Stochastic(config::StochasticConfig {
                theta,
                ..base_stream.clone()
            });
            cells.push(run_cell(&cfg, cell, theta, n, replicates));
        }
    }
    let slopes = theta_values
        .iter()
        .map(|&theta| {
            let points: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.theta == theta)
                .filter_map(|c| c.mean_regret.map(|m| (c.n as f64, m)))
                .collect();
            ThetaSlope {
                theta,
                gamma_fit: log_log_slope(&points),
            }
        })
        .collect();
    Ok(SweepTable { cells, slopes })
}

fn run_cell(cfg: &ExperimentConfig, cell: u64, theta: f64, n: usize, replicates: usize) -> SweepCell {
    let failed = |error: Error| SweepCell {
        theta,
        n,
        reports: Vec::new(),
        mean_regret: None,
        std_regret: None,
        regret_bound: None,
        baseline_loss: None,
        baseline_gap: None,
        error: Some(error.to_string()),
    };
    let prep = match prepare(cfg, cell) {
        Ok(p) => p,
        Err(e) => return failed(e),
    };
    let baselines = match solve_baselines(&prep) {
        Ok(b) => b,
        Err(e) => return failed(e),
    };
    let reports: Result<Vec<RegretReport>> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let records = run_learner(&prep, k).map_err(|a| a.error)?;
            assemble_report(&prep, &records, &baselines)
        })
        .collect();
    let reports = match reports {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let k = reports.len() as f64;
    let mean = reports.iter().map(|r| r.regret).sum::<f64>() / k;
    let std = if reports.len() > 1 {
        (reports.iter().map(|r| (r.regret - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    SweepCell {
        theta,
        n,
        mean_regret: Some(mean),
        std_regret: Some(std),
        regret_bound: Some(prep.regret_bound()),
        baseline_loss: Some(baselines.full.total_loss),
        baseline_gap: Some(baselines.full.certified_gap),
        reports,
        error: None,
    }
}
