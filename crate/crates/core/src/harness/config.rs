//! JSON experiment configs and the scripted-agent CSV format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baseline::{DEFAULT_ITERATIONS, DEFAULT_TOL};
use crate::costs::CostSpec;
use crate::environment::{AgentProfile, BoundPolicy, FeatureSampler};
use crate::error::{Error, Result};
use crate::losses::LossKind;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_THETA_SLACK: f64 = 1.1;
pub const DEFAULT_REPLICATES: usize = 20;

/// Norm exponent in `[1, ∞]`; written as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Exponent(v)),
            Raw::Text(t) => parse_exponent(&t).map(Exponent).map_err(serde::de::Error::custom),
        }
    }
}

fn parse_exponent(text: &str) -> std::result::Result<f64, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        other => other.parse::<f64>().map_err(|_| format!("bad exponent {text:?}")),
    }
}

/// Manipulation cost shared by all strategic agents of a stochastic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub p: Exponent,
    pub r: f64,
    /// Row-major `d×d` transform; identity when omitted.
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    pub eps: f64,
}

impl CostConfig {
    pub fn build(&self, d: usize) -> Result<CostSpec> {
        match &self.a {
            Some(a) => CostSpec::from_row_major(self.p.0, self.r, d, a, self.eps),
            None => CostSpec::new(self.p.0, self.r, nalgebra::DMatrix::identity(d, d), self.eps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticConfig {
    /// Probability that a round is strategic.
    pub theta: f64,
    #[serde(default = "default_sampler")]
    pub sampler: FeatureSampler,
    #[serde(default)]
    pub bound: BoundPolicy,
}

fn default_sampler() -> FeatureSampler {
    FeatureSampler::UniformBall
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamConfig {
    /// CSV of agents, relative paths resolved against the config's directory.
    Scripted(PathBuf),
    Stochastic(StochasticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineBudget {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Relative tolerance on the certified gap.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for BaselineBudget {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            tol: DEFAULT_TOL,
        }
    }
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_slack() -> f64 {
    DEFAULT_THETA_SLACK
}
fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Horizon. Optional for scripted streams, where it defaults to the
    /// number of rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub d: usize,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    pub loss: LossKind,
    pub stream: StreamConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
    /// Experiment-wide floor on every transform's smallest singular value.
    /// Defaults to the smallest `eps` declared by any cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_floor: Option<f64>,
    /// Upper bound on the strategic fraction used by the schedule. When
    /// absent: the exact fraction for scripted streams, `min(1, θ·slack)`
    /// for stochastic ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<f64>,
    #[serde(default = "default_slack")]
    pub theta_slack: f64,
    /// Admit `r = 1` agents, whose best response may be unbounded.
    #[serde(default)]
    pub allow_degenerate: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub baseline: BaselineBudget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.check()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|source| Error::Json {
            path: PathBuf::from("<inline>"),
            source,
        })?;
        config.check()?;
        Ok(config)
    }

    /// Field-level invariants that need no file access.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if !(self.r1 > 0.0 && self.r1.is_finite()) {
            return bad(format!("R1 = {} must be positive", self.r1));
        }
        if !(self.r2 >= 1.0 && self.r2.is_finite()) {
            return bad(format!("R2 = {} must be >= 1", self.r2));
        }
        if self.n == Some(0) {
            return bad("n must be positive".into());
        }
        if let Some(th) = self.theta_hat {
            if !(0.0..=1.0).contains(&th) {
                return bad(format!("theta_hat = {th} must lie in [0, 1]"));
            }
        }
        if !(self.theta_slack >= 1.0 && self.theta_slack.is_finite()) {
            return bad(format!("theta_slack = {} must be >= 1", self.theta_slack));
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if let Some(floor) = self.eps_floor {
            if !(floor > 0.0) {
                return bad(format!("eps_floor = {floor} must be positive"));
            }
        }
        if let StreamConfig::Stochastic(st) = &self.stream {
            if !(0.0..=1.0).contains(&st.theta) {
                return bad(format!("theta = {} must lie in [0, 1]", st.theta));
            }
            if self.n.is_none() {
                return bad("stochastic streams need n".into());
            }
            if st.theta > 0.0 && self.cost.is_none() {
                return bad("stochastic streams with theta > 0 need a cost".into());
            }
            if let (Some(th), true) = (self.theta_hat, st.theta > 0.0) {
                if th < st.theta {
                    return bad(format!("theta_hat = {th} is below the configured theta = {}", st.theta));
                }
            }
        }
        if let Some(cost) = &self.cost {
            if let Some(a) = &cost.a {
                if a.len() != self.d * self.d {
                    return bad(format!("A has {} entries, expected {}", a.len(), self.d * self.d));
                }
            }
        }
        Ok(())
    }

    pub fn scripted_path(&self) -> Option<PathBuf> {
        match &self.stream {
            StreamConfig::Scripted(p) if p.is_relative() => Some(self.base_dir.join(p)),
            StreamConfig::Scripted(p) => Some(p.clone()),
            StreamConfig::Stochastic(_) => None,
        }
    }
}

/// Reads scripted agents. Columns: `y, x_1..x_d`, then for `y = −1` rows
/// `p, r, eps, A` row-major. A header row is required; trailing cost fields
/// of `y = +1` rows may be empty or absent.
pub fn load_scripted(path: &Path, d: usize) -> Result<Vec<AgentProfile>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| -> Result<f64> {
            let raw = rec.get(i).filter(|s| !s.is_empty()).ok_or_else(|| {
                Error::Config(format!(
                    "{}: row {} is missing column {}",
                    path.display(),
                    row + 1,
                    i + 1
                ))
            })?;
            parse_exponent(raw).map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), row + 1)))
        };
        let y = field(0)?;
        let x: Vec<f64> = (1..=d).map(field).collect::<Result<_>>()?;
        if y == 1.0 {
            out.push(AgentProfile::non_strategic(x));
        } else if y == -1.0 {
            let p = field(d + 1)?;
            let r = field(d + 2)?;
            let eps = field(d + 3)?;
            let a: Vec<f64> = (0..d * d).map(|k| field(d + 4 + k)).collect::<Result<_>>()?;
            let spec = CostSpec::from_row_major(p, r, d, &a, eps)?;
            out.push(AgentProfile::strategic(x, spec)?);
        } else {
            return Err(Error::Config(format!(
                "{}: row {} has label {y}, expected +1 or -1",
                path.display(),
                row + 1
            )));
        }
    }
    Ok(out)
}
