//! Logistic and hinge classification losses for linear classifiers, their
//! strategic closed forms and subgradients, and the uniform bound `M` and
//! Lipschitz constant `L` used to tune the optimizer.

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Logistic,
    Hinge,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Constants bounding every round's loss over the feasible ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// `|c_t(β)| ≤ M`
    pub m: f64,
    /// ℓ₂-Lipschitz constant of `c_t`
    pub l: f64,
    /// `‖β‖_* ≤ C·‖β‖₂`
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
}

impl LossConstants {
    /// Constants when no round is strategic: `|h(z)| ≤ 1 + |z|`, `|h'| ≤ 1`.
    pub fn non_strategic(r1: f64, r2: f64) -> Result<Self> {
        check_radii(r1, r2)?;
        Ok(Self {
            m: 1.0 + r1 * r2,
            l: r1,
            c: 1.0,
            r1,
            r2,
        })
    }

    /// Entrywise maximum, for streams mixing several cost specs.
    pub fn max(self, other: Self) -> Self {
        Self {
            m: self.m.max(other.m),
            l: self.l.max(other.l),
            c: self.c.max(other.c),
            r1: self.r1.max(other.r1),
            r2: self.r2.max(other.r2),
        }
    }
}

fn check_radii(r1: f64, r2: f64) -> Result<()> {
    if !(r1 > 0.0 && r1.is_finite()) {
        return Err(Error::Config(format!("feature radius R1 = {r1} must be positive")));
    }
    if !(r2 >= 1.0 && r2.is_finite()) {
        return Err(Error::Config(format!("classifier radius R2 = {r2} must be >= 1")));
    }
    Ok(())
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Margin link `h`: `log(1 + e^{-z})` or `(1 − z)_+`.
pub fn link_value(kind: LossKind, z: f64) -> f64 {
    match kind {
        LossKind::Logistic => {
            if z >= 0.0 {
                (-z).exp().ln_1p()
            } else {
                -z + z.exp().ln_1p()
            }
        }
        LossKind::Hinge => (1.0 - z).max(0.0),
    }
}

/// `h'(z)`; the hinge kink at `z = 1` takes derivative 0.
pub fn link_derivative(kind: LossKind, z: f64) -> f64 {
    match kind {
        LossKind::Logistic => -sigmoid(-z),
        LossKind::Hinge => {
            if z < 1.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// Learner-side loss `h(y·⟨x̂, β⟩)` computed from the observed report.
pub fn observed_loss(kind: LossKind, xhat: &[f64], y: i8, beta: &[f64]) -> Result<f64> {
    check_dim(beta.len(), xhat.len())?;
    Ok(link_value(kind, f64::from(y) * dot(xhat, beta)))
}

/// Loss a best-responding negative agent inflicts at `β`:
/// `h(−(⟨x, β⟩ + s·f*(β)))`.
pub fn strategic_loss_closed_form(spec: &CostSpec, kind: LossKind, x: &[f64], beta: &[f64]) -> Result<f64> {
    check_dim(spec.dim(), x.len())?;
    let inner = dot(x, beta) + spec.s() * spec.conjugate_value(beta)?;
    Ok(link_value(kind, -inner))
}

/// Subgradient of `β ↦ h(⟨x, β⟩)` for a positive, non-strategic round.
pub fn nonstrategic_subgradient(kind: LossKind, x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    check_dim(beta.len(), x.len())?;
    let k = link_derivative(kind, dot(x, beta));
    Ok(x.iter().map(|v| k * v).collect())
}

/// Chain rule through the closed form: `−h'(z)·(x + s·∇f*(β))`.
pub fn strategic_exact_subgradient(spec: &CostSpec, kind: LossKind, x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    check_dim(spec.dim(), x.len())?;
    let s = spec.s();
    let inner = dot(x, beta) + s * spec.conjugate_value(beta)?;
    let k = -link_derivative(kind, -inner);
    let v = spec.conjugate_subgradient(beta)?;
    Ok(x.iter().zip(&v).map(|(xi, vi)| k * (xi + s * vi)).collect())
}

/// `C = ε⁻¹·d^{(1/q − 1/2)_+}`, `M = 1 + R1·R2 + C^s·R2^s`,
/// `L = R1 + s·C^s·R2^{s−1}`, with `ε` the spec's own singular-value floor.
///
/// Both losses share the same constants since `0 ≤ h(z) ≤ 1 + |z|` and
/// `|h'| ≤ 1` hold for either.
pub fn constants(spec: &CostSpec, kind: LossKind, r1: f64, r2: f64) -> Result<LossConstants> {
    constants_with_floor(spec, kind, r1, r2, spec.eps())
}

/// [`constants`] with an experiment-wide floor `eps` in place of the spec's.
/// The floor must not exceed the spec's own.
pub fn constants_with_floor(spec: &CostSpec, _kind: LossKind, r1: f64, r2: f64, eps: f64) -> Result<LossConstants> {
    if spec.is_degenerate() {
        return Err(Error::DegenerateDegree);
    }
    check_radii(r1, r2)?;
    if !(eps > 0.0 && eps <= spec.eps()) {
        return Err(Error::Config(format!(
            "floor eps = {eps} must lie in (0, {}]",
            spec.eps()
        )));
    }
    let d = spec.dim() as f64;
    let c = d.powf((1.0 / spec.q() - 0.5).max(0.0)) / eps;
    let s = spec.s();
    let cs = c.powf(s);
    Ok(LossConstants {
        m: 1.0 + r1 * r2 + cs * r2.powf(s),
        l: r1 + s * cs * r2.powf(s - 1.0),
        c,
        r1,
        r2,
    })
}
