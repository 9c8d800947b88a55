//! Agent manipulation costs `d(x̂, x) = (1/r)·‖A(x̂ − x)‖_p^r`, their convex
//! conjugates and the closed-form strategic best response.
//!
//! With `f(w) = (1/r)·‖Aw‖_p^r` the conjugate is `f*(β) = (1/s)·‖Bβ‖_q^s`
//! where `B = (Aᵀ)⁻¹`, `1/p + 1/q = 1` and `1/r + 1/s = 1`. An agent facing
//! the linear classifier `β` moves to `x̂ = x + v` for any `v ∈ ∂f*(β)`, and
//! because `f*` is positively homogeneous of degree `s`, Euler's identity
//! gives `⟨x̂, β⟩ = ⟨x, β⟩ + s·f*(β)` regardless of which subgradient is
//! picked.
//!
//! Exponents `p ∈ {1, ∞}` make the dual norm non-differentiable. They are
//! supported with a deterministic tie-break: for `q = ∞` all mass goes to the
//! smallest index attaining `max |u_i|`, for `q = 1` coordinates with
//! `u_i = 0` get subgradient 0.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, mat_t_vec, mat_vec, norm_p, sub};

/// Tolerance for `B·Aᵀ = I`, checked entrywise at construction.
const INVERSE_TOL: f64 = 1e-9;

/// Validated manipulation cost of a single strategic agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    p: f64,
    q: f64,
    r: f64,
    s: f64,
    eps: f64,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

/// Closed-form agent reply: the manipulated point and `⟨x̂, β⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub xhat: Vec<f64>,
    pub inner: f64,
}

/// Hölder conjugate of an exponent in `[1, ∞]`.
pub fn dual_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

impl CostSpec {
    /// Builds a spec, rejecting transforms whose smallest singular value is
    /// below `eps` (a singular `A` lets the agent move for free and its
    /// utility is unbounded).
    pub fn new(p: f64, r: f64, a: DMatrix<f64>, eps: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(format!(
                "norm exponent p = {p} must lie in [1, inf]"
            )));
        }
        if !r.is_finite() || r < 1.0 {
            return Err(Error::InvalidExponent(format!(
                "cost power r = {r} must be finite and >= 1"
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!(
                "singular value floor eps = {eps} must be positive"
            )));
        }
        check_dim(a.nrows(), a.ncols())?;
        if a.nrows() == 0 {
            return Err(Error::Config("transform must be at least 1x1".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("transform has non-finite entries".into()));
        }

        let sigma_min = a.singular_values().min();
        if sigma_min < eps {
            return Err(Error::SingularTransform { sigma_min, floor: eps });
        }
        let at = a.transpose();
        let b = at
            .clone()
            .try_inverse()
            .ok_or(Error::SingularTransform { sigma_min, floor: eps })?;
        let d = a.nrows();
        let residual = (&b * &at - DMatrix::<f64>::identity(d, d)).amax();
        if residual > INVERSE_TOL {
            return Err(Error::SingularTransform { sigma_min, floor: eps });
        }

        Ok(Self {
            p,
            q: dual_exponent(p),
            r,
            s: dual_exponent(r),
            eps,
            a,
            b,
        })
    }

    /// Same as [`CostSpec::new`] with `A` given row-major.
    pub fn from_row_major(p: f64, r: f64, d: usize, a: &[f64], eps: f64) -> Result<Self> {
        check_dim(d * d, a.len())?;
        Self::new(p, r, DMatrix::from_row_slice(d, d, a), eps)
    }

    /// `A = I` with floor `eps = 1`.
    pub fn identity(d: usize, p: f64, r: f64) -> Result<Self> {
        Self::new(p, r, DMatrix::identity(d, d), 1.0)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    /// Conjugate power; `+∞` when `r = 1`.
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.a
    }
    /// Cached `(Aᵀ)⁻¹`.
    pub fn inverse_transpose(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn is_degenerate(&self) -> bool {
        self.r == 1.0
    }

    /// `(1/r)·‖A(x̂ − x)‖_p^r`.
    pub fn cost_value(&self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), xhat.len())?;
        let z = mat_vec(&self.a, &sub(xhat, x));
        Ok(norm_p(&z, self.p).powf(self.r) / self.r)
    }

    /// Dual norm `‖β‖_* = ‖Bβ‖_q`.
    pub fn dual_norm(&self, beta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), beta.len())?;
        Ok(norm_p(&mat_vec(&self.b, beta), self.q))
    }

    /// `f*(β) = (1/s)·‖Bβ‖_q^s`.
    pub fn conjugate_value(&self, beta: &[f64]) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::DegenerateDegree);
        }
        Ok(self.dual_norm(beta)?.powf(self.s) / self.s)
    }

    /// One element of `∂f*(β)`; the unique gradient when `1 < p < ∞` and
    /// `β ≠ 0`. Returns 0 at `β = 0`.
    pub fn conjugate_subgradient(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if self.is_degenerate() {
            return Err(Error::DegenerateDegree);
        }
        check_dim(self.dim(), beta.len())?;
        let u = mat_vec(&self.b, beta);
        let n = norm_p(&u, self.q);
        if n == 0.0 {
            return Ok(vec![0.0; u.len()]);
        }
        // gradient of (1/s)‖u‖_q^s with respect to u
        let lead = n.powf(self.s - 1.0);
        let w: Vec<f64> = if self.q.is_infinite() {
            let mut w = vec![0.0; u.len()];
            let mut best = 0;
            for (i, ui) in u.iter().enumerate() {
                if ui.abs() > u[best].abs() {
                    best = i;
                }
            }
            w[best] = lead * u[best].signum();
            w
        } else if self.q == 1.0 {
            u.iter()
                .map(|&ui| if ui == 0.0 { 0.0 } else { lead * ui.signum() })
                .collect()
        } else {
            u.iter()
                .map(|&ui| {
                    if ui == 0.0 {
                        0.0
                    } else {
                        lead * ui.signum() * (ui.abs() / n).powf(self.q - 1.0)
                    }
                })
                .collect()
        };
        Ok(mat_t_vec(&self.b, &w))
    }

    /// The agent's utility-maximizing report against classifier `β`.
    ///
    /// For `r = 1` the cost is a norm and the agent's gain is either zero
    /// (stay put, when `‖β‖_* ≤ 1`) or unbounded.
    pub fn best_response(&self, x: &[f64], beta: &[f64]) -> Result<BestResponse> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), beta.len())?;
        if self.is_degenerate() {
            let dual_norm = self.dual_norm(beta)?;
            if dual_norm > 1.0 {
                return Err(Error::UnboundedResponse { dual_norm });
            }
            return Ok(BestResponse {
                xhat: x.to_vec(),
                inner: dot(x, beta),
            });
        }
        let v = self.conjugate_subgradient(beta)?;
        let xhat = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        let inner = dot(x, beta) + self.s * self.conjugate_value(beta)?;
        Ok(BestResponse { xhat, inner })
    }

    /// Agent utility `⟨x̂, β⟩ − d(x̂, x)`.
    pub fn utility(&self, x: &[f64], xhat: &[f64], beta: &[f64]) -> Result<f64> {
        Ok(dot(xhat, beta) - self.cost_value(x, xhat)?)
    }
}
