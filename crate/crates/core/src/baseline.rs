//! Full-information comparators: the best fixed classifier in hindsight and
//! the brute-force oracles used to check the closed forms.
//!
//! The hindsight objective `F(β) = Σ_t c_t(β)` lets every agent re-respond
//! to `β`, so it is evaluated through the strategic closed forms. It is
//! convex, which makes projected subgradient descent sound, and every
//! evaluated subgradient yields an affine minorant of `F`. Any convex
//! combination of minorants minimized over the ball lower-bounds `min_K F`,
//! which is how the reported `certified_gap` is obtained.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::environment::{ground_truth_loss, AgentProfile};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, mat_t_vec, mat_vec, norm2, norm_p, project_ball};
use crate::losses::{constants, link_derivative, link_value, LossKind};

/// Default iteration budget of [`hindsight_optimum`].
pub const DEFAULT_ITERATIONS: usize = 100_000;
/// Default relative tolerance of [`hindsight_optimum`].
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HindsightSolution {
    pub beta_star: Vec<f64>,
    pub total_loss: f64,
    /// Number of rounds (agents) the objective sums over.
    pub rounds: usize,
    pub iterations: usize,
    /// Upper bound on `total_loss − min_K F`.
    pub certified_gap: f64,
    /// Whether the requested tolerance was reached before the budget ran out.
    pub converged: bool,
}

/// `F` and one subgradient, with per-cost-spec conjugate work shared across
/// agents.
struct Objective<'a> {
    kind: LossKind,
    agents: &'a [AgentProfile],
    specs: Vec<&'a CostSpec>,
    /// Index into `specs` for strategic agents.
    spec_of: Vec<Option<usize>>,
    d: usize,
}

impl<'a> Objective<'a> {
    fn new(agents: &'a [AgentProfile], kind: LossKind, d: usize) -> Result<Self> {
        let mut specs: Vec<&CostSpec> = Vec::new();
        let mut spec_of = Vec::with_capacity(agents.len());
        for a in agents {
            check_dim(d, a.dim())?;
            spec_of.push(match a.cost() {
                None => None,
                Some(cost) => {
                    if cost.is_degenerate() {
                        return Err(Error::DegenerateDegree);
                    }
                    // streams usually share one spec; test the latest first
                    let found = specs.iter().rposition(|s| *s == cost);
                    Some(found.unwrap_or_else(|| {
                        specs.push(cost);
                        specs.len() - 1
                    }))
                }
            });
        }
        Ok(Self {
            kind,
            agents,
            specs,
            spec_of,
            d,
        })
    }

    /// `(s·f*(β), s·∇f*(β))` for each distinct spec.
    fn conjugates(&self, beta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.specs
            .iter()
            .map(|spec| {
                let s = spec.s();
                let u = mat_vec(spec.inverse_transpose(), beta);
                let n = norm_p(&u, spec.q());
                let value = n.powf(s);
                let grad = spec.conjugate_subgradient(beta).expect("validated non-degenerate");
                (value, grad.into_iter().map(|v| s * v).collect())
            })
            .collect()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let conj = self.conjugates(beta);
        self.agents
            .iter()
            .zip(&self.spec_of)
            .map(|(a, spec)| {
                let lin = dot(a.x(), beta);
                match spec {
                    None => link_value(self.kind, f64::from(a.y()) * lin),
                    Some(k) => link_value(self.kind, -(lin + conj[*k].0)),
                }
            })
            .sum()
    }

    fn value_and_subgradient(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let conj = self.conjugates(beta);
        let mut f = 0.0;
        let mut g = vec![0.0; self.d];
        for (a, spec) in self.agents.iter().zip(&self.spec_of) {
            let x = a.x();
            let lin = dot(x, beta);
            match spec {
                None => {
                    let y = f64::from(a.y());
                    f += link_value(self.kind, y * lin);
                    let k = y * link_derivative(self.kind, y * lin);
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += k * xi;
                    }
                }
                Some(idx) => {
                    let (sf, sgrad) = &conj[*idx];
                    let z = -(lin + sf);
                    f += link_value(self.kind, z);
                    let k = -link_derivative(self.kind, z);
                    for ((gi, xi), vi) in g.iter_mut().zip(x).zip(sgrad) {
                        *gi += k * (xi + vi);
                    }
                }
            }
        }
        (f, g)
    }
}

/// Running convex combination of affine minorants
/// `F(b) ≥ F(β_j) + ⟨g_j, b − β_j⟩`.
#[derive(Default)]
struct MinorantMix {
    weight: f64,
    offset: f64,
    slope: Vec<f64>,
}

impl MinorantMix {
    fn add(&mut self, w: f64, f: f64, g: &[f64], beta: &[f64]) {
        if self.slope.is_empty() {
            self.slope = vec![0.0; g.len()];
        }
        self.weight += w;
        self.offset += w * (f - dot(g, beta));
        for (s, gi) in self.slope.iter_mut().zip(g) {
            *s += w * gi;
        }
    }

    /// `min_{‖b‖₂ ≤ R}` of the averaged minorant.
    fn lower_bound(&self, radius: f64) -> f64 {
        if self.weight == 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.offset - radius * norm2(&self.slope)) / self.weight
    }
}

/// Best fixed classifier in the radius-`radius` ball by projected subgradient
/// descent with steps `R/(G√k)` (G the largest subgradient norm seen so
/// far) and iterate averaging. Stops once the certified gap drops below
/// `tol·(1 + |F|)` or after `iterations` steps.
pub fn hindsight_optimum(
    agents: &[AgentProfile],
    kind: LossKind,
    radius: f64,
    d: usize,
    iterations: usize,
    tol: f64,
) -> Result<HindsightSolution> {
    let objective = Objective::new(agents, kind, d)?;
    if agents.is_empty() {
        return Ok(HindsightSolution {
            beta_star: vec![0.0; d],
            total_loss: 0.0,
            rounds: 0,
            iterations: 0,
            certified_gap: 0.0,
            converged: true,
        });
    }

    let mut beta = vec![0.0; d];
    let mut best_beta = beta.clone();
    let mut best_f = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut g_max = 0.0_f64;
    let mut avg = vec![0.0; d];
    let mut avg_weight = 0.0;
    let mut window = MinorantMix::default();
    let mut next_restart = 2;
    let mut done = 0;
    let mut converged = false;

    for k in 1..=iterations {
        done = k;
        let (f, g) = objective.value_and_subgradient(&beta);
        if f < best_f {
            best_f = f;
            best_beta.clone_from(&beta);
        }
        let gn = norm2(&g);
        lower = lower.max(f - dot(&g, &beta) - radius * gn);
        g_max = g_max.max(gn);
        let step = if g_max > 0.0 {
            radius / (g_max * (k as f64).sqrt())
        } else {
            0.0
        };

        if k == next_restart {
            window = MinorantMix::default();
            next_restart *= 2;
        }
        window.add(step.max(f64::MIN_POSITIVE), f, &g, &beta);
        lower = lower.max(window.lower_bound(radius));

        avg_weight += step;
        if avg_weight > 0.0 {
            for (a, b) in avg.iter_mut().zip(&beta) {
                *a += step / avg_weight * (b - *a);
            }
        }
        if k % 16 == 0 {
            let fa = objective.value(&avg);
            if fa < best_f {
                best_f = fa;
                best_beta.clone_from(&avg);
            }
        }

        if best_f - lower <= tol * (1.0 + best_f.abs()) {
            converged = true;
            break;
        }
        beta = project_ball(&crate::linalg::axpy(&beta, -step, &g), radius);
    }

    let total_loss = total_ground_truth_loss(agents, kind, &best_beta)?;
    Ok(HindsightSolution {
        beta_star: best_beta,
        total_loss,
        rounds: agents.len(),
        iterations: done,
        certified_gap: (total_loss - lower).max(0.0),
        converged,
    })
}

/// `Σ_t c_t(β)` through the per-agent closed forms.
pub fn total_ground_truth_loss(agents: &[AgentProfile], kind: LossKind, beta: &[f64]) -> Result<f64> {
    agents.iter().map(|a| ground_truth_loss(a, kind, beta)).sum()
}

/// Exhaustive search over the grid `h·Z^d` intersected with the ball.
/// `certified_gap = L_F·h·√d` with `L_F` the summed per-agent Lipschitz
/// constants over the ball.
pub fn grid_hindsight_optimum(
    agents: &[AgentProfile],
    kind: LossKind,
    radius: f64,
    d: usize,
    resolution: f64,
) -> Result<HindsightSolution> {
    if d > 3 {
        return Err(Error::DimensionTooLarge(d));
    }
    if d == 0 || !(resolution > 0.0) {
        return Err(Error::Config("grid needs d >= 1 and a positive resolution".into()));
    }
    let objective = Objective::new(agents, kind, d)?;
    let lipschitz = agents.iter().try_fold(0.0, |acc, a| {
        let xn = norm2(a.x());
        let l = match a.cost() {
            None => xn,
            Some(cost) => constants(cost, kind, xn.max(f64::MIN_POSITIVE), radius.max(1.0))?.l,
        };
        Ok::<_, Error>(acc + l)
    })?;

    let steps = (radius / resolution).floor() as i64;
    let axis: Vec<f64> = (-steps..=steps).map(|i| i as f64 * resolution).collect();
    let r2 = radius * radius;

    // each worker scans one slice of the first coordinate; ties resolve to
    // the lexicographically smallest point
    let best = axis
        .par_iter()
        .map(|&first| {
            let mut point = vec![0.0; d];
            point[0] = first;
            let mut best: Option<(f64, Vec<f64>)> = None;
            let tail = d - 1;
            let count = axis.len().pow(tail as u32);
            for idx in 0..count {
                let mut rem = idx;
                for j in (1..d).rev() {
                    point[j] = axis[rem % axis.len()];
                    rem /= axis.len();
                }
                if dot(&point, &point) > r2 {
                    continue;
                }
                let f = objective.value(&point);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, point.clone()));
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<f64>)>, |acc, cand| match acc {
            Some(a) if a.0 <= cand.0 => Some(a),
            _ => Some(cand),
        })
        .expect("origin is always on the grid");

    let total_loss = total_ground_truth_loss(agents, kind, &best.1)?;
    Ok(HindsightSolution {
        beta_star: best.1,
        total_loss,
        rounds: agents.len(),
        iterations: axis.len().pow(d as u32),
        certified_gap: lipschitz * resolution * (d as f64).sqrt(),
        converged: true,
    })
}

/// Maximizes the agent utility `⟨x̂, β⟩ − d(x̂, x)` by gradient ascent with
/// backtracking, started at `x̂ = x`. Stops when the utility gradient has
/// ℓ₂ norm at most `tol`.
///
/// This deliberately never touches the conjugate closed form, so it can be
/// used to certify it.
pub fn numeric_best_response(spec: &CostSpec, x: &[f64], beta: &[f64], steps: usize, tol: f64) -> Result<Vec<f64>> {
    if spec.is_degenerate() {
        return Err(Error::DegenerateDegree);
    }
    check_dim(spec.dim(), x.len())?;
    check_dim(spec.dim(), beta.len())?;

    let a = spec.transform();
    let (p, r) = (spec.p(), spec.r());
    // utility of the displacement w = x̂ − x
    let utility = |w: &[f64]| dot(w, beta) - norm_p(&mat_vec(a, w), p).powf(r) / r;
    let gradient = |w: &[f64]| -> Vec<f64> {
        let z = mat_vec(a, w);
        let n = norm_p(&z, p);
        if n == 0.0 {
            return beta.to_vec();
        }
        let lead = n.powf(r - 1.0);
        let dz: Vec<f64> = if p.is_infinite() {
            let mut out = vec![0.0; z.len()];
            let mut best = 0;
            for (i, zi) in z.iter().enumerate() {
                if zi.abs() > z[best].abs() {
                    best = i;
                }
            }
            out[best] = lead * z[best].signum();
            out
        } else {
            z.iter()
                .map(|&zi| {
                    if zi == 0.0 {
                        0.0
                    } else {
                        lead * zi.signum() * (zi.abs() / n).powf(p - 1.0)
                    }
                })
                .collect()
        };
        let pull = mat_t_vec(a, &dz);
        beta.iter().zip(&pull).map(|(b, c)| b - c).collect()
    };

    let mut w = vec![0.0; x.len()];
    let mut u = utility(&w);
    let mut alpha = 1.0;
    let mut residual = f64::INFINITY;
    for _ in 0..steps {
        let g = gradient(&w);
        residual = norm2(&g);
        if residual <= tol {
            return Ok(x.iter().zip(&w).map(|(a, b)| a + b).collect());
        }
        let g2 = residual * residual;
        loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi + alpha * gi).collect();
            let ut = utility(&trial);
            if ut >= u + 1e-4 * alpha * g2 {
                w = trial;
                u = ut;
                alpha *= 2.0;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-18 {
                return Err(Error::NoConvergence { steps, residual });
            }
        }
    }
    Err(Error::NoConvergence { steps, residual })
}

/// Central differences with the given step, coordinate by coordinate.
pub fn finite_difference_gradient<F>(f: F, beta: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = beta.to_vec();
    (0..beta.len())
        .map(|i| {
            probe[i] = beta[i] + step;
            let up = f(&probe);
            probe[i] = beta[i] - step;
            let down = f(&probe);
            probe[i] = beta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn single_strategic() -> Vec<AgentProfile> {
        vec![AgentProfile::strategic(vec![1.0, 0.0], CostSpec::identity(2, 2.0, 2.0).unwrap()).unwrap()]
    }

    #[test]
    fn single_strategic_agent_optimum() {
        let sol = hindsight_optimum(
            &single_strategic(),
            LossKind::Hinge,
            2.0,
            2,
            DEFAULT_ITERATIONS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(
            (sol.beta_star[0] + 0.5).abs() < 1e-2 && sol.beta_star[1].abs() < 1e-2,
            "{:?}",
            sol.beta_star
        );
        assert!((sol.total_loss - 0.75).abs() < 1e-3);
        assert!(sol.converged);
        assert!(sol.certified_gap <= 1e-4 * 1.75 + 1e-12);
    }

    #[test]
    fn realizable_margin_gives_zero_loss() {
        let agents = vec![AgentProfile::non_strategic(vec![1.0, 0.0])];
        let sol = hindsight_optimum(&agents, LossKind::Hinge, 2.0, 2, DEFAULT_ITERATIONS, DEFAULT_TOL).unwrap();
        assert!(sol.total_loss < 1e-4);
        assert!(sol.beta_star[0] >= 1.0 - 1e-4);
        assert!(norm2(&sol.beta_star) <= 2.0 + 1e-12);
    }

    #[test]
    fn empty_stream() {
        let sol = hindsight_optimum(&[], LossKind::Logistic, 2.0, 3, 10, 1e-4).unwrap();
        assert_eq!(sol.total_loss, 0.0);
        assert_eq!(sol.beta_star, vec![0.0; 3]);
    }

    #[test]
    fn hindsight_rejects_degenerate_agents() {
        let agents = vec![AgentProfile::strategic(vec![0.0, 0.0], CostSpec::identity(2, 2.0, 1.0).unwrap()).unwrap()];
        assert!(matches!(
            hindsight_optimum(&agents, LossKind::Hinge, 2.0, 2, 10, 1e-4),
            Err(Error::DegenerateDegree)
        ));
    }

    #[test]
    fn grid_oracle_single_agent() {
        let sol = grid_hindsight_optimum(&single_strategic(), LossKind::Hinge, 2.0, 2, 1e-3).unwrap();
        assert!((sol.total_loss - 0.75).abs() < 2e-3);
        assert!(sol.certified_gap > 0.0);
    }

    #[test]
    fn grid_oracle_flat_objective() {
        let agents = vec![AgentProfile::non_strategic(vec![0.0, 0.0])];
        let sol = grid_hindsight_optimum(&agents, LossKind::Logistic, 1.0, 2, 0.1).unwrap();
        assert_abs_diff_eq!(sol.total_loss, std::f64::consts::LN_2, epsilon = 1e-15);
        // ties go to the lexicographically smallest grid point
        assert_eq!(sol.beta_star, vec![-1.0, 0.0]);
    }

    #[test]
    fn grid_oracle_refuses_high_dimension() {
        let agents = vec![AgentProfile::non_strategic(vec![0.0; 4])];
        assert!(matches!(
            grid_hindsight_optimum(&agents, LossKind::Hinge, 1.0, 4, 0.1),
            Err(Error::DimensionTooLarge(4))
        ));
    }

    #[test]
    fn numeric_best_response_recovers_quadratic() {
        let spec = CostSpec::identity(2, 2.0, 2.0).unwrap();
        let xhat = numeric_best_response(&spec, &[1.0, 0.0], &[0.0, 2.0], 10_000, 1e-9).unwrap();
        assert!((xhat[0] - 1.0).abs() < 1e-4 && (xhat[1] - 2.0).abs() < 1e-4);
        let stay = numeric_best_response(&spec, &[0.3, 0.4], &[0.0, 0.0], 10, 1e-9).unwrap();
        assert_eq!(stay, vec![0.3, 0.4]);
    }

    #[test]
    fn numeric_best_response_cubic_utility() {
        let spec = CostSpec::identity(2, 2.0, 3.0).unwrap();
        let beta = [0.0, 1.0];
        let xhat = numeric_best_response(&spec, &[0.0, 0.0], &beta, 10_000, 1e-9).unwrap();
        let u = spec.utility(&[0.0, 0.0], &xhat, &beta).unwrap();
        assert!((u - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn numeric_best_response_reports_exhaustion() {
        let spec = CostSpec::new(2.0, 2.0, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]), 0.5).unwrap();
        assert!(matches!(
            numeric_best_response(&spec, &[0.0, 0.0], &[1.0, 1.0], 1, 1e-12),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn finite_differences() {
        let g = finite_difference_gradient(|b| 0.5 * dot(b, b), &[3.0, 4.0], 1e-5);
        assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_difference_gradient(|_| 7.0, &[1.0, 2.0, 3.0], 1e-5);
        assert!(g.iter().all(|v| v.abs() < 1e-12));

        let spec = CostSpec::new(
            2.0,
            2.0,
            DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[2.0, 1.0])),
            0.5,
        )
        .unwrap();
        let g = finite_difference_gradient(|b| spec.conjugate_value(b).unwrap(), &[2.0, 1.0], 1e-5);
        assert!((g[0] - 0.5).abs() < 1e-6 && (g[1] - 1.0).abs() < 1e-6);
    }
}
