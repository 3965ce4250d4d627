//! Inner solvers: constant-step gradient ascent, a monotonic forward sweep
//! and a matrix-free Newton method with GMRES.
//!
//! Every solver maximizes `weight · J` for a [`ControlProblem`]; the weight
//! is 1 for the full problem and the subproblem's ascent weight inside ISM.

use serde::{Deserialize, Serialize};

use crate::controls::ControlField;
use crate::error::{IsmError, Result};
use crate::objective::{self, ControlProblem};
use crate::propagation::{self, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Gradient,
    Monotonic,
    Newton,
}

/// Inner solver choice and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    /// Gradient step, also used by the Newton fallback.
    #[serde(default = "SolverSpec::default_rho")]
    pub rho: f64,
    /// Relaxation applied to the stationary points of the monotonic model.
    #[serde(default = "SolverSpec::default_delta")]
    pub delta: f64,
    #[serde(default = "SolverSpec::default_gmres_tol")]
    pub gmres_tol: f64,
    #[serde(default = "SolverSpec::default_gmres_restart")]
    pub gmres_restart: usize,
    #[serde(default = "SolverSpec::default_gmres_max_iter")]
    pub gmres_max_iter: usize,
    /// Scale of the Hessian-vector product displacement.
    #[serde(default = "SolverSpec::default_hvp_scale")]
    pub hvp_scale: f64,
    /// Inner iterations per call of [`run_inner`].
    #[serde(default = "SolverSpec::default_iterations")]
    pub iterations: usize,
}

impl SolverSpec {
    fn default_rho() -> f64 {
        1.0
    }
    fn default_delta() -> f64 {
        1.0
    }
    fn default_gmres_tol() -> f64 {
        1e-6
    }
    fn default_gmres_restart() -> usize {
        30
    }
    fn default_gmres_max_iter() -> usize {
        300
    }
    fn default_hvp_scale() -> f64 {
        1e-5
    }
    fn default_iterations() -> usize {
        1
    }

    pub fn gradient(rho: f64) -> Self {
        Self {
            kind: SolverKind::Gradient,
            rho,
            delta: Self::default_delta(),
            gmres_tol: Self::default_gmres_tol(),
            gmres_restart: Self::default_gmres_restart(),
            gmres_max_iter: Self::default_gmres_max_iter(),
            hvp_scale: Self::default_hvp_scale(),
            iterations: 1,
        }
    }

    pub fn monotonic() -> Self {
        Self {
            kind: SolverKind::Monotonic,
            ..Self::gradient(Self::default_rho())
        }
    }

    pub fn newton(fallback_rho: f64) -> Self {
        Self {
            kind: SolverKind::Newton,
            ..Self::gradient(fallback_rho)
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(IsmError::Config {
                key: format!("solver.{key}"),
                message: msg.into(),
            })
        };
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad("rho", "must be positive");
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad("delta", "must be positive");
        }
        if !(self.gmres_tol > 0.0) {
            return bad("gmres_tol", "must be positive");
        }
        if self.gmres_restart == 0 {
            return bad("gmres_restart", "must be positive");
        }
        if !(self.hvp_scale > 0.0) {
            return bad("hvp_scale", "must be positive");
        }
        Ok(())
    }
}

fn check_finite(g: &ControlField, what: &str) -> Result<()> {
    if let Some(k) = g.as_slice().iter().position(|x| !x.is_finite()) {
        let c = g.channels();
        return Err(IsmError::NonFinite(format!(
            "{what} at step {}, channel {}",
            k / c,
            k % c
        )));
    }
    Ok(())
}

fn axpy(u: &ControlField, s: f64, d: &[f64]) -> ControlField {
    let v = u.as_slice().iter().zip(d).map(|(a, b)| a + s * b).collect();
    u.with_samples(v).expect("same layout")
}

/// `u + ρ · weight · ∇J[u]`.
pub fn gradient_step(problem: &ControlProblem, weight: f64, u: &ControlField, rho: f64) -> Result<ControlField> {
    let g = objective::gradient(problem, u)?;
    check_finite(&g, "gradient")?;
    Ok(axpy(u, rho * weight, g.as_slice()))
}

/// Real roots of `c[0] + c[1] x + c[2] x² + c[3] x³`, leading zeros dropped.
pub fn real_roots(c: [f64; 4]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let eps = 1e-14 * scale;
    let polish = |x: f64| {
        let mut x = x;
        for _ in 0..3 {
            let f = c[0] + x * (c[1] + x * (c[2] + x * c[3]));
            let df = c[1] + x * (2.0 * c[2] + 3.0 * x * c[3]);
            if df == 0.0 {
                break;
            }
            let nx = x - f / df;
            if !nx.is_finite() {
                break;
            }
            x = nx;
        }
        x
    };
    if c[3].abs() > eps {
        // depressed cubic t³ + p t + q with x = t − a/3
        let (a, b, d) = (c[2] / c[3], c[1] / c[3], c[0] / c[3]);
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + d;
        let disc = q * q / 4.0 + p * p * p / 27.0;
        let shift = -a / 3.0;
        let roots: Vec<f64> = if disc > 0.0 {
            let s = disc.sqrt();
            vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
        } else if p == 0.0 {
            vec![shift]
        } else {
            let r = (-p / 3.0).sqrt();
            let phi = ((3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos();
            (0..3)
                .map(|k| 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + shift)
                .collect()
        };
        roots.into_iter().map(polish).collect()
    } else if c[2].abs() > eps {
        let disc = c[1] * c[1] - 4.0 * c[2] * c[0];
        if disc < 0.0 {
            return Vec::new();
        }
        let s = disc.sqrt();
        let q = -0.5 * (c[1] + c[1].signum() * s);
        let mut r = Vec::new();
        if q != 0.0 {
            r.push(c[0] / q);
            r.push(q / c[2]);
        } else {
            r.push(0.0);
        }
        r.into_iter().map(polish).collect()
    } else if c[1].abs() > eps {
        vec![-c[0] / c[1]]
    } else {
        Vec::new()
    }
}

/// One forward sweep of the monotonic scheme.
///
/// With `χ_j` the backward-propagated target under the old field and `ψ'_j`
/// the state under the new field, `J[u'] − J[u]` telescopes into a sum over
/// steps of `Re<χ_{j+1}|(A(u'_j) − A(u_j))ψ'_j>` minus the penalty change.
/// Each step's field is chosen channel by channel among the stationary
/// points of a second-order model of that term and the current value, by
/// exact evaluation, so no term can decrease.
pub fn monotonic_step(problem: &ControlProblem, u: &ControlField, delta: f64) -> Result<ControlField> {
    problem.check_control(u)?;
    let model = problem.model().as_ref();
    if !model.is_linear() {
        return Err(IsmError::Capability(format!(
            "{} is nonlinear; the monotonic scheme needs backward propagation",
            model.name()
        )));
    }
    let chi = propagation::propagate(model, u, problem.target(), Direction::Backward)?;
    let tau = u.grid().tau();
    let channels = u.channels();
    let mut out = u.clone();
    let mut psi = problem.initial().clone();
    for j in 0..u.steps() {
        let alpha = problem.penalty().at(j);
        let target = &chi[j + 1];
        let local = |v: &[f64]| -> Result<f64> {
            let next = model.step(v, tau, &psi)?;
            let pen: f64 = v.iter().map(|x| x * x).sum::<f64>() * 0.5 * alpha * tau;
            Ok(target.dot(&next).re - pen)
        };
        let mut v = u.at_step(j).to_vec();
        let mut best = local(&v)?;
        for c in 0..channels {
            let gp = model.generator_terms(&v, c, &psi)?;
            let gc = model.generator_terms(&v, c, target)?;
            // m(w) = τ Σ_k w^k Im<χ|G_k ψ> − τ²/2 Σ_{a,b} w^{a+b} Re<G_a χ|G_b ψ> − ½ατ(v_c + w)²
            let mut m = [0.0f64; 5];
            for k in 1..3 {
                m[k] += tau * target.dot(&gp[k]).im;
            }
            for a in 0..3 {
                for b in 0..3 {
                    if a + b > 0 {
                        m[a + b] -= 0.5 * tau * tau * gc[a].dot(&gp[b]).re;
                    }
                }
            }
            m[1] -= alpha * tau * v[c];
            m[2] -= 0.5 * alpha * tau;
            let deriv = [m[1], 2.0 * m[2], 3.0 * m[3], 4.0 * m[4]];
            if deriv.iter().all(|&x| x == 0.0) {
                continue;
            }
            let roots = real_roots(deriv);
            if roots.is_empty() {
                return Err(IsmError::MonotonicUpdate {
                    step: j,
                    channel: c,
                    message: format!("local model has no stationary point (coefficients {deriv:?})"),
                });
            }
            let base = v[c];
            let mut chosen = base;
            for r in roots {
                let cand = base + delta * r;
                if !cand.is_finite() {
                    continue;
                }
                v[c] = cand;
                let val = local(&v)?;
                let tie = (val - best).abs() <= 1e-15 * best.abs().max(1e-300);
                if val > best && !tie || tie && cand.abs() < chosen.abs() && val >= best {
                    best = val;
                    chosen = cand;
                }
            }
            v[c] = chosen;
        }
        for (c, &x) in v.iter().enumerate() {
            out.set(c, j, x);
        }
        psi = model.step(&v, tau, &psi)?;
    }
    if !out.is_finite() {
        return Err(IsmError::NonFinite("monotonic update".into()));
    }
    Ok(out)
}

/// GMRES outcome.
#[derive(Clone, Debug)]
pub struct GmresResult {
    pub x: Vec<f64>,
    /// `‖b − A x‖ / ‖b‖`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restarted GMRES with Givens rotations for a real linear operator.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresResult> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(GmresResult {
            x,
            residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            return Ok(GmresResult {
                x,
                residual: rel,
                iterations,
                converged: true,
            });
        }
        let m = restart.min(max_iter - iterations);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            iterations += 1;
            let mut w = apply(&v[k])?;
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= h[i][k] * vj;
                }
            }
            h[k + 1][k] = norm(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            k_used = k + 1;
            if d == 0.0 {
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            let hk1 = h[k + 1][k];
            h[k][k] = d;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            rel = g[k + 1].abs() / bnorm;
            if rel <= tol || hk1 == 0.0 {
                break;
            }
            v.push(w.iter().map(|a| a / hk1).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (i, yi) in y.iter().enumerate() {
            for (xj, vj) in x.iter_mut().zip(&v[i]) {
                *xj += yi * vj;
            }
        }
        if rel <= tol || k_used < m {
            let converged = rel <= tol;
            let ax = apply(&x)?;
            let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
            return Ok(GmresResult {
                x,
                residual: norm(&r) / bnorm,
                iterations,
                converged,
            });
        }
    }
    Ok(GmresResult {
        x,
        residual: rel,
        iterations,
        converged: false,
    })
}

/// Finite-difference Hessian-vector product of `weight · J` at `u`:
/// central difference of the exact gradient with displacement
/// `h = scale (1 + ‖u‖)/(‖v‖ + ε)`.
pub fn hessian_vector_product(
    problem: &ControlProblem,
    weight: f64,
    u: &ControlField,
    v: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    let h = scale * (1.0 + norm(u.as_slice())) / (norm(v) + f64::MIN_POSITIVE);
    let gp = objective::gradient(problem, &axpy(u, h, v))?;
    let gm = objective::gradient(problem, &axpy(u, -h, v))?;
    Ok(gp
        .as_slice()
        .iter()
        .zip(gm.as_slice())
        .map(|(a, b)| weight * (a - b) / (2.0 * h))
        .collect())
}

/// Diagnostics of one Newton step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewtonInfo {
    pub gmres_iterations: usize,
    pub gmres_residual: f64,
    pub fallback: bool,
    pub reason: Option<String>,
}

/// `u + d` with `H d = −∇(weight·J)` solved by GMRES on finite-difference
/// Hessian-vector products. Falls back to `u + ρ ∇(weight·J)` when GMRES
/// does not converge or `d` is not an ascent direction.
pub fn newton_step(
    problem: &ControlProblem,
    weight: f64,
    u: &ControlField,
    spec: &SolverSpec,
) -> Result<(ControlField, NewtonInfo)> {
    let g0 = objective::gradient(problem, u)?;
    check_finite(&g0, "gradient")?;
    let g: Vec<f64> = g0.as_slice().iter().map(|x| weight * x).collect();
    let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
    let sol = gmres(
        |v| hessian_vector_product(problem, weight, u, v, spec.hvp_scale),
        &rhs,
        spec.gmres_tol,
        spec.gmres_restart,
        spec.gmres_max_iter,
    )?;
    let ascent = dot(&sol.x, &g);
    let reason = if !sol.converged {
        Some(format!("GMRES stopped at relative residual {:.3e}", sol.residual))
    } else if !(ascent > 0.0) && norm(&g) > 0.0 {
        Some(format!("Newton direction is not ascent (<d, g> = {ascent:.3e})"))
    } else if sol.x.iter().any(|x| !x.is_finite()) {
        Some("Newton direction is not finite".into())
    } else {
        None
    };
    let info = NewtonInfo {
        gmres_iterations: sol.iterations,
        gmres_residual: sol.residual,
        fallback: reason.is_some(),
        reason,
    };
    let next = if info.fallback {
        axpy(u, spec.rho, &g)
    } else {
        axpy(u, 1.0, &sol.x)
    };
    Ok((next, info))
}

/// Result of [`run_inner`].
#[derive(Clone, Debug)]
pub struct InnerReport {
    pub control: ControlField,
    /// Newton fallbacks and other notable events, in order.
    pub events: Vec<String>,
}

/// Applies `spec.iterations` steps of the selected solver.
pub fn run_inner(problem: &ControlProblem, weight: f64, u0: &ControlField, spec: &SolverSpec) -> Result<InnerReport> {
    let mut u = u0.clone();
    let mut events = Vec::new();
    for l in 0..spec.iterations {
        u = match spec.kind {
            SolverKind::Gradient => gradient_step(problem, weight, &u, spec.rho)?,
            SolverKind::Monotonic => monotonic_step(problem, &u, spec.delta)?,
            SolverKind::Newton => {
                let (next, info) = newton_step(problem, weight, &u, spec)?;
                if let Some(r) = info.reason {
                    events.push(format!("inner step {l}: Newton fallback: {r}"));
                }
                next
            }
        };
    }
    Ok(InnerReport { control: u, events })
}

/// Convenience: plain optimization of the full problem for `iterations`
/// steps, returning the figure of merit after each step (index 0 is the
/// starting value).
pub fn optimize(problem: &ControlProblem, u0: &ControlField, spec: &SolverSpec, iterations: usize) -> Result<(ControlField, Vec<f64>)> {
    let mut u = u0.clone();
    let mut values = vec![objective::evaluate_j(problem, &u)?];
    let single = SolverSpec {
        iterations: 1,
        ..spec.clone()
    };
    for _ in 0..iterations {
        u = run_inner(problem, 1.0, &u, &single)?.control;
        values.push(objective::evaluate_j(problem, &u)?);
    }
    Ok((u, values))
}
