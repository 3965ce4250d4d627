//! Figures of merit, exact discrete gradients and the subinterval problems.
//!
//! Gradients follow the ascent convention: `u + ρ ∇J` increases `J` for
//! small `ρ`.

use std::sync::Arc;

use crate::controls::{ControlField, Decomposition, PenaltySchedule, TimeGrid};
use crate::error::{IsmError, Result};
use crate::linalg::CVec;
use crate::propagation::{self, Dynamics};

/// Terminal term of the figure of merit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fidelity {
    /// `Re<ψ(T)|ψ_f>`
    #[default]
    Overlap,
    /// `−½ ‖ψ(T) − ψ_f‖²`
    Tracking,
}

impl Fidelity {
    pub fn value(self, last: &CVec, target: &CVec) -> f64 {
        match self {
            Fidelity::Overlap => last.dot(target).re,
            Fidelity::Tracking => -0.5 * last.sub(target).norm_sqr(),
        }
    }

    /// Gradient of the terminal term with respect to the final state under
    /// the real inner product `Re<·,·>`.
    pub fn cotangent(self, last: &CVec, target: &CVec) -> CVec {
        match self {
            Fidelity::Overlap => target.clone(),
            Fidelity::Tracking => target.sub(last),
        }
    }
}

/// A control problem on one time grid: maximize
/// `fidelity(ψ(T), ψ_f) − ½ Σ_j α_j τ |u_j|²`.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    model: Arc<dyn Dynamics>,
    initial: CVec,
    target: CVec,
    grid: TimeGrid,
    penalty: PenaltySchedule,
    fidelity: Fidelity,
    checkpoint_stride: usize,
}

impl ControlProblem {
    pub fn new(
        model: Arc<dyn Dynamics>,
        initial: CVec,
        target: CVec,
        grid: TimeGrid,
        penalty: PenaltySchedule,
    ) -> Result<Self> {
        for (what, s) in [("initial state", &initial), ("target state", &target)] {
            if s.dim() != model.dim() {
                return Err(IsmError::DimensionMismatch {
                    context: what,
                    expected: model.dim(),
                    found: s.dim(),
                });
            }
            if !s.is_finite() {
                return Err(IsmError::NonFinite(what.into()));
            }
        }
        if penalty.len() != grid.steps() {
            return Err(IsmError::DimensionMismatch {
                context: "penalty schedule",
                expected: grid.steps(),
                found: penalty.len(),
            });
        }
        Ok(Self {
            model,
            initial,
            target,
            grid,
            penalty,
            fidelity: Fidelity::Overlap,
            checkpoint_stride: 0,
        })
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.fidelity = fidelity;
        self
    }

    /// Keep every `stride`-th forward state during gradient sweeps
    /// (0 keeps all of them).
    pub fn with_checkpoint_stride(mut self, stride: usize) -> Self {
        self.checkpoint_stride = stride;
        self
    }

    pub fn model(&self) -> &Arc<dyn Dynamics> {
        &self.model
    }

    pub fn initial(&self) -> &CVec {
        &self.initial
    }

    pub fn target(&self) -> &CVec {
        &self.target
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn penalty(&self) -> &PenaltySchedule {
        &self.penalty
    }

    pub fn fidelity(&self) -> Fidelity {
        self.fidelity
    }

    pub fn checkpoint_stride(&self) -> usize {
        self.checkpoint_stride
    }

    pub fn channels(&self) -> usize {
        self.model.channels()
    }

    /// Same dynamics, new endpoints and span.
    pub fn derive(
        &self,
        initial: CVec,
        target: CVec,
        grid: TimeGrid,
        penalty: PenaltySchedule,
        fidelity: Fidelity,
    ) -> Result<Self> {
        Ok(Self::new(self.model.clone(), initial, target, grid, penalty)?
            .with_fidelity(fidelity)
            .with_checkpoint_stride(self.checkpoint_stride))
    }

    pub fn zero_control(&self) -> ControlField {
        ControlField::zeros(self.grid, self.channels())
    }

    pub(crate) fn check_control(&self, u: &ControlField) -> Result<()> {
        if u.channels() != self.channels() {
            return Err(IsmError::DimensionMismatch {
                context: "control channels",
                expected: self.channels(),
                found: u.channels(),
            });
        }
        let g = u.grid();
        let tol = 1e-9 * self.grid.tau();
        if g.steps() != self.grid.steps()
            || (g.t_start() - self.grid.t_start()).abs() > tol
            || (g.tau() - self.grid.tau()).abs() > 1e-12 * self.grid.tau()
        {
            return Err(IsmError::Layout(format!(
                "control spans [{}, {}] in {} steps, problem spans [{}, {}] in {}",
                g.t_start(),
                g.t_end(),
                g.steps(),
                self.grid.t_start(),
                self.grid.t_end(),
                self.grid.steps()
            )));
        }
        Ok(())
    }

    pub fn final_state(&self, u: &ControlField) -> Result<CVec> {
        self.check_control(u)?;
        propagation::propagate_final(self.model.as_ref(), u, &self.initial)
    }

    /// `Re<ψ(T)|ψ_f> / (‖ψ_i‖ ‖ψ_f‖)`.
    pub fn normalized_overlap(&self, u: &ControlField) -> Result<f64> {
        let last = self.final_state(u)?;
        Ok(last.dot(&self.target).re / (self.initial.norm() * self.target.norm()))
    }
}

/// `J_τ[u]`.
pub fn evaluate_j(problem: &ControlProblem, u: &ControlField) -> Result<f64> {
    let last = problem.final_state(u)?;
    let pen = u.weighted_l2_penalty(&problem.penalty)?;
    Ok(problem.fidelity.value(&last, &problem.target) - pen)
}

/// `J_τ[u]` and its exact gradient from one forward and one adjoint sweep.
pub fn value_and_gradient(problem: &ControlProblem, u: &ControlField) -> Result<(f64, ControlField)> {
    problem.check_control(u)?;
    let fid = problem.fidelity;
    let target = problem.target.clone();
    let sweep = propagation::adjoint_sweep(
        problem.model.as_ref(),
        u,
        &problem.initial,
        |last| fid.cotangent(last, &target),
        &[],
        problem.checkpoint_stride.max(1),
    )?;
    let mut grad = sweep.gradient;
    let tau = u.grid().tau();
    let c = u.channels();
    for j in 0..u.steps() {
        let a = problem.penalty.at(j);
        for k in 0..c {
            grad[j * c + k] -= a * tau * u.get(k, j);
        }
    }
    let value = fid.value(&sweep.final_state, &problem.target) - u.weighted_l2_penalty(&problem.penalty)?;
    Ok((value, u.with_samples(grad)?))
}

/// Exact gradient of `J_τ` (ascent convention).
pub fn gradient(problem: &ControlProblem, u: &ControlField) -> Result<ControlField> {
    Ok(value_and_gradient(problem, u)?.1)
}

/// How a subinterval problem is posed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubproblemKind {
    /// Endpoints from the interpolated intermediate states, tracking form,
    /// penalty `α_n = α (t_{n+1}−t_n)/T`.
    Interpolated,
    /// Initial state from the forward trajectory, target from the adjoint
    /// trajectory, overlap form, unscaled penalty.
    Split,
}

/// Problem `n` of a decomposition.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub index: usize,
    pub kind: SubproblemKind,
    pub problem: ControlProblem,
    /// `β_n = T/(t_{n+1}−t_n)`.
    pub beta: f64,
}

impl Subproblem {
    pub fn interpolated(
        full: &ControlProblem,
        decomp: &Decomposition,
        n: usize,
        start: CVec,
        end: CVec,
    ) -> Result<Self> {
        let (j0, j1) = decomp.interval(n);
        let penalty = full.penalty.restrict(j0, j1).scaled(decomp.alpha_scale(n));
        let problem = full.derive(start, end, decomp.sub_grid(n), penalty, Fidelity::Tracking)?;
        Ok(Self {
            index: n,
            kind: SubproblemKind::Interpolated,
            problem,
            beta: decomp.beta(n),
        })
    }

    pub fn split(
        full: &ControlProblem,
        decomp: &Decomposition,
        n: usize,
        start: CVec,
        end: CVec,
    ) -> Result<Self> {
        let (j0, j1) = decomp.interval(n);
        let penalty = full.penalty.restrict(j0, j1);
        let problem = full.derive(start, end, decomp.sub_grid(n), penalty, Fidelity::Overlap)?;
        Ok(Self {
            index: n,
            kind: SubproblemKind::Split,
            problem,
            beta: decomp.beta(n),
        })
    }

    /// Factor under which the inner solver ascends `J_n`: `β_n` for the
    /// interpolated form so that its steps do not depend on the
    /// decomposition, 1 for the split form.
    pub fn ascent_weight(&self) -> f64 {
        match self.kind {
            SubproblemKind::Interpolated => self.beta,
            SubproblemKind::Split => 1.0,
        }
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.problem.fidelity = fidelity;
        self
    }
}

/// `J_n[u_n]`.
pub fn sub_functional(sub: &Subproblem, u_n: &ControlField) -> Result<f64> {
    evaluate_j(&sub.problem, u_n)
}

/// `∇J_n[u_n]`.
pub fn sub_gradient(sub: &Subproblem, u_n: &ControlField) -> Result<ControlField> {
    gradient(&sub.problem, u_n)
}

/// `J_∥[u, φ] = Σ_n β_n J_n[u_n, φ]` with tracking sub-functionals.
pub fn parallel_functional(
    problem: &ControlProblem,
    u: &ControlField,
    phi: &[CVec],
    decomp: &Decomposition,
) -> Result<f64> {
    if phi.len() != decomp.len() + 1 {
        return Err(IsmError::DimensionMismatch {
            context: "intermediate states",
            expected: decomp.len() + 1,
            found: phi.len(),
        });
    }
    problem.check_control(u)?;
    let mut total = 0.0;
    for n in 0..decomp.len() {
        let sub = Subproblem::interpolated(problem, decomp, n, phi[n].clone(), phi[n + 1].clone())?;
        total += sub.beta * sub_functional(&sub, &u.restrict(decomp, n)?)?;
    }
    Ok(total)
}

/// `Σ_n Σ_j τ ‖g_{n,j}‖₂` (Euclidean norm across channels).
pub fn error_norm(sub_gradients: &[ControlField]) -> f64 {
    let mut err = 0.0;
    for g in sub_gradients {
        let tau = g.grid().tau();
        for j in 0..g.steps() {
            let s: f64 = g.at_step(j).iter().map(|x| x * x).sum();
            err += tau * s.sqrt();
        }
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_norm_constant_gradient() {
        let g = TimeGrid::new(0.0, 3.0, 12).unwrap();
        let f = ControlField::from_fn(g, 1, |_, _| -2.0).unwrap();
        assert!((error_norm(&[f]) - 6.0).abs() < 1e-13);
        assert_eq!(error_norm(&[ControlField::zeros(g, 2)]), 0.0);
    }

    #[test]
    fn tracking_and_overlap_cotangents() {
        let a = CVec::from_real(&[1.0, 0.0]);
        let b = CVec::from_real(&[0.0, 1.0]);
        assert_eq!(Fidelity::Overlap.value(&a, &b), 0.0);
        assert_eq!(Fidelity::Tracking.value(&a, &b), -1.0);
        assert_eq!(Fidelity::Tracking.cotangent(&a, &b), CVec::from_real(&[-1.0, 1.0]));
    }
}
