//! Time stepping: Crank–Nicolson (pure states and density matrices), Strang
//! splitting, trajectories and assembled propagators.
//!
//! Every model implements [`Dynamics`]. Besides the forward step, a model
//! supplies the transpose of its linearized step (`adjoint_step`), which is
//! all that is needed for exact gradients of the time-discrete functional.

use std::fmt::Debug;
use std::sync::Arc;

use crate::controls::ControlField;
use crate::error::{IsmError, Result};
use crate::linalg::{self, CMat, CVec, Dft, Lu, C64, I, ONE};

/// How a model advances its state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagatorKind {
    CnDense,
    StrangSplit,
    NonlinearStrang,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// How an assembled matrix acts on a state vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// `ψ ↦ M ψ`
    Vector,
    /// `ρ ↦ M ρ M^†` on a row-major vectorized square matrix.
    Conjugation,
}

/// A controlled quantum system advanced on a uniform grid.
pub trait Dynamics: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Length of the state vector.
    fn dim(&self) -> usize;

    fn channels(&self) -> usize;

    fn kind(&self) -> PropagatorKind;

    fn is_linear(&self) -> bool {
        self.kind() != PropagatorKind::NonlinearStrang
    }

    /// One step of length `tau` under the control values `u`.
    fn step(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec>;

    /// Exact inverse of [`Dynamics::step`]; linear models only.
    fn step_inverse(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec>;

    /// Pulls the cotangent `adj_next` of the post-step state back through the
    /// step `state -> next` and adds `∂/∂u_c Re<adj_next, step(u, state)>`
    /// into `grad[c]`.
    fn adjoint_step(
        &self,
        u: &[f64],
        tau: f64,
        state: &CVec,
        next: &CVec,
        adj_next: &CVec,
        grad: &mut [f64],
    ) -> Result<CVec>;

    /// Matrix of one step, when the model is linear and dense.
    fn step_propagator(&self, _u: &[f64], _tau: f64) -> Result<(CMat, Action)> {
        Err(IsmError::Capability(format!(
            "{} cannot assemble propagators",
            self.name()
        )))
    }

    /// `[G0 x, G1 x, G2 x]` for the generator expansion
    /// `G(u_c + w) = G0 + w G1 + w² G2` in channel `c`, where the step is
    /// `exp(-i τ G)` to second order. Used by the monotonic solver.
    fn generator_terms(&self, _u: &[f64], _channel: usize, _x: &CVec) -> Result<[CVec; 3]> {
        Err(IsmError::Capability(format!(
            "{} does not expose a polynomial generator",
            self.name()
        )))
    }
}

/// Hamiltonian `H(u)` on a finite-dimensional space with derivatives in
/// each control channel.
pub trait ControlHamiltonian: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn channels(&self) -> usize;
    fn hamiltonian(&self, u: &[f64]) -> CMat;
    /// `∂H/∂u_c` at `u`.
    fn dh_du(&self, channel: usize, u: &[f64]) -> CMat;
    /// `∂²H/∂u_c²`; `None` for control-affine Hamiltonians.
    fn d2h_du2(&self, _channel: usize, _u: &[f64]) -> Option<CMat> {
        None
    }
}

/// `L = i τ/2 H`; returns `(Id + L, Id − L)`.
fn cayley_pair(h: &CMat, tau: f64) -> (CMat, CMat) {
    let n = h.rows();
    let l = h.scale(I * (0.5 * tau));
    let id = CMat::identity(n);
    (id.add(&l), id.sub(&l))
}

/// One Crank–Nicolson step `(Id+L)ψ' = (Id−L)ψ`, or its inverse when
/// `direction` is [`Direction::Backward`].
pub fn cn_step(h: &CMat, tau: f64, psi: &CVec, direction: Direction) -> Result<CVec> {
    if h.rows() != psi.dim() || !h.is_square() {
        return Err(IsmError::DimensionMismatch {
            context: "cn_step",
            expected: h.rows(),
            found: psi.dim(),
        });
    }
    let (plus, minus) = cayley_pair(h, tau);
    let (lhs, rhs) = match direction {
        Direction::Forward => (plus, minus),
        Direction::Backward => (minus, plus),
    };
    let b = linalg::matvec(&rhs, psi)?;
    Ok(Lu::factor(&lhs)?.solve(b.as_slice()))
}

/// Cayley resolvent `R = (Id + iτH/2)^{-1}`; the step matrix is `2R − Id`.
fn cayley_resolvent(h: &CMat, tau: f64) -> Result<CMat> {
    let (plus, _) = cayley_pair(h, tau);
    Ok(Lu::factor(&plus)?.inverse())
}

fn two_r_minus_id(r: &CMat) -> CMat {
    let mut a = r.scale(C64::new(2.0, 0.0));
    for i in 0..a.rows() {
        a[(i, i)] -= ONE;
    }
    a
}

/// Crank–Nicolson propagation of pure states.
#[derive(Debug, Clone)]
pub struct CnDense<H> {
    pub hamiltonian: H,
}

impl<H: ControlHamiltonian> CnDense<H> {
    pub fn new(hamiltonian: H) -> Self {
        Self { hamiltonian }
    }
}

impl<H: ControlHamiltonian> Dynamics for CnDense<H> {
    fn name(&self) -> &str {
        self.hamiltonian.name()
    }

    fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    fn channels(&self) -> usize {
        self.hamiltonian.channels()
    }

    fn kind(&self) -> PropagatorKind {
        PropagatorKind::CnDense
    }

    fn step(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec> {
        cn_step(&self.hamiltonian.hamiltonian(u), tau, state, Direction::Forward)
    }

    fn step_inverse(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec> {
        cn_step(&self.hamiltonian.hamiltonian(u), tau, state, Direction::Backward)
    }

    fn adjoint_step(
        &self,
        u: &[f64],
        tau: f64,
        state: &CVec,
        next: &CVec,
        adj_next: &CVec,
        grad: &mut [f64],
    ) -> Result<CVec> {
        let h = self.hamiltonian.hamiltonian(u);
        let (_, minus) = cayley_pair(&h, tau);
        // w = (Id − L)^{-1} λ_{j+1}; then λ_j = A^† λ_{j+1} = 2w − λ_{j+1}
        let w = Lu::factor(&minus)?.solve(adj_next.as_slice());
        let sum = state.add(next);
        for (c, g) in grad.iter_mut().enumerate() {
            let dh = self.hamiltonian.dh_du(c, u);
            let dh_sum = linalg::matvec(&dh, &sum)?;
            *g += 0.5 * tau * w.dot(&dh_sum).im;
        }
        Ok(CVec::combine(2.0, &w, -1.0, adj_next))
    }

    fn step_propagator(&self, u: &[f64], tau: f64) -> Result<(CMat, Action)> {
        let r = cayley_resolvent(&self.hamiltonian.hamiltonian(u), tau)?;
        Ok((two_r_minus_id(&r), Action::Vector))
    }

    fn generator_terms(&self, u: &[f64], channel: usize, x: &CVec) -> Result<[CVec; 3]> {
        let h = self.hamiltonian.hamiltonian(u);
        let g0 = linalg::matvec(&h, x)?;
        let g1 = linalg::matvec(&self.hamiltonian.dh_du(channel, u), x)?;
        let g2 = match self.hamiltonian.d2h_du2(channel, u) {
            Some(m) => linalg::matvec(&m, x)?.scale_real(0.5),
            None => CVec::zeros(x.dim()),
        };
        Ok([g0, g1, g2])
    }
}

/// Crank–Nicolson propagation of operators by two-sided conjugation
/// `ρ ↦ A ρ A^†`, with `A` the Cayley step matrix. States are row-major
/// vectorized `d×d` matrices; the Euclidean inner product on them is the
/// Hilbert–Schmidt product `tr(A^† B)`.
#[derive(Debug, Clone)]
pub struct CnConjugation<H> {
    pub hamiltonian: H,
}

impl<H: ControlHamiltonian> CnConjugation<H> {
    pub fn new(hamiltonian: H) -> Self {
        Self { hamiltonian }
    }

    fn as_matrix(&self, v: &CVec) -> Result<CMat> {
        let d = self.hamiltonian.dim();
        CMat::from_vec(d, d, v.as_slice().to_vec())
    }
}

impl<H: ControlHamiltonian> Dynamics for CnConjugation<H> {
    fn name(&self) -> &str {
        self.hamiltonian.name()
    }

    fn dim(&self) -> usize {
        let d = self.hamiltonian.dim();
        d * d
    }

    fn channels(&self) -> usize {
        self.hamiltonian.channels()
    }

    fn kind(&self) -> PropagatorKind {
        PropagatorKind::CnDense
    }

    fn step(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec> {
        let a = two_r_minus_id(&cayley_resolvent(&self.hamiltonian.hamiltonian(u), tau)?);
        let rho = self.as_matrix(state)?;
        Ok(a.matmul(&rho).matmul_adjoint(&a).into_cvec())
    }

    fn step_inverse(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec> {
        let a = two_r_minus_id(&cayley_resolvent(&self.hamiltonian.hamiltonian(u), tau)?);
        let rho = self.as_matrix(state)?;
        Ok(a.adjoint_matmul(&rho).matmul(&a).into_cvec())
    }

    fn adjoint_step(
        &self,
        u: &[f64],
        tau: f64,
        state: &CVec,
        _next: &CVec,
        adj_next: &CVec,
        grad: &mut [f64],
    ) -> Result<CVec> {
        let r = cayley_resolvent(&self.hamiltonian.hamiltonian(u), tau)?;
        let a = two_r_minus_id(&r);
        let rho = self.as_matrix(state)?;
        let lam = self.as_matrix(adj_next)?;
        // dA = −iτ R ∂H R du
        // X1 = R ρ A^† Λ^† R,  X2 = R^† Λ^† A ρ R^†
        let r_rho = r.matmul(&rho);
        let x1 = r_rho.matmul_adjoint(&a).matmul_adjoint(&lam).matmul(&r);
        let a_rho = a.matmul(&rho);
        let x2 = r.adjoint_matmul(&lam.adjoint_matmul(&a_rho)).matmul_adjoint(&r);
        for (c, g) in grad.iter_mut().enumerate() {
            let dh = self.hamiltonian.dh_du(c, u);
            let t1 = dh.trace_of_product(&x1);
            let t2 = dh.trace_of_product(&x2);
            *g += (C64::new(0.0, -tau) * t1 + C64::new(0.0, tau) * t2).re;
        }
        Ok(a.adjoint_matmul(&lam).matmul(&a).into_cvec())
    }

    fn step_propagator(&self, u: &[f64], tau: f64) -> Result<(CMat, Action)> {
        let r = cayley_resolvent(&self.hamiltonian.hamiltonian(u), tau)?;
        Ok((two_r_minus_id(&r), Action::Conjugation))
    }

    fn generator_terms(&self, u: &[f64], channel: usize, x: &CVec) -> Result<[CVec; 3]> {
        let rho = self.as_matrix(x)?;
        let h = self.hamiltonian.hamiltonian(u);
        let g0 = h.commutator(&rho).into_cvec();
        let g1 = self.hamiltonian.dh_du(channel, u).commutator(&rho).into_cvec();
        let g2 = match self.hamiltonian.d2h_du2(channel, u) {
            Some(m) => m.commutator(&rho).into_cvec().scale_real(0.5),
            None => CVec::zeros(x.dim()),
        };
        Ok([g0, g1, g2])
    }
}

/// Real potential `V(x, u)` driven by one scalar control.
pub trait ScalarPotential: Send + Sync + Debug {
    fn value(&self, x: f64, u: f64) -> f64;
    /// `∂V/∂u`
    fn du(&self, x: f64, u: f64) -> f64;
}

/// Adjoint used when differentiating split-step dynamics with a density term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitAdjoint {
    /// Transpose of the exact linearization, including the density coupling.
    #[default]
    Linearized,
    /// Treats the density term as a frozen potential.
    Naive,
}

/// `H = K + V(x, u) + g |ψ|²` on a periodic 1D grid, advanced by
/// kinetic half step / potential step / kinetic half step. `K` acts
/// diagonally in Fourier space through `kinetic_symbol`.
///
/// States are coefficient vectors with `Σ|c_k|² = 1`; `density_coupling`
/// multiplies `|c_k|²`, so a physical coupling `κ` on a grid of spacing
/// `dx` enters as `κ/dx`.
#[derive(Debug, Clone)]
pub struct SplitOperatorModel {
    name: String,
    xs: Vec<f64>,
    kinetic_symbol: Vec<f64>,
    potential: Arc<dyn ScalarPotential>,
    density_coupling: f64,
    kinetic_enabled: bool,
    adjoint: SplitAdjoint,
    dft: Dft,
}

impl SplitOperatorModel {
    /// `kinetic_symbol[m]` is the eigenvalue of `K` on Fourier mode `m`
    /// (FFT ordering).
    pub fn new(
        name: impl Into<String>,
        xs: Vec<f64>,
        kinetic_symbol: Vec<f64>,
        potential: Arc<dyn ScalarPotential>,
        density_coupling: f64,
    ) -> Result<Self> {
        if xs.is_empty() || kinetic_symbol.len() != xs.len() {
            return Err(IsmError::DimensionMismatch {
                context: "split-operator grid",
                expected: xs.len(),
                found: kinetic_symbol.len(),
            });
        }
        let n = xs.len();
        Ok(Self {
            name: name.into(),
            xs,
            kinetic_symbol,
            potential,
            density_coupling,
            kinetic_enabled: true,
            adjoint: SplitAdjoint::Linearized,
            dft: Dft::new(n),
        })
    }

    /// Wavenumbers `2π m / L` of a periodic grid of `n` points and length `L`,
    /// FFT ordering.
    pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
        (0..n)
            .map(|m| {
                let m = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
                2.0 * std::f64::consts::PI * m / length
            })
            .collect()
    }

    pub fn with_kinetic(mut self, enabled: bool) -> Self {
        self.kinetic_enabled = enabled;
        self
    }

    pub fn with_adjoint(mut self, adjoint: SplitAdjoint) -> Self {
        self.adjoint = adjoint;
        self
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn kinetic_symbol(&self) -> &[f64] {
        &self.kinetic_symbol
    }

    pub fn density_coupling(&self) -> f64 {
        self.density_coupling
    }

    pub fn potential(&self) -> &Arc<dyn ScalarPotential> {
        &self.potential
    }

    pub fn potential_values(&self, u: f64) -> Vec<f64> {
        self.xs.iter().map(|&x| self.potential.value(x, u)).collect()
    }

    pub fn dft(&self) -> &Dft {
        &self.dft
    }

    /// `exp(∓ i s K)` applied in place.
    fn kinetic(&self, buf: &mut [C64], s: f64) {
        if !self.kinetic_enabled {
            return;
        }
        self.dft.forward_in_place(buf);
        for (z, k) in buf.iter_mut().zip(&self.kinetic_symbol) {
            *z *= C64::from_polar(1.0, -s * k);
        }
        self.dft.inverse_in_place(buf);
    }

    fn phases(&self, u: f64, tau: f64, a: &[C64]) -> Vec<f64> {
        self.xs
            .iter()
            .zip(a)
            .map(|(&x, z)| tau * (self.potential.value(x, u) + self.density_coupling * z.norm_sqr()))
            .collect()
    }

    fn check(&self, u: &[f64], state: &CVec) -> Result<()> {
        if u.len() != 1 {
            return Err(IsmError::DimensionMismatch {
                context: "split-operator control channels",
                expected: 1,
                found: u.len(),
            });
        }
        if state.dim() != self.xs.len() {
            return Err(IsmError::DimensionMismatch {
                context: "split-operator state",
                expected: self.xs.len(),
                found: state.dim(),
            });
        }
        Ok(())
    }
}

/// One Strang step `e^{-iτK/2} e^{-iτ(V(u)+g|φ|²)} e^{-iτK/2}`, where the
/// density is taken from the state after the first kinetic half step.
pub fn strang_step(model: &SplitOperatorModel, u: f64, tau: f64, psi: &CVec) -> Result<CVec> {
    model.step(&[u], tau, psi)
}

impl Dynamics for SplitOperatorModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.xs.len()
    }

    fn channels(&self) -> usize {
        1
    }

    fn kind(&self) -> PropagatorKind {
        if self.density_coupling == 0.0 {
            PropagatorKind::StrangSplit
        } else {
            PropagatorKind::NonlinearStrang
        }
    }

    fn step(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec> {
        self.check(u, state)?;
        let mut buf = state.as_slice().to_vec();
        self.kinetic(&mut buf, 0.5 * tau);
        let theta = self.phases(u[0], tau, &buf);
        for (z, th) in buf.iter_mut().zip(&theta) {
            *z *= C64::from_polar(1.0, -th);
        }
        self.kinetic(&mut buf, 0.5 * tau);
        Ok(CVec::new(buf))
    }

    fn step_inverse(&self, u: &[f64], tau: f64, state: &CVec) -> Result<CVec> {
        if !self.is_linear() {
            return Err(IsmError::Capability(format!(
                "{} is nonlinear; backward propagation needs the adjoint sweep",
                self.name
            )));
        }
        self.check(u, state)?;
        let mut buf = state.as_slice().to_vec();
        self.kinetic(&mut buf, -0.5 * tau);
        for (z, &x) in buf.iter_mut().zip(&self.xs) {
            *z *= C64::from_polar(1.0, tau * self.potential.value(x, u[0]));
        }
        self.kinetic(&mut buf, -0.5 * tau);
        Ok(CVec::new(buf))
    }

    fn adjoint_step(
        &self,
        u: &[f64],
        tau: f64,
        state: &CVec,
        _next: &CVec,
        adj_next: &CVec,
        grad: &mut [f64],
    ) -> Result<CVec> {
        self.check(u, state)?;
        let mut a = state.as_slice().to_vec();
        self.kinetic(&mut a, 0.5 * tau);
        let theta = self.phases(u[0], tau, &a);
        let mut m = adj_next.as_slice().to_vec();
        self.kinetic(&mut m, -0.5 * tau);
        let g = self.density_coupling;
        let mut du = 0.0;
        for k in 0..m.len() {
            m[k] *= C64::from_polar(1.0, theta[k]);
            let s = (m[k].conj() * a[k]).im;
            du += s * self.potential.du(self.xs[k], u[0]);
            if self.adjoint == SplitAdjoint::Linearized && g != 0.0 {
                m[k] += a[k] * (2.0 * g * tau * s);
            }
        }
        grad[0] += tau * du;
        self.kinetic(&mut m, -0.5 * tau);
        Ok(CVec::new(m))
    }
}

fn check_field(model: &dyn Dynamics, u: &ControlField, state: &CVec) -> Result<()> {
    if u.channels() != model.channels() {
        return Err(IsmError::DimensionMismatch {
            context: "control channels",
            expected: model.channels(),
            found: u.channels(),
        });
    }
    if state.dim() != model.dim() {
        return Err(IsmError::DimensionMismatch {
            context: "state dimension",
            expected: model.dim(),
            found: state.dim(),
        });
    }
    Ok(())
}

/// Full trajectory on the grid points of `u`.
///
/// Forward: `traj[0] = state`. Backward: `traj[J] = state` and each earlier
/// point is obtained with the inverse step, which for unitary linear
/// dynamics is the adjoint recursion `(Id−L_{j−1})χ_{j−1} = (Id+L_j)χ_j`
/// written on grid points.
pub fn propagate(
    model: &dyn Dynamics,
    u: &ControlField,
    state: &CVec,
    direction: Direction,
) -> Result<Vec<CVec>> {
    check_field(model, u, state)?;
    let tau = u.grid().tau();
    let steps = u.steps();
    match direction {
        Direction::Forward => {
            let mut traj = Vec::with_capacity(steps + 1);
            traj.push(state.clone());
            for j in 0..steps {
                let next = model.step(u.at_step(j), tau, &traj[j])?;
                traj.push(next);
            }
            Ok(traj)
        }
        Direction::Backward => {
            let mut traj = vec![state.clone()];
            for j in (0..steps).rev() {
                let prev = model.step_inverse(u.at_step(j), tau, traj.last().unwrap())?;
                traj.push(prev);
            }
            traj.reverse();
            Ok(traj)
        }
    }
}

/// Final state only.
pub fn propagate_final(model: &dyn Dynamics, u: &ControlField, state: &CVec) -> Result<CVec> {
    check_field(model, u, state)?;
    let tau = u.grid().tau();
    let mut psi = state.clone();
    for j in 0..u.steps() {
        psi = model.step(u.at_step(j), tau, &psi)?;
    }
    if !psi.is_finite() {
        return Err(IsmError::NonFinite("propagated state".into()));
    }
    Ok(psi)
}

/// Backward sweep from a final state only (linear models).
pub fn propagate_back_initial(model: &dyn Dynamics, u: &ControlField, state: &CVec) -> Result<CVec> {
    check_field(model, u, state)?;
    let tau = u.grid().tau();
    let mut chi = state.clone();
    for j in (0..u.steps()).rev() {
        chi = model.step_inverse(u.at_step(j), tau, &chi)?;
    }
    Ok(chi)
}

/// Result of a forward/adjoint sweep.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub final_state: CVec,
    /// Time-major, same layout as the control samples.
    pub gradient: Vec<f64>,
    /// Forward states at the requested grid indices.
    pub forward_at: Vec<CVec>,
    /// Adjoint states at the requested grid indices.
    pub adjoint_at: Vec<CVec>,
}

/// Forward propagation from `state`, then the adjoint sweep seeded with
/// `final_cotangent(ψ_J)`. The gradient holds `∂/∂u_{c,j} Re<λ_J, ψ_J>` for a
/// cotangent that does not depend on `u` (the caller adds penalty terms).
///
/// Forward states are kept every `stride` steps and recomputed per segment
/// during the backward pass; recomputation is deterministic so results do
/// not depend on `stride`.
pub fn adjoint_sweep(
    model: &dyn Dynamics,
    u: &ControlField,
    state: &CVec,
    final_cotangent: impl FnOnce(&CVec) -> CVec,
    record: &[usize],
    stride: usize,
) -> Result<Sweep> {
    check_field(model, u, state)?;
    let tau = u.grid().tau();
    let steps = u.steps();
    let channels = u.channels();
    let stride = stride.clamp(1, steps.max(1));

    let mut forward_at = vec![CVec::zeros(0); record.len()];
    let mut adjoint_at = vec![CVec::zeros(0); record.len()];
    let mut checkpoints = Vec::with_capacity(steps / stride + 1);
    let mut psi = state.clone();
    for j in 0..steps {
        if j % stride == 0 {
            checkpoints.push(psi.clone());
        }
        for (slot, &k) in record.iter().enumerate() {
            if k == j {
                forward_at[slot] = psi.clone();
            }
        }
        psi = model.step(u.at_step(j), tau, &psi)?;
    }
    if !psi.is_finite() {
        return Err(IsmError::NonFinite("forward sweep".into()));
    }
    for (slot, &k) in record.iter().enumerate() {
        if k == steps {
            forward_at[slot] = psi.clone();
        }
    }
    let final_state = psi;
    let mut lambda = final_cotangent(&final_state);
    if lambda.dim() != final_state.dim() {
        return Err(IsmError::DimensionMismatch {
            context: "final cotangent",
            expected: final_state.dim(),
            found: lambda.dim(),
        });
    }
    let mut gradient = vec![0.0; steps * channels];
    for (slot, &k) in record.iter().enumerate() {
        if k == steps {
            adjoint_at[slot] = lambda.clone();
        }
    }
    for seg in (0..checkpoints.len()).rev() {
        let j0 = seg * stride;
        let j1 = ((seg + 1) * stride).min(steps);
        let mut states = Vec::with_capacity(j1 - j0 + 1);
        states.push(checkpoints[seg].clone());
        for j in j0..j1 {
            let next = if j + 1 == j1 {
                checkpoints.get(seg + 1).unwrap_or(&final_state).clone()
            } else {
                model.step(u.at_step(j), tau, &states[j - j0])?
            };
            states.push(next);
        }
        for j in (j0..j1).rev() {
            let g = &mut gradient[j * channels..(j + 1) * channels];
            lambda = model.adjoint_step(
                u.at_step(j),
                tau,
                &states[j - j0],
                &states[j - j0 + 1],
                &lambda,
                g,
            )?;
            for (slot, &k) in record.iter().enumerate() {
                if k == j {
                    adjoint_at[slot] = lambda.clone();
                }
            }
        }
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(IsmError::NonFinite("adjoint sweep gradient".into()));
    }
    Ok(Sweep {
        final_state,
        gradient,
        forward_at,
        adjoint_at,
    })
}

/// Product of step matrices over a control span.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledPropagator {
    matrix: CMat,
    action: Action,
    t_start: f64,
    t_end: f64,
}

impl AssembledPropagator {
    pub fn new(matrix: CMat, action: Action, t_start: f64, t_end: f64) -> Self {
        Self {
            matrix,
            action,
            t_start,
            t_end,
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn apply(&self, state: &CVec) -> Result<CVec> {
        match self.action {
            Action::Vector => linalg::matvec(&self.matrix, state),
            Action::Conjugation => {
                let d = self.matrix.rows();
                let rho = CMat::from_vec(d, d, state.as_slice().to_vec())?;
                Ok(self.matrix.matmul(&rho).matmul_adjoint(&self.matrix).into_cvec())
            }
        }
    }

    /// Adjoint action, which for unitary propagators is the inverse.
    pub fn apply_adjoint(&self, state: &CVec) -> Result<CVec> {
        match self.action {
            Action::Vector => linalg::adjoint_matvec(&self.matrix, state),
            Action::Conjugation => {
                let d = self.matrix.rows();
                let rho = CMat::from_vec(d, d, state.as_slice().to_vec())?;
                Ok(self.matrix.adjoint_matmul(&rho).matmul(&self.matrix).into_cvec())
            }
        }
    }

    /// `later ∘ earlier`; the spans must abut.
    pub fn compose(later: &AssembledPropagator, earlier: &AssembledPropagator) -> Result<Self> {
        let tol = 1e-9 * (later.t_end - earlier.t_start).abs().max(1e-300);
        if (later.t_start - earlier.t_end).abs() > tol || later.action != earlier.action {
            return Err(IsmError::Layout(format!(
                "cannot compose propagators over [{}, {}] and [{}, {}]",
                earlier.t_start, earlier.t_end, later.t_start, later.t_end
            )));
        }
        Ok(Self {
            matrix: later.matrix.matmul(&earlier.matrix),
            action: later.action,
            t_start: earlier.t_start,
            t_end: later.t_end,
        })
    }

    pub fn unitarity_residual(&self) -> f64 {
        self.matrix.unitarity_residual()
    }
}

/// `M(u) = Π_j A_j` over the whole span of `u`.
pub fn assemble_propagator(model: &dyn Dynamics, u: &ControlField) -> Result<AssembledPropagator> {
    if !model.is_linear() {
        return Err(IsmError::Capability(format!(
            "{} is nonlinear; no propagator exists",
            model.name()
        )));
    }
    let tau = u.grid().tau();
    let mut acc: Option<(CMat, Action)> = None;
    for j in 0..u.steps() {
        let (a, action) = model.step_propagator(u.at_step(j), tau)?;
        acc = Some(match acc {
            None => (a, action),
            Some((m, _)) => (a.matmul(&m), action),
        });
    }
    let (matrix, action) = acc.ok_or_else(|| IsmError::Layout("empty control".into()))?;
    Ok(AssembledPropagator::new(
        matrix,
        action,
        u.grid().t_start(),
        u.grid().t_end(),
    ))
}
