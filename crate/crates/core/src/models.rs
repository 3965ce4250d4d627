//! Benchmark systems: coupled spins, a rigid rotor in a THz field and a 1D
//! condensate in a deformable trap, plus small fixtures used in tests.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controls::{ControlField, PenaltySchedule, TimeGrid};
use crate::error::{IsmError, Result};
use crate::linalg::{self, CMat, CVec, C64, I, ZERO};
use crate::objective::ControlProblem;
use crate::propagation::{
    CnConjugation, CnDense, ControlHamiltonian, Dynamics, ScalarPotential, SplitAdjoint,
    SplitOperatorModel,
};

/// `H(u) = H_0 + Σ_c u_c H_c`.
#[derive(Clone, Debug)]
pub struct AffineHamiltonian {
    name: String,
    drift: CMat,
    controls: Vec<CMat>,
}

impl AffineHamiltonian {
    pub fn new(name: impl Into<String>, drift: CMat, controls: Vec<CMat>) -> Result<Self> {
        let d = drift.rows();
        let mut worst = drift.hermitian_residual();
        if !drift.is_square() {
            return Err(IsmError::DimensionMismatch {
                context: "drift Hamiltonian",
                expected: d,
                found: drift.cols(),
            });
        }
        for h in &controls {
            if h.rows() != d || h.cols() != d {
                return Err(IsmError::DimensionMismatch {
                    context: "control Hamiltonian",
                    expected: d,
                    found: h.rows(),
                });
            }
            worst = worst.max(h.hermitian_residual());
        }
        if worst > 1e-12 {
            return Err(IsmError::NotHermitian { residual: worst });
        }
        Ok(Self {
            name: name.into(),
            drift,
            controls,
        })
    }

    pub fn drift(&self) -> &CMat {
        &self.drift
    }

    pub fn control_operator(&self, c: usize) -> &CMat {
        &self.controls[c]
    }
}

impl ControlHamiltonian for AffineHamiltonian {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.drift.rows()
    }

    fn channels(&self) -> usize {
        self.controls.len()
    }

    fn hamiltonian(&self, u: &[f64]) -> CMat {
        let mut h = self.drift.clone();
        for (hc, &x) in self.controls.iter().zip(u) {
            if x != 0.0 {
                h.axpy(C64::new(x, 0.0), hc);
            }
        }
        h
    }

    fn dh_du(&self, channel: usize, _u: &[f64]) -> CMat {
        self.controls[channel].clone()
    }
}

// ---------------------------------------------------------------- spins

/// Single-spin operators `I_x, I_y, I_z` (eigenvalues ±½) embedded at each
/// position of an `n`-spin register; spin 0 is the most significant bit.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub x: Vec<CMat>,
    pub y: Vec<CMat>,
    pub z: Vec<CMat>,
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    CMat::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

fn embed(single: &CMat, k: usize, n: usize) -> CMat {
    let id = CMat::identity(2);
    let mut out = CMat::identity(1);
    for p in 0..n {
        out = kron(&out, if p == k { single } else { &id });
    }
    out
}

impl SpinOperators {
    pub fn new(n: usize) -> Self {
        let h = C64::new(0.5, 0.0);
        let sx = CMat::from_vec(2, 2, vec![ZERO, h, h, ZERO]).unwrap();
        let sy = CMat::from_vec(2, 2, vec![ZERO, -I * 0.5, I * 0.5, ZERO]).unwrap();
        let sz = CMat::from_vec(2, 2, vec![h, ZERO, ZERO, -h]).unwrap();
        Self {
            x: (0..n).map(|k| embed(&sx, k, n)).collect(),
            y: (0..n).map(|k| embed(&sy, k, n)).collect(),
            z: (0..n).map(|k| embed(&sz, k, n)).collect(),
        }
    }
}

/// Coupled spin register.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinParams {
    pub spins: usize,
    /// 1-based spin pairs; `None` selects the default topology restricted
    /// to the register.
    #[serde(default)]
    pub couplings: Option<Vec<(usize, usize)>>,
    /// Uniform coupling constant.
    pub jp: f64,
    pub t_final: f64,
    pub steps: usize,
    /// Amplitude of the seeded random starting field.
    #[serde(default = "default_spin_amplitude")]
    pub initial_amplitude: f64,
}

fn default_spin_amplitude() -> f64 {
    1.0
}

pub const SPIN_TOPOLOGY: [(usize, usize); 5] = [(1, 2), (1, 3), (2, 3), (2, 5), (3, 4)];

impl SpinParams {
    pub fn reference() -> Self {
        Self {
            spins: 5,
            couplings: None,
            jp: 140.0,
            t_final: 14.0,
            steps: 1 << 15,
            initial_amplitude: default_spin_amplitude(),
        }
    }

    /// Three spins on `2^10` steps over `T = 0.5`, short enough for the
    /// `ρ = 10⁴` gradient iteration to ascend steadily.
    pub fn quick() -> Self {
        Self {
            spins: 3,
            t_final: 0.5,
            steps: 1 << 10,
            ..Self::reference()
        }
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match &self.couplings {
            Some(p) => p.clone(),
            None => SPIN_TOPOLOGY
                .iter()
                .copied()
                .filter(|&(a, b)| a <= self.spins && b <= self.spins)
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.spins == 0 || self.spins > 6 {
            return Err(cfg("model.spins", "must be between 1 and 6"));
        }
        for (a, b) in self.pairs() {
            if a == 0 || b == 0 || a > self.spins || b > self.spins || a == b {
                return Err(cfg("model.couplings", &format!("invalid pair ({a}, {b})")));
            }
        }
        check_horizon(self.t_final, self.steps)
    }
}

fn cfg(key: &str, message: &str) -> IsmError {
    IsmError::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn check_horizon(t_final: f64, steps: usize) -> Result<()> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(cfg("model.t_final", "must be positive"));
    }
    if steps == 0 {
        return Err(cfg("model.steps", "must be positive"));
    }
    Ok(())
}

/// `H = 2π Σ J_kl I_z^k I_z^l + Σ_k (u_x^k I_x^k + u_y^k I_y^k)`, channels
/// ordered `x_1, y_1, x_2, y_2, …`.
pub fn spin_hamiltonian(p: &SpinParams) -> Result<(AffineHamiltonian, SpinOperators)> {
    p.validate()?;
    let ops = SpinOperators::new(p.spins);
    let d = 1usize << p.spins;
    let mut h0 = CMat::zeros(d, d);
    for (a, b) in p.pairs() {
        let zz = ops.z[a - 1].matmul(&ops.z[b - 1]);
        h0.axpy(C64::new(2.0 * std::f64::consts::PI * p.jp, 0.0), &zz);
    }
    let mut controls = Vec::with_capacity(2 * p.spins);
    for k in 0..p.spins {
        controls.push(ops.x[k].clone());
        controls.push(ops.y[k].clone());
    }
    Ok((AffineHamiltonian::new("spins", h0, controls)?, ops))
}

/// Transfer `I_x` of the first spin to `I_x` of the last spin with density
/// matrices propagated by conjugation and no field penalty.
pub fn spin_problem(p: &SpinParams) -> Result<ControlProblem> {
    let (h, ops) = spin_hamiltonian(p)?;
    let grid = TimeGrid::new(0.0, p.t_final, p.steps)?;
    let model: Arc<dyn Dynamics> = Arc::new(CnConjugation::new(h));
    ControlProblem::new(
        model,
        ops.x[0].to_cvec(),
        ops.x[p.spins - 1].to_cvec(),
        grid,
        PenaltySchedule::zero(p.steps),
    )
}

/// Seeded random starting field. The zero field is a stationary point of
/// the spin transfer, so plain gradient ascent needs a nonzero start.
pub fn random_control(grid: TimeGrid, channels: usize, amplitude: f64, rng: &mut impl Rng) -> ControlField {
    ControlField::from_fn(grid, channels, |_, _| amplitude * rng.gen_range(-1.0..1.0))
        .expect("finite samples")
}

// ---------------------------------------------------------------- rotor

/// Linear rotor in the `m = 0` block, `j = 0..=j_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorParams {
    pub j_max: usize,
    pub t_final: f64,
    pub steps: usize,
    #[serde(default = "RotorParams::default_b")]
    pub b: f64,
    #[serde(default = "RotorParams::default_mu0")]
    pub mu0: f64,
    #[serde(default = "RotorParams::default_alpha_par")]
    pub alpha_par: f64,
    #[serde(default = "RotorParams::default_alpha_perp")]
    pub alpha_perp: f64,
}

impl RotorParams {
    fn default_b() -> f64 {
        6.6376e-6
    }
    fn default_mu0() -> f64 {
        1.1413
    }
    fn default_alpha_par() -> f64 {
        20.055
    }
    fn default_alpha_perp() -> f64 {
        8.638
    }

    /// One rotational period `π/B`, which the horizon of the reference runs
    /// does not fix; see the README.
    pub fn reference() -> Self {
        let b = Self::default_b();
        Self {
            j_max: 30,
            t_final: std::f64::consts::PI / b,
            steps: 1 << 12,
            b,
            mu0: Self::default_mu0(),
            alpha_par: Self::default_alpha_par(),
            alpha_perp: Self::default_alpha_perp(),
        }
    }

    /// `j_max = 10` over half a rotational period.
    pub fn quick() -> Self {
        let reference = Self::reference();
        Self {
            j_max: 10,
            t_final: 0.5 * reference.t_final,
            steps: 1 << 10,
            ..reference
        }
    }

    fn validate(&self) -> Result<()> {
        if self.j_max < 4 {
            return Err(cfg("model.j_max", "must be at least 4 for the orientation target"));
        }
        if !(self.b > 0.0) {
            return Err(cfg("model.b", "must be positive"));
        }
        check_horizon(self.t_final, self.steps)
    }
}

/// `H(E) = B J² − μ₀ E cosθ − E²/2 [(α∥−α⊥) cos²θ + α⊥]`.
#[derive(Clone, Debug)]
pub struct RotorHamiltonian {
    rotational: CMat,
    cos: CMat,
    polarizability: CMat,
    mu0: f64,
}

/// `cosθ` in the `|j,0>` basis: tridiagonal, zero diagonal,
/// `<j+1|cosθ|j> = (j+1)/√((2j+1)(2j+3))`.
pub fn cos_theta(j_max: usize) -> CMat {
    let n = j_max + 1;
    let mut m = CMat::zeros(n, n);
    for j in 0..j_max {
        let jf = j as f64;
        let v = (jf + 1.0) / ((2.0 * jf + 1.0) * (2.0 * jf + 3.0)).sqrt();
        m[(j, j + 1)] = C64::new(v, 0.0);
        m[(j + 1, j)] = C64::new(v, 0.0);
    }
    m
}

impl RotorHamiltonian {
    pub fn new(p: &RotorParams) -> Result<Self> {
        p.validate()?;
        let n = p.j_max + 1;
        let diag: Vec<C64> = (0..n)
            .map(|j| C64::new(p.b * (j * (j + 1)) as f64, 0.0))
            .collect();
        let cos = cos_theta(p.j_max);
        let cos2 = cos.matmul(&cos);
        let mut pol = cos2.scale(C64::new(p.alpha_par - p.alpha_perp, 0.0));
        for j in 0..n {
            pol[(j, j)] += C64::new(p.alpha_perp, 0.0);
        }
        Ok(Self {
            rotational: CMat::from_diagonal(&diag),
            cos,
            polarizability: pol,
            mu0: p.mu0,
        })
    }

    pub fn cos(&self) -> &CMat {
        &self.cos
    }
}

impl ControlHamiltonian for RotorHamiltonian {
    fn name(&self) -> &str {
        "rotor"
    }

    fn dim(&self) -> usize {
        self.rotational.rows()
    }

    fn channels(&self) -> usize {
        1
    }

    fn hamiltonian(&self, u: &[f64]) -> CMat {
        let e = u[0];
        let mut h = self.rotational.clone();
        h.axpy(C64::new(-self.mu0 * e, 0.0), &self.cos);
        h.axpy(C64::new(-0.5 * e * e, 0.0), &self.polarizability);
        h
    }

    fn dh_du(&self, _channel: usize, u: &[f64]) -> CMat {
        let mut d = self.cos.scale(C64::new(-self.mu0, 0.0));
        d.axpy(C64::new(-u[0], 0.0), &self.polarizability);
        d
    }

    fn d2h_du2(&self, _channel: usize, _u: &[f64]) -> Option<CMat> {
        Some(self.polarizability.scale(C64::new(-1.0, 0.0)))
    }
}

/// Eigenvector of `cosθ` with the largest eigenvalue in the `j ≤ 4` block,
/// zero-padded to `j_max`, sign fixed so the first component is positive.
pub fn orientation_target(j_max: usize) -> Result<(f64, CVec)> {
    if j_max < 4 {
        return Err(cfg("model.j_max", "must be at least 4 for the orientation target"));
    }
    let (vals, vecs) = linalg::eig_hermitian(&cos_theta(4))?;
    let mut v = linalg::column(&vecs, 4);
    let phase = v[0] / v[0].norm();
    v = v.scale(phase.conj());
    let mut data = v.into_vec();
    for z in data.iter_mut() {
        *z = C64::new(z.re, 0.0);
    }
    data.resize(j_max + 1, ZERO);
    Ok((vals[4], CVec::new(data)))
}

/// `α(t) = 10⁵ ((t − T/2)/(T/2))⁶ + 10⁴`.
pub fn rotor_penalty(t: f64, t_final: f64) -> f64 {
    let s = (t - 0.5 * t_final) / (0.5 * t_final);
    1e5 * s.powi(6) + 1e4
}

/// Orientation of the rotor from `|0,0>`, penalty sampled at step midpoints.
pub fn rotor_problem(p: &RotorParams) -> Result<ControlProblem> {
    let h = RotorHamiltonian::new(p)?;
    let grid = TimeGrid::new(0.0, p.t_final, p.steps)?;
    let (_, target) = orientation_target(p.j_max)?;
    let penalty = PenaltySchedule::from_fn(&grid, |t| rotor_penalty(t, p.t_final))?;
    let model: Arc<dyn Dynamics> = Arc::new(CnDense::new(h));
    ControlProblem::new(model, CVec::basis(p.j_max + 1, 0), target, grid, penalty)
}

// ---------------------------------------------------------------- condensate

/// Double-well deformation of a harmonic trap:
/// `½(|x| − λd/2)²` for `|x| > λd/4`, else `½((λd)²/8 − x²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitTrap {
    pub d: f64,
}

impl ScalarPotential for SplitTrap {
    fn value(&self, x: f64, lambda: f64) -> f64 {
        let ld = lambda * self.d;
        if x.abs() > 0.25 * ld {
            0.5 * (x.abs() - 0.5 * ld).powi(2)
        } else {
            0.5 * (ld * ld / 8.0 - x * x)
        }
    }

    fn du(&self, x: f64, lambda: f64) -> f64 {
        let ld = lambda * self.d;
        if x.abs() > 0.25 * ld {
            -0.5 * self.d * (x.abs() - 0.5 * ld)
        } else {
            lambda * self.d * self.d / 8.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpeParams {
    pub points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub kappa: f64,
    pub d: f64,
    pub t_final: f64,
    pub steps: usize,
    #[serde(default)]
    pub adjoint: SplitAdjoint,
}

impl GpeParams {
    pub fn reference() -> Self {
        Self {
            points: 50,
            x_min: -10.0,
            x_max: 10.0,
            kappa: 1.0,
            d: 10.0,
            t_final: 8.0,
            steps: 1 << 9,
            adjoint: SplitAdjoint::Linearized,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(cfg("model.points", "needs at least two grid points"));
        }
        if !(self.x_max > self.x_min) {
            return Err(cfg("model.x_max", "must exceed model.x_min"));
        }
        if !(self.kappa >= 0.0) {
            return Err(cfg("model.kappa", "must be nonnegative"));
        }
        if !(self.d > 0.0) {
            return Err(cfg("model.d", "must be positive"));
        }
        check_horizon(self.t_final, self.steps)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.points as f64
    }
}

/// Periodic grid `x_k = x_min + k dx`, `H = −½∂² + V(x, λ) + κ|ψ|²`.
pub fn gpe_model(p: &GpeParams) -> Result<SplitOperatorModel> {
    p.validate()?;
    let dx = p.dx();
    let xs: Vec<f64> = (0..p.points).map(|k| p.x_min + k as f64 * dx).collect();
    let symbol = SplitOperatorModel::wavenumbers(p.points, p.x_max - p.x_min)
        .into_iter()
        .map(|k| 0.5 * k * k)
        .collect();
    Ok(
        SplitOperatorModel::new("gpe", xs, symbol, Arc::new(SplitTrap { d: p.d }), p.kappa / dx)?
            .with_adjoint(p.adjoint),
    )
}

/// Ground state report.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: CVec,
    pub chemical_potential: f64,
    pub residual: f64,
    /// Energy after each imaginary-time step.
    pub energies: Vec<f64>,
}

/// Dense `K + diag(V + g|ψ|²)` in the grid basis.
fn mean_field_matrix(model: &SplitOperatorModel, lambda: f64, psi: &CVec) -> CMat {
    let n = model.dim();
    let mut h = CMat::zeros(n, n);
    for j in 0..n {
        let mut col = CVec::basis(n, j).into_vec();
        model.dft().forward_in_place(&mut col);
        for (z, k) in col.iter_mut().zip(model.kinetic_symbol()) {
            *z *= *k;
        }
        model.dft().inverse_in_place(&mut col);
        for i in 0..n {
            h[(i, j)] = col[i];
        }
    }
    let v = model.potential_values(lambda);
    for i in 0..n {
        h[(i, i)] += C64::new(v[i] + model.density_coupling() * psi[i].norm_sqr(), 0.0);
    }
    // symmetrize away FFT rounding
    let ha = h.adjoint();
    let mut s = h.add(&ha);
    s = s.scale(C64::new(0.5, 0.0));
    s
}

/// Gross–Pitaevskii energy `<ψ|K + V|ψ> + g/2 Σ|ψ_k|⁴`.
pub fn gpe_energy(model: &SplitOperatorModel, lambda: f64, psi: &CVec) -> f64 {
    let mut a = psi.as_slice().to_vec();
    model.dft().forward_in_place(&mut a);
    let kin: f64 = a
        .iter()
        .zip(model.kinetic_symbol())
        .map(|(z, k)| z.norm_sqr() * k)
        .sum();
    let v = model.potential_values(lambda);
    let pot: f64 = psi
        .iter()
        .zip(&v)
        .map(|(z, v)| z.norm_sqr() * (v + 0.5 * model.density_coupling() * z.norm_sqr()))
        .sum();
    kin + pot
}

fn mean_field_residual(model: &SplitOperatorModel, lambda: f64, psi: &CVec) -> Result<(f64, f64)> {
    let h = mean_field_matrix(model, lambda, psi);
    let hp = linalg::matvec(&h, psi)?;
    let mu = psi.dot(&hp).re;
    Ok((mu, hp.sub(&psi.scale_real(mu)).norm()))
}

/// One normalized imaginary-time Strang step.
pub fn imaginary_time_step(model: &SplitOperatorModel, lambda: f64, tau: f64, psi: &CVec) -> CVec {
    let dft = model.dft();
    let half = |buf: &mut [C64]| {
        dft.forward_in_place(buf);
        for (z, k) in buf.iter_mut().zip(model.kinetic_symbol()) {
            *z *= (-0.5 * tau * k).exp();
        }
        dft.inverse_in_place(buf);
    };
    let mut buf = psi.as_slice().to_vec();
    half(&mut buf);
    let v = model.potential_values(lambda);
    let g = model.density_coupling();
    for (z, v) in buf.iter_mut().zip(&v) {
        *z *= (-tau * (v + g * z.norm_sqr())).exp();
    }
    half(&mut buf);
    let out = CVec::new(buf);
    let n = out.norm();
    out.scale_real(1.0 / n)
}

const POLISH_CAP: usize = 5000;
const POLISH_SIGMA: f64 = 1.0;

/// Mean-field ground state at fixed control `λ`: imaginary-time Strang
/// propagation (`τ = 10⁻²`) until the energy settles, then unsplit steps
/// `ψ ← e^{−σH[ψ]}ψ/‖·‖` through the dense mean-field Hamiltonian until
/// `‖(H[ψ] − μ)ψ‖ ≤ 10⁻⁹`. The second stage removes the splitting bias of
/// the first.
pub fn ground_state(model: &SplitOperatorModel, lambda: f64) -> Result<GroundState> {
    let n = model.dim();
    let tau = 1e-2;
    let mut psi: CVec = model
        .xs()
        .iter()
        .map(|&x| C64::new((-0.5 * x * x).exp() + 1e-3, 0.0))
        .collect();
    psi = psi.scale_real(1.0 / psi.norm());
    let mut energies = vec![gpe_energy(model, lambda, &psi)];
    let mut converged = false;
    for _ in 0..200_000 {
        psi = imaginary_time_step(model, lambda, tau, &psi);
        let e = gpe_energy(model, lambda, &psi);
        let de = (e - energies.last().unwrap()).abs();
        energies.push(e);
        if de < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        let (_, r) = mean_field_residual(model, lambda, &psi)?;
        return Err(IsmError::NotConverged {
            what: "imaginary-time ground state",
            iterations: energies.len() - 1,
            residual: r,
        });
    }
    let mut residual = f64::INFINITY;
    let mut mu = 0.0;
    let mut polish = 0;
    while polish < POLISH_CAP {
        let (m, r) = mean_field_residual(model, lambda, &psi)?;
        mu = m;
        residual = r;
        if r <= 1e-9 {
            break;
        }
        let (vals, vecs) = linalg::eig_hermitian(&mean_field_matrix(model, lambda, &psi))?;
        let coeff = linalg::adjoint_matvec(&vecs, &psi)?;
        let damped: CVec = (0..n)
            .map(|k| coeff[k] * (-POLISH_SIGMA * (vals[k] - vals[0])).exp())
            .collect();
        let next = linalg::matvec(&vecs, &damped)?;
        psi = next.scale_real(1.0 / next.norm());
        polish += 1;
    }
    if residual > 1e-8 {
        return Err(IsmError::NotConverged {
            what: "self-consistent ground state",
            iterations: polish,
            residual,
        });
    }
    // real, positive gauge
    let k = (0..n)
        .max_by(|&a, &b| psi[a].norm().total_cmp(&psi[b].norm()))
        .unwrap();
    let phase = psi[k] / psi[k].norm();
    psi = psi.scale(phase.conj());
    Ok(GroundState {
        state: psi,
        chemical_potential: mu,
        residual,
        energies,
    })
}

/// Condensate transfer from the ground state at `λ = 1` to the ground
/// state at `λ = 0`, no penalty.
pub fn gpe_problem(p: &GpeParams) -> Result<ControlProblem> {
    let model = gpe_model(p)?;
    let start = ground_state(&model, 1.0)?.state;
    let goal = ground_state(&model, 0.0)?.state;
    let grid = TimeGrid::new(0.0, p.t_final, p.steps)?;
    let model: Arc<dyn Dynamics> = Arc::new(model);
    ControlProblem::new(model, start, goal, grid, PenaltySchedule::zero(p.steps))
}

/// Linear ramp `λ(t) = 1 − t/T` from the initial to the final trap.
pub fn gpe_ramp(grid: TimeGrid) -> ControlField {
    let t = grid.duration();
    let t0 = grid.t_start();
    ControlField::from_fn(grid, 1, |_, s| 1.0 - (s - t0) / t).expect("finite ramp")
}

// ---------------------------------------------------------------- fixtures

/// `H = (Δ/2) σ_z + (u/2) σ_x`.
pub fn two_level(detuning: f64) -> AffineHamiltonian {
    let h = 0.5;
    let sz = CMat::from_diagonal(&[C64::new(h * detuning, 0.0), C64::new(-h * detuning, 0.0)]);
    let sx = CMat::from_vec(2, 2, vec![ZERO, C64::new(h, 0.0), C64::new(h, 0.0), ZERO]).unwrap();
    AffineHamiltonian::new("two-level", sz, vec![sx]).expect("Hermitian")
}

/// Population transfer `|0> → |1>` in a two-level system.
pub fn two_level_problem(detuning: f64, t_final: f64, steps: usize, alpha: f64) -> Result<ControlProblem> {
    let grid = TimeGrid::new(0.0, t_final, steps)?;
    let model: Arc<dyn Dynamics> = Arc::new(CnDense::new(two_level(detuning)));
    ControlProblem::new(
        model,
        CVec::basis(2, 0),
        CVec::basis(2, 1),
        grid,
        PenaltySchedule::constant(alpha, steps)?,
    )
}

pub fn random_hermitian(dim: usize, scale: f64, rng: &mut impl Rng) -> CMat {
    let a = CMat::from_fn(dim, dim, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    a.add(&a.adjoint()).scale(C64::new(0.5 * scale, 0.0))
}

pub fn random_state(dim: usize, rng: &mut impl Rng) -> CVec {
    let v: CVec = (0..dim)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let n = v.norm();
    v.scale_real(1.0 / n)
}

/// Random control-affine pure-state problem with unit-norm endpoints.
pub fn random_problem(
    dim: usize,
    channels: usize,
    t_final: f64,
    steps: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<ControlProblem> {
    let h0 = random_hermitian(dim, 1.0, rng);
    let hc = (0..channels).map(|_| random_hermitian(dim, 1.0, rng)).collect();
    let model: Arc<dyn Dynamics> = Arc::new(CnDense::new(AffineHamiltonian::new("random", h0, hc)?));
    let grid = TimeGrid::new(0.0, t_final, steps)?;
    ControlProblem::new(
        model,
        random_state(dim, rng),
        random_state(dim, rng),
        grid,
        PenaltySchedule::constant(alpha, steps)?,
    )
}
