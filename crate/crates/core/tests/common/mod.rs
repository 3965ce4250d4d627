//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's propagators or adjoints; matrices are plain
//! nested vectors and linear systems are solved by textbook elimination.

#![allow(dead_code)]

pub mod dd;

use std::sync::Arc;

use ism::controls::{ControlField, PenaltySchedule, TimeGrid};
use ism::linalg::{CMat, CVec, C64};
use ism::models::{self, AffineHamiltonian, GpeParams};
use ism::objective::{ControlProblem, Fidelity};
use ism::propagation::{CnDense, Dynamics};
use rand::Rng;

pub type Dense = Vec<Vec<C64>>;

pub fn dense(m: &CMat) -> Dense {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn vec_of(v: &CVec) -> Vec<C64> {
    v.as_slice().to_vec()
}

pub fn mat_vec(a: &Dense, x: &[C64]) -> Vec<C64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Dense, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm()))
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                let t = a[k][j];
                a[i][j] -= f * t;
            }
            let t = b[k];
            b[i] -= f * t;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for k in (0..n).rev() {
        let s: C64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// `I + s·i·(τ/2)·H`.
fn shifted(h: &Dense, tau: f64, s: f64) -> Dense {
    let n = h.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    C64::new(id, 0.0) + C64::new(0.0, s * 0.5 * tau) * h[i][j]
                })
                .collect()
        })
        .collect()
}

/// Crank-Nicolson step; `forward = false` inverts it.
pub fn cn(h: &Dense, tau: f64, psi: &[C64], forward: bool) -> Vec<C64> {
    let s = if forward { 1.0 } else { -1.0 };
    let rhs = mat_vec(&shifted(h, tau, -s), psi);
    gauss_solve(shifted(h, tau, s), rhs)
}

/// `H(u) = H_0 + Σ u_c H_c` held as dense matrices.
#[derive(Clone, Debug)]
pub struct System {
    pub h0: Dense,
    pub hc: Vec<Dense>,
}

impl System {
    pub fn h(&self, u: &[f64]) -> Dense {
        let mut h = self.h0.clone();
        for (c, hc) in self.hc.iter().enumerate() {
            for (row, hrow) in h.iter_mut().zip(hc) {
                for (x, y) in row.iter_mut().zip(hrow) {
                    *x += *y * u[c];
                }
            }
        }
        h
    }

    /// States at every grid point from `psi0` at `t_0`.
    pub fn forward(&self, u: &ControlField, psi0: &[C64]) -> Vec<Vec<C64>> {
        let tau = u.grid().tau();
        let mut out = vec![psi0.to_vec()];
        for j in 0..u.steps() {
            let next = cn(&self.h(u.at_step(j)), tau, out.last().unwrap(), true);
            out.push(next);
        }
        out
    }

    /// States at every grid point from `last` at `t_J`, propagated backward.
    pub fn backward(&self, u: &ControlField, last: &[C64]) -> Vec<Vec<C64>> {
        let tau = u.grid().tau();
        let mut out = vec![last.to_vec()];
        for j in (0..u.steps()).rev() {
            let prev = cn(&self.h(u.at_step(j)), tau, out.last().unwrap(), false);
            out.push(prev);
        }
        out.reverse();
        out
    }
}

/// `(1/2) Σ_j α_j τ Σ_c u_{c,j}²`.
pub fn penalty(u: &ControlField, alpha: &[f64]) -> f64 {
    let tau = u.grid().tau();
    (0..u.steps())
        .map(|j| 0.5 * alpha[j] * tau * u.at_step(j).iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// `−½‖ψ(T) − target‖² − penalty`.
pub fn tracking_j(sys: &System, u: &ControlField, psi0: &[C64], target: &[C64], alpha: &[f64]) -> f64 {
    let last = sys.forward(u, psi0).pop().unwrap();
    let d: Vec<C64> = last.iter().zip(target).map(|(a, b)| a - b).collect();
    -0.5 * norm(&d).powi(2) - penalty(u, alpha)
}

/// Exact gradient of [`tracking_j`] by the discrete adjoint, time-major.
pub fn tracking_gradient(sys: &System, u: &ControlField, psi0: &[C64], target: &[C64], alpha: &[f64]) -> Vec<f64> {
    let tau = u.grid().tau();
    let c = u.channels();
    let psi = sys.forward(u, psi0);
    let steps = u.steps();
    let mut lambda: Vec<C64> = target.iter().zip(&psi[steps]).map(|(a, b)| a - b).collect();
    let mut g = vec![0.0; steps * c];
    for j in (0..steps).rev() {
        let h = sys.h(u.at_step(j));
        // w = (I − L)^{-1} λ_{j+1}
        let w = gauss_solve(shifted(&h, tau, -1.0), lambda.clone());
        let sum: Vec<C64> = psi[j].iter().zip(&psi[j + 1]).map(|(a, b)| a + b).collect();
        for ch in 0..c {
            let dh = mat_vec(&sys.hc[ch], &sum);
            g[j * c + ch] = 0.5 * tau * inner(&w, &dh).im - alpha[j] * tau * u.get(ch, j);
        }
        lambda = mat_vec(&shifted(&h, tau, 1.0), &w);
    }
    g
}

/// A random control-affine problem together with its dense reference copy.
pub struct Fixture {
    pub problem: ControlProblem,
    pub system: System,
    pub alpha: Vec<f64>,
}

pub fn random_fixture(dim: usize, channels: usize, t_final: f64, steps: usize, alpha: f64, rng: &mut impl Rng) -> Fixture {
    let h0 = models::random_hermitian(dim, 1.0, rng);
    let hc: Vec<CMat> = (0..channels).map(|_| models::random_hermitian(dim, 1.0, rng)).collect();
    let system = System {
        h0: dense(&h0),
        hc: hc.iter().map(dense).collect(),
    };
    let model: Arc<dyn Dynamics> = Arc::new(CnDense::new(AffineHamiltonian::new("fixture", h0, hc).unwrap()));
    let grid = TimeGrid::new(0.0, t_final, steps).unwrap();
    let problem = ControlProblem::new(
        model,
        models::random_state(dim, rng),
        models::random_state(dim, rng),
        grid,
        PenaltySchedule::constant(alpha, steps).unwrap(),
    )
    .unwrap()
    .with_fidelity(Fidelity::Tracking);
    Fixture {
        problem,
        system,
        alpha: vec![alpha; steps],
    }
}

/// Central differences of the problem's functional in every listed flat
/// entry, with the trajectory before the perturbed step computed once.
pub fn central_differences(problem: &ControlProblem, u: &ControlField, entries: &[usize], h: f64) -> Vec<f64> {
    let model = problem.model().as_ref();
    let tau = u.grid().tau();
    let c = u.channels();
    let mut prefix = vec![problem.initial().clone()];
    for j in 0..u.steps() {
        let next = model.step(u.at_step(j), tau, prefix.last().unwrap()).unwrap();
        prefix.push(next);
    }
    let value = |v: &ControlField, from: usize| {
        let mut psi = prefix[from].clone();
        for j in from..v.steps() {
            psi = model.step(v.at_step(j), tau, &psi).unwrap();
        }
        problem.fidelity().value(&psi, problem.target()) - v.weighted_l2_penalty(problem.penalty()).unwrap()
    };
    entries
        .iter()
        .map(|&k| {
            let mut up = u.clone();
            up.as_mut_slice()[k] += h;
            let mut dn = u.clone();
            dn.as_mut_slice()[k] -= h;
            let width = up.as_slice()[k] - dn.as_slice()[k];
            (value(&up, k / c) - value(&dn, k / c)) / width
        })
        .collect()
}

/// [`central_differences`] for the condensate, with the perturbed suffix
/// propagated in double-double arithmetic. The unperturbed prefix is shared
/// by both sides and stays in `f64`.
pub fn condensate_differences(params: &GpeParams, problem: &ControlProblem, u: &ControlField, entries: &[usize], h: f64) -> Vec<f64> {
    assert!(problem.penalty().is_zero());
    let model = models::gpe_model(params).unwrap();
    let tau = u.grid().tau();
    let reference = dd::Condensate::new(model.xs(), model.kinetic_symbol(), params.d, model.density_coupling(), tau);
    let target = problem.target().as_slice();
    let mut prefix = vec![problem.initial().clone()];
    for j in 0..u.steps() {
        let next = problem.model().step(u.at_step(j), tau, prefix.last().unwrap()).unwrap();
        prefix.push(next);
    }
    let value = |v: &ControlField, from: usize| {
        let mut psi: Vec<dd::Dc> = prefix[from].iter().map(|&z| dd::Dc::from_c64(z)).collect();
        for j in from..v.steps() {
            psi = reference.step(v.get(0, j), &psi);
        }
        dd::overlap(&psi, target)
    };
    entries
        .iter()
        .map(|&k| {
            let mut up = u.clone();
            up.as_mut_slice()[k] += h;
            let mut dn = u.clone();
            dn.as_mut_slice()[k] -= h;
            let width = up.as_slice()[k] - dn.as_slice()[k];
            (value(&up, k) - value(&dn, k)).to_f64() / width
        })
        .collect()
}

/// Largest `|g − fd| / max(10⁻⁶|fd|, 10⁻¹⁰)` and its entry.
pub fn worst_mismatch(analytic: &[f64], fd: &[f64]) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for (k, (a, f)) in analytic.iter().zip(fd).enumerate() {
        let r = (a - f).abs() / (1e-6 * f.abs()).max(1e-10);
        if r > worst.0 {
            worst = (r, k);
        }
    }
    worst
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
