//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so that the lines appear in order and every criterion runs even
//! when an earlier one fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{central_differences, condensate_differences, max_abs_diff, random_fixture, tracking_gradient, tracking_j, worst_mismatch};
use ism::config::{preset, ModelConfig};
use ism::controls::{ControlField, Decomposition};
use ism::ism::{intermediate_states, run_ism, subproblem, verify_theorems, IntermediateStates, IsmConfig, Variant};
use ism::linalg::C64;
use ism::models;
use ism::objective::{self, ControlProblem};
use ism::optimizers::{optimize, SolverSpec};
use ism::propagation::{self, assemble_propagator, AssembledPropagator, Direction};
use ism::runtime::{efficiency_table, format_percent, time_to_target, ExecutionMode, RunRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `J[u^10] − J[u^0]` for the condensate transfer, recorded once from a
/// reference run.
const GPE_GAIN: f64 = 5.998544228909e-2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn control(problem: &ControlProblem, amplitude: f64, rng: &mut impl Rng) -> ControlField {
    models::random_control(*problem.grid(), problem.channels(), amplitude, rng)
}

const NS: [usize; 4] = [1, 2, 4, 8];

/// Reference `J_∥` built from the dense propagator alone.
fn reference_parallel(f: &common::Fixture, u: &ControlField, decomp: &Decomposition) -> f64 {
    let p = &f.problem;
    let psi0 = common::vec_of(p.initial());
    let target = common::vec_of(p.target());
    let psi = f.system.forward(u, &psi0);
    let chi = f.system.backward(u, &target);
    let steps = u.steps() as f64;
    let b = decomp.boundaries();
    let n = decomp.len();
    let phi: Vec<Vec<C64>> = (0..=n)
        .map(|k| {
            let s = b[k] as f64 / steps;
            if k == 0 {
                psi0.clone()
            } else if k == n {
                target.clone()
            } else {
                psi[b[k]].iter().zip(&chi[b[k]]).map(|(a, c)| a * (1.0 - s) + c * s).collect()
            }
        })
        .collect();
    (0..n)
        .map(|k| {
            let (j0, j1) = (b[k], b[k + 1]);
            let part = u.restrict_steps(j0, j1).unwrap();
            let width = (j1 - j0) as f64;
            let alpha: Vec<f64> = f.alpha[j0..j1].iter().map(|a| a * width / steps).collect();
            steps / width * tracking_j(&f.system, &part, &phi[k], &phi[k + 1], &alpha)
        })
        .sum()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut worst_ref = 0.0f64;
    for i in 0..50 {
        let dim = 2 + i % 7;
        let channels = 1 + i % 3;
        let f = random_fixture(dim, channels, 1.0 + rng.gen::<f64>(), 64, 0.1 * rng.gen::<f64>(), &mut rng);
        let u = control(&f.problem, 2.0, &mut rng);
        let j_ref = tracking_j(
            &f.system,
            &u,
            &common::vec_of(f.problem.initial()),
            &common::vec_of(f.problem.target()),
            &f.alpha,
        );
        for n in NS {
            let decomp = Decomposition::uniform(*f.problem.grid(), n).unwrap();
            let rep = verify_theorems(&f.problem, &u, &decomp).unwrap();
            let scale = 1.0 + j_ref.abs();
            worst = worst
                .max(rep.functional_residual / scale)
                .max((rep.j_tracking - j_ref).abs() / scale);
            worst_ref = worst_ref.max((reference_parallel(&f, &u, &decomp) - j_ref).abs() / scale);
        }
    }
    let pass = worst <= 1e-11 && worst_ref <= 1e-11;
    outcome(
        pass,
        format!("200 cases, max |J_par - J|/(1+|J|) = {worst:.2e} (library), {worst_ref:.2e} (reference); tol 1e-11"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut worst_ref = 0.0f64;
    for i in 0..50 {
        let dim = 2 + i % 7;
        let channels = 1 + i % 3;
        let f = random_fixture(dim, channels, 1.0 + rng.gen::<f64>(), 64, 0.1 * rng.gen::<f64>(), &mut rng);
        let u = control(&f.problem, 2.0, &mut rng);
        let psi0 = common::vec_of(f.problem.initial());
        let target = common::vec_of(f.problem.target());
        let full_ref = tracking_gradient(&f.system, &u, &psi0, &target, &f.alpha);
        let full = objective::gradient(&f.problem, &u).unwrap();
        worst_ref = worst_ref.max(max_abs_diff(full.as_slice(), &full_ref));
        for n in NS {
            let decomp = Decomposition::uniform(*f.problem.grid(), n).unwrap();
            let states = intermediate_states(&f.problem, &u, &decomp).unwrap();
            let phi = match &states {
                IntermediateStates::Interpolated(p) => p.clone(),
                IntermediateStates::Split { .. } => unreachable!(),
            };
            for k in 0..n {
                let sub = subproblem(&f.problem, &decomp, &states, k).unwrap();
                let part = u.restrict(&decomp, k).unwrap();
                let g = objective::sub_gradient(&sub, &part).unwrap();
                let (j0, j1) = decomp.interval(k);
                let c = u.channels();
                let slice = &full_ref[j0 * c..j1 * c];
                let scaled: Vec<f64> = g.as_slice().iter().map(|x| sub.beta * x).collect();
                worst = worst.max(max_abs_diff(&scaled, slice));
                // The subproblem gradient itself against the reference adjoint.
                let alpha: Vec<f64> = f.alpha[j0..j1].iter().map(|a| a * decomp.alpha_scale(k)).collect();
                let g_ref = tracking_gradient(
                    &f.system,
                    &part,
                    &common::vec_of(&phi[k]),
                    &common::vec_of(&phi[k + 1]),
                    &alpha,
                );
                worst_ref = worst_ref.max(max_abs_diff(g.as_slice(), &g_ref));
            }
        }
    }
    let pass = worst <= 1e-10 && worst_ref <= 1e-10;
    outcome(
        pass,
        format!("200 cases, max |beta_n grad J_n - grad J| = {worst:.2e}, library vs reference adjoint {worst_ref:.2e}; tol 1e-10"),
    )
}

fn spin_quick() -> (ControlProblem, ControlField) {
    let cfg = preset("spin", true).unwrap();
    let problem = cfg.model.problem().unwrap();
    let u0 = cfg.model.initial_control(&problem, cfg.seed);
    (problem, u0)
}

fn iterates(problem: &ControlProblem, u0: &ControlField, n: usize, mode: ExecutionMode, k: usize) -> Vec<ControlField> {
    let cfg = IsmConfig::new(n, SolverSpec::gradient(1e4))
        .with_eta(1e-300)
        .with_max_iterations(1)
        .with_mode(mode);
    let mut out = vec![u0.clone()];
    for _ in 0..k {
        let (next, _) = run_ism(problem, out.last().unwrap(), &cfg).unwrap();
        out.push(next);
    }
    out
}

fn criterion_3() -> Outcome {
    let (problem, u0) = spin_quick();
    let base = iterates(&problem, &u0, 1, ExecutionMode::Sequential, 10);
    let mut worst = 0.0f64;
    for n in [2, 4, 8] {
        let other = iterates(&problem, &u0, n, ExecutionMode::Sequential, 10);
        for (a, b) in base.iter().zip(&other) {
            worst = worst.max(max_abs_diff(a.as_slice(), b.as_slice()));
        }
    }
    let cfg = IsmConfig::new(4, SolverSpec::gradient(1e4)).with_eta(1e-300).with_max_iterations(10);
    let (seq, rs) = run_ism(&problem, &u0, &cfg).unwrap();
    let mut identical = true;
    for w in [2, 4] {
        let (par, rp) = run_ism(&problem, &u0, &cfg.clone().with_mode(ExecutionMode::Parallel(w))).unwrap();
        let same_j = rs.iterations.iter().zip(&rp.iterations).all(|(a, b)| a.j.to_bits() == b.j.to_bits());
        identical &= par == seq && same_j;
    }
    let gain = rs.final_j - rs.iterations[0].j;
    outcome(
        worst <= 1e-10 && identical,
        format!(
            "spin quick, 10 iterations, N in {{1,2,4,8}}: max control deviation {worst:.2e} (tol 1e-10); \
             sequential vs 2/4 workers bit-identical: {identical}; J gain {gain:.4}"
        ),
    )
}

fn all_entries(problem: &ControlProblem, u: &ControlField, fd: impl Fn(&[usize]) -> Vec<f64>) -> (f64, usize, usize) {
    let g = objective::gradient(problem, u).unwrap();
    let entries: Vec<usize> = (0..g.as_slice().len()).collect();
    let (r, k) = worst_mismatch(g.as_slice(), &fd(&entries));
    (r, k, entries.len())
}

fn criterion_4() -> Outcome {
    let h = 1e-6;
    let (spin, spin_u) = spin_quick();
    let rotor = preset("rotor", true).unwrap().model.problem().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rotor_u = control(&rotor, 1e-3, &mut rng);
    let gpe_cfg = preset("gpe", true).unwrap();
    let gpe = gpe_cfg.model.problem().unwrap();
    let gpe_u = gpe_cfg.model.initial_control(&gpe, gpe_cfg.seed);
    let ModelConfig::Gpe(gpe_params) = &gpe_cfg.model else {
        unreachable!()
    };

    let mut lines = Vec::new();
    let mut pass = true;
    for (name, p, u) in [("spin", &spin, &spin_u), ("rotor", &rotor, &rotor_u)] {
        let (r, k, total) = all_entries(p, u, |e| central_differences(p, u, e, h));
        pass &= r <= 1.0;
        lines.push(format!("{name}: {total} entries, worst ratio {r:.2e} at entry {k}"));
    }
    let (r, k, total) = all_entries(&gpe, &gpe_u, |e| condensate_differences(gpe_params, &gpe, &gpe_u, e, h));
    pass &= r <= 1.0;
    lines.push(format!("gpe (double-double differences): {total} entries, worst ratio {r:.2e} at entry {k}"));
    let (r64, _, _) = all_entries(&gpe, &gpe_u, |e| central_differences(&gpe, &gpe_u, e, h));
    lines.push(format!("(gpe with f64 differences, informational: worst ratio {r64:.3})"));
    outcome(
        pass,
        format!("h = 1e-6, ratio = |g - fd| / max(1e-6 |fd|, 1e-10) must be <= 1; {}", lines.join("; ")),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut drift = 0.0f64;
    for i in 0..20 {
        let f = random_fixture(2 + i % 7, 1 + i % 3, 2.0, 256, 0.0, &mut rng);
        let u = control(&f.problem, 5.0, &mut rng);
        let traj = propagation::propagate(f.problem.model().as_ref(), &u, f.problem.initial(), Direction::Forward).unwrap();
        for w in traj.windows(2) {
            drift = drift.max((w[1].norm() - w[0].norm()).abs());
        }
    }
    let (spin, spin_u) = spin_quick();
    let traj = propagation::propagate(spin.model().as_ref(), &spin_u, spin.initial(), Direction::Forward).unwrap();
    let mut spin_drift = 0.0f64;
    for w in traj.windows(2) {
        spin_drift = spin_drift.max((w[1].norm() - w[0].norm()).abs());
    }
    let cfg = preset("gpe", true).unwrap();
    let gpe = cfg.model.problem().unwrap();
    let ramp = cfg.model.initial_control(&gpe, cfg.seed);
    let last = propagation::propagate_final(gpe.model().as_ref(), &ramp, gpe.initial()).unwrap();
    let gpe_drift = (last.norm() - gpe.initial().norm()).abs();
    outcome(
        drift <= 1e-13 && spin_drift <= 1e-13 && gpe_drift <= 1e-10,
        format!(
            "per-step drift {drift:.2e} (random CN), {spin_drift:.2e} (spin conjugation), tol 1e-13; \
             condensate horizon drift {gpe_drift:.2e}, tol 1e-10"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut apply = 0.0f64;
    let mut compose = 0.0f64;
    for _ in 0..10 {
        let f = random_fixture(4, 2, 1.5, 128, 0.0, &mut rng);
        let model = f.problem.model().as_ref();
        let u = control(&f.problem, 2.0, &mut rng);
        let m = assemble_propagator(model, &u).unwrap();
        let psi = models::random_state(4, &mut rng);
        let direct = propagation::propagate_final(model, &u, &psi).unwrap();
        apply = apply.max(m.apply(&psi).unwrap().max_abs_diff(&direct));
        let cut = rng.gen_range(1..u.steps());
        let early = assemble_propagator(model, &u.restrict_steps(0, cut).unwrap()).unwrap();
        let late = assemble_propagator(model, &u.restrict_steps(cut, u.steps()).unwrap()).unwrap();
        let joined = AssembledPropagator::compose(&late, &early).unwrap();
        compose = compose.max(joined.matrix().max_abs_diff(m.matrix()));
    }
    outcome(
        apply <= 1e-11 && compose <= 1e-10,
        format!("10 four-level fixtures: |M psi - propagate| = {apply:.2e} (tol 1e-11), |M2 M1 - M| = {compose:.2e} (tol 1e-10)"),
    )
}

fn worst_decrease(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn criterion_7() -> Outcome {
    let rotor = preset("rotor", true).unwrap().model.problem().unwrap();
    let (_, rv) = optimize(&rotor, &rotor.zero_control(), &SolverSpec::monotonic(), 50).unwrap();
    let two = models::two_level_problem(1.0, 3.0, 256, 0.1).unwrap();
    let (_, tv) = optimize(&two, &two.zero_control(), &SolverSpec::monotonic(), 50).unwrap();
    let (dr, dt) = (worst_decrease(&rv), worst_decrease(&tv));
    outcome(
        dr >= -1e-12 && dt >= -1e-12,
        format!(
            "50 iterations; rotor J {:.6} -> {:.6}, min dJ {dr:.2e}; two-level J {:.6} -> {:.6}, min dJ {dt:.2e}; tol -1e-12",
            rv[0], rv[50], tv[0], tv[50]
        ),
    )
}

fn history(record: &RunRecord) -> Vec<f64> {
    record.history().into_iter().map(|(_, j)| j).collect()
}

fn criterion_8() -> Outcome {
    let cfg = preset("gpe", true).unwrap();
    let problem = cfg.model.problem().unwrap();
    let u0 = cfg.model.initial_control(&problem, cfg.seed);
    let ism = IsmConfig::new(4, SolverSpec::gradient(0.1))
        .with_variant(Variant::Split)
        .with_eta(1e-300)
        .with_max_iterations(10);
    let (_, record) = run_ism(&problem, &u0, &ism).unwrap();
    let js = history(&record);
    let increasing = js.windows(2).all(|w| w[1] > w[0]);
    let gain = js[js.len() - 1] - js[0];
    outcome(
        increasing && js.len() == 11 && (gain - GPE_GAIN).abs() <= 1e-6,
        format!(
            "N = 4 split, rho = 0.1: J {:.9} -> {:.9} over {} iterations, strictly increasing: {increasing}; \
             gain {gain:.9} vs baseline {GPE_GAIN:.9} (tol 1e-6)",
            js[0],
            js[js.len() - 1],
            js.len() - 1
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut cfg = preset("two-level", true).unwrap();
    cfg.ism.max_iterations = 20;
    let problem = cfg.model.problem().unwrap();
    let u0 = cfg.model.initial_control(&problem, cfg.seed);
    let eps = 0.3;
    let mut runs = Vec::new();
    for n in [1, 2, 4] {
        let ism = IsmConfig::new(n, cfg.solver.clone())
            .with_eta(cfg.ism.eta)
            .with_max_iterations(cfg.ism.max_iterations)
            .with_mode(ExecutionMode::Parallel(n));
        runs.push((n, run_ism(&problem, &u0, &ism).unwrap().1));
    }
    let j_limit = runs.iter().map(|(_, r)| r.final_j).fold(f64::NEG_INFINITY, f64::max);
    let times: Vec<(usize, Option<f64>)> = runs.iter().map(|(n, r)| (*n, time_to_target(r, eps, j_limit))).collect();
    let detail = match efficiency_table(&times, eps) {
        Ok(report) => report
            .rows
            .iter()
            .map(|r| match r.efficiency {
                Some(e) => format!("N={} Eff={}", r.n, format_percent(e)),
                None => format!("N={} not reached", r.n),
            })
            .collect::<Vec<_>>()
            .join(", "),
        Err(e) => format!("no table: {e}"),
    };
    outcome(
        true,
        format!(
            "reported, not asserted ({} CPU): two-level, eps = {eps}: {detail}",
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        ),
    )
}

fn record_with(js: &[f64], times: &[f64]) -> RunRecord {
    let iterations = js[..js.len() - 1]
        .iter()
        .zip(times)
        .enumerate()
        .map(|(k, (&j, &t))| ism::runtime::IterationRecord {
            k,
            j,
            elapsed: t,
            err: 0.0,
            sub_values: Vec::new(),
            coordinator: Default::default(),
            profile: Default::default(),
            events: Vec::new(),
        })
        .collect();
    RunRecord {
        config: serde_json::Value::Null,
        n: 1,
        workers: 1,
        iterations,
        final_j: js[js.len() - 1],
        final_elapsed: times[times.len() - 1],
        converged: false,
    }
}

fn criterion_10() -> Outcome {
    let mut ok = true;
    let r = efficiency_table(&[(1, Some(100.0)), (2, Some(50.0)), (4, Some(25.07))], 0.1).unwrap();
    ok &= r.rows[1].speedup == Some(2.0) && r.rows[1].efficiency == Some(100.0);
    let s4 = 100.0 / 25.07;
    ok &= r.rows[2].speedup == Some(s4) && r.rows[2].efficiency == Some(100.0 * s4 / 4.0);
    ok &= format_percent(r.rows[2].efficiency.unwrap()) == "99.7%";
    let s_times_t = r.rows[2].speedup.unwrap() * 25.07;
    ok &= (s_times_t - 100.0).abs() <= f64::EPSILON * 100.0;
    let eq = efficiency_table(&[(1, Some(3.0)), (2, Some(3.0)), (8, Some(3.0))], 0.1).unwrap();
    ok &= eq.rows.iter().all(|row| row.efficiency == Some(100.0 / row.n as f64));
    let missing = efficiency_table(&[(1, Some(3.0)), (4, None)], 0.1).unwrap();
    ok &= missing.rows[1].speedup.is_none() && missing.rows[1].efficiency.is_none();
    ok &= efficiency_table(&[(2, Some(1.0))], 0.1).is_err();
    let rec = record_with(&[0.0, 0.5, 0.9, 0.99], &[0.0, 1.0, 2.0, 3.0]);
    let t = time_to_target(&rec, 0.2, 1.0);
    ok &= t == Some(2.0);
    ok &= time_to_target(&rec, 1e-3, 1.0).is_none();
    outcome(
        ok,
        "S = t1/tN, Eff = 100 S/N, 99.7% formatting, equal times -> 100/N, unreached rows, \
         first crossing of [0, 0.5, 0.9, 0.99] at the third entry"
            .into(),
    )
}

fn main() -> ExitCode {
    // Budgets are wall-clock seconds for a single-core optimized build.
    let criteria: [(&str, fn() -> Outcome, f64); 10] = [
        ("1", criterion_1, 60.0),
        ("2", criterion_2, 60.0),
        ("3", criterion_3, 300.0),
        ("4", criterion_4, 600.0),
        ("5", criterion_5, 60.0),
        ("6", criterion_6, 60.0),
        ("7", criterion_7, 300.0),
        ("8", criterion_8, 300.0),
        ("9", criterion_9, 120.0),
        ("10", criterion_10, 1.0),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {id}: {} [{secs:.1}s / {budget:.0}s] {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

