//! The `run`, `verify` and `bench` commands. Every artifact carries a
//! format version string and the full configuration echo.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{ModelConfig, RunConfig};
use crate::controls::{ControlField, Decomposition};
use crate::error::{IsmError, Result};
use crate::ism::{self, IsmConfig};
use crate::linalg::CVec;
use crate::models::{self, GpeParams, RotorParams, SpinParams};
use crate::objective::{self, ControlProblem};
use crate::propagation::{self, Direction, Dynamics};
use crate::runtime::{self, EfficiencyReport, ExecutionMode, RunRecord};

pub const LOG_FORMAT: &str = "ism-log/1";
pub const CONTROL_FORMAT: &str = "ism-control/1";
pub const SUMMARY_FORMAT: &str = "ism-summary/1";
pub const VERIFY_FORMAT: &str = "ism-verify/1";
pub const EFFICIENCY_FORMAT: &str = "ism-efficiency/1";
pub const PROFILE_FORMAT: &str = "ism-profile/1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn initial_control(cfg: &RunConfig, problem: &ControlProblem) -> Result<ControlField> {
    match &cfg.ism.initial_control {
        Some(path) => {
            let u = ControlField::read_csv(BufReader::new(File::open(path)?))?;
            if u.channels() != problem.channels() || u.steps() != problem.grid().steps() {
                return Err(IsmError::Config {
                    key: "ism.initial_control".into(),
                    message: format!(
                        "{} has {} channels on {} steps, the model needs {} on {}",
                        path.display(),
                        u.channels(),
                        u.steps(),
                        problem.channels(),
                        problem.grid().steps()
                    ),
                });
            }
            Ok(u)
        }
        None => Ok(cfg.model.initial_control(problem, cfg.seed)),
    }
}

/// Files written by [`cmd_run`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub log: PathBuf,
    pub control: PathBuf,
    pub summary: PathBuf,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub control: ControlField,
    pub record: RunRecord,
    pub initial_j: f64,
    pub artifacts: RunArtifacts,
}

/// JSON-lines log: a header, then one line per outer iteration.
pub fn write_log<W: Write>(mut w: W, record: &RunRecord) -> Result<()> {
    serde_json::to_writer(&mut w, &json!({"format": LOG_FORMAT, "config": record.config}))?;
    writeln!(w)?;
    for it in &record.iterations {
        serde_json::to_writer(&mut w, it)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads back the iteration lines of a log.
pub fn read_log<R: BufRead>(r: R) -> Result<(serde_json::Value, Vec<runtime::IterationRecord>)> {
    let mut lines = r.lines();
    let header: serde_json::Value = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(IsmError::Wire("empty log".into())),
    };
    if header["format"] != LOG_FORMAT {
        return Err(IsmError::Wire(format!("unsupported log format {}", header["format"])));
    }
    let mut out = Vec::new();
    for l in lines {
        let l = l?;
        if !l.trim().is_empty() {
            out.push(serde_json::from_str(&l)?);
        }
    }
    Ok((header["config"].clone(), out))
}

/// Runs the configured optimization and writes the log, the final control
/// and the summary into the output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let problem = cfg.model.problem()?;
    let u0 = initial_control(cfg, &problem)?;
    let initial_j = objective::evaluate_j(&problem, &u0)?;
    let echo = cfg.echo();
    let (u, record) = ism::run_ism_with_config_echo(&problem, &u0, &cfg.ism_config(), echo.clone())?;

    let dir = &cfg.output.dir;
    let artifacts = RunArtifacts {
        log: dir.join(&cfg.output.log),
        control: dir.join(&cfg.output.control),
        summary: dir.join(&cfg.output.summary),
    };
    let mut w = create(&artifacts.log)?;
    write_log(&mut w, &record)?;
    w.flush()?;

    let mut w = create(&artifacts.control)?;
    u.write_csv(
        &mut w,
        &[format!("format: {CONTROL_FORMAT}"), format!("config: {echo}")],
    )?;
    w.flush()?;

    let overlap = problem.normalized_overlap(&u)?;
    let summary = json!({
        "format": SUMMARY_FORMAT,
        "config": echo,
        "model": cfg.model.name(),
        "n": record.n,
        "workers": record.workers,
        "iterations": record.iterations.len(),
        "converged": record.converged,
        "initial_j": initial_j,
        "final_j": record.final_j,
        "final_elapsed": record.final_elapsed,
        "normalized_overlap": overlap,
        "history": record.history(),
        "err": record.iterations.iter().map(|r| r.err).collect::<Vec<_>>(),
        "worker_totals": record.worker_totals(),
        "coordinator_totals": record.coordinator_totals(),
    });
    write_json(&artifacts.summary, &summary)?;
    Ok(RunOutcome {
        control: u,
        record,
        initial_j,
        artifacts,
    })
}

// ------------------------------------------------------------------ verify

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Theorems,
    Gradients,
    Unitarity,
    All,
}

impl std::str::FromStr for Scope {
    type Err = IsmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorems" => Ok(Self::Theorems),
            "gradients" => Ok(Self::Gradients),
            "unitarity" => Ok(Self::Unitarity),
            "all" => Ok(Self::All),
            other => Err(IsmError::Config {
                key: "scope".into(),
                message: format!("unknown scope `{other}` (theorems, gradients, unitarity, all)"),
            }),
        }
    }
}

/// One property check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub scope: &'static str,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(scope: &'static str, name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            scope,
            name: name.into(),
            measured,
            threshold,
            passed: measured <= threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub format: &'static str,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s += &format!(
                "{} {:<10} {:<48} {:>11.3e} <= {:.0e}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.scope,
                c.name,
                c.measured,
                c.threshold
            );
        }
        s
    }
}

fn theorem_checks(seed: u64, quick: bool, out: &mut Vec<Check>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t1 = 0.0f64;
    let mut t2 = 0.0f64;
    for dim in 2..=8 {
        let problem = models::random_problem(dim, 2, 1.0, 64, 0.1, &mut rng)?;
        let u = models::random_control(*problem.grid(), 2, 1.0, &mut rng);
        for n in [1, 2, 4, 8] {
            let d = Decomposition::uniform(*problem.grid(), n)?;
            let r = ism::verify_theorems(&problem, &u, &d)?;
            t1 = t1.max(r.functional_residual / (1.0 + r.j_tracking.abs()));
            t2 = t2.max(r.gradient_residual);
        }
    }
    out.push(Check::new("theorems", "J_par vs J, random fixtures (relative)", t1, 1e-11));
    out.push(Check::new("theorems", "beta_n grad J_n vs grad J, random fixtures", t2, 1e-10));
    if !quick {
        let p = SpinParams::quick();
        let problem = models::spin_problem(&p)?;
        let u = models::random_control(*problem.grid(), problem.channels(), 1.0, &mut rng);
        let d = Decomposition::uniform(*problem.grid(), 8)?;
        let r = ism::verify_theorems(&problem, &u, &d)?;
        out.push(Check::new(
            "theorems",
            "J_par vs J, 3 spins, N = 8 (relative)",
            r.functional_residual / (1.0 + r.j_tracking.abs()),
            1e-11,
        ));
        out.push(Check::new("theorems", "beta_n grad J_n vs grad J, 3 spins, N = 8", r.gradient_residual, 1e-10));
    }
    Ok(())
}

/// Central differences of `J` for the listed flat entries. The prefix of
/// the trajectory before the perturbed step is shared.
pub fn finite_difference_entries(problem: &ControlProblem, u: &ControlField, entries: &[usize], h: f64) -> Result<Vec<f64>> {
    let model = problem.model().as_ref();
    let states = propagation::propagate(model, u, problem.initial(), Direction::Forward)?;
    let c = u.channels();
    let tau = u.grid().tau();
    let eval = |v: &ControlField, j: usize| -> Result<f64> {
        let mut psi = states[j].clone();
        for s in j..v.steps() {
            psi = model.step(v.at_step(s), tau, &psi)?;
        }
        Ok(problem.fidelity().value(&psi, problem.target()) - v.weighted_l2_penalty(problem.penalty())?)
    };
    entries
        .iter()
        .map(|&k| {
            let j = k / c;
            let mut up = u.clone();
            up.as_mut_slice()[k] += h;
            let mut dn = u.clone();
            dn.as_mut_slice()[k] -= h;
            let width = up.as_slice()[k] - dn.as_slice()[k];
            Ok((eval(&up, j)? - eval(&dn, j)?) / width)
        })
        .collect()
}

/// Largest `|g − fd| / max(10⁻⁶ |fd|, 10⁻¹⁰)`; at most 1 means every
/// entry agrees to 10⁻⁶ relative with a 10⁻¹⁰ absolute floor.
pub fn gradient_mismatch(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / (1e-6 * f.abs()).max(1e-10))
        .fold(0.0, f64::max)
}

fn gradient_checks(seed: u64, quick: bool, out: &mut Vec<Check>) -> Result<()> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = if quick { 12 } else { 48 };
    // central-difference step per fixture, chosen where roundoff and
    // truncation are both below the tolerance
    let mut cases: Vec<(&str, f64, ControlProblem, ControlField)> = Vec::new();
    let two = models::two_level_problem(1.0, 3.0, 128, 0.1)?;
    let u = models::random_control(*two.grid(), 1, 1.0, &mut rng);
    cases.push(("two-level", 1e-6, two, u));
    let rp = models::random_problem(4, 2, 1.0, 64, 0.05, &mut rng)?;
    let u = models::random_control(*rp.grid(), 2, 1.0, &mut rng);
    cases.push(("random 4-dim", 1e-5, rp, u));
    if !quick {
        let cfg = ModelConfig::Spin(SpinParams::quick());
        let sp = cfg.problem()?;
        let u = cfg.initial_control(&sp, seed);
        cases.push(("spins (quick)", 1e-6, sp, u));
        let rt = models::rotor_problem(&RotorParams::quick())?;
        let u = models::random_control(*rt.grid(), 1, 1e-3, &mut rng);
        cases.push(("rotor (quick)", 1e-6, rt, u));
        let gp = models::gpe_problem(&GpeParams::reference())?;
        let u = models::gpe_ramp(*gp.grid());
        cases.push(("condensate", 1e-4, gp, u));
    }
    for (name, h, problem, u) in cases {
        let g = objective::gradient(&problem, &u)?;
        let n = g.as_slice().len();
        let entries: Vec<usize> = (0..samples.min(n)).map(|_| rng.gen_range(0..n)).collect();
        let fd = finite_difference_entries(&problem, &u, &entries, h)?;
        let a: Vec<f64> = entries.iter().map(|&k| g.as_slice()[k]).collect();
        out.push(Check::new(
            "gradients",
            format!("{name}, h = {h:e}: FD mismatch / tolerance"),
            gradient_mismatch(&a, &fd),
            1.0,
        ));
    }
    Ok(())
}

/// Largest per-step change of the norm along a trajectory.
pub fn max_step_norm_drift(states: &[CVec]) -> f64 {
    states
        .windows(2)
        .map(|w| (w[1].norm() - w[0].norm()).abs())
        .fold(0.0, f64::max)
}

fn unitarity_checks(seed: u64, quick: bool, out: &mut Vec<Check>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drift = 0.0f64;
    let mut assembled = 0.0f64;
    for dim in [2, 4, 8] {
        let problem = models::random_problem(dim, 2, 1.0, 256, 0.0, &mut rng)?;
        let u = models::random_control(*problem.grid(), 2, 3.0, &mut rng);
        let states = propagation::propagate(problem.model().as_ref(), &u, problem.initial(), Direction::Forward)?;
        drift = drift.max(max_step_norm_drift(&states));
        let m = propagation::assemble_propagator(problem.model().as_ref(), &u)?;
        assembled = assembled.max(m.unitarity_residual());
    }
    out.push(Check::new("unitarity", "Crank-Nicolson norm drift per step", drift, 1e-12));
    out.push(Check::new("unitarity", "assembled propagator ||M^H M - I||", assembled, 1e-11));
    let spins = models::spin_problem(&SpinParams::quick())?;
    let u = models::random_control(*spins.grid(), spins.channels(), 1.0, &mut rng);
    let states = propagation::propagate(spins.model().as_ref(), &u, spins.initial(), Direction::Forward)?;
    out.push(Check::new(
        "unitarity",
        "density matrix Hilbert-Schmidt drift per step",
        max_step_norm_drift(&states),
        1e-12,
    ));
    if !quick {
        let p = GpeParams::reference();
        let model = models::gpe_model(&p)?;
        let psi0 = models::ground_state(&model, 1.0)?.state;
        let grid = crate::controls::TimeGrid::new(0.0, p.t_final, p.steps)?;
        let u = models::gpe_ramp(grid);
        let model: Arc<dyn Dynamics> = Arc::new(model);
        let last = propagation::propagate_final(model.as_ref(), &u, &psi0)?;
        out.push(Check::new(
            "unitarity",
            "condensate norm drift over the horizon",
            (last.norm() - psi0.norm()).abs(),
            1e-10,
        ));
    }
    Ok(())
}

/// Runs the property suites of `scope`. `quick` skips the benchmark-sized
/// fixtures.
pub fn cmd_verify(scope: Scope, seed: u64, quick: bool) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    if matches!(scope, Scope::Theorems | Scope::All) {
        theorem_checks(seed, quick, &mut checks)?;
    }
    if matches!(scope, Scope::Gradients | Scope::All) {
        gradient_checks(seed, quick, &mut checks)?;
    }
    if matches!(scope, Scope::Unitarity | Scope::All) {
        unitarity_checks(seed, quick, &mut checks)?;
    }
    Ok(VerifyReport {
        format: VERIFY_FORMAT,
        seed,
        checks,
    })
}

pub fn write_verify_report(report: &VerifyReport, path: &Path) -> Result<()> {
    write_json(path, &serde_json::to_value(report)?)
}

// ------------------------------------------------------------------- bench

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub report: EfficiencyReport,
    pub j_limit: f64,
    pub records: Vec<RunRecord>,
    pub csv: PathBuf,
    pub profile: PathBuf,
}

/// Phase shares of one run, in percent of the summed busy and idle time.
fn phase_shares(record: &RunRecord) -> serde_json::Value {
    let workers: Vec<serde_json::Value> = record
        .worker_totals()
        .iter()
        .map(|w| {
            let total = w.phases.busy() + w.idle;
            let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
            json!({
                "worker": w.worker,
                "tasks": w.tasks,
                "seconds": {"compute": w.phases.compute, "send": w.phases.send, "receive": w.phases.receive, "idle": w.idle},
                "percent": {"compute": pct(w.phases.compute), "send": pct(w.phases.send), "receive": pct(w.phases.receive), "idle": pct(w.idle)},
                "bytes": {"in": w.phases.bytes_in, "out": w.phases.bytes_out},
            })
        })
        .collect();
    let c = record.coordinator_totals();
    let total = record.final_elapsed.max(f64::MIN_POSITIVE);
    json!({
        "n": record.n,
        "workers": record.workers,
        "wall": record.final_elapsed,
        "coordinator": {
            "seconds": c,
            "percent": {
                "states": 100.0 * c.states / total,
                "send": 100.0 * c.send / total,
                "receive": 100.0 * c.receive / total,
                "parallel": 100.0 * c.parallel / total,
                "merge": 100.0 * c.merge / total,
            },
        },
        "worker_phases": workers,
    })
}

/// One run per `N` with otherwise identical configuration and seed, each
/// with `N` workers. Writes the efficiency CSV, per-`N` convergence
/// histories and the profiling breakdown.
pub fn cmd_bench(cfg: &RunConfig, n_list: Option<&[usize]>) -> Result<BenchOutcome> {
    let bench = cfg.bench.clone().ok_or_else(|| IsmError::Config {
        key: "bench".into(),
        message: "missing required block".into(),
    })?;
    let ns: Vec<usize> = n_list.map(<[usize]>::to_vec).unwrap_or(bench.n_list.clone());
    let mut probe = cfg.clone();
    probe.bench.as_mut().unwrap().n_list = ns.clone();
    probe.validate()?;
    let problem = cfg.model.problem()?;
    let u0 = initial_control(cfg, &problem)?;
    let echo = probe.echo();
    let mut records = Vec::new();
    for &n in &ns {
        let ic = IsmConfig {
            n,
            mode: ExecutionMode::Parallel(n),
            ..cfg.ism_config()
        };
        let (_, rec) = ism::run_ism_with_config_echo(&problem, &u0, &ic, echo.clone())?;
        records.push(rec);
    }
    let j_limit = bench.j_limit.unwrap_or_else(|| {
        records
            .iter()
            .flat_map(|r| r.history())
            .map(|(_, j)| j)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let times: Vec<(usize, Option<f64>)> = ns
        .iter()
        .zip(&records)
        .map(|(&n, r)| (n, runtime::time_to_target(r, bench.eps, j_limit)))
        .collect();
    let report = runtime::efficiency_table(&times, bench.eps)?;

    let dir = &cfg.output.dir;
    let csv = dir.join("efficiency.csv");
    let mut w = create(&csv)?;
    report.write_csv(
        &mut w,
        &[
            format!("format: {EFFICIENCY_FORMAT}"),
            format!("eps: {:e}", bench.eps),
            format!("j_limit: {j_limit:.16e}"),
            format!("config: {echo}"),
        ],
    )?;
    w.flush()?;
    for r in &records {
        let mut w = create(&dir.join(format!("history_n{}.csv", r.n)))?;
        writeln!(w, "# format: {EFFICIENCY_FORMAT}")?;
        writeln!(w, "elapsed,J")?;
        for (t, j) in r.history() {
            writeln!(w, "{t:.16e},{j:.16e}")?;
        }
        w.flush()?;
    }
    let profile = dir.join("profile.json");
    write_json(
        &profile,
        &json!({
            "format": PROFILE_FORMAT,
            "config": echo,
            "runs": records.iter().map(phase_shares).collect::<Vec<_>>(),
        }),
    )?;
    Ok(BenchOutcome {
        report,
        j_limit,
        records,
        csv,
        profile,
    })
}
