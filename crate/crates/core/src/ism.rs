//! The intermediate state method: decomposition of `[0, T]`, intermediate
//! states, concurrent subproblem solves and the outer loop.
//!
//! Each outer iteration
//! 1. propagates the current control forward from `ψ_i` and backward from
//!    `ψ_f`, either step by step or with the worker-assembled subinterval
//!    propagators (`2N` matrix-vector products);
//! 2. builds the subproblem endpoints;
//! 3. solves the `N` subproblems concurrently;
//! 4. concatenates the new subinterval controls;
//! 5. sums the sub-gradient norms at the new controls into `Err`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controls::{ControlField, Decomposition};
use crate::error::{IsmError, Result};
use crate::linalg::CVec;
use crate::objective::{self, ControlProblem, Fidelity, Subproblem, SubproblemKind};
use crate::optimizers::{self, SolverSpec};
use crate::propagation::{self, Action, AssembledPropagator, Direction};
use crate::runtime::{
    self, CoordinatorPhases, ExecutionMode, IterationRecord, LoadImbalance, Phases, RunRecord,
    TaskOutput,
};
use crate::wire::{Decoder, Encoder};

/// Which intermediate states feed the subproblems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Interpolated states for linear models, split states otherwise.
    #[default]
    Auto,
    Interpolated,
    Split,
}

/// Outer-loop configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsmConfig {
    /// Number of subintervals.
    pub n: usize,
    /// Stop once `Err ≤ η`.
    pub eta: f64,
    pub max_iterations: usize,
    pub solver: SolverSpec,
    pub mode: ExecutionMode,
    #[serde(default)]
    pub variant: Variant,
    /// Rebuild boundary states from worker-assembled propagators when the
    /// model supports it.
    #[serde(default = "yes")]
    pub assemble: bool,
    #[serde(default)]
    pub imbalance: LoadImbalance,
}

fn yes() -> bool {
    true
}

impl IsmConfig {
    pub fn new(n: usize, solver: SolverSpec) -> Self {
        Self {
            n,
            eta: 1e-3,
            max_iterations: 100,
            solver,
            mode: ExecutionMode::Sequential,
            variant: Variant::Auto,
            assemble: true,
            imbalance: LoadImbalance::none(),
        }
    }

    pub fn with_mode(mut self, mode: ExecutionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_iterations(mut self, k: usize) -> Self {
        self.max_iterations = k;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub fn with_assembly(mut self, on: bool) -> Self {
        self.assemble = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(IsmError::Config {
                key: format!("ism.{key}"),
                message: msg.into(),
            })
        };
        if self.n == 0 {
            return bad("n", "must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta", "must satisfy 0 < eta <= 1");
        }
        if let ExecutionMode::Parallel(0) = self.mode {
            return bad("workers", "must be at least 1");
        }
        self.solver.validate()
    }
}

/// Boundary states of a decomposition.
#[derive(Clone, Debug, PartialEq)]
pub enum IntermediateStates {
    /// `φ_0 … φ_N`, with `φ_0 = ψ_i` and `φ_N = ψ_f`.
    Interpolated(Vec<CVec>),
    /// Forward states `ψ(t_n)` and adjoint states `χ(t_n)`, `n = 0..=N`.
    Split { forward: Vec<CVec>, adjoint: Vec<CVec> },
}

impl IntermediateStates {
    pub fn len(&self) -> usize {
        match self {
            Self::Interpolated(p) => p.len(),
            Self::Split { forward, .. } => forward.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Start and target of subproblem `n`.
    pub fn endpoints(&self, n: usize) -> (&CVec, &CVec) {
        match self {
            Self::Interpolated(p) => (&p[n], &p[n + 1]),
            Self::Split { forward, adjoint } => (&forward[n], &adjoint[n + 1]),
        }
    }

    pub fn kind(&self) -> SubproblemKind {
        match self {
            Self::Interpolated(_) => SubproblemKind::Interpolated,
            Self::Split { .. } => SubproblemKind::Split,
        }
    }
}

fn interpolate(decomp: &Decomposition, psi: &[CVec], chi: &[CVec], initial: &CVec, target: &CVec) -> Vec<CVec> {
    let n = decomp.len();
    (0..=n)
        .map(|k| {
            if k == 0 {
                initial.clone()
            } else if k == n {
                target.clone()
            } else {
                let (a, b) = decomp.interpolation_weights(k);
                CVec::combine(a, &psi[k], b, &chi[k])
            }
        })
        .collect()
}

/// `φ_n = ((T − t_n)/T) ψ(t_n) + (t_n/T) χ(t_n)` with `χ` propagated
/// backward from `ψ_f` through the inverse steps.
pub fn intermediate_states(problem: &ControlProblem, u: &ControlField, decomp: &Decomposition) -> Result<IntermediateStates> {
    let model = problem.model().as_ref();
    if !model.is_linear() {
        return Err(IsmError::Capability(format!(
            "{} is nonlinear; use the split variant",
            model.name()
        )));
    }
    problem.check_control(u)?;
    let psi = propagation::propagate(model, u, problem.initial(), Direction::Forward)?;
    let chi = propagation::propagate(model, u, problem.target(), Direction::Backward)?;
    let b = decomp.boundaries();
    let psi_b: Vec<CVec> = b.iter().map(|&j| psi[j].clone()).collect();
    let chi_b: Vec<CVec> = b.iter().map(|&j| chi[j].clone()).collect();
    Ok(IntermediateStates::Interpolated(interpolate(
        decomp,
        &psi_b,
        &chi_b,
        problem.initial(),
        problem.target(),
    )))
}

/// Forward states and adjoint states at the boundaries, from one forward
/// sweep and one adjoint sweep seeded with the terminal cotangent. Also
/// returns `J[u]`.
fn split_sweep(problem: &ControlProblem, u: &ControlField, decomp: &Decomposition) -> Result<(IntermediateStates, f64)> {
    problem.check_control(u)?;
    let target = problem.target().clone();
    let fid = problem.fidelity();
    let sweep = propagation::adjoint_sweep(
        problem.model().as_ref(),
        u,
        problem.initial(),
        |last| fid.cotangent(last, &target),
        decomp.boundaries(),
        problem.checkpoint_stride().max(1),
    )?;
    let j = fid.value(&sweep.final_state, problem.target()) - u.weighted_l2_penalty(problem.penalty())?;
    Ok((
        IntermediateStates::Split {
            forward: sweep.forward_at,
            adjoint: sweep.adjoint_at,
        },
        j,
    ))
}

/// Subproblem `n` starts on the forward trajectory at `t_n` and targets the
/// adjoint trajectory at `t_{n+1}`.
pub fn split_states(problem: &ControlProblem, u: &ControlField, decomp: &Decomposition) -> Result<IntermediateStates> {
    Ok(split_sweep(problem, u, decomp)?.0)
}

/// Subproblem `n` for the given intermediate states.
pub fn subproblem(
    problem: &ControlProblem,
    decomp: &Decomposition,
    states: &IntermediateStates,
    n: usize,
) -> Result<Subproblem> {
    let (a, b) = states.endpoints(n);
    match states.kind() {
        SubproblemKind::Interpolated => Subproblem::interpolated(problem, decomp, n, a.clone(), b.clone()),
        SubproblemKind::Split => Subproblem::split(problem, decomp, n, a.clone(), b.clone()),
    }
}

/// Residuals of the two decomposition identities at one control.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremReport {
    pub n: usize,
    /// `J[u]` with the tracking terminal term `−½‖ψ(T) − ψ_f‖²`.
    pub j_tracking: f64,
    /// `J[u]` with the overlap terminal term `Re<ψ(T)|ψ_f>`.
    pub j_overlap: f64,
    /// `J_∥[u, φ^u]`.
    pub j_parallel: f64,
    /// `|J_∥ − J_tracking|`.
    pub functional_residual: f64,
    /// `|J_∥ + ½(‖ψ_i‖² + ‖ψ_f‖²) − J_overlap|`.
    pub overlap_offset_residual: f64,
    /// `max |β_n ∇J_n − ∇J|` over all entries.
    pub gradient_residual: f64,
}

/// Evaluates both sides of the decomposition identities.
pub fn verify_theorems(problem: &ControlProblem, u: &ControlField, decomp: &Decomposition) -> Result<TheoremReport> {
    let states = intermediate_states(problem, u, decomp)?;
    let phi = match &states {
        IntermediateStates::Interpolated(p) => p.clone(),
        IntermediateStates::Split { .. } => unreachable!(),
    };
    let tracking = problem.clone().with_fidelity(Fidelity::Tracking);
    let overlap = problem.clone().with_fidelity(Fidelity::Overlap);
    let j_tracking = objective::evaluate_j(&tracking, u)?;
    let j_overlap = objective::evaluate_j(&overlap, u)?;
    let j_parallel = objective::parallel_functional(problem, u, &phi, decomp)?;
    let offset = 0.5 * (problem.initial().norm_sqr() + problem.target().norm_sqr());
    let full = objective::gradient(problem, u)?;
    let c = u.channels();
    let mut t2 = 0.0f64;
    for n in 0..decomp.len() {
        let sub = subproblem(problem, decomp, &states, n)?;
        let g = objective::sub_gradient(&sub, &u.restrict(decomp, n)?)?;
        let (j0, _) = decomp.interval(n);
        for (k, &x) in g.as_slice().iter().enumerate() {
            let reference = full.as_slice()[j0 * c + k];
            t2 = t2.max((sub.beta * x - reference).abs());
        }
    }
    Ok(TheoremReport {
        n: decomp.len(),
        j_tracking,
        j_overlap,
        j_parallel,
        functional_residual: (j_parallel - j_tracking).abs(),
        overlap_offset_residual: (j_parallel + offset - j_overlap).abs(),
        gradient_residual: t2,
    })
}

// ------------------------------------------------------------ outer loop

const TASK_SOLVE: f64 = 1.0;
const TASK_ASSEMBLE: f64 = 2.0;

struct Context<'a> {
    problem: &'a ControlProblem,
    decomp: &'a Decomposition,
    solver: &'a SolverSpec,
    kind: SubproblemKind,
    assemble: bool,
}

/// Decoded worker result.
struct Solved {
    control: ControlField,
    err: f64,
    value: f64,
    propagator: Option<AssembledPropagator>,
    events: Vec<String>,
}

fn encode_task(n: usize, what: f64, u: &ControlField, states: Option<(&CVec, &CVec)>) -> Vec<u8> {
    let mut e = Encoder::new();
    e.reals(&[n as f64, what]).control(u);
    if let Some((a, b)) = states {
        e.cvec(a).cvec(b);
    }
    e.finish()
}

fn worker(ctx: &Context, bytes: &[u8]) -> Result<TaskOutput<(Vec<u8>, Vec<String>)>> {
    let mut phases = Phases {
        bytes_in: bytes.len(),
        ..Default::default()
    };
    let t = Instant::now();
    let mut d = Decoder::new(bytes);
    let head = d.reals()?;
    let (n, what) = (head[0] as usize, head[1]);
    let u = d.control()?;
    let ends = if what == TASK_SOLVE {
        Some((d.cvec()?, d.cvec()?))
    } else {
        None
    };
    phases.receive = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut events = Vec::new();
    let (control, err, value) = match ends {
        Some((a, b)) => {
            let sub = match ctx.kind {
                SubproblemKind::Interpolated => Subproblem::interpolated(ctx.problem, ctx.decomp, n, a, b)?,
                SubproblemKind::Split => Subproblem::split(ctx.problem, ctx.decomp, n, a, b)?,
            };
            let report = optimizers::run_inner(&sub.problem, sub.ascent_weight(), &u, ctx.solver)?;
            events.extend(report.events.into_iter().map(|e| format!("subinterval {n}: {e}")));
            let (value, g) = objective::value_and_gradient(&sub.problem, &report.control)?;
            (report.control, objective::error_norm(&[g]), value)
        }
        None => (u, 0.0, 0.0),
    };
    let m = if ctx.assemble {
        Some(propagation::assemble_propagator(ctx.problem.model().as_ref(), &control)?)
    } else {
        None
    };
    phases.compute = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut e = Encoder::new();
    e.control(&control).reals(&[err, value]);
    if let Some(m) = &m {
        let action = match m.action() {
            Action::Vector => 0.0,
            Action::Conjugation => 1.0,
        };
        e.reals(&[action]).cmat(m.matrix());
    }
    let out = e.finish();
    phases.send = t.elapsed().as_secs_f64();
    phases.bytes_out = out.len();
    Ok(TaskOutput {
        value: (out, events),
        phases,
    })
}

fn decode_result(bytes: &[u8], with_propagator: bool) -> Result<Solved> {
    let mut d = Decoder::new(bytes);
    let control = d.control()?;
    let v = d.reals()?;
    let propagator = if with_propagator {
        let action = if d.reals()?[0] == 0.0 {
            Action::Vector
        } else {
            Action::Conjugation
        };
        let m = d.cmat()?;
        let g = control.grid();
        Some(AssembledPropagator::new(m, action, g.t_start(), g.t_end()))
    } else {
        None
    };
    Ok(Solved {
        control,
        err: v[0],
        value: v[1],
        propagator,
        events: Vec::new(),
    })
}

/// Runs `tasks` on the pool and decodes the replies.
fn dispatch(
    ctx: &Context,
    cfg: &IsmConfig,
    tasks: Vec<Vec<u8>>,
    timing: &mut CoordinatorPhases,
) -> Result<(Vec<Solved>, runtime::IterationProfile)> {
    let (replies, profile) = runtime::execute_iteration(&tasks, cfg.mode, &cfg.imbalance, |_, b| worker(ctx, b))?;
    timing.parallel += profile.wall;
    let t = Instant::now();
    let mut out = Vec::with_capacity(replies.len());
    for (bytes, events) in replies {
        let mut s = decode_result(&bytes, ctx.assemble)?;
        s.events = events;
        out.push(s);
    }
    timing.receive += t.elapsed().as_secs_f64();
    Ok((out, profile))
}

/// Algorithm driver: returns the final control and the run record.
pub fn run_ism(problem: &ControlProblem, u0: &ControlField, cfg: &IsmConfig) -> Result<(ControlField, RunRecord)> {
    run_ism_with_config_echo(problem, u0, cfg, serde_json::Value::Null)
}

/// [`run_ism`] with an arbitrary configuration echo stored in the record.
pub fn run_ism_with_config_echo(
    problem: &ControlProblem,
    u0: &ControlField,
    cfg: &IsmConfig,
    echo: serde_json::Value,
) -> Result<(ControlField, RunRecord)> {
    cfg.validate()?;
    problem.check_control(u0)?;
    let start = Instant::now();
    let model = problem.model().as_ref();
    let kind = match cfg.variant {
        Variant::Auto if model.is_linear() => SubproblemKind::Interpolated,
        Variant::Auto | Variant::Split => SubproblemKind::Split,
        Variant::Interpolated => {
            if !model.is_linear() {
                return Err(IsmError::Capability(format!(
                    "{} is nonlinear; the interpolated variant needs a linear model",
                    model.name()
                )));
            }
            SubproblemKind::Interpolated
        }
    };
    let decomp = Decomposition::uniform(*problem.grid(), cfg.n)?;
    let assemble = cfg.assemble && kind == SubproblemKind::Interpolated && {
        let g = problem.grid();
        model.step_propagator(u0.at_step(0), g.tau()).is_ok()
    };
    let ctx = Context {
        problem,
        decomp: &decomp,
        solver: &cfg.solver,
        kind,
        assemble,
    };
    let mut record = RunRecord {
        config: echo,
        n: cfg.n,
        workers: cfg.mode.workers(),
        iterations: Vec::new(),
        final_j: f64::NAN,
        final_elapsed: 0.0,
        converged: false,
    };
    let mut u = u0.clone();
    let mut props: Vec<AssembledPropagator> = Vec::new();
    let mut pending = CoordinatorPhases::default();
    if assemble && cfg.max_iterations > 0 {
        let t = Instant::now();
        let tasks = (0..cfg.n)
            .map(|n| Ok(encode_task(n, TASK_ASSEMBLE, &u.restrict(&decomp, n)?, None)))
            .collect::<Result<Vec<_>>>()?;
        pending.send += t.elapsed().as_secs_f64();
        let (solved, _) = dispatch(&ctx, cfg, tasks, &mut pending)?;
        props = solved.into_iter().map(|s| s.propagator.unwrap()).collect();
    }

    for k in 0..cfg.max_iterations {
        let mut timing = std::mem::take(&mut pending);
        // (a), (b)
        let t = Instant::now();
        let (states, j) = match kind {
            SubproblemKind::Split => split_sweep(problem, &u, &decomp)?,
            SubproblemKind::Interpolated if assemble => {
                let mut psi = vec![problem.initial().clone()];
                for m in &props {
                    let next = m.apply(psi.last().unwrap())?;
                    psi.push(next);
                }
                let mut chi = vec![problem.target().clone()];
                for m in props.iter().rev() {
                    let prev = m.apply_adjoint(chi.last().unwrap())?;
                    chi.push(prev);
                }
                chi.reverse();
                let last = &psi[cfg.n];
                let j = problem.fidelity().value(last, problem.target()) - u.weighted_l2_penalty(problem.penalty())?;
                (
                    IntermediateStates::Interpolated(interpolate(&decomp, &psi, &chi, problem.initial(), problem.target())),
                    j,
                )
            }
            SubproblemKind::Interpolated => {
                let j = objective::evaluate_j(problem, &u)?;
                (intermediate_states(problem, &u, &decomp)?, j)
            }
        };
        if !j.is_finite() {
            return Err(IsmError::NonFinite(format!("figure of merit at outer iteration {k}")));
        }
        let elapsed = start.elapsed().as_secs_f64();
        timing.states += t.elapsed().as_secs_f64();

        // (c)
        let t = Instant::now();
        let tasks = (0..cfg.n)
            .map(|n| {
                let (a, b) = states.endpoints(n);
                Ok(encode_task(n, TASK_SOLVE, &u.restrict(&decomp, n)?, Some((a, b))))
            })
            .collect::<Result<Vec<_>>>()?;
        timing.send += t.elapsed().as_secs_f64();
        let (solved, profile) = dispatch(&ctx, cfg, tasks, &mut timing)?;

        // (d), (e)
        let t = Instant::now();
        let parts: Vec<ControlField> = solved.iter().map(|s| s.control.clone()).collect();
        let next = ControlField::concat(&parts)?;
        if !next.is_finite() {
            return Err(IsmError::NonFinite(format!("control after outer iteration {k}")));
        }
        let err: f64 = solved.iter().map(|s| s.err).sum();
        let sub_values: Vec<f64> = solved.iter().map(|s| s.value).collect();
        let events: Vec<String> = solved.iter().flat_map(|s| s.events.iter().cloned()).collect();
        if assemble {
            props = solved.into_iter().map(|s| s.propagator.unwrap()).collect();
        }
        u = next;
        timing.merge += t.elapsed().as_secs_f64();
        record.iterations.push(IterationRecord {
            k,
            j,
            elapsed,
            err,
            sub_values,
            coordinator: timing,
            profile,
            events,
        });
        if !err.is_finite() {
            return Err(IsmError::NonFinite(format!("Err at outer iteration {k}")));
        }
        if err <= cfg.eta {
            record.converged = true;
            break;
        }
    }
    record.final_j = objective::evaluate_j(problem, &u)?;
    record.final_elapsed = start.elapsed().as_secs_f64();
    Ok((u, record))
}
