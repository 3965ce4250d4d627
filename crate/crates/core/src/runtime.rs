//! Deterministic execution of independent tasks on a scoped thread pool,
//! per-phase timing, run records and the speedup/efficiency metrics.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{IsmError, Result};

/// Where subproblem tasks run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "workers")]
pub enum ExecutionMode {
    /// All tasks on the calling thread, in index order.
    Sequential,
    /// A pool of `W` scoped threads pulling tasks from a shared queue.
    Parallel(usize),
}

impl ExecutionMode {
    pub fn workers(&self) -> usize {
        match *self {
            ExecutionMode::Sequential => 1,
            ExecutionMode::Parallel(w) => w.max(1),
        }
    }
}

/// Artificial per-task delay, `delays[task % len]`, to exercise queueing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadImbalance {
    pub delays_ms: Vec<u64>,
}

impl LoadImbalance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn delay(&self, task: usize) -> Duration {
        if self.delays_ms.is_empty() {
            Duration::ZERO
        } else {
            Duration::from_millis(self.delays_ms[task % self.delays_ms.len()])
        }
    }
}

/// Time a task spent in each phase, in seconds, and its message sizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub compute: f64,
    pub send: f64,
    pub receive: f64,
    pub bytes_in: usize,
    pub bytes_out: usize,
}

impl Phases {
    pub fn busy(&self) -> f64 {
        self.compute + self.send + self.receive
    }

    pub fn accumulate(&mut self, other: &Phases) {
        self.compute += other.compute;
        self.send += other.send;
        self.receive += other.receive;
        self.bytes_in += other.bytes_in;
        self.bytes_out += other.bytes_out;
    }
}

/// What a task handler returns.
#[derive(Debug)]
pub struct TaskOutput<R> {
    pub value: R,
    pub phases: Phases,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub task: usize,
    pub worker: usize,
    pub phases: Phases,
}

/// Per-worker totals; `idle = wall − busy`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker: usize,
    pub tasks: usize,
    pub phases: Phases,
    pub idle: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationProfile {
    pub wall: f64,
    pub tasks: Vec<TaskProfile>,
    pub workers: Vec<WorkerProfile>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

/// Runs `handler(i, &tasks[i])` for every task and returns the values in
/// task order. Values do not depend on the mode or the worker count; the
/// first failing task (lowest index) determines the error.
pub fn execute_iteration<T, R, F>(
    tasks: &[T],
    mode: ExecutionMode,
    imbalance: &LoadImbalance,
    handler: F,
) -> Result<(Vec<R>, IterationProfile)>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<TaskOutput<R>> + Sync,
{
    let start = Instant::now();
    let run_one = |i: usize, worker: usize| -> (usize, Result<TaskOutput<R>>, usize) {
        let t0 = Instant::now();
        let delay = imbalance.delay(i);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let out = match catch_unwind(AssertUnwindSafe(|| handler(i, &tasks[i]))) {
            Ok(r) => r,
            Err(p) => Err(IsmError::Worker {
                task: i,
                message: panic_message(p),
            }),
        };
        let out = out.map(|mut o| {
            o.phases.compute += delay.as_secs_f64();
            let measured = t0.elapsed().as_secs_f64();
            // phases reported by the handler never exceed the measured span
            if o.phases.busy() > measured {
                o.phases.compute = (measured - o.phases.send - o.phases.receive).max(0.0);
            }
            o
        });
        (i, out, worker)
    };

    let workers = mode.workers().min(tasks.len().max(1));
    let mut slots: Vec<Option<(Result<TaskOutput<R>>, usize)>> = (0..tasks.len()).map(|_| None).collect();
    match mode {
        ExecutionMode::Sequential => {
            for i in 0..tasks.len() {
                let (i, r, w) = run_one(i, 0);
                slots[i] = Some((r, w));
            }
        }
        ExecutionMode::Parallel(_) => {
            let next = AtomicUsize::new(0);
            let done = Mutex::new(Vec::with_capacity(tasks.len()));
            std::thread::scope(|s| {
                for w in 0..workers {
                    let next = &next;
                    let done = &done;
                    let run_one = &run_one;
                    s.spawn(move || loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= tasks.len() {
                            break;
                        }
                        let r = run_one(i, w);
                        done.lock().unwrap_or_else(|e| e.into_inner()).push(r);
                    });
                }
            });
            for (i, r, w) in done.into_inner().unwrap_or_else(|e| e.into_inner()) {
                slots[i] = Some((r, w));
            }
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let mut values = Vec::with_capacity(tasks.len());
    let mut profile = IterationProfile {
        wall,
        tasks: Vec::with_capacity(tasks.len()),
        workers: (0..workers)
            .map(|w| WorkerProfile {
                worker: w,
                ..Default::default()
            })
            .collect(),
    };
    for (i, slot) in slots.into_iter().enumerate() {
        let (r, w) = slot.ok_or_else(|| IsmError::Worker {
            task: i,
            message: "task was never executed".into(),
        })?;
        let out = r?;
        profile.tasks.push(TaskProfile {
            task: i,
            worker: w,
            phases: out.phases,
        });
        let wp = &mut profile.workers[w];
        wp.tasks += 1;
        wp.phases.accumulate(&out.phases);
        values.push(out.value);
    }
    for wp in &mut profile.workers {
        wp.idle = (wall - wp.phases.busy()).max(0.0);
    }
    Ok((values, profile))
}

/// Seconds spent in `f`.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

/// Coordinator-side timing of one outer iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorPhases {
    /// Trajectories and intermediate states.
    pub states: f64,
    /// Serializing tasks.
    pub send: f64,
    /// Deserializing results.
    pub receive: f64,
    /// Wall time of the parallel phase.
    pub parallel: f64,
    /// Concatenation and error evaluation.
    pub merge: f64,
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `J[u^k]`.
    pub j: f64,
    /// Seconds since the start of the run when `J[u^k]` became available.
    pub elapsed: f64,
    /// Error indicator from the sub-gradients at `u^{k+1}`.
    pub err: f64,
    /// `J_n[u_n^{k+1}]` per subinterval.
    pub sub_values: Vec<f64>,
    pub coordinator: CoordinatorPhases,
    pub profile: IterationProfile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<String>,
}

/// Everything recorded during one optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub n: usize,
    pub workers: usize,
    pub iterations: Vec<IterationRecord>,
    /// `J` of the returned control.
    pub final_j: f64,
    pub final_elapsed: f64,
    pub converged: bool,
}

impl RunRecord {
    /// `(elapsed, J)` pairs including the final value.
    pub fn history(&self) -> Vec<(f64, f64)> {
        let mut h: Vec<(f64, f64)> = self.iterations.iter().map(|r| (r.elapsed, r.j)).collect();
        h.push((self.final_elapsed, self.final_j));
        h
    }

    /// Per-worker phase totals over the whole run.
    pub fn worker_totals(&self) -> Vec<WorkerProfile> {
        let mut out: Vec<WorkerProfile> = Vec::new();
        for it in &self.iterations {
            for w in &it.profile.workers {
                if out.len() <= w.worker {
                    out.resize_with(w.worker + 1, WorkerProfile::default);
                }
                let o = &mut out[w.worker];
                o.worker = w.worker;
                o.tasks += w.tasks;
                o.phases.accumulate(&w.phases);
                o.idle += w.idle;
            }
        }
        out
    }

    pub fn coordinator_totals(&self) -> CoordinatorPhases {
        let mut c = CoordinatorPhases::default();
        for it in &self.iterations {
            c.states += it.coordinator.states;
            c.send += it.coordinator.send;
            c.receive += it.coordinator.receive;
            c.parallel += it.coordinator.parallel;
            c.merge += it.coordinator.merge;
        }
        c
    }
}

/// Elapsed time at the first recorded `J` with `j_limit − J < ε`, or
/// `None` when the threshold is never crossed.
pub fn time_to_target(record: &RunRecord, eps: f64, j_limit: f64) -> Option<f64> {
    record
        .history()
        .into_iter()
        .find(|&(_, j)| j_limit - j < eps)
        .map(|(t, _)| t)
}

/// `S(ε,N) = t(ε,1)/t(ε,N)` and `Eff(ε,N) = 100 S/N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub n: usize,
    pub t: Option<f64>,
    pub speedup: Option<f64>,
    pub efficiency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub eps: f64,
    pub rows: Vec<EfficiencyRow>,
}

/// Builds the table from `(N, t(ε,N))` pairs; `N = 1` must be present and
/// reached.
pub fn efficiency_table(times: &[(usize, Option<f64>)], eps: f64) -> Result<EfficiencyReport> {
    let base = times
        .iter()
        .find(|(n, _)| *n == 1)
        .and_then(|(_, t)| *t)
        .ok_or_else(|| IsmError::Config {
            key: "bench.n_list".into(),
            message: "the sequential baseline N = 1 is missing or did not reach the target".into(),
        })?;
    let rows = times
        .iter()
        .map(|&(n, t)| {
            let speedup = t.map(|t| base / t);
            EfficiencyRow {
                n,
                t,
                speedup,
                efficiency: speedup.map(|s| 100.0 * s / n as f64),
            }
        })
        .collect();
    Ok(EfficiencyReport { eps, rows })
}

/// `99.7%` style, one decimal.
pub fn format_percent(eff: f64) -> String {
    format!("{eff:.1}%")
}

fn opt17(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

impl EfficiencyReport {
    /// CSV with columns `N,t,S,Eff`; unreached rows leave `t,S,Eff` empty.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "N,t,S,Eff")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.n,
                opt17(r.t),
                opt17(r.speedup),
                opt17(r.efficiency)
            )?;
        }
        Ok(())
    }

    /// Plain-text table with percentages.
    pub fn to_table(&self) -> String {
        let mut s = format!("eps = {}\n{:>4} {:>14} {:>10} {:>8}\n", self.eps, "N", "t [s]", "S", "Eff");
        for r in &self.rows {
            match (r.t, r.speedup, r.efficiency) {
                (Some(t), Some(sp), Some(e)) => {
                    s += &format!("{:>4} {:>14.6} {:>10.4} {:>8}\n", r.n, t, sp, format_percent(e))
                }
                _ => s += &format!("{:>4} {:>14} {:>10} {:>8}\n", r.n, "not reached", "-", "-"),
            }
        }
        s
    }
}
