//! Piecewise-constant multichannel control fields on uniform time grids.
//!
//! Sample `u_{c,j}` holds the value of channel `c` on `[t_j, t_{j+1})`.
//! Samples are stored time-major so that restricting to a block of steps is
//! a contiguous slice.

use std::io::{BufRead, Write};

use crate::error::{IsmError, Result};

/// Uniform grid `t_start, t_start + τ, …, t_start + J τ`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    tau: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(IsmError::Layout("time grid needs at least one step".into()));
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(IsmError::Layout(format!(
                "time grid needs t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Self {
            t_start,
            tau: (t_end - t_start) / steps as f64,
            steps,
        })
    }

    /// Grid with an explicit step; used when a sub-grid must reuse τ bit-exactly.
    pub fn with_step(t_start: f64, tau: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(tau > 0.0) || !tau.is_finite() || !t_start.is_finite() {
            return Err(IsmError::Layout(format!(
                "invalid grid (t_start={t_start}, tau={tau}, steps={steps})"
            )));
        }
        Ok(Self {
            t_start,
            tau,
            steps,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time_at(self.steps)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn duration(&self) -> f64 {
        self.tau * self.steps as f64
    }

    pub fn time_at(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.tau
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        self.t_start + (j as f64 + 0.5) * self.tau
    }

    /// Steps `j0..j1` as a grid of their own, sharing τ.
    pub fn sub_grid(&self, j0: usize, j1: usize) -> Result<TimeGrid> {
        if j0 >= j1 || j1 > self.steps {
            return Err(IsmError::Layout(format!(
                "step range {j0}..{j1} outside grid of {} steps",
                self.steps
            )));
        }
        Ok(TimeGrid {
            t_start: self.time_at(j0),
            tau: self.tau,
            steps: j1 - j0,
        })
    }
}

/// Per-step penalty weights `α(t_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySchedule {
    values: Vec<f64>,
}

impl PenaltySchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(IsmError::Layout(format!(
                "penalty weights must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn constant(alpha: f64, steps: usize) -> Result<Self> {
        Self::new(vec![alpha; steps])
    }

    pub fn zero(steps: usize) -> Self {
        Self {
            values: vec![0.0; steps],
        }
    }

    /// Samples `alpha(t)` at the interval midpoints of `grid`.
    pub fn from_fn(grid: &TimeGrid, alpha: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..grid.steps()).map(|j| alpha(grid.midpoint(j))).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&a| a == 0.0)
    }

    pub fn restrict(&self, j0: usize, j1: usize) -> PenaltySchedule {
        PenaltySchedule {
            values: self.values[j0..j1].to_vec(),
        }
    }

    pub fn scaled(&self, s: f64) -> PenaltySchedule {
        PenaltySchedule {
            values: self.values.iter().map(|a| a * s).collect(),
        }
    }
}

/// Multichannel sample-and-hold control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    grid: TimeGrid,
    channels: usize,
    samples: Vec<f64>,
}

impl ControlField {
    pub fn new(grid: TimeGrid, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(IsmError::Layout("control needs at least one channel".into()));
        }
        if samples.len() != channels * grid.steps() {
            return Err(IsmError::DimensionMismatch {
                context: "control samples",
                expected: channels * grid.steps(),
                found: samples.len(),
            });
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(IsmError::NonFinite("control samples".into()));
        }
        Ok(Self {
            grid,
            channels,
            samples,
        })
    }

    pub fn zeros(grid: TimeGrid, channels: usize) -> Self {
        Self {
            grid,
            channels,
            samples: vec![0.0; channels * grid.steps()],
        }
    }

    /// Builds a field from `f(channel, midpoint_time)`.
    pub fn from_fn(grid: TimeGrid, channels: usize, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(channels * grid.steps());
        for j in 0..grid.steps() {
            let t = grid.midpoint(j);
            for c in 0..channels {
                samples.push(f(c, t));
            }
        }
        Self::new(grid, channels, samples)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn get(&self, c: usize, j: usize) -> f64 {
        self.samples[j * self.channels + c]
    }

    pub fn set(&mut self, c: usize, j: usize, value: f64) {
        self.samples[j * self.channels + c] = value;
    }

    /// All channel values on step `j`.
    pub fn at_step(&self, j: usize) -> &[f64] {
        &self.samples[j * self.channels..(j + 1) * self.channels]
    }

    /// Flat time-major samples.
    pub fn as_slice(&self) -> &[f64] {
        &self.samples
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    /// Same grid and layout, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, self.channels, samples)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }

    pub fn restrict_steps(&self, j0: usize, j1: usize) -> Result<ControlField> {
        let grid = self.grid.sub_grid(j0, j1)?;
        Ok(ControlField {
            grid,
            channels: self.channels,
            samples: self.samples[j0 * self.channels..j1 * self.channels].to_vec(),
        })
    }

    /// The part of the field on subinterval `n` of `decomp`.
    pub fn restrict(&self, decomp: &Decomposition, n: usize) -> Result<ControlField> {
        decomp.check_grid(&self.grid)?;
        let (j0, j1) = decomp.interval(n);
        self.restrict_steps(j0, j1)
    }

    /// Concatenates abutting parts that share τ and channel count.
    pub fn concat(parts: &[ControlField]) -> Result<ControlField> {
        let first = parts
            .first()
            .ok_or_else(|| IsmError::Layout("nothing to concatenate".into()))?;
        let tau = first.grid.tau();
        let mut steps = 0;
        let mut samples = Vec::new();
        let mut expected_start = first.grid.t_start();
        for (i, p) in parts.iter().enumerate() {
            if p.channels != first.channels {
                return Err(IsmError::Layout(format!(
                    "part {i} has {} channels, expected {}",
                    p.channels, first.channels
                )));
            }
            if !close(p.grid.tau(), tau) {
                return Err(IsmError::Layout(format!(
                    "part {i} has step {}, expected {tau}",
                    p.grid.tau()
                )));
            }
            let tol = 1e-9 * tau;
            if (p.grid.t_start() - expected_start).abs() > tol {
                return Err(IsmError::Layout(format!(
                    "part {i} starts at {} but previous part ends at {expected_start}",
                    p.grid.t_start()
                )));
            }
            expected_start = p.grid.t_end();
            steps += p.steps();
            samples.extend_from_slice(&p.samples);
        }
        let grid = TimeGrid::with_step(first.grid.t_start(), tau, steps)?;
        ControlField::new(grid, first.channels, samples)
    }

    /// `(1/2) Σ_c Σ_j α_j τ u_{c,j}²`
    pub fn weighted_l2_penalty(&self, schedule: &PenaltySchedule) -> Result<f64> {
        if schedule.len() != self.steps() {
            return Err(IsmError::DimensionMismatch {
                context: "penalty schedule",
                expected: self.steps(),
                found: schedule.len(),
            });
        }
        let tau = self.grid.tau();
        Ok((0..self.steps())
            .map(|j| {
                let sq: f64 = self.at_step(j).iter().map(|u| u * u).sum();
                0.5 * schedule.at(j) * tau * sq
            })
            .sum())
    }

    /// Writes the documented CSV layout. `comments` become leading `# ` lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        write!(w, "t")?;
        for c in 1..=self.channels {
            write!(w, ",u_{c}")?;
        }
        writeln!(w)?;
        for j in 0..self.steps() {
            write!(w, "{:.16e}", self.grid.midpoint(j))?;
            for u in self.at_step(j) {
                write!(w, ",{u:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the CSV layout written by [`ControlField::write_csv`]. The grid
    /// is reconstructed from the midpoints.
    pub fn read_csv<R: BufRead>(r: R) -> Result<ControlField> {
        let mut header: Option<usize> = None;
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match header {
                None => {
                    if fields.first() != Some(&"t") || fields.len() < 2 {
                        return Err(IsmError::ControlFile(format!(
                            "line {}: expected header `t,u_1,...`",
                            lineno + 1
                        )));
                    }
                    for (c, f) in fields[1..].iter().enumerate() {
                        if *f != format!("u_{}", c + 1) {
                            return Err(IsmError::ControlFile(format!(
                                "line {}: unexpected column `{f}`",
                                lineno + 1
                            )));
                        }
                    }
                    header = Some(fields.len() - 1);
                }
                Some(channels) => {
                    if fields.len() != channels + 1 {
                        return Err(IsmError::ControlFile(format!(
                            "line {}: expected {} columns, found {}",
                            lineno + 1,
                            channels + 1,
                            fields.len()
                        )));
                    }
                    let parse = |s: &str| {
                        s.parse::<f64>().map_err(|e| {
                            IsmError::ControlFile(format!("line {}: {e}", lineno + 1))
                        })
                    };
                    times.push(parse(fields[0])?);
                    for f in &fields[1..] {
                        samples.push(parse(f)?);
                    }
                }
            }
        }
        let channels = header.ok_or_else(|| IsmError::ControlFile("missing header".into()))?;
        if times.is_empty() {
            return Err(IsmError::ControlFile("no samples".into()));
        }
        let steps = times.len();
        let tau = if steps > 1 {
            (times[steps - 1] - times[0]) / (steps - 1) as f64
        } else {
            return Err(IsmError::ControlFile(
                "a single row does not determine the time step".into(),
            ));
        };
        let grid = TimeGrid::with_step(times[0] - 0.5 * tau, tau, steps)?;
        ControlField::new(grid, channels, samples)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Partition `0 = t_0 < … < t_N = T` aligned to grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    grid: TimeGrid,
    boundaries: Vec<usize>,
}

impl Decomposition {
    /// `N` equal subintervals; requires `J mod N = 0`.
    pub fn uniform(grid: TimeGrid, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(IsmError::Layout("decomposition needs N >= 1".into()));
        }
        if grid.steps() % n != 0 {
            return Err(IsmError::Layout(format!(
                "{} steps cannot be split into {n} equal subintervals",
                grid.steps()
            )));
        }
        let m = grid.steps() / n;
        Self::from_indices(grid, (0..=n).map(|k| k * m).collect())
    }

    /// Explicit boundary grid indices `0 = k_0 < … < k_N = J`.
    pub fn from_indices(grid: TimeGrid, boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2
            || boundaries[0] != 0
            || *boundaries.last().unwrap() != grid.steps()
            || boundaries.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(IsmError::Layout(format!(
                "boundaries {boundaries:?} must increase strictly from 0 to {}",
                grid.steps()
            )));
        }
        Ok(Self { grid, boundaries })
    }

    /// Explicit boundary times; each must sit on a grid point.
    pub fn from_times(grid: TimeGrid, times: &[f64]) -> Result<Self> {
        let mut idx = Vec::with_capacity(times.len());
        for &t in times {
            let k = ((t - grid.t_start()) / grid.tau()).round();
            if k < 0.0 || (grid.time_at(k as usize) - t).abs() > 1e-9 * grid.tau() {
                return Err(IsmError::Layout(format!(
                    "boundary {t} is not aligned with the fine grid"
                )));
            }
            idx.push(k as usize);
        }
        Self::from_indices(grid, idx)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Grid steps `j0..j1` of subinterval `n`.
    pub fn interval(&self, n: usize) -> (usize, usize) {
        (self.boundaries[n], self.boundaries[n + 1])
    }

    pub fn time(&self, n: usize) -> f64 {
        self.grid.time_at(self.boundaries[n])
    }

    pub fn sub_grid(&self, n: usize) -> TimeGrid {
        let (j0, j1) = self.interval(n);
        self.grid.sub_grid(j0, j1).expect("validated boundaries")
    }

    /// `(T − t_n)/T` and `t_n/T` from grid indices.
    pub fn interpolation_weights(&self, n: usize) -> (f64, f64) {
        let total = self.grid.steps() as f64;
        let k = self.boundaries[n] as f64;
        ((total - k) / total, k / total)
    }

    /// `β_n = T/(t_{n+1} − t_n)`
    pub fn beta(&self, n: usize) -> f64 {
        let (j0, j1) = self.interval(n);
        self.grid.steps() as f64 / (j1 - j0) as f64
    }

    /// `(t_{n+1} − t_n)/T`, so that `α_n = α · alpha_scale(n)`.
    pub fn alpha_scale(&self, n: usize) -> f64 {
        let (j0, j1) = self.interval(n);
        (j1 - j0) as f64 / self.grid.steps() as f64
    }

    /// `β_n` and `α_n/α` as integer ratios; their product is exactly one.
    pub fn weight_ratio(&self, n: usize) -> ((usize, usize), (usize, usize)) {
        let (j0, j1) = self.interval(n);
        ((self.grid.steps(), j1 - j0), (j1 - j0, self.grid.steps()))
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if grid.steps() != self.grid.steps() || !close(grid.tau(), self.grid.tau()) {
            return Err(IsmError::Layout(
                "control grid does not match the decomposition grid".into(),
            ));
        }
        Ok(())
    }
}
