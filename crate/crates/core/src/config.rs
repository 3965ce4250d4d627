//! Run configuration files (TOML) and the shipped presets.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! kind = "spin"          # spin | rotor | gpe | two-level
//! spins = 3
//! jp = 140.0
//! t_final = 0.5
//! steps = 1024
//!
//! [ism]
//! n = 4
//! workers = 4            # omit for sequential execution
//! eta = 1e-3
//! max_iterations = 10
//!
//! [solver]
//! kind = "gradient"
//! rho = 1e4
//!
//! [output]
//! dir = "out/spin"
//!
//! [bench]
//! n_list = [1, 2, 4, 8]
//! eps = 0.3
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::controls::ControlField;
use crate::error::{IsmError, Result};
use crate::ism::{IsmConfig, Variant};
use crate::models::{self, GpeParams, RotorParams, SpinParams};
use crate::objective::ControlProblem;
use crate::optimizers::SolverSpec;
use crate::runtime::{ExecutionMode, LoadImbalance};

/// Benchmark model and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Spin(SpinParams),
    Rotor(RotorParams),
    Gpe(GpeParams),
    TwoLevel(TwoLevelParams),
}

/// Population transfer in a driven two-level system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelParams {
    pub detuning: f64,
    pub t_final: f64,
    pub steps: usize,
    #[serde(default)]
    pub alpha: f64,
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Spin(_) => "spin",
            Self::Rotor(_) => "rotor",
            Self::Gpe(_) => "gpe",
            Self::TwoLevel(_) => "two-level",
        }
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        match self {
            Self::Spin(p) => models::spin_problem(p),
            Self::Rotor(p) => models::rotor_problem(p),
            Self::Gpe(p) => models::gpe_problem(p),
            Self::TwoLevel(p) => models::two_level_problem(p.detuning, p.t_final, p.steps, p.alpha),
        }
    }

    /// Starting field: seeded noise for the spins (the zero field is
    /// stationary there), the linear ramp for the condensate, zero otherwise.
    pub fn initial_control(&self, problem: &ControlProblem, seed: u64) -> ControlField {
        match self {
            Self::Spin(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                models::random_control(*problem.grid(), problem.channels(), p.initial_amplitude, &mut rng)
            }
            Self::Gpe(_) => models::gpe_ramp(*problem.grid()),
            Self::Rotor(_) | Self::TwoLevel(_) => problem.zero_control(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsmSection {
    pub n: usize,
    /// Absent for sequential execution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_true")]
    pub assemble: bool,
    /// Artificial per-task delays in milliseconds, cycled over tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delays_ms: Vec<u64>,
    /// Control CSV to start from instead of the model default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_control: Option<PathBuf>,
}

fn default_eta() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

impl IsmSection {
    pub fn mode(&self) -> ExecutionMode {
        match self.workers {
            Some(w) => ExecutionMode::Parallel(w),
            None => ExecutionMode::Sequential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_log")]
    pub log: String,
    #[serde(default = "default_control")]
    pub control: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("ism-out")
}
fn default_log() -> String {
    "iterations.jsonl".into()
}
fn default_control() -> String {
    "control.csv".into()
}
fn default_summary() -> String {
    "summary.json".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            log: default_log(),
            control: default_control(),
            summary: default_summary(),
        }
    }
}

/// Efficiency study settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub n_list: Vec<usize>,
    /// Threshold on `J_limit − J`.
    pub eps: f64,
    /// Converged value; when absent, the best `J` over all runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_limit: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub ism: IsmSection,
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
}

fn section<T: DeserializeOwned>(table: &mut toml::Table, key: &str) -> Result<Option<T>> {
    match table.remove(key) {
        None => Ok(None),
        Some(v) => v.try_into().map(Some).map_err(|e: toml::de::Error| IsmError::Config {
            key: key.into(),
            message: e.message().trim().to_string(),
        }),
    }
}

fn required<T: DeserializeOwned>(table: &mut toml::Table, key: &str) -> Result<T> {
    section(table, key)?.ok_or_else(|| IsmError::Config {
        key: key.into(),
        message: "missing required block".into(),
    })
}

impl RunConfig {
    /// Parses and validates TOML text. Errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| IsmError::Config {
            key: "<file>".into(),
            message: e.message().trim().to_string(),
        })?;
        let seed = match table.remove("seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
            Some(_) => {
                return Err(IsmError::Config {
                    key: "seed".into(),
                    message: "must be a nonnegative integer".into(),
                })
            }
        };
        let cfg = Self {
            seed,
            model: required(&mut table, "model")?,
            ism: required(&mut table, "ism")?,
            solver: required(&mut table, "solver")?,
            output: section(&mut table, "output")?.unwrap_or_default(),
            bench: section(&mut table, "bench")?,
        };
        if let Some(key) = table.keys().next() {
            return Err(IsmError::Config {
                key: key.clone(),
                message: "unknown key".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every block without building the model.
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.ism_config().validate()?;
        if let Some(b) = &self.bench {
            if !b.n_list.contains(&1) {
                return Err(IsmError::Config {
                    key: "bench.n_list".into(),
                    message: "must include 1 for the sequential baseline".into(),
                });
            }
            if b.n_list.contains(&0) {
                return Err(IsmError::Config {
                    key: "bench.n_list".into(),
                    message: "entries must be at least 1".into(),
                });
            }
            if !(b.eps > 0.0) {
                return Err(IsmError::Config {
                    key: "bench.eps".into(),
                    message: "must be positive".into(),
                });
            }
        }
        let steps = match &self.model {
            ModelConfig::Spin(p) => p.steps,
            ModelConfig::Rotor(p) => p.steps,
            ModelConfig::Gpe(p) => p.steps,
            ModelConfig::TwoLevel(p) => p.steps,
        };
        let ns = std::iter::once(self.ism.n).chain(self.bench.iter().flat_map(|b| b.n_list.iter().copied()));
        for n in ns {
            if n > steps {
                return Err(IsmError::Config {
                    key: "ism.n".into(),
                    message: format!("{n} subintervals exceed {steps} time steps"),
                });
            }
        }
        Ok(())
    }

    pub fn ism_config(&self) -> IsmConfig {
        IsmConfig {
            n: self.ism.n,
            eta: self.ism.eta,
            max_iterations: self.ism.max_iterations,
            solver: self.solver.clone(),
            mode: self.ism.mode(),
            variant: self.ism.variant,
            assemble: self.ism.assemble,
            imbalance: LoadImbalance {
                delays_ms: self.ism.delays_ms.clone(),
            },
        }
    }

    /// Configuration echo stored in every artifact.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["spin", "rotor", "gpe", "two-level"];

/// Shipped configurations at the reference scale or, with `quick`, at a
/// scale that finishes in seconds to minutes.
pub fn preset(name: &str, quick: bool) -> Result<RunConfig> {
    let (model, n, max_iterations, eta, solver) = match name {
        "spin" => (
            ModelConfig::Spin(if quick { SpinParams::quick() } else { SpinParams::reference() }),
            4,
            if quick { 30 } else { 100 },
            1e-7,
            SolverSpec::gradient(1e4),
        ),
        "rotor" => (
            ModelConfig::Rotor(if quick { RotorParams::quick() } else { RotorParams::reference() }),
            4,
            if quick { 20 } else { 200 },
            default_eta(),
            SolverSpec::monotonic(),
        ),
        "gpe" => (
            ModelConfig::Gpe(GpeParams::reference()),
            4,
            if quick { 10 } else { 100 },
            default_eta(),
            SolverSpec::gradient(0.1),
        ),
        "two-level" => (
            ModelConfig::TwoLevel(TwoLevelParams {
                detuning: 1.0,
                t_final: 3.0,
                steps: 256,
                alpha: 0.0,
            }),
            4,
            50,
            default_eta(),
            SolverSpec::gradient(20.0),
        ),
        other => {
            return Err(IsmError::Config {
                key: "preset".into(),
                message: format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")),
            })
        }
    };
    let variant = if name == "gpe" { Variant::Split } else { Variant::Auto };
    let cfg = RunConfig {
        seed: 7,
        model,
        ism: IsmSection {
            n,
            workers: Some(n),
            eta,
            max_iterations,
            variant,
            assemble: true,
            delays_ms: Vec::new(),
            initial_control: None,
        },
        solver,
        output: OutputSection {
            dir: PathBuf::from(format!("ism-out/{name}")),
            ..OutputSection::default()
        },
        bench: Some(BenchSection {
            n_list: vec![1, 2, 4, 8],
            eps: 0.3,
            j_limit: None,
        }),
    };
    cfg.validate()?;
    Ok(cfg)
}
