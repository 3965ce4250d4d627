use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ism::cli::{self, Scope};
use ism::config::{self, RunConfig};
use ism::Result;

/// Parallel-in-time optimal control with the intermediate state method.
#[derive(Parser)]
#[command(name = "ism", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one configuration and write the log, control and summary.
    Run(Common),
    /// Check the decomposition identities, gradients and norm conservation.
    Verify {
        /// theorems, gradients, unitarity or all
        #[arg(default_value = "all")]
        scope: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the benchmark-sized fixtures.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Time one run per subinterval count and report speedup and efficiency.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subinterval counts, overriding `bench.n_list`.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// spin, rotor, gpe or two-level
    #[arg(long)]
    preset: Option<String>,
    /// Desk-scale variant of the preset.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 0 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => config::preset(name, self.quick)?,
            (None, None) => {
                return Err(ism::IsmError::Config {
                    key: "config".into(),
                    message: "pass --config <file> or --preset <name>".into(),
                })
            }
        };
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(w) = self.workers {
            cfg.ism.workers = (w > 0).then_some(w);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let out = cli::cmd_run(&cfg)?;
            let r = &out.record;
            println!(
                "{}: J {:.12} -> {:.12} in {} iterations ({:.3} s), converged: {}",
                cfg.model.name(),
                out.initial_j,
                r.final_j,
                r.iterations.len(),
                r.final_elapsed,
                r.converged
            );
            println!("log      {}", out.artifacts.log.display());
            println!("control  {}", out.artifacts.control.display());
            println!("summary  {}", out.artifacts.summary.display());
            Ok(true)
        }
        Command::Verify {
            scope,
            seed,
            quick,
            out_dir,
        } => {
            let scope: Scope = scope.parse()?;
            let report = cli::cmd_verify(scope, seed.unwrap_or(7), quick)?;
            print!("{}", report.to_table());
            if let Some(dir) = out_dir {
                cli::write_verify_report(&report, &dir.join("verify.json"))?;
            }
            Ok(report.passed())
        }
        Command::Bench { common, n_list } => {
            let cfg = common.resolve()?;
            let out = cli::cmd_bench(&cfg, n_list.as_deref())?;
            println!("J_limit = {:.12}", out.j_limit);
            print!("{}", out.report.to_table());
            println!("table    {}", out.csv.display());
            println!("profile  {}", out.profile.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
