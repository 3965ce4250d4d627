//! The same run the `ism run --config` command performs, from TOML text.

use std::io::BufReader;

use ism::cli;
use ism::config::RunConfig;

const CONFIG: &str = r#"
seed = 11

[model]
kind = "two-level"
detuning = 0.5
t_final = 4.0
steps = 400
alpha = 1e-3

[ism]
n = 5
workers = 5
eta = 1e-6
max_iterations = 40

[solver]
kind = "gradient"
rho = 20.0
iterations = 2
"#;

fn main() -> ism::Result<()> {
    let mut cfg = RunConfig::from_toml(CONFIG)?;
    cfg.output.dir = std::env::temp_dir().join("ism-config-example");
    let out = cli::cmd_run(&cfg)?;
    println!(
        "J {:.8} -> {:.8} in {} iterations, converged: {}",
        out.initial_j,
        out.record.final_j,
        out.record.iterations.len(),
        out.record.converged
    );

    let (_, its) = cli::read_log(BufReader::new(std::fs::File::open(&out.artifacts.log)?))?;
    println!("log has {} iteration lines; last Err = {:.2e}", its.len(), its.last().map_or(0.0, |r| r.err));
    println!("control: {}", out.artifacts.control.display());
    println!("summary: {}", out.artifacts.summary.display());

    match RunConfig::from_toml(&CONFIG.replace("rho = 20.0", "rho = -1.0")) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
