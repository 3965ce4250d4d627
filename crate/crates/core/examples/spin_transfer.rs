//! Coherence transfer in a three-spin chain with parallel subproblems.

use ism::config;
use ism::ism::{run_ism, IsmConfig};
use ism::objective;
use ism::optimizers::SolverSpec;
use ism::runtime::ExecutionMode;

fn main() -> ism::Result<()> {
    let cfg = config::preset("spin", true)?;
    let problem = cfg.model.problem()?;
    let u0 = cfg.model.initial_control(&problem, cfg.seed);
    println!("J[u0] = {:.8}", objective::evaluate_j(&problem, &u0)?);

    for n in [1, 4] {
        let ic = IsmConfig::new(n, SolverSpec::gradient(1e4))
            .with_mode(ExecutionMode::Parallel(n))
            .with_max_iterations(30)
            .with_eta(1e-9);
        let (u, record) = run_ism(&problem, &u0, &ic)?;
        println!(
            "N = {n}: J = {:.8} after {} iterations, {:.2} s, normalized overlap {:.6}",
            record.final_j,
            record.iterations.len(),
            record.final_elapsed,
            problem.normalized_overlap(&u)?
        );
        let errs: Vec<String> = record.iterations.iter().step_by(5).map(|r| format!("{:.2e}", r.err)).collect();
        println!("  Err every 5 iterations: {}", errs.join(" "));
    }
    Ok(())
}
