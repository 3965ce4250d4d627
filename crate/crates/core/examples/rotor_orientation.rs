//! Field-free orientation of a linear rotor: monotonic and Newton inner
//! solvers inside the outer loop.

use ism::ism::{run_ism, IsmConfig};
use ism::models::{self, RotorParams};
use ism::optimizers::SolverSpec;
use ism::runtime::ExecutionMode;

fn main() -> ism::Result<()> {
    let p = RotorParams::quick();
    let problem = models::rotor_problem(&p)?;
    let (top, _) = models::orientation_target(p.j_max)?;
    println!("j_max = {}, largest attainable <cos theta> = {top:.12}", p.j_max);
    let u0 = problem.zero_control();

    let mono = IsmConfig::new(4, SolverSpec::monotonic())
        .with_mode(ExecutionMode::Parallel(4))
        .with_max_iterations(20);
    let (_, record) = run_ism(&problem, &u0, &mono)?;
    let js: Vec<String> = record.history().iter().step_by(4).map(|(_, j)| format!("{j:.5}")).collect();
    println!("monotonic, N = 4: {}", js.join(" -> "));

    let newton = IsmConfig::new(4, SolverSpec::newton(1e-2))
        .with_mode(ExecutionMode::Parallel(4))
        .with_max_iterations(5);
    let (_, record) = run_ism(&problem, &u0, &newton)?;
    for it in &record.iterations {
        println!("newton k = {}: J = {:.8}, Err = {:.2e}", it.k, it.j, it.err);
        for e in &it.events {
            println!("  {e}");
        }
    }
    println!("newton final J = {:.8}", record.final_j);
    Ok(())
}
