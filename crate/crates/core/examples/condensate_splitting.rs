//! Splitting a condensate between two wells. The dynamics are nonlinear,
//! so the subproblems start from forward states and aim at adjoint states.

use ism::ism::{run_ism, split_states, IntermediateStates, IsmConfig, Variant};
use ism::controls::Decomposition;
use ism::models::{self, GpeParams};
use ism::optimizers::SolverSpec;
use ism::runtime::ExecutionMode;

fn main() -> ism::Result<()> {
    let p = GpeParams::reference();
    let problem = models::gpe_problem(&p)?;
    let u0 = models::gpe_ramp(*problem.grid());
    println!("{} grid points, {} steps, overlap of the ramp {:.8}", p.points, p.steps, problem.normalized_overlap(&u0)?);

    let d = Decomposition::uniform(*problem.grid(), 4)?;
    if let IntermediateStates::Split { forward, adjoint } = split_states(&problem, &u0, &d)? {
        for n in 0..=4 {
            let c = forward[n].dot(&adjoint[n]);
            println!("t_{n} = {:.3}: <psi|chi> = {:+.6}{:+.6}i", d.time(n), c.re, c.im);
        }
    }

    let ic = IsmConfig::new(4, SolverSpec::gradient(0.1))
        .with_variant(Variant::Split)
        .with_mode(ExecutionMode::Parallel(4))
        .with_max_iterations(10);
    let (u, record) = run_ism(&problem, &u0, &ic)?;
    for (t, j) in record.history() {
        println!("{t:>8.3} s  J = {j:.10}");
    }
    println!("final overlap {:.8}", problem.normalized_overlap(&u)?);
    Ok(())
}
