//! Crank-Nicolson and Strang propagation: norm conservation, exact
//! inversion and the assembled subinterval propagator.

use ism::controls::ControlField;
use ism::models::{self, GpeParams};
use ism::propagation::{self, Direction};

fn main() -> ism::Result<()> {
    let problem = models::two_level_problem(1.0, 3.0, 512, 0.0)?;
    let model = problem.model().as_ref();
    let u = ControlField::from_fn(*problem.grid(), 1, |_, t| (2.0 * t).sin())?;

    let traj = propagation::propagate(model, &u, problem.initial(), Direction::Forward)?;
    let drift = traj.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max);
    let last = traj.last().unwrap();
    println!("two-level, 512 CN steps: max | ||psi|| - 1 | = {drift:.2e}");
    println!("population of |1> at T: {:.6}", last.as_slice()[1].norm_sqr());

    let back = propagation::propagate_back_initial(model, &u, last)?;
    println!("backward sweep returns to psi_i within {:.2e}", back.sub(problem.initial()).norm());

    let assembled = propagation::assemble_propagator(model, &u)?;
    let via_matrix = assembled.apply(problem.initial())?;
    println!(
        "assembled propagator: unitarity residual {:.2e}, |U psi_i - psi(T)| = {:.2e}",
        assembled.unitarity_residual(),
        via_matrix.sub(last).norm()
    );

    // Condensate: the nonlinear Strang step keeps the norm as well.
    let p = GpeParams::reference();
    let gpe = models::gpe_problem(&p)?;
    let ramp = models::gpe_ramp(*gpe.grid());
    let end = propagation::propagate_final(gpe.model().as_ref(), &ramp, gpe.initial())?;
    println!(
        "condensate, {} Strang steps along the ramp: norm drift {:.2e}, overlap with target {:.6}",
        p.steps,
        (end.norm() - gpe.initial().norm()).abs(),
        gpe.normalized_overlap(&ramp)?
    );
    Ok(())
}
