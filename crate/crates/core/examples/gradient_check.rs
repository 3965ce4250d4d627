//! Discrete adjoint gradient against central differences.

use ism::models::{self, SpinParams};
use ism::objective;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ism::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = SpinParams::quick();
    let problem = models::spin_problem(&p)?;
    let u = models::random_control(*problem.grid(), problem.channels(), 1.0, &mut rng);
    let (j, g) = objective::value_and_gradient(&problem, &u)?;
    println!("three spins, {} steps, {} channels: J = {j:.12}", p.steps, problem.channels());

    let h = 1e-6;
    let stride = u.as_slice().len() / 12;
    println!("{:>6} {:>20} {:>20} {:>10}", "entry", "adjoint", "central diff", "abs diff");
    for k in (0..u.as_slice().len()).step_by(stride) {
        let mut up = u.clone();
        up.as_mut_slice()[k] += h;
        let mut dn = u.clone();
        dn.as_mut_slice()[k] -= h;
        let width = up.as_slice()[k] - dn.as_slice()[k];
        let fd = (objective::evaluate_j(&problem, &up)? - objective::evaluate_j(&problem, &dn)?) / width;
        let a = g.as_slice()[k];
        println!("{k:>6} {a:>20.12e} {fd:>20.12e} {:>10.1e}", (a - fd).abs());
    }
    Ok(())
}
