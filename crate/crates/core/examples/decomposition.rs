//! The parallel functional reproduces `J` and the weighted sub-gradients
//! reproduce `∇J` for every number of subintervals.

use ism::controls::Decomposition;
use ism::ism::verify_theorems;
use ism::models;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ism::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = models::random_problem(6, 2, 2.0, 240, 0.05, &mut rng)?;
    let u = models::random_control(*problem.grid(), 2, 1.5, &mut rng);
    println!("{:>3} {:>18} {:>18} {:>10} {:>10}", "N", "J", "J_par", "|dJ|", "max|dg|");
    for n in [1, 2, 3, 4, 5, 6, 8, 10, 12] {
        let d = Decomposition::uniform(*problem.grid(), n)?;
        let r = verify_theorems(&problem, &u, &d)?;
        println!(
            "{n:>3} {:>18.12} {:>18.12} {:>10.1e} {:>10.1e}",
            r.j_tracking, r.j_parallel, r.functional_residual, r.gradient_residual
        );
    }

    // Non-uniform boundaries work the same way.
    let d = Decomposition::from_indices(*problem.grid(), vec![0, 17, 90, 91, 200, 240])?;
    let r = verify_theorems(&problem, &u, &d)?;
    println!("uneven split {:?}: |dJ| = {:.1e}, max|dg| = {:.1e}", d.boundaries(), r.functional_residual, r.gradient_residual);
    Ok(())
}
