//! Speedup and efficiency from the time each `N` needs to come within
//! `eps` of the best value.

use ism::config;
use ism::runtime;

fn main() -> ism::Result<()> {
    let mut cfg = config::preset("two-level", true)?;
    cfg.output.dir = std::env::temp_dir().join("ism-efficiency-example");
    let bench = cfg.bench.as_mut().unwrap();
    bench.n_list = vec![1, 2, 4];
    bench.eps = 0.05;
    cfg.ism.max_iterations = 40;
    cfg.ism.eta = 1e-12;

    let out = ism::cli::cmd_bench(&cfg, None)?;
    println!("J_limit = {:.10}", out.j_limit);
    print!("{}", out.report.to_table());
    for r in &out.records {
        let t = runtime::time_to_target(r, out.report.eps, out.j_limit);
        println!("N = {}: {} iterations, t = {t:?}", r.n, r.iterations.len());
    }
    println!("wrote {} and {}", out.csv.display(), out.profile.display());
    Ok(())
}
