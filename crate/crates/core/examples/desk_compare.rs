//! Desk-scale rPIE vs eMAGPIE comparison on the procedural object.
//!
//! ```text
//! cargo run --release -p emagpie --example desk_compare -- [n] [m] [overlap] [alpha] [sweeps] [noise%]
//! ```

use emagpie::runner::{run, Algorithm, RunOptions, SolverConfig, StopConfig};
use emagpie::simulate::{
    initial_guess, make_fzp_probe, procedural_object, synthesize, FzpParams, ProbePerturbation, Synthetic,
};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> emagpie::Result<()> {
    let n: usize = arg(1, 128);
    let m: usize = arg(2, 32);
    let overlap: f64 = arg(3, 0.5);
    let alpha: f64 = arg(4, 0.05);
    let sweeps: usize = arg(5, 100);
    let noise: f64 = arg(6, 0.0);
    let seed = 1;

    let exp = Synthetic { n, m, overlap, noise_percent: noise, seed };
    let probe = make_fzp_probe(&FzpParams::synthetic(m))?;
    let ds = synthesize(&exp, &procedural_object(n), &probe)?;
    let pert =
        if std::env::var("EXACT_PROBE").is_ok() { ProbePerturbation::none() } else { ProbePerturbation::default() };
    let (mut q0, z0) = initial_guess(&ds, &pert, 0.0, seed)?;
    if std::env::var("TRUE_PROBE").is_ok() {
        q0 = probe.clone();
    }
    println!("N = {}, noise = {:?}", ds.len(), ds.noise_percent);
    let truth = ds.truth_object.as_ref().expect("synthetic");
    println!(
        "initial residual {:.4e}, initial mag_error {:.4}, |z*| norm {:.4}",
        emagpie::forward::misfit(&q0, &z0, &ds)?,
        emagpie::metrics::magnitude_error(&z0, truth)?,
        truth.norm()
    );

    for (algorithm, levels) in
        [(Algorithm::Rpie, 0), (Algorithm::Emagpie, 0), (Algorithm::Emagpie, 1), (Algorithm::Emagpie, 2)]
    {
        let config = SolverConfig {
            algorithm,
            alpha_q: alpha,
            levels,
            seed,
            stop: StopConfig { max_iters: sweeps, ..Default::default() },
            ..Default::default()
        };
        let t = std::time::Instant::now();
        let out = run(&ds, &config, q0.clone(), z0.clone(), RunOptions::default())?;
        let last = out.log().last().expect("at least one sweep");
        if let Ok(dir) = std::env::var("DESK_PNG") {
            let dir = std::path::PathBuf::from(dir);
            emagpie::io::render::save_complex(&dir, &format!("{algorithm}{levels}_object"), &out.state.z)?;
            emagpie::io::render::save_complex(&dir, &format!("{algorithm}{levels}_probe"), &out.state.q)?;
        }
        if std::env::var("TRACE").is_ok() {
            let r: Vec<String> = out.log().samples.iter().step_by(5).map(|s| format!("{:.3e}", s.residual)).collect();
            println!("  trace: {}", r.join(" "));
        }
        println!(
            "{algorithm:8} L={levels}  sweeps {:4}  residual {:.6e}  mag_error {:.4}  ({:?}, {:.1}s)",
            last.iter,
            last.residual,
            last.mag_error.unwrap_or(f64::NAN),
            out.stop_reason,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
