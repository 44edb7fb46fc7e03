//! Fits LSF parameters to a synthetic point-source capture.

use saturadeblur::lsf::{fit_lsf, FitOptions, DEFAULT_FIT_INIT};
use saturadeblur::synth::{calibration_pair, BENCH_LSF};

fn main() -> saturadeblur::Result<()> {
    let (capture, target) = calibration_pair(65, &BENCH_LSF, 0.01, 7)?;
    let fit = fit_lsf(&capture, &target, &DEFAULT_FIT_INIT, &FitOptions::default())?;
    println!("true   {BENCH_LSF}");
    println!("fitted {}", fit.params);
    println!("residual {:.3e} -> {:.3e} in {} evaluations", fit.initial_residual, fit.residual, fit.evals);
    Ok(())
}
