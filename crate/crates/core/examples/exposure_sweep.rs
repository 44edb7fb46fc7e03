//! A reduced exposure ladder: five rungs, each restored twice.

use saturadeblur::deblur::FinalStep;
use saturadeblur::metrics::write_metrics_csv;
use saturadeblur::sweep::{metric_rows, run_sweep, SweepConfig, SweepKind};

fn main() -> saturadeblur::Result<()> {
    let mut cfg = SweepConfig::new(SweepKind::Exposure, 1);
    cfg.size = 96;
    cfg.sources = 1;
    cfg.pipeline.selection.patch_size = 32;
    cfg.pipeline.selection.tau_b = 0.0;
    cfg.pipeline.deblur.kernel_size = 9;
    cfg.pipeline.deblur.final_step = FinalStep::RichardsonLucy { iterations: 15 };
    let points = run_sweep(&cfg)?;
    for p in &points {
        println!(
            "exposure {:>6}: {:5.2}% clipped, advantage {:+.2} dB",
            p.exposure,
            p.saturated_fraction * 100.0,
            p.advantage()
        );
    }
    write_metrics_csv(std::io::stdout().lock(), &metric_rows("seed1", &points)[..2])
        .map_err(|e| saturadeblur::Error::InvalidArgument(e.to_string()))?;
    Ok(())
}
