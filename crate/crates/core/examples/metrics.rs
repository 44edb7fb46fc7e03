//! PSNR, SSIM and the combined scores on a noisy copy of a scene.

use saturadeblur::metrics::{geometric_mean_metric, quality};
use saturadeblur::synth::{degrade, render_scene, DegradeSpec, SceneSpec};

fn main() -> saturadeblur::Result<()> {
    let x = render_scene(&SceneSpec::new(64, 64, 2))?.clamp_unit().into_radiance();
    for sigma in [0.005, 0.02, 0.05] {
        let spec = DegradeSpec {
            noise_sigma: sigma,
            ..DegradeSpec::default()
        };
        let y = degrade(&x, &spec, 1)?;
        let q = quality(y.as_radiance(), &x)?;
        println!(
            "sigma {sigma}: PSNR {:.2} dB, SSIM {:.3}, wPSNR {:.2}, GM {:.3} (GM^2 {:.2})",
            q.psnr,
            q.ssim,
            q.wpsnr,
            q.gm,
            geometric_mean_metric(q.psnr, q.ssim)?.powi(2)
        );
    }
    Ok(())
}
