//! Estimates a motion kernel from a blurred scene and deconvolves it.

use saturadeblur::deblur::{deblur_blind, DeblurConfig};
use saturadeblur::metrics::psnr;
use saturadeblur::synth::{degrade, render_scene, DegradeSpec, SceneSpec};

fn main() -> saturadeblur::Result<()> {
    let x = render_scene(&SceneSpec::new(128, 128, 4))?;
    let spec = DegradeSpec {
        noise_sigma: 0.0,
        ..DegradeSpec::default()
    }
    .with_frames(4)?;
    let y = degrade(&x, &spec, 4)?;
    let reference = x.clamp_unit();
    let cfg = DeblurConfig {
        kernel_size: 9,
        ..DeblurConfig::default()
    };
    let out = deblur_blind(y.as_radiance(), &cfg)?;
    println!("estimated kernel, middle row:");
    let row: Vec<String> = (-4..=4).map(|i| format!("{:.2}", out.kernels[0].kernel.at(i, 0))).collect();
    println!("  {}", row.join(" "));
    println!("PSNR blurred  {:.2} dB", psnr(&y, &reference, 1.0)?);
    println!("PSNR restored {:.2} dB", psnr(out.image.clamp_unit(), &reference, 1.0)?);
    Ok(())
}
