//! Motion blur lifts the dark channel of a textured scene.

use saturadeblur::darkchannel::dark_channel;
use saturadeblur::synth::{degrade, render_scene, DegradeSpec, SceneSpec};

fn main() -> saturadeblur::Result<()> {
    let x = render_scene(&SceneSpec::new(128, 128, 3))?;
    let sharp = DegradeSpec {
        noise_sigma: 0.0,
        ..DegradeSpec::default()
    };
    for frames in 1..=5 {
        let y = degrade(&x, &sharp.clone().with_frames(frames)?, 0)?;
        let d = dark_channel(y.as_radiance(), 5)?;
        let mean = d.data().iter().sum::<f64>() / d.data().len() as f64;
        println!("{frames} frame(s): mean dark channel {mean:.4}");
    }
    Ok(())
}
