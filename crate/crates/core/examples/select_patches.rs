//! Scores patches around a saturated source and prints the ranking.

use saturadeblur::patch::{select_patches, SelectionConfig};
use saturadeblur::synth::{degrade, render_scene, DegradeSpec, SceneSpec, BENCH_LSF};

fn main() -> saturadeblur::Result<()> {
    let x = render_scene(&SceneSpec::random(128, 128, 1, (4.0, 16.0), 5))?;
    let spec = DegradeSpec {
        lsf: BENCH_LSF,
        ..DegradeSpec::default()
    }
    .with_frames(2)?;
    let y = degrade(&x, &spec, 5)?;
    let cfg = SelectionConfig {
        patch_size: 32,
        tau_b: 0.0,
        ..SelectionConfig::default()
    };
    let sel = select_patches(&y, &cfg)?;
    println!("{} saturated pixels, centroid {:?}, tau_g {:.3}", sel.saturated.count(), sel.centroid, sel.tau_g);
    for s in &sel.selected {
        println!(
            "patch r{:>3} c{:>3}  b {:.5}  g {:8.2}  d {:6.1}",
            s.rect.row, s.rect.col, s.blur_score, s.sharpness, s.distance
        );
    }
    sel.write_jsonl(std::io::stdout().lock()).map_err(|e| saturadeblur::Error::InvalidArgument(e.to_string()))?;
    Ok(())
}
