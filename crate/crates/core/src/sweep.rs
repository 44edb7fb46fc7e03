//! Exposure and blur ladders, each point restored with and without
//! saturation handling.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lsf::LsfParams;
use crate::metrics::{quality, MetricRow, Quality};
use crate::pipeline::{run_pipeline, PipelineConfig, SaturationOutcome};
use crate::synth::{
    degrade, render_scene, sharp_reference, DegradeSpec, SceneSpec, BENCH_LSF, DEFAULT_NOISE_SIGMA, EXPOSURE_LADDER,
    MAX_BLUR_FRAMES,
};

pub const METHOD_AWARE: &str = "saturation-aware";
pub const METHOD_PLAIN: &str = "no-saturation";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Exposure,
    Blur,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exposure" => Ok(SweepKind::Exposure),
            "blur" => Ok(SweepKind::Blur),
            _ => Err(Error::invalid(format!("sweep kind must be exposure or blur, got {s:?}"))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Exposure => "exposure",
            SweepKind::Blur => "blur",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub seed: u64,
    pub size: usize,
    pub sources: usize,
    /// Source radiance range at unit exposure.
    pub radiance: (f64, f64),
    pub lsf: LsfParams,
    pub noise_sigma: f64,
    /// Exposure of the first rung; the ladder multiplies it by 1, 2, 4, 8, 16.
    /// Also the exposure used by the blur ladder's top rung.
    pub base_exposure: f64,
    /// Frames merged at every rung of the exposure ladder.
    pub frames: usize,
    pub pipeline: PipelineConfig,
}

impl SweepConfig {
    pub fn new(kind: SweepKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            size: 128,
            sources: 2,
            radiance: (4.0, 16.0),
            lsf: BENCH_LSF,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            base_exposure: 1.0 / 16.0,
            frames: 3,
            pipeline: PipelineConfig::default(),
        }
    }

    /// `(exposure, frames)` for every rung.
    pub fn ladder(&self) -> Vec<(f64, usize)> {
        match self.kind {
            SweepKind::Exposure => EXPOSURE_LADDER
                .iter()
                .map(|e| (self.base_exposure * e, self.frames))
                .collect(),
            SweepKind::Blur => {
                let top = self.base_exposure * EXPOSURE_LADDER[EXPOSURE_LADDER.len() - 1];
                (2..=MAX_BLUR_FRAMES).map(|k| (top, k)).collect()
            }
        }
    }

    pub fn scene(&self) -> SceneSpec {
        SceneSpec::random(self.size, self.size, self.sources, self.radiance, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Rung index, 0 for the lowest exposure or shortest blur.
    pub level: usize,
    pub exposure: f64,
    pub blur_level: usize,
    pub aware: Quality,
    pub plain: Quality,
    pub outcome: SaturationOutcome,
    /// Fraction of pixels at or above the saturation threshold.
    pub saturated_fraction: f64,
}

impl SweepPoint {
    /// PSNR gained by saturation handling, in dB.
    pub fn advantage(&self) -> f64 {
        self.aware.psnr - self.plain.psnr
    }
}

/// Runs every rung in parallel. Each rung degrades the same scene with its
/// own noise draw, restores it twice and scores both against the noise-free,
/// blur-free reference at that exposure.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    cfg.pipeline.validate()?;
    let x = render_scene(&cfg.scene())?;
    cfg.ladder()
        .into_par_iter()
        .enumerate()
        .map(|(level, (exposure, frames))| {
            let spec = DegradeSpec {
                lsf: cfg.lsf,
                noise_sigma: cfg.noise_sigma,
                exposure,
                ..DegradeSpec::default()
            }
            .with_frames(frames)?;
            let y = degrade(&x, &spec, cfg.seed.wrapping_mul(31).wrapping_add(level as u64))?;
            let reference = sharp_reference(&x, &cfg.lsf, exposure)?.into_radiance();
            let aware = run_pipeline(&y, &cfg.lsf, &cfg.pipeline)?;
            let plain_cfg = PipelineConfig {
                no_saturation: true,
                ..cfg.pipeline.clone()
            };
            let plain = run_pipeline(&y, &cfg.lsf, &plain_cfg)?;
            let mask = crate::patch::saturation_mask(&y, cfg.pipeline.selection.saturation_threshold);
            Ok(SweepPoint {
                level,
                exposure,
                blur_level: frames,
                aware: quality(&aware.image, &reference)?,
                plain: quality(&plain.image, &reference)?,
                outcome: aware.outcome,
                saturated_fraction: mask.count() as f64 / (x.width() * x.height()) as f64,
            })
        })
        .collect()
}

/// Two rows per point, aware first.
pub fn metric_rows(scene: &str, points: &[SweepPoint]) -> Vec<MetricRow> {
    points
        .iter()
        .flat_map(|p| {
            [(METHOD_AWARE, p.aware), (METHOD_PLAIN, p.plain)].map(|(m, q)| MetricRow {
                scene: scene.to_string(),
                exposure: p.exposure,
                blur_level: p.blur_level,
                method: m.to_string(),
                quality: q,
            })
        })
        .collect()
}

/// Whitespace-separated columns for plotting, one line per rung.
pub fn write_plot_data(mut out: impl Write, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(out, "# level exposure blur_level saturated psnr_aware psnr_plain advantage")?;
    for p in points {
        writeln!(
            out,
            "{} {} {} {:.6} {:.4} {:.4} {:.4}",
            p.level,
            p.exposure,
            p.blur_level,
            p.saturated_fraction,
            p.aware.psnr,
            p.plain.psnr,
            p.advantage()
        )?;
    }
    Ok(())
}

/// Writes `metrics.csv` and `sweep.dat` into `dir`.
pub fn write_sweep(dir: impl AsRef<Path>, scene: &str, points: &[SweepPoint]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::metrics::write_metrics_csv_file(dir.join("metrics.csv"), &metric_rows(scene, points))?;
    let path = dir.join("sweep.dat");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_plot_data(std::io::BufWriter::new(f), points).map_err(|e| Error::io(&path, e))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            r[*k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deblur::FinalStep;

    fn quick(kind: SweepKind) -> SweepConfig {
        let mut cfg = SweepConfig::new(kind, 2);
        cfg.size = 64;
        cfg.sources = 1;
        cfg.pipeline.selection.patch_size = 32;
        cfg.pipeline.deblur.kernel_size = 5;
        cfg.pipeline.deblur.outer_iters = 3;
        cfg.pipeline.deblur.final_step = FinalStep::RichardsonLucy { iterations: 5 };
        cfg.pipeline.solver.max_iters = 20;
        cfg
    }

    #[test]
    fn ladders_have_the_documented_rungs() {
        let e = SweepConfig::new(SweepKind::Exposure, 0).ladder();
        assert_eq!(e.len(), 5);
        assert_eq!(e[4].0, 1.0);
        assert!(e.windows(2).all(|w| w[1].0 == 2.0 * w[0].0));
        let b = SweepConfig::new(SweepKind::Blur, 0).ladder();
        assert_eq!(b.iter().map(|p| p.1).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn exposure_sweep_writes_ten_rows_deterministically() {
        let cfg = quick(SweepKind::Exposure);
        let a = run_sweep(&cfg).unwrap();
        assert_eq!(metric_rows("s", &a).len(), 10);
        assert_eq!(a, run_sweep(&cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        write_sweep(dir.path(), "s", &a).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 11);
        let dat = std::fs::read_to_string(dir.path().join("sweep.dat")).unwrap();
        assert_eq!(dat.lines().count(), 6);
    }

    #[test]
    fn blur_sweep_has_eight_rows() {
        let a = run_sweep(&quick(SweepKind::Blur)).unwrap();
        assert_eq!(metric_rows("s", &a).len(), 8);
    }

    #[test]
    fn saturated_fraction_grows_with_exposure() {
        let a = run_sweep(&quick(SweepKind::Exposure)).unwrap();
        assert!(a.windows(2).all(|w| w[1].saturated_fraction >= w[0].saturated_fraction));
    }

    #[test]
    fn spearman_matches_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        // ranks (1, 2, 3, 4) against (1, 2.5, 2.5, 4)
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 5.0, 5.0, 9.0]).unwrap();
        assert!((r - 4.5 / (5.0f64 * 4.5).sqrt()).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        assert_eq!("Blur".parse::<SweepKind>().unwrap(), SweepKind::Blur);
        assert!("x".parse::<SweepKind>().is_err());
    }
}
