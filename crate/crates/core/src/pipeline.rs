//! End-to-end restoration: saturation recovery followed by blind deblurring.

use std::path::Path;

use crate::darkchannel::{select_dark_pixels_excluding, DEFAULT_QUANTILE};
use crate::deblur::{deblur_blind_with, DeblurBackend, DeblurConfig, DeblurOutput, MultiscaleBackend};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ClippedImage, RadianceImage};
use crate::lsf::LsfParams;
use crate::patch::{select_patches, PatchSelection, SelectionConfig};
use crate::saturation::{estimate_saturation_in, replace_saturated_pixels, SatSolverConfig, SaturationEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub selection: SelectionConfig,
    pub dark_quantile: f64,
    pub solver: SatSolverConfig,
    pub deblur: DeblurConfig,
    /// Skip saturation recovery and deblur the observation directly.
    pub no_saturation: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            dark_quantile: DEFAULT_QUANTILE,
            solver: SatSolverConfig::default(),
            deblur: DeblurConfig::default(),
            no_saturation: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.solver.validate()?;
        self.deblur.validate()?;
        if !(self.dark_quantile > 0.0 && self.dark_quantile <= 1.0) {
            return Err(Error::invalid(format!("dark quantile {} outside (0, 1]", self.dark_quantile)));
        }
        Ok(())
    }
}

/// What happened to the saturated pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum SaturationOutcome {
    /// Recovery switched off by configuration.
    Disabled,
    NoSaturation,
    /// No patch passed the blur and sharpness thresholds.
    SelectionEmpty,
    /// Recovery was attempted but had nothing to work with.
    Unavailable(String),
    Recovered,
}

impl SaturationOutcome {
    /// True when the deblurrer saw the unmodified observation.
    pub fn fell_back(&self) -> bool {
        !matches!(self, SaturationOutcome::Recovered)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub image: RadianceImage,
    pub deblur: DeblurOutput,
    pub outcome: SaturationOutcome,
    pub selection: Option<PatchSelection>,
    pub estimate: Option<SaturationEstimate>,
    /// The image handed to the deblurrer.
    pub modified: RadianceImage,
}

impl PipelineOutput {
    /// Writes `patches.jsonl`, `solver.csv` and the kernel files into `dir`,
    /// skipping whatever the run did not produce.
    pub fn write_report(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(sel) = &self.selection {
            sel.write_jsonl_file(dir.join("patches.jsonl"))?;
        }
        if let Some(est) = &self.estimate {
            est.write_history_csv_file(dir.join("solver.csv"))?;
        }
        self.deblur.write_kernels(dir, "kernel")
    }
}

pub fn run_pipeline(y: &ClippedImage, lsf: &LsfParams, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_with(&MultiscaleBackend, y, lsf, cfg)
}

pub fn run_pipeline_with(
    backend: &dyn DeblurBackend,
    y: &ClippedImage,
    lsf: &LsfParams,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (outcome, selection, estimate, modified) = if cfg.no_saturation {
        (SaturationOutcome::Disabled, None, None, y.as_radiance().clone())
    } else {
        recover(y, lsf, cfg)?
    };
    let deblur = deblur_blind_with(backend, &modified, &cfg.deblur)?;
    Ok(PipelineOutput {
        image: deblur.image.clone(),
        deblur,
        outcome,
        selection,
        estimate,
        modified,
    })
}

type Recovery = (SaturationOutcome, Option<PatchSelection>, Option<SaturationEstimate>, RadianceImage);

fn recover(y: &ClippedImage, lsf: &LsfParams, cfg: &PipelineConfig) -> Result<Recovery> {
    let plain = || y.as_radiance().clone();
    let sel = select_patches(y, &cfg.selection)?;
    if sel.centroid.is_none() {
        return Ok((SaturationOutcome::NoSaturation, Some(sel), None, plain()));
    }
    if sel.selected.is_empty() {
        return Ok((SaturationOutcome::SelectionEmpty, Some(sel), None, plain()));
    }
    let rects = sel.selected_rects();
    let img = y.as_radiance();
    let dark = select_dark_pixels_excluding(img, &rects, cfg.dark_quantile, Some(&sel.saturated))?;
    let mut region = BinaryMask::new(img.width(), img.height());
    for r in &rects {
        for (x, yy) in r.pixels() {
            region.set(x, yy, true);
        }
    }
    match estimate_saturation_in(y, &sel.saturated, &dark, &region, lsf, &cfg.solver) {
        Ok(est) => {
            let modified = replace_saturated_pixels(y, &est)?;
            Ok((SaturationOutcome::Recovered, Some(sel), Some(est), modified))
        }
        Err(Error::SaturationUnavailable(why)) => {
            Ok((SaturationOutcome::Unavailable(why.to_string()), Some(sel), None, plain()))
        }
        Err(e) => Err(e),
    }
}
