//! Blind deblurring back-ends.
//!
//! A back-end supplies two steps: kernel estimation and a final non-blind
//! deconvolution. The default is a coarse-to-fine alternating minimisation on
//! gradient maps followed by Richardson–Lucy; [`IdentityBackend`] does nothing
//! and exists so the surrounding pipeline can be exercised without a deblurrer.

mod multiscale;
mod nonblind;
mod tiles;

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Kernel2D, RadianceImage};
use crate::io::write_kernel;

pub use multiscale::{estimate_kernel, SCALE_STEP};
pub use nonblind::{deconvolve_final, richardson_lucy};
pub use tiles::TileKernel;

#[derive(Debug, Clone, PartialEq)]
pub enum FinalStep {
    RichardsonLucy { iterations: usize },
    Wiener { reg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileMode {
    Off,
    /// Independent kernels per tile, blended with cosine ramps.
    Grid { tiles_x: usize, tiles_y: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeblurConfig {
    pub kernel_size: usize,
    /// `None` picks as many levels as keep the coarsest image at least three
    /// kernels wide.
    pub pyramid_levels: Option<usize>,
    pub outer_iters: usize,
    pub image_reg: f64,
    pub kernel_reg: f64,
    pub final_step: FinalStep,
    pub tile_mode: TileMode,
    /// Starting kernel for the coarsest level; a delta when absent.
    pub initial_kernel: Option<Kernel2D>,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        Self {
            kernel_size: 25,
            pyramid_levels: None,
            outer_iters: 15,
            image_reg: 2e-3,
            kernel_reg: 1e-3,
            final_step: FinalStep::RichardsonLucy { iterations: 30 },
            tile_mode: TileMode::Off,
            initial_kernel: None,
        }
    }
}

impl DeblurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if !(self.image_reg >= 0.0 && self.kernel_reg >= 0.0) {
            return Err(Error::invalid("regularisation weights must be >= 0"));
        }
        if let FinalStep::Wiener { reg } = self.final_step {
            if !(reg > 0.0) {
                return Err(Error::invalid("Wiener regulariser must be > 0"));
            }
        }
        if let TileMode::Grid { tiles_x, tiles_y } = self.tile_mode {
            if tiles_x == 0 || tiles_y == 0 {
                return Err(Error::invalid("tile grid must be at least 1x1"));
            }
        }
        Ok(())
    }
}

pub trait DeblurBackend: Sync {
    fn name(&self) -> &'static str;

    fn estimate_kernel(&self, img: &RadianceImage, cfg: &DeblurConfig) -> Result<Kernel2D>;

    fn deconvolve_final(&self, img: &RadianceImage, k: &Kernel2D, cfg: &DeblurConfig) -> Result<RadianceImage>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MultiscaleBackend;

impl DeblurBackend for MultiscaleBackend {
    fn name(&self) -> &'static str {
        "multiscale"
    }

    fn estimate_kernel(&self, img: &RadianceImage, cfg: &DeblurConfig) -> Result<Kernel2D> {
        estimate_kernel(img, cfg)
    }

    fn deconvolve_final(&self, img: &RadianceImage, k: &Kernel2D, cfg: &DeblurConfig) -> Result<RadianceImage> {
        deconvolve_final(img, k, cfg)
    }
}

/// Returns its input: delta kernel, no deconvolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

impl DeblurBackend for IdentityBackend {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn estimate_kernel(&self, _img: &RadianceImage, _cfg: &DeblurConfig) -> Result<Kernel2D> {
        Ok(Kernel2D::delta(1))
    }

    fn deconvolve_final(&self, img: &RadianceImage, _k: &Kernel2D, _cfg: &DeblurConfig) -> Result<RadianceImage> {
        Ok(img.clone())
    }
}

#[derive(Debug, Clone)]
pub struct DeblurOutput {
    pub image: RadianceImage,
    /// One entry for the whole frame, or one per tile.
    pub kernels: Vec<TileKernel>,
}

impl DeblurOutput {
    /// Writes each kernel in the text kernel format: `<stem>.txt` for a single
    /// kernel, `<stem>_<row>_<col>.txt` per tile otherwise.
    pub fn write_kernels(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let [only] = self.kernels.as_slice() {
            return write_kernel(dir.join(format!("{stem}.txt")), &only.kernel);
        }
        for t in &self.kernels {
            write_kernel(dir.join(format!("{stem}_{}_{}.txt", t.row, t.col)), &t.kernel)?;
        }
        Ok(())
    }
}

pub fn deblur_blind(img: &RadianceImage, cfg: &DeblurConfig) -> Result<DeblurOutput> {
    deblur_blind_with(&MultiscaleBackend, img, cfg)
}

pub fn deblur_blind_with(backend: &dyn DeblurBackend, img: &RadianceImage, cfg: &DeblurConfig) -> Result<DeblurOutput> {
    cfg.validate()?;
    match cfg.tile_mode {
        TileMode::Off => {
            let kernel = backend.estimate_kernel(img, cfg)?;
            let image = backend.deconvolve_final(img, &kernel, cfg)?;
            Ok(DeblurOutput {
                image,
                kernels: vec![TileKernel::whole(img.width(), img.height(), kernel)],
            })
        }
        TileMode::Grid { tiles_x, tiles_y } => tiles::deblur_tiled(backend, img, cfg, tiles_x, tiles_y),
    }
}
