//! Space-variant mode: a kernel per tile, outputs blended with cosine ramps.

use rayon::prelude::*;

use super::{DeblurBackend, DeblurConfig, DeblurOutput};
use crate::error::{Error, Result};
use crate::image::{Kernel2D, RadianceImage};

#[derive(Debug, Clone, PartialEq)]
pub struct TileKernel {
    /// Tile index in the grid.
    pub row: usize,
    pub col: usize,
    /// Pixel extent of the tile including its overlap margin.
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub kernel: Kernel2D,
    /// The tile had no usable gradients and was left undeconvolved.
    pub fallback: bool,
}

impl TileKernel {
    pub(crate) fn whole(width: usize, height: usize, kernel: Kernel2D) -> Self {
        Self {
            row: 0,
            col: 0,
            x0: 0,
            y0: 0,
            width,
            height,
            kernel,
            fallback: false,
        }
    }
}

/// Core boundaries of `n` near-equal tiles along a side of length `len`.
fn cuts(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| (i * len + n / 2) / n).collect()
}

/// Weight along one axis: 1 inside the core, a raised cosine falling across
/// the overlap margin.
fn ramp(pos: usize, core: (usize, usize), overlap: usize) -> f64 {
    let d = if pos < core.0 {
        core.0 - pos
    } else if pos >= core.1 {
        pos + 1 - core.1
    } else {
        return 1.0;
    };
    0.5 * (1.0 + (std::f64::consts::PI * d as f64 / (overlap + 1) as f64).cos())
}

struct Tile {
    row: usize,
    col: usize,
    ext_x: (usize, usize),
    ext_y: (usize, usize),
    core_x: (usize, usize),
    core_y: (usize, usize),
}

fn layout(w: usize, h: usize, tx: usize, ty: usize, overlap: usize) -> Vec<Tile> {
    let (cx, cy) = (cuts(w, tx), cuts(h, ty));
    let mut tiles = Vec::with_capacity(tx * ty);
    for row in 0..ty {
        for col in 0..tx {
            let core_x = (cx[col], cx[col + 1]);
            let core_y = (cy[row], cy[row + 1]);
            tiles.push(Tile {
                row,
                col,
                ext_x: (core_x.0.saturating_sub(overlap), (core_x.1 + overlap).min(w)),
                ext_y: (core_y.0.saturating_sub(overlap), (core_y.1 + overlap).min(h)),
                core_x,
                core_y,
            });
        }
    }
    tiles
}

pub(crate) fn deblur_tiled(
    backend: &dyn DeblurBackend,
    img: &RadianceImage,
    cfg: &DeblurConfig,
    tiles_x: usize,
    tiles_y: usize,
) -> Result<DeblurOutput> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let overlap = cfg.kernel_size;
    let tiles = layout(w, h, tiles_x, tiles_y, overlap);
    if let Some(t) = tiles
        .iter()
        .find(|t| t.ext_x.1 - t.ext_x.0 <= cfg.kernel_size || t.ext_y.1 - t.ext_y.0 <= cfg.kernel_size)
    {
        return Err(Error::invalid(format!(
            "tile ({}, {}) is not larger than the {} px kernel",
            t.row, t.col, cfg.kernel_size
        )));
    }

    let results: Vec<(TileKernel, RadianceImage)> = tiles
        .par_iter()
        .map(|t| {
            let (tw, th) = (t.ext_x.1 - t.ext_x.0, t.ext_y.1 - t.ext_y.0);
            let sub = crop_rect(img, t.ext_x.0, t.ext_y.0, tw, th)?;
            let (kernel, fallback) = match backend.estimate_kernel(&sub, cfg) {
                Ok(k) => (k, false),
                // Flat tiles carry no blur information; leave them as they are.
                Err(Error::KernelDegenerate(_)) => (Kernel2D::delta(cfg.kernel_size), true),
                Err(e) => return Err(e),
            };
            let out = backend.deconvolve_final(&sub, &kernel, cfg)?;
            let info = TileKernel {
                row: t.row,
                col: t.col,
                x0: t.ext_x.0,
                y0: t.ext_y.0,
                width: tw,
                height: th,
                kernel,
                fallback,
            };
            Ok((info, out))
        })
        .collect::<Result<_>>()?;

    let mut acc = vec![0.0; w * h * ch];
    let mut wsum = vec![0.0; w * h];
    for (t, (_, out)) in tiles.iter().zip(&results) {
        for y in t.ext_y.0..t.ext_y.1 {
            let wy = ramp(y, t.core_y, overlap);
            for x in t.ext_x.0..t.ext_x.1 {
                let wgt = wy * ramp(x, t.core_x, overlap);
                wsum[y * w + x] += wgt;
                for c in 0..ch {
                    acc[c * w * h + y * w + x] += wgt * out.get(x - t.ext_x.0, y - t.ext_y.0, c);
                }
            }
        }
    }
    for (i, v) in acc.iter_mut().enumerate() {
        *v /= wsum[i % (w * h)];
    }
    Ok(DeblurOutput {
        image: RadianceImage::new(w, h, ch, acc)?,
        kernels: results.into_iter().map(|(k, _)| k).collect(),
    })
}

fn crop_rect(img: &RadianceImage, x0: usize, y0: usize, w: usize, h: usize) -> Result<RadianceImage> {
    if w == img.width() && h == img.height() {
        return Ok(img.clone());
    }
    RadianceImage::from_fn(w, h, img.channels(), |x, y, c| img.get(x0 + x, y0 + y, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuts_cover_the_side() {
        assert_eq!(cuts(10, 3), vec![0, 3, 7, 10]);
        assert_eq!(cuts(7, 1), vec![0, 7]);
    }

    #[test]
    fn ramp_falls_off_outside_the_core() {
        assert_eq!(ramp(10, (0, 50), 5), 1.0);
        let w: Vec<f64> = (50..55).map(|p| ramp(p, (0, 50), 5)).collect();
        assert!(w.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(w.windows(2).all(|p| p[1] < p[0]));
        assert!(ramp(3, (5, 50), 5) < ramp(4, (5, 50), 5));
    }

    #[test]
    fn layout_clamps_to_frame() {
        let tiles = layout(100, 60, 2, 2, 9);
        assert_eq!(tiles.len(), 4);
        assert_eq!(tiles[0].ext_x, (0, 59));
        assert_eq!(tiles[3].ext_y, (21, 60));
    }

    #[test]
    fn tiny_tiles_are_rejected() {
        let img = RadianceImage::filled(20, 20, 1, 0.5);
        let cfg = DeblurConfig {
            kernel_size: 25,
            ..DeblurConfig::default()
        };
        assert!(deblur_tiled(&super::super::MultiscaleBackend, &img, &cfg, 2, 2).is_err());
    }
}
