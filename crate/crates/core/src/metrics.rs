//! Image-quality metrics: PSNR, SSIM and the two combinations of them.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::RadianceImage;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn check_shapes(a: &RadianceImage, b: &RadianceImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image shapes differ: {} vs {}",
            a.shape_string(),
            b.shape_string()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: impl AsRef<RadianceImage>, b: impl AsRef<RadianceImage>, peak: f64) -> Result<f64> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_shapes(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be > 0"));
    }
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filtering restricted to positions where the whole window fits.
fn filter_valid(p: &[f64], w: usize, h: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().enumerate().map(|(i, c)| c * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(i, c)| c * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity on the grayscale images with an 11x11 Gaussian
/// window (sigma 1.5), averaged over every window position inside the frame.
pub fn ssim(a: impl AsRef<RadianceImage>, b: impl AsRef<RadianceImage>, peak: f64) -> Result<f64> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_shapes(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be > 0"));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let (x, y) = (a.gray_plane(), b.gray_plane());
    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let (mx, ow, oh) = filter_valid(&x, w, h, &g);
    let (my, ..) = filter_valid(&y, w, h, &g);
    let (sxx, ..) = filter_valid(&prod(&x, &x), w, h, &g);
    let (syy, ..) = filter_valid(&prod(&y, &y), w, h, &g);
    let (sxy, ..) = filter_valid(&prod(&x, &y), w, h, &g);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let total: f64 = (0..ow * oh)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (ow * oh) as f64)
}

/// PSNR scaled by SSIM.
pub fn ssim_weighted_psnr(psnr_db: f64, ssim: f64) -> f64 {
    psnr_db * ssim
}

/// `sqrt(SSIM * PSNR)`; both inputs must be non-negative.
pub fn geometric_mean_metric(psnr_db: f64, ssim: f64) -> Result<f64> {
    if !(psnr_db >= 0.0 && ssim >= 0.0) {
        return Err(Error::invalid(format!(
            "geometric mean needs non-negative inputs, got psnr {psnr_db}, ssim {ssim}"
        )));
    }
    Ok((psnr_db * ssim).sqrt())
}

/// PSNR maximised over integer translations of `b` within `radius` pixels,
/// computed on the overlapping region. Returns the PSNR and the shift.
pub fn psnr_registered(
    a: impl AsRef<RadianceImage>,
    b: impl AsRef<RadianceImage>,
    peak: f64,
    radius: usize,
) -> Result<(f64, (isize, isize))> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_shapes(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if 2 * radius >= w.min(h) {
        return Err(Error::invalid("registration radius too large for the image"));
    }
    let r = radius as isize;
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for dy in -r..=r {
        for dx in -r..=r {
            let (mut se, mut n) = (0.0, 0usize);
            for c in 0..ch {
                for y in 0..h as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w as isize {
                        let sx = x + dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let d = a.get(x as usize, y as usize, c) - b.get(sx as usize, sy as usize, c);
                        se += d * d;
                        n += 1;
                    }
                }
            }
            let p = if se == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (peak * peak * n as f64 / se).log10()
            };
            if p > best.0 {
                best = (p, (dx, dy));
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub wpsnr: f64,
    pub gm: f64,
}

/// All four numbers for a restored image against its reference, on the
/// `[0, 1]` clipped domain.
pub fn quality(restored: &RadianceImage, reference: &RadianceImage) -> Result<Quality> {
    let (r, t) = (restored.clamp_unit(), reference.clamp_unit());
    let p = psnr(&r, &t, 1.0)?;
    let s = ssim(&r, &t, 1.0)?;
    Ok(Quality {
        psnr: p,
        ssim: s,
        wpsnr: ssim_weighted_psnr(p, s),
        gm: geometric_mean_metric(p.max(0.0), s.max(0.0))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub scene: String,
    pub exposure: f64,
    pub blur_level: usize,
    pub method: String,
    pub quality: Quality,
}

pub const METRICS_CSV_HEADER: &str = "scene,exposure,blur_level,method,psnr,ssim,wpsnr,gm";

pub fn write_metrics_csv(mut out: impl Write, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        let q = r.quality;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scene, r.exposure, r.blur_level, r.method, q.psnr, q.ssim, q.wpsnr, q.gm
        )?;
    }
    Ok(())
}

pub fn write_metrics_csv_file(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(std::io::BufWriter::new(f), rows).map_err(|e| Error::io(path, e))
}
