//! Selection of minimally blurred, sharp patches near the dominant saturated
//! region.
//!
//! Each overlapping patch is scored three ways:
//!
//! * blur score: population variance of a kernel estimated by a few rounds of
//!   blind Richardson–Lucy starting from a uniform kernel. A kernel that
//!   collapses towards a spike (high variance) means the patch is sharp.
//! * sharpness: summed gradient magnitude.
//! * distance from the patch centre to the centroid of the largest connected
//!   saturated region.
//!
//! Survivors of the blur and sharpness thresholds are ranked by blur score
//! (descending) and then distance (ascending).

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    centroid, connected_components, gradient_magnitude_plane, BinaryMask, ClippedImage, Kernel2D, PatchRect,
    RadianceImage,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub patch_size: usize,
    /// Defaults to half the patch size.
    pub stride: Option<usize>,
    /// Saturation threshold as a fraction of full scale.
    pub saturation_threshold: f64,
    /// Minimum kernel variance for a patch to count as sharp.
    pub tau_b: f64,
    /// Minimum summed gradient; `None` uses the 60th percentile of the image's patches.
    pub tau_g: Option<f64>,
    pub top_n: usize,
    pub proxy_iterations: usize,
    pub proxy_kernel_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            stride: None,
            saturation_threshold: 0.98,
            tau_b: 0.003,
            tau_g: None,
            top_n: 8,
            proxy_iterations: 10,
            proxy_kernel_size: 7,
        }
    }
}

/// Percentile of patch sharpness used when no explicit threshold is set.
pub const TAU_G_PERCENTILE: f64 = 0.6;

impl SelectionConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.patch_size / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let ts = self.saturation_threshold;
        if !(ts > 0.0 && ts <= 1.0) {
            return Err(Error::invalid(format!("saturation threshold {ts} outside (0, 1]")));
        }
        if self.top_n == 0 {
            return Err(Error::invalid("top-N must be at least 1"));
        }
        if self.patch_size == 0 || self.stride() == 0 || self.stride() > self.patch_size {
            return Err(Error::invalid(format!(
                "stride {} must be in 1..={}",
                self.stride(),
                self.patch_size
            )));
        }
        if self.proxy_kernel_size % 2 == 0 {
            return Err(Error::invalid("proxy kernel size must be odd"));
        }
        if self.patch_size < 2 * self.proxy_kernel_size {
            return Err(Error::invalid(format!(
                "patch size {} smaller than twice the proxy kernel ({})",
                self.patch_size, self.proxy_kernel_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchScore {
    pub rect: PatchRect,
    /// Variance of the proxy kernel.
    pub blur_score: f64,
    /// Summed gradient magnitude.
    pub sharpness: f64,
    /// Distance from the patch centre to the saturated centroid (0 without one).
    pub distance: f64,
}

/// Pixels whose maximum over channels reaches `threshold`.
pub fn saturation_mask(img: &ClippedImage, threshold: f64) -> BinaryMask {
    let max = img.as_radiance().max_plane();
    let bits = max.iter().map(|v| *v >= threshold).collect();
    BinaryMask::from_bits(img.width(), img.height(), bits).expect("plane matches image size")
}

/// Centroid `(x, y)` of the largest 8-connected component. Equal sizes are
/// resolved by the smallest bounding-box top-left corner, compared as `(x, y)`.
pub fn dominant_centroid(mask: &BinaryMask) -> Result<(f64, f64)> {
    let comps = connected_components(mask);
    let top_left = |c: &Vec<(usize, usize)>| {
        let x = c.iter().map(|p| p.0).min().unwrap_or(0);
        let y = c.iter().map(|p| p.1).min().unwrap_or(0);
        (x, y)
    };
    let best = comps
        .iter()
        .min_by(|a, b| b.len().cmp(&a.len()).then_with(|| top_left(a).cmp(&top_left(b))))
        .ok_or(Error::NoSaturation)?;
    centroid(best)
}

/// `sqrt((r + p/2 - row_c)^2 + (c + p/2 - col_c)^2)` for a patch anchored at
/// `(r, c)` and a centroid given as `(x, y) = (col_c, row_c)`.
pub fn patch_distance(rect: &PatchRect, centroid_xy: (f64, f64)) -> f64 {
    let half = rect.size as f64 / 2.0;
    let dr = rect.row as f64 + half - centroid_xy.1;
    let dc = rect.col as f64 + half - centroid_xy.0;
    (dr * dr + dc * dc).sqrt()
}

/// Overlapping grid of square patches; the last row/column is aligned to the
/// image border so the whole frame is covered.
pub fn patch_grid(width: usize, height: usize, size: usize, stride: usize) -> Vec<PatchRect> {
    if size > width || size > height || stride == 0 {
        return Vec::new();
    }
    let starts = |extent: usize| {
        let mut v: Vec<usize> = (0..=extent - size).step_by(stride).collect();
        if *v.last().unwrap() != extent - size {
            v.push(extent - size);
        }
        v
    };
    let cols = starts(width);
    starts(height)
        .into_iter()
        .flat_map(|r| cols.iter().map(move |&c| PatchRect::new(r, c, size)))
        .collect()
}

pub fn sharpness_score(patch: &RadianceImage) -> f64 {
    gradient_magnitude_plane(&patch.gray_plane(), patch.width(), patch.height())
        .iter()
        .sum()
}

/// Variance of the kernel estimated by blind Richardson–Lucy on the grayscale patch.
/// A flat patch scores exactly zero.
pub fn blur_score(patch: &RadianceImage, cfg: &SelectionConfig) -> Result<f64> {
    let k = proxy_kernel(patch, cfg)?;
    if is_flat(&patch.gray_plane()) {
        return Ok(0.0);
    }
    Ok(k.variance())
}

fn is_flat(gray: &[f64]) -> bool {
    let min = gray.iter().copied().fold(f64::INFINITY, f64::min);
    let max = gray.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max - min <= 1e-12 * (1.0 + min.abs())
}

/// Blind Richardson–Lucy: `iterations` joint multiplicative updates of image
/// and kernel, starting from a uniform kernel. The patch is
/// shifted to a zero minimum and scaled to unit mean first, which makes the
/// result independent of additive offsets and gain.
pub fn proxy_kernel(patch: &RadianceImage, cfg: &SelectionConfig) -> Result<Kernel2D> {
    let ks = cfg.proxy_kernel_size;
    if ks % 2 == 0 {
        return Err(Error::invalid("proxy kernel size must be odd"));
    }
    let (w, h) = (patch.width(), patch.height());
    if w < 2 * ks || h < 2 * ks {
        return Err(Error::invalid(format!(
            "patch {w}x{h} smaller than twice the proxy kernel {ks}"
        )));
    }
    let gray = patch.gray_plane();
    let min = gray.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = gray.iter().map(|v| v - min).collect();
    let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
    if !(mean > 0.0) || is_flat(&gray) {
        return Ok(Kernel2D::uniform(ks));
    }
    let observed: Vec<f64> = shifted.iter().map(|v| v / mean).collect();
    let r = (ks / 2) as isize;
    let eps = 1e-12;

    // Image and kernel are updated together from one shared ratio, with
    // Biggs-Andrews vector extrapolation across iterations.
    let mut latent = observed.clone();
    let mut kernel = vec![1.0 / (ks * ks) as f64; ks * ks];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut dirs: (Option<Vec<f64>>, Option<Vec<f64>>) = (None, None);
    for _ in 0..cfg.proxy_iterations {
        let lambda = match &dirs {
            (Some(g1), Some(g2)) => {
                let num: f64 = g1.iter().zip(g2).map(|(a, b)| a * b).sum();
                let den: f64 = g2.iter().map(|b| b * b).sum();
                (num / (den + eps)).clamp(0.0, 1.0)
            }
            _ => 0.0,
        };
        let (y_img, y_ker) = match &prev {
            Some((pl, pk)) if lambda > 0.0 => (
                latent
                    .iter()
                    .zip(pl)
                    .map(|(c, p)| (c + lambda * (c - p)).max(0.0))
                    .collect::<Vec<_>>(),
                normalise(kernel.iter().zip(pk).map(|(c, p)| (c + lambda * (c - p)).max(0.0)).collect()),
            ),
            _ => (latent.clone(), kernel.clone()),
        };
        let pred = conv_replicate(&y_img, w, h, &y_ker, r);
        let ratio: Vec<f64> = observed.iter().zip(&pred).map(|(o, p)| o / p.max(eps)).collect();

        let back = corr_replicate(&ratio, w, h, &y_ker, r);
        let next_img: Vec<f64> = y_img.iter().zip(&back).map(|(l, b)| l * b).collect();
        let img_sum: f64 = y_img.iter().sum();
        if img_sum <= eps {
            break;
        }
        let mut next_ker = vec![0.0; ks * ks];
        for dy in -r..=r {
            for dx in -r..=r {
                let mut acc = 0.0;
                for y in 0..h as isize {
                    let sy = (y - dy).clamp(0, h as isize - 1) as usize;
                    let row = y as usize * w;
                    for x in 0..w as isize {
                        let sx = (x - dx).clamp(0, w as isize - 1) as usize;
                        acc += y_img[sy * w + sx] * ratio[row + x as usize];
                    }
                }
                let t = ((dy + r) as usize) * ks + (dx + r) as usize;
                next_ker[t] = y_ker[t] * acc / img_sum;
            }
        }
        if !(next_ker.iter().sum::<f64>() > 0.0) {
            break;
        }
        let next_ker = normalise(next_ker);

        let step: Vec<f64> = next_img
            .iter()
            .zip(&y_img)
            .map(|(a, b)| a - b)
            .chain(next_ker.iter().zip(&y_ker).map(|(a, b)| a - b))
            .collect();
        dirs = (Some(step), dirs.0.take());
        prev = Some((std::mem::replace(&mut latent, next_img), std::mem::replace(&mut kernel, next_ker)));
    }
    Kernel2D::project_normalized(ks, ks, kernel)
}

fn normalise(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 { v.into_iter().map(|x| x / s).collect() } else { v }
}

fn conv_replicate(img: &[f64], w: usize, h: usize, k: &[f64], r: isize) -> Vec<f64> {
    let ks = (2 * r + 1) as usize;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = (y - dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let sx = (x - dx).clamp(0, w as isize - 1) as usize;
                    acc += k[((dy + r) as usize) * ks + (dx + r) as usize] * img[sy * w + sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

fn corr_replicate(img: &[f64], w: usize, h: usize, k: &[f64], r: isize) -> Vec<f64> {
    let ks = (2 * r + 1) as usize;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc += k[((dy + r) as usize) * ks + (dx + r) as usize] * img[sy * w + sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// Scores every patch of the grid in parallel.
pub fn score_patches(
    img: &RadianceImage,
    centroid_xy: Option<(f64, f64)>,
    cfg: &SelectionConfig,
) -> Result<Vec<PatchScore>> {
    cfg.validate()?;
    let grid = patch_grid(img.width(), img.height(), cfg.patch_size, cfg.stride());
    if grid.is_empty() {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than patch size {}",
            img.width(),
            img.height(),
            cfg.patch_size
        )));
    }
    grid.par_iter()
        .map(|rect| {
            let patch = img.crop(*rect)?;
            Ok(PatchScore {
                rect: *rect,
                blur_score: blur_score(&patch, cfg)?,
                sharpness: sharpness_score(&patch),
                distance: centroid_xy.map_or(0.0, |c| patch_distance(rect, c)),
            })
        })
        .collect()
}

/// Resolves the sharpness threshold for a set of scores.
pub fn sharpness_threshold(scores: &[PatchScore], cfg: &SelectionConfig) -> f64 {
    if let Some(t) = cfg.tau_g {
        return t;
    }
    let mut s: Vec<f64> = scores.iter().map(|p| p.sharpness).collect();
    if s.is_empty() {
        return 0.0;
    }
    s.sort_by(f64::total_cmp);
    let pos = TAU_G_PERCENTILE * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Keeps patches with `blur_score >= tau_b` and `sharpness >= tau_g`, ranks
/// them (blur score descending, then distance ascending) and returns the top N.
pub fn rank_and_select(scores: &[PatchScore], cfg: &SelectionConfig) -> Result<Vec<PatchScore>> {
    let tau_g = sharpness_threshold(scores, cfg);
    let mut kept: Vec<PatchScore> = scores
        .iter()
        .filter(|s| s.blur_score >= cfg.tau_b && s.sharpness >= tau_g)
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::SelectionEmpty);
    }
    kept.sort_by(|a, b| {
        b.blur_score
            .total_cmp(&a.blur_score)
            .then(a.distance.total_cmp(&b.distance))
            .then(a.rect.cmp(&b.rect))
    });
    kept.truncate(cfg.top_n);
    Ok(kept)
}

#[derive(Debug, Clone)]
pub struct PatchSelection {
    pub saturated: BinaryMask,
    pub centroid: Option<(f64, f64)>,
    pub scores: Vec<PatchScore>,
    pub tau_g: f64,
    /// Empty when nothing survived the thresholds.
    pub selected: Vec<PatchScore>,
}

impl PatchSelection {
    pub fn selected_rects(&self) -> Vec<PatchRect> {
        self.selected.iter().map(|s| s.rect).collect()
    }

    pub fn is_selected(&self, rect: &PatchRect) -> bool {
        self.selected.iter().any(|s| s.rect == *rect)
    }

    /// One JSON object per scored patch.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.scores {
            let rec = PatchRecord {
                row: s.rect.row,
                col: s.rect.col,
                size: s.rect.size,
                b: s.blur_score,
                g: s.sharpness,
                d: s.distance,
                selected: self.is_selected(&s.rect),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_jsonl_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Line format of the patch report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub b: f64,
    pub g: f64,
    pub d: f64,
    pub selected: bool,
}

/// Saturation mask, centroid, scores and ranking for one observed image.
pub fn select_patches(img: &ClippedImage, cfg: &SelectionConfig) -> Result<PatchSelection> {
    cfg.validate()?;
    let saturated = saturation_mask(img, cfg.saturation_threshold);
    let centroid = match dominant_centroid(&saturated) {
        Ok(c) => Some(c),
        Err(Error::NoSaturation) => None,
        Err(e) => return Err(e),
    };
    let scores = score_patches(img.as_radiance(), centroid, cfg)?;
    let tau_g = sharpness_threshold(&scores, cfg);
    let selected = match rank_and_select(&scores, cfg) {
        Ok(s) => s,
        Err(Error::SelectionEmpty) => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(PatchSelection {
        saturated,
        centroid,
        scores,
        tau_g,
        selected,
    })
}
