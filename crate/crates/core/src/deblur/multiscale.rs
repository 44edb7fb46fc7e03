//! Coarse-to-fine kernel estimation on gradient maps.

use num_complex::Complex64;

use super::DeblurConfig;
use crate::error::{Error, Result};
use crate::image::{Fft2d, Kernel2D, RadianceImage};

/// Image scale between consecutive pyramid levels.
pub const SCALE_STEP: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Taps below this fraction of the peak are dropped after each kernel step.
const PRUNE: f64 = 0.15;

/// Shock filter applied to each latent estimate before picking edges.
const SHOCK_ITERS: usize = 5;
const SHOCK_DT: f64 = 0.5;

fn level_kernel_size(ks: usize, scale: f64) -> usize {
    if ks <= 3 {
        return ks;
    }
    let s = (ks as f64 * scale).round() as usize;
    (s | 1).max(3)
}

fn level_count(w: usize, h: usize, cfg: &DeblurConfig) -> usize {
    if let Some(n) = cfg.pyramid_levels {
        return n.max(1);
    }
    let ks = cfg.kernel_size;
    let mut n = 1;
    loop {
        let prev = level_kernel_size(ks, SCALE_STEP.powi(n as i32 - 1));
        let s = SCALE_STEP.powi(n as i32);
        let k = level_kernel_size(ks, s);
        if prev <= 3 || (w.min(h) as f64 * s) < 3.0 * k as f64 {
            return n;
        }
        n += 1;
    }
}

/// Bilinear resampling with pixel centres aligned.
fn resample(p: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    if nw == w && nh == h {
        return p.to_vec();
    }
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..nw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let top = p[y0 * w + x0] * (1.0 - tx) + p[y0 * w + x1] * tx;
            let bot = p[y1 * w + x0] * (1.0 - tx) + p[y1 * w + x1] * tx;
            out[y * nw + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Resamples kernel taps to a new odd size, stretching offsets by `stretch`.
fn rescale_kernel(k: &Kernel2D, size: usize, stretch: f64) -> Kernel2D {
    let r = (size / 2) as isize;
    let mut taps = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            let (fx, fy) = (dx as f64 / stretch, dy as f64 / stretch);
            let (x0, y0) = (fx.floor() as isize, fy.floor() as isize);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let v = k.at(x0, y0) * (1.0 - tx) * (1.0 - ty)
                + k.at(x0 + 1, y0) * tx * (1.0 - ty)
                + k.at(x0, y0 + 1) * (1.0 - tx) * ty
                + k.at(x0 + 1, y0 + 1) * tx * ty;
            taps.push(v);
        }
    }
    Kernel2D::project_normalized(size, size, taps).expect("odd size")
}

/// Shifts the kernel by whole taps so its centre of mass sits on the centre.
fn recentre(k: &Kernel2D) -> Kernel2D {
    let (cx, cy) = k.center_of_mass();
    let (sx, sy) = (cx.round() as isize, cy.round() as isize);
    if sx == 0 && sy == 0 {
        return k.clone();
    }
    let (rx, ry) = (k.radius_x() as isize, k.radius_y() as isize);
    let mut taps = Vec::with_capacity(k.taps().len());
    for dy in -ry..=ry {
        for dx in -rx..=rx {
            taps.push(k.at(dx + sx, dy + sy));
        }
    }
    Kernel2D::project_normalized(k.width(), k.height(), taps).expect("same shape")
}

/// One pyramid level: periodic Fourier domain over the replicate-padded image.
struct Level {
    fft: Fft2d,
    pw: usize,
    ph: usize,
    pad: usize,
    w: usize,
    h: usize,
    ks: usize,
    observed: Vec<Complex64>,
    grad_obs: [Vec<Complex64>; 2],
    diff_energy: Vec<f64>,
    /// Padded-frame pixels whose latent and observed gradients are ignored.
    skip_latent: Vec<bool>,
    skip_observed: Vec<bool>,
    image_reg: f64,
    kernel_reg: f64,
}

fn forward_real(fft: &Fft2d, p: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = p.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft.forward(&mut buf);
    buf
}

fn inverse_real(fft: &Fft2d, mut s: Vec<Complex64>) -> Vec<f64> {
    fft.inverse(&mut s);
    s.into_iter().map(|c| c.re).collect()
}

impl Level {
    /// `over` flags pixels above full scale; their neighbourhoods are kept
    /// out of the kernel fit.
    fn new(plane: &[f64], over: &[bool], w: usize, h: usize, ks: usize, cfg: &DeblurConfig) -> Self {
        let pad = ks;
        let (pw, ph) = (w + 2 * pad, h + 2 * pad);
        let mut padded = vec![0.0; pw * ph];
        let mut over_padded = vec![false; pw * ph];
        for y in 0..ph {
            let sy = (y as isize - pad as isize).clamp(0, h as isize - 1) as usize;
            for x in 0..pw {
                let sx = (x as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                padded[y * pw + x] = plane[sy * w + sx];
                over_padded[y * pw + x] = over[sy * w + sx];
            }
        }
        let r = ks / 2;
        let skip_latent = dilate(&over_padded, pw, ph, r);
        let skip_observed = dilate(&skip_latent, pw, ph, r);
        let fft = Fft2d::new(pw, ph);
        let observed = forward_real(&fft, &padded);
        let mut lvl = Self {
            fft,
            pw,
            ph,
            pad,
            w,
            h,
            ks,
            observed,
            grad_obs: [Vec::new(), Vec::new()],
            diff_energy: Vec::new(),
            skip_latent: Vec::new(),
            skip_observed,
            image_reg: cfg.image_reg,
            kernel_reg: cfg.kernel_reg,
        };
        let [gx, gy] = lvl.gradients(&padded, &lvl.skip_observed);
        lvl.grad_obs = [forward_real(&lvl.fft, &gx), forward_real(&lvl.fft, &gy)];
        lvl.skip_latent = skip_latent;
        let dx = lvl.taps_spectrum(&[(0, 0, -1.0), (1, 0, 1.0)]);
        let dy = lvl.taps_spectrum(&[(0, 0, -1.0), (0, 1, 1.0)]);
        lvl.diff_energy = dx.iter().zip(&dy).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect();
        lvl
    }

    fn in_core(&self, x: usize, y: usize) -> bool {
        x >= self.pad && x + 1 < self.pad + self.w && y >= self.pad && y + 1 < self.pad + self.h
    }

    /// Forward differences, kept only inside the unpadded frame and off `skip`.
    fn gradients(&self, p: &[f64], skip: &[bool]) -> [Vec<f64>; 2] {
        let (pw, ph) = (self.pw, self.ph);
        let mut gx = vec![0.0; pw * ph];
        let mut gy = vec![0.0; pw * ph];
        for y in 0..ph {
            for x in 0..pw {
                let i = y * pw + x;
                if self.in_core(x, y) && !skip[i] {
                    gx[i] = p[i + 1] - p[i];
                    gy[i] = p[i + pw] - p[i];
                }
            }
        }
        [gx, gy]
    }

    fn taps_spectrum(&self, taps: &[(isize, isize, f64)]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.pw * self.ph];
        for &(dx, dy, v) in taps {
            let x = dx.rem_euclid(self.pw as isize) as usize;
            let y = dy.rem_euclid(self.ph as isize) as usize;
            buf[y * self.pw + x] += v;
        }
        self.fft.forward(&mut buf);
        buf
    }

    fn kernel_spectrum(&self, k: &Kernel2D) -> Vec<Complex64> {
        let (rx, ry) = (k.radius_x() as isize, k.radius_y() as isize);
        let mut taps = Vec::with_capacity(k.taps().len());
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                taps.push((dx, dy, k.at(dx, dy)));
            }
        }
        self.taps_spectrum(&taps)
    }

    /// Latent image by gradient-regularised Fourier deconvolution.
    fn latent(&self, k: &Kernel2D) -> Vec<f64> {
        let ks = self.kernel_spectrum(k);
        let spec: Vec<Complex64> = self
            .observed
            .iter()
            .zip(&ks)
            .zip(&self.diff_energy)
            .map(|((b, kk), d)| b * kk.conj() / (kk.norm_sqr() + self.image_reg * d))
            .collect();
        inverse_real(&self.fft, spec)
    }

    /// Osher-Rudin shock filter with minmod upwinding: pushes smoothed edges
    /// back towards steps.
    fn shock(&self, p: &[f64], iters: usize) -> Vec<f64> {
        let (pw, ph) = (self.pw as isize, self.ph as isize);
        let at = |v: &[f64], x: isize, y: isize| v[(y.clamp(0, ph - 1) * pw + x.clamp(0, pw - 1)) as usize];
        let mut cur = p.to_vec();
        for _ in 0..iters {
            let mut next = cur.clone();
            for y in 0..ph {
                for x in 0..pw {
                    let c = at(&cur, x, y);
                    let (l, r) = (at(&cur, x - 1, y), at(&cur, x + 1, y));
                    let (u, d) = (at(&cur, x, y - 1), at(&cur, x, y + 1));
                    let (gx, gy) = (0.5 * (r - l), 0.5 * (d - u));
                    let mag2 = gx * gx + gy * gy;
                    if mag2 < 1e-20 {
                        continue;
                    }
                    let gxy = 0.25
                        * (at(&cur, x + 1, y + 1) - at(&cur, x - 1, y + 1) - at(&cur, x + 1, y - 1)
                            + at(&cur, x - 1, y - 1));
                    // Second derivative along the gradient direction.
                    let d2 = ((r - 2.0 * c + l) * gx * gx + 2.0 * gxy * gx * gy + (d - 2.0 * c + u) * gy * gy) / mag2;
                    let slope = minmod(r - c, c - l).hypot(minmod(d - c, c - u));
                    next[(y * pw + x) as usize] = c - SHOCK_DT * d2.signum() * slope;
                }
            }
            cur = next;
        }
        cur
    }

    /// Keeps the strongest latent gradients, about a few kernel areas' worth.
    fn salient_gradients(&self, latent: &[f64]) -> Option<[Vec<f64>; 2]> {
        let shocked = self.shock(latent, SHOCK_ITERS);
        let [mut gx, mut gy] = self.gradients(&shocked, &self.skip_latent);
        let mut mags: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
        let n_core = self.w * self.h;
        let keep = ((4 * self.ks * self.ks) as f64 / n_core as f64).clamp(0.02, 0.5);
        let mut sorted: Vec<f64> = mags.iter().copied().filter(|m| *m > 0.0).collect();
        if sorted.is_empty() {
            return None;
        }
        sorted.sort_by(|a, b| b.total_cmp(a));
        let idx = ((keep * n_core as f64) as usize).min(sorted.len() - 1);
        let thr = sorted[idx];
        for ((x, y), m) in gx.iter_mut().zip(gy.iter_mut()).zip(mags.iter_mut()) {
            if *m < thr {
                *x = 0.0;
                *y = 0.0;
            }
        }
        Some([gx, gy])
    }

    fn kernel_step(&self, grads: &[Vec<f64>; 2], prev: &Kernel2D) -> Kernel2D {
        let lx = forward_real(&self.fft, &grads[0]);
        let ly = forward_real(&self.fft, &grads[1]);
        let spec: Vec<Complex64> = (0..lx.len())
            .map(|i| {
                let num = lx[i].conj() * self.grad_obs[0][i] + ly[i].conj() * self.grad_obs[1][i];
                num / (lx[i].norm_sqr() + ly[i].norm_sqr() + self.kernel_reg)
            })
            .collect();
        let raw = inverse_real(&self.fft, spec);
        let r = (self.ks / 2) as isize;
        let mut taps = Vec::with_capacity(self.ks * self.ks);
        for dy in -r..=r {
            let y = dy.rem_euclid(self.ph as isize) as usize;
            for dx in -r..=r {
                let x = dx.rem_euclid(self.pw as isize) as usize;
                taps.push(raw[y * self.pw + x].max(0.0));
            }
        }
        let peak = taps.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return prev.clone();
        }
        taps.iter_mut().for_each(|t| {
            if *t < PRUNE * peak {
                *t = 0.0
            }
        });
        keep_peak_component(&mut taps, self.ks);
        Kernel2D::project_normalized(self.ks, self.ks, taps).expect("odd size")
    }
}

/// Square dilation of a row-major mask.
fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 || !mask.contains(&true) {
        return mask.to_vec();
    }
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    rows[y * w + xx] = true;
                }
            }
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if rows[y * w + x] {
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    out[yy * w + x] = true;
                }
            }
        }
    }
    out
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Zeroes every tap outside the 8-connected support of the largest tap.
fn keep_peak_component(taps: &mut [f64], size: usize) {
    let Some(peak) = (0..taps.len()).max_by(|a, b| taps[*a].total_cmp(&taps[*b])) else {
        return;
    };
    let mut keep = vec![false; taps.len()];
    let mut stack = vec![peak];
    keep[peak] = true;
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % size) as isize, (i / size) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= size as isize || ny >= size as isize {
                    continue;
                }
                let j = ny as usize * size + nx as usize;
                if !keep[j] && taps[j] > 0.0 {
                    keep[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    for (t, k) in taps.iter_mut().zip(keep) {
        if !k {
            *t = 0.0;
        }
    }
}

/// Estimates a single blur kernel of `cfg.kernel_size` for the whole image.
pub fn estimate_kernel(img: &RadianceImage, cfg: &DeblurConfig) -> Result<Kernel2D> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let ks = cfg.kernel_size;
    if w <= ks || h <= ks {
        return Err(Error::invalid(format!("image {w}x{h} not larger than kernel {ks}")));
    }
    let gray = img.gray_plane();
    let (lo, hi) = gray
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
        return Err(Error::KernelDegenerate("image has no gradients"));
    }

    // Radiance above full scale comes from saturation recovery and is not
    // blurred like the rest of the frame; the kernel is fitted around it.
    let over_plane: Vec<f64> = img
        .max_plane()
        .iter()
        .map(|v| if *v > 1.0 { 1.0 } else { 0.0 })
        .collect();
    let mut over_frac = over_plane.iter().sum::<f64>() / (w * h) as f64;
    if over_frac > 0.5 {
        over_frac = 0.0;
    }

    let levels = level_count(w, h, cfg);
    let mut kernel: Option<(Kernel2D, f64)> = None;
    for level in (0..levels).rev() {
        let scale = SCALE_STEP.powi(level as i32);
        let lks = level_kernel_size(ks, scale);
        let lw = ((w as f64 * scale).round() as usize).max(lks + 1);
        let lh = ((h as f64 * scale).round() as usize).max(lks + 1);
        let plane = resample(&gray, w, h, lw, lh);
        let mut k = match &kernel {
            None => match &cfg.initial_kernel {
                Some(init) => rescale_kernel(init, lks, scale),
                None => Kernel2D::delta(lks),
            },
            Some((prev, prev_scale)) => rescale_kernel(prev, lks, scale / prev_scale),
        };
        let over: Vec<bool> = if over_frac > 0.0 {
            resample(&over_plane, w, h, lw, lh).iter().map(|v| *v > 0.0).collect()
        } else {
            vec![false; lw * lh]
        };
        let lvl = Level::new(&plane, &over, lw, lh, lks, cfg);
        for _ in 0..cfg.outer_iters {
            let latent = lvl.latent(&k);
            let Some(grads) = lvl.salient_gradients(&latent) else {
                return Err(Error::KernelDegenerate("no salient gradients"));
            };
            k = lvl.kernel_step(&grads, &k);
        }
        kernel = Some((recentre(&k), scale));
    }
    let (k, _) = kernel.expect("at least one level");
    if k.width() == ks {
        Ok(k)
    } else {
        Ok(rescale_kernel(&k, ks, 1.0))
    }
}
