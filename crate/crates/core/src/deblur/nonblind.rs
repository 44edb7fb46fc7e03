//! Non-blind deconvolution with a known kernel.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{DeblurConfig, FinalStep};
use crate::error::Result;
use crate::image::{Kernel2D, PaddedFft, RadianceImage};
use crate::lsf::deconvolve_wiener;

fn is_delta(k: &Kernel2D) -> bool {
    k.at(0, 0) == 1.0
}

/// Replicate-pads a plane by `(px, py)` on every side.
fn pad(p: &[f64], w: usize, h: usize, px: usize, py: usize) -> (Vec<f64>, usize, usize) {
    let (pw, ph) = (w + 2 * px, h + 2 * py);
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = (y as isize - py as isize).clamp(0, h as isize - 1) as usize;
        for x in 0..pw {
            let sx = (x as isize - px as isize).clamp(0, w as isize - 1) as usize;
            out.push(p[sy * w + sx]);
        }
    }
    (out, pw, ph)
}

fn crop(p: &[f64], pw: usize, px: usize, py: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = (y + py) * pw + px;
        out.extend_from_slice(&p[row..row + w]);
    }
    out
}

/// Richardson–Lucy iterations, started from the observation. Output is
/// non-negative; a delta kernel returns the input unchanged.
///
/// The latent image lives on the frame grown by the kernel radius and only
/// the observed frame enters the likelihood, so the border needs no
/// boundary assumption beyond the replicate start.
pub fn richardson_lucy(img: &RadianceImage, k: &Kernel2D, iterations: usize) -> RadianceImage {
    if is_delta(k) || iterations == 0 {
        return img.map(|v| v.max(0.0));
    }
    let (w, h) = (img.width(), img.height());
    let (px, py) = (k.radius_x().max(1), k.radius_y().max(1));
    let (pw, ph) = (w + 2 * px, h + 2 * py);
    let fft = PaddedFft::new(pw, ph);
    let spec: Vec<Complex64> = fft.forward_kernel(k);
    let observed: Vec<bool> = (0..pw * ph)
        .map(|i| {
            let (x, y) = (i % pw, i / pw);
            x >= px && x < px + w && y >= py && y < py + h
        })
        .collect();
    let ones: Vec<f64> = observed.iter().map(|o| if *o { 1.0 } else { 0.0 }).collect();
    let norm = fft.correlate_with(&ones, &spec);
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .into_par_iter()
        .map(|c| {
            let (b, ..) = pad(img.plane(c), w, h, px, py);
            let b: Vec<f64> = b.into_iter().map(|v| v.max(0.0)).collect();
            let mut est = b.clone();
            for _ in 0..iterations {
                let pred = fft.convolve_with(&est, &spec);
                let ratio: Vec<f64> = b
                    .iter()
                    .zip(&pred)
                    .zip(&observed)
                    .map(|((o, p), inside)| if *inside && *p > 1e-12 { o / p } else { 0.0 })
                    .collect();
                let corr = fft.correlate_with(&ratio, &spec);
                for ((e, c), n) in est.iter_mut().zip(&corr).zip(&norm) {
                    *e = if *n > 1e-12 { (*e * c / n).max(0.0) } else { 0.0 };
                }
            }
            crop(&est, pw, px, py, w, h)
        })
        .collect();
    RadianceImage::new(w, h, img.channels(), planes.concat()).expect("shape preserved")
}

pub fn deconvolve_final(img: &RadianceImage, k: &Kernel2D, cfg: &DeblurConfig) -> Result<RadianceImage> {
    match cfg.final_step {
        FinalStep::RichardsonLucy { iterations } => Ok(richardson_lucy(img, k, iterations)),
        FinalStep::Wiener { reg } => Ok(deconvolve_wiener(img, k, reg)?.map(|v| v.max(0.0))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{convolve_spatial, Boundary};
    use crate::metrics::psnr;
    use crate::synth::{render_scene, SceneSpec};

    fn scene() -> RadianceImage {
        render_scene(&SceneSpec::new(64, 64, 11)).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = scene();
        let y = richardson_lucy(&x, &Kernel2D::delta(5), 20);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn rl_round_trip_on_smooth_image() {
        let x = RadianceImage::from_fn(64, 64, 1, |x, y, _| {
            let (u, v) = (x as f64 / 64.0, y as f64 / 64.0);
            0.5 + 0.3 * (6.0 * u).sin() * (4.0 * v).cos()
        })
        .unwrap();
        let k = Kernel2D::uniform(5);
        let y = convolve_spatial(&x, &k, Boundary::Replicate).unwrap();
        let rec = richardson_lucy(&y, &k, 30);
        assert!(rec.data().iter().all(|v| *v >= 0.0));
        let p = psnr(&rec.clamp_unit(), &x.clamp_unit(), 1.0).unwrap();
        assert!(p >= 30.0, "psnr {p}");
    }

    #[test]
    fn wiener_final_step_is_nonnegative() {
        let x = scene();
        let k = Kernel2D::uniform(3);
        let y = convolve_spatial(&x, &k, Boundary::Replicate).unwrap();
        let cfg = DeblurConfig {
            final_step: FinalStep::Wiener { reg: 1e-3 },
            ..DeblurConfig::default()
        };
        let rec = deconvolve_final(&y, &k, &cfg).unwrap();
        assert!(rec.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn pad_crop_round_trip() {
        let p: Vec<f64> = (0..12).map(f64::from).collect();
        let (q, pw, _) = pad(&p, 4, 3, 2, 1);
        assert_eq!(q[0], 0.0);
        assert_eq!(crop(&q, pw, 2, 1, 4, 3), p);
    }
}
