use rayon::prelude::*;

use super::{Kernel2D, PaddedFft, RadianceImage};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Zero,
    Replicate,
}

/// Direct spatial convolution `out(x, y) = sum k(dx, dy) * img(x - dx, y - dy)`.
pub fn convolve_spatial(img: &RadianceImage, k: &Kernel2D, boundary: Boundary) -> Result<RadianceImage> {
    let (w, h) = (img.width(), img.height());
    let planes = img
        .planes()
        .map(|p| convolve_plane_spatial(p, w, h, k, boundary))
        .collect();
    Ok(RadianceImage::from_planes_clamped(w, h, planes))
}

pub(crate) fn convolve_plane_spatial(
    plane: &[f64],
    w: usize,
    h: usize,
    k: &Kernel2D,
    boundary: Boundary,
) -> Vec<f64> {
    let rx = k.radius_x() as isize;
    let ry = k.radius_y() as isize;
    let (wi, hi) = (w as isize, h as isize);
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, o) in row.iter_mut().enumerate() {
            let x = x as isize;
            let mut acc = 0.0;
            for dy in -ry..=ry {
                let mut sy = y - dy;
                if sy < 0 || sy >= hi {
                    match boundary {
                        Boundary::Zero => continue,
                        Boundary::Replicate => sy = sy.clamp(0, hi - 1),
                    }
                }
                for dx in -rx..=rx {
                    let t = k.at(dx, dy);
                    if t == 0.0 {
                        continue;
                    }
                    let mut sx = x - dx;
                    if sx < 0 || sx >= wi {
                        match boundary {
                            Boundary::Zero => continue,
                            Boundary::Replicate => sx = sx.clamp(0, wi - 1),
                        }
                    }
                    acc += t * plane[(sy * wi + sx) as usize];
                }
            }
            *o = acc;
        }
    });
    out
}

/// Zero-boundary convolution evaluated in the Fourier domain on a padded canvas.
pub fn convolve_fft_padded(img: &RadianceImage, k: &Kernel2D) -> RadianceImage {
    let (w, h) = (img.width(), img.height());
    let fft = PaddedFft::new(w, h);
    let ks = fft.forward_kernel(k);
    let planes = img.planes().map(|p| fft.convolve_with(p, &ks)).collect();
    RadianceImage::from_planes_clamped(w, h, planes)
}

/// Plane version of [`convolve_fft_padded`] without the non-negativity clamp.
pub fn convolve_plane_fft(plane: &[f64], w: usize, h: usize, k: &Kernel2D) -> Vec<f64> {
    let fft = PaddedFft::new(w, h);
    let ks = fft.forward_kernel(k);
    fft.convolve_with(plane, &ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Kernel2D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RadianceImage {
        RadianceImage::from_fn(w, h, 1, |_, _, _| rng.random::<f64>()).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, size: usize) -> Kernel2D {
        let taps = (0..size * size).map(|_| rng.random::<f64>()).collect();
        Kernel2D::project_normalized(size, size, taps).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 9, 7);
        let out = convolve_spatial(&img, &Kernel2D::delta(1), Boundary::Zero).unwrap();
        assert_eq!(out, img);
        let out = convolve_fft_padded(&img, &Kernel2D::delta(3));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_preserved_with_replicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = RadianceImage::filled(12, 10, 3, 0.37);
        let k = random_kernel(&mut rng, 5);
        let out = convolve_spatial(&img, &k, Boundary::Replicate).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn single_pixel_spreads_into_uniform_block() {
        let mut img = RadianceImage::zeros(5, 5, 1);
        img.set(2, 2, 0, 1.0);
        let out = convolve_spatial(&img, &Kernel2D::uniform(3), Boundary::Zero).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&x) && (1..=3).contains(&y);
                let expect = if inside { 1.0 / 9.0 } else { 0.0 };
                assert!((out.get(x, y, 0) - expect).abs() < 1e-15, "({x},{y})");
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Kernel2D::new(4, vec![1.0 / 16.0; 16]).is_err());
    }

    #[test]
    fn fft_matches_spatial_zero_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 32, 32);
        let k = random_kernel(&mut rng, 7);
        let a = convolve_spatial(&img, &k, Boundary::Zero).unwrap();
        let b = convolve_fft_padded(&img, &k);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn kernel_larger_than_image_still_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 6, 5);
        let k = random_kernel(&mut rng, 15);
        let a = convolve_spatial(&img, &k, Boundary::Zero).unwrap();
        let b = convolve_fft_padded(&img, &k);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_image_stays_zero() {
        let img = RadianceImage::zeros(8, 8, 3);
        let out = convolve_fft_padded(&img, &Kernel2D::uniform(5));
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shift_commutes_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 24, 24);
        let k = random_kernel(&mut rng, 5);
        let shifted = RadianceImage::from_fn(24, 24, 1, |x, y, _| {
            if x >= 2 && y >= 1 { img.get(x - 2, y - 1, 0) } else { 0.0 }
        })
        .unwrap();
        let a = convolve_spatial(&img, &k, Boundary::Zero).unwrap();
        let b = convolve_spatial(&shifted, &k, Boundary::Zero).unwrap();
        for y in 4..20 {
            for x in 5..20 {
                assert!((a.get(x - 2, y - 1, 0) - b.get(x, y, 0)).abs() < 1e-12);
            }
        }
    }
}
