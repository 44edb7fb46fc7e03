use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Kernel2D;

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Row/column 2D FFT over a fixed `width x height` complex buffer.
pub struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform, normalised so that `inverse(forward(x)) == x`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let s = 1.0 / (self.width * self.height) as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    fn transform(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.width * self.height);
        rows.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                col[y] = buf[y * self.width + x];
            }
            cols.process(&mut col);
            for y in 0..self.height {
                buf[y * self.width + x] = col[y];
            }
        }
    }
}

/// Zero-padded Fourier workspace for a `width x height` image.
///
/// The canvas is the next power of two at least twice each dimension, so a
/// circular product on the canvas equals linear (zero-boundary) convolution
/// on the original frame for every kernel offset that can reach it.
pub struct PaddedFft {
    width: usize,
    height: usize,
    fft: Fft2d,
}

impl PaddedFft {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            fft: Fft2d::new(next_pow2(2 * width), next_pow2(2 * height)),
        }
    }

    pub fn canvas(&self) -> (usize, usize) {
        (self.fft.width(), self.fft.height())
    }

    pub fn frame(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Spectrum of a row-major plane embedded at the canvas origin.
    pub fn forward_plane(&self, plane: &[f64]) -> Vec<Complex64> {
        assert_eq!(plane.len(), self.width * self.height);
        let (cw, ch) = self.canvas();
        let mut buf = vec![Complex64::new(0.0, 0.0); cw * ch];
        for y in 0..self.height {
            for x in 0..self.width {
                buf[y * cw + x] = Complex64::new(plane[y * self.width + x], 0.0);
            }
        }
        self.fft.forward(&mut buf);
        buf
    }

    /// Spectrum of a kernel centred at the canvas origin (circularly wrapped).
    /// Taps whose offset cannot reach the frame are dropped.
    pub fn forward_kernel(&self, k: &Kernel2D) -> Vec<Complex64> {
        self.forward_taps(|dx, dy| k.at(dx, dy), k.radius_x(), k.radius_y())
    }

    /// Spectrum of a kernel given as a function of the offset from its centre.
    pub fn forward_taps(
        &self,
        tap: impl Fn(isize, isize) -> f64,
        radius_x: usize,
        radius_y: usize,
    ) -> Vec<Complex64> {
        let (cw, ch) = self.canvas();
        let rx = radius_x.min(self.width - 1) as isize;
        let ry = radius_y.min(self.height - 1) as isize;
        let mut buf = vec![Complex64::new(0.0, 0.0); cw * ch];
        for dy in -ry..=ry {
            let y = dy.rem_euclid(ch as isize) as usize;
            for dx in -rx..=rx {
                let x = dx.rem_euclid(cw as isize) as usize;
                buf[y * cw + x] = Complex64::new(tap(dx, dy), 0.0);
            }
        }
        self.fft.forward(&mut buf);
        buf
    }

    /// Inverse transform and crop back to the original frame.
    pub fn inverse_crop(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse(&mut spectrum);
        let (cw, _) = self.canvas();
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            out.extend(spectrum[y * cw..y * cw + self.width].iter().map(|c| c.re));
        }
        out
    }

    /// Linear convolution of a plane with a precomputed kernel spectrum.
    pub fn convolve_with(&self, plane: &[f64], kernel_spectrum: &[Complex64]) -> Vec<f64> {
        let mut s = self.forward_plane(plane);
        s.iter_mut().zip(kernel_spectrum).for_each(|(a, b)| *a *= b);
        self.inverse_crop(s)
    }

    /// Adjoint of [`convolve_with`](Self::convolve_with) (correlation).
    pub fn correlate_with(&self, plane: &[f64], kernel_spectrum: &[Complex64]) -> Vec<f64> {
        let mut s = self.forward_plane(plane);
        s.iter_mut().zip(kernel_spectrum).for_each(|(a, b)| *a *= b.conj());
        self.inverse_crop(s)
    }
}

pub type PaddedSpectrum = Vec<Complex64>;
