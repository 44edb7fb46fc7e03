//! Image, kernel and mask types shared by every stage of the pipeline.
//!
//! Pixel coordinates are `(x = column, y = row)` with the origin at the top-left
//! corner. Image samples are stored planar: channel `c` occupies
//! `data[c * w * h .. (c + 1) * w * h]`, row-major inside the plane.

mod conv;
mod fft;
mod ops;

pub use conv::{convolve_fft_padded, convolve_plane_fft, convolve_spatial, Boundary};
pub use fft::{next_pow2, Fft2d, PaddedFft, PaddedSpectrum};
pub use ops::{centroid, connected_components, gradient_magnitude, gradient_magnitude_plane};

use crate::error::{Error, Result};

/// Linear-radiance image, non-negative and unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RadianceImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", width * height * channels),
                actual: format!("{} samples", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("radiance must be finite and >= 0, found {v}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0 && (channels == 1 || channels == 3));
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let mut img = Self::zeros(width, height, channels);
        img.data.fill(value.max(0.0));
        img
    }

    /// Single-channel image from a row-major plane.
    pub fn from_plane(width: usize, height: usize, plane: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, plane)
    }

    /// Builds an image from planes, clamping negatives (and NaN) to zero.
    pub(crate) fn from_planes_clamped(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Self {
        let channels = planes.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for p in planes {
            debug_assert_eq!(p.len(), width * height);
            data.extend(p.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }));
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.pixel_count())
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[c * self.pixel_count() + y * self.width + x]
    }

    /// Sets a sample; negative values are clamped to zero.
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let n = self.pixel_count();
        self.data[c * n + y * self.width + x] = v.max(0.0);
    }

    pub fn same_shape(&self, other: &RadianceImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &RadianceImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.shape_string(),
                actual: other.shape_string(),
            })
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    /// Unweighted channel mean.
    pub fn gray_plane(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let n = self.pixel_count();
        let inv = 1.0 / self.channels as f64;
        (0..n)
            .map(|i| (0..self.channels).map(|c| self.data[c * n + i]).sum::<f64>() * inv)
            .collect()
    }

    pub fn to_gray(&self) -> RadianceImage {
        Self {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.gray_plane(),
        }
    }

    /// Per-pixel maximum over channels.
    pub fn max_plane(&self) -> Vec<f64> {
        let n = self.pixel_count();
        (0..n)
            .map(|i| {
                (0..self.channels)
                    .map(|c| self.data[c * n + i])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RadianceImage {
        let planes = self
            .planes()
            .map(|p| p.iter().map(|&v| f(v)).collect())
            .collect();
        Self::from_planes_clamped(self.width, self.height, planes)
    }

    pub fn scaled(&self, s: f64) -> RadianceImage {
        self.map(|v| v * s)
    }

    pub fn crop(&self, rect: PatchRect) -> Result<RadianceImage> {
        if rect.col + rect.size > self.width || rect.row + rect.size > self.height || rect.size == 0
        {
            return Err(Error::invalid(format!(
                "patch {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(rect.size * rect.size * self.channels);
        for p in self.planes() {
            for y in rect.row..rect.row + rect.size {
                let start = y * self.width + rect.col;
                data.extend_from_slice(&p[start..start + rect.size]);
            }
        }
        Ok(Self {
            width: rect.size,
            height: rect.size,
            channels: self.channels,
            data,
        })
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Clamps every sample into `[0, 1]`.
    pub fn clamp_unit(&self) -> ClippedImage {
        ClippedImage(self.map(|v| v.min(1.0)))
    }
}

/// Sensor image with values in `[0, 1]`; 1.0 is the saturation level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedImage(RadianceImage);

impl AsRef<RadianceImage> for RadianceImage {
    fn as_ref(&self) -> &RadianceImage {
        self
    }
}

impl AsRef<RadianceImage> for ClippedImage {
    fn as_ref(&self) -> &RadianceImage {
        &self.0
    }
}

impl ClippedImage {
    pub fn new(img: RadianceImage) -> Result<Self> {
        if let Some(v) = img.data.iter().find(|v| **v > 1.0) {
            return Err(Error::invalid(format!("clipped image sample {v} exceeds 1.0")));
        }
        Ok(Self(img))
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(RadianceImage::new(width, height, channels, data)?)
    }

    pub fn as_radiance(&self) -> &RadianceImage {
        &self.0
    }

    pub fn into_radiance(self) -> RadianceImage {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn channels(&self) -> usize {
        self.0.channels
    }
}

/// Top-left anchored square patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct PatchRect {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl PatchRect {
    pub fn new(row: usize, col: usize, size: usize) -> Self {
        Self { row, col, size }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.col && x < self.col + self.size && y >= self.row && y < self.row + self.size
    }

    pub fn area(&self) -> usize {
        self.size * self.size
    }

    /// Pixel coordinates `(x, y)` in scan order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row..self.row + self.size)
            .flat_map(move |y| (self.col..self.col + self.size).map(move |x| (x, y)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bits", width * height),
                actual: format!("{} bits", bits.len()),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Set pixels as `(x, y)` in scan order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn matches(&self, img: &RadianceImage) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if self.bits[y * w + x] {
                    let lo = x.saturating_sub(radius);
                    let hi = (x + radius).min(w - 1);
                    rows[y * w + lo..=y * w + hi].fill(true);
                }
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    let lo = y.saturating_sub(radius);
                    let hi = (y + radius).min(h - 1);
                    for yy in lo..=hi {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        BinaryMask {
            width: w,
            height: h,
            bits: out,
        }
    }
}

/// Odd-sized, non-negative convolution kernel. Taps are row-major with the
/// centre tap at `(width / 2, height / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    width: usize,
    height: usize,
    taps: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        Self::new_rect(size, size, taps)
    }

    pub fn new_rect(width: usize, height: usize, taps: Vec<f64>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {width}x{height} must be odd")));
        }
        if taps.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} taps", width * height),
                actual: format!("{} taps", taps.len()),
            });
        }
        if let Some(t) = taps.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::invalid(format!("kernel taps must be finite and >= 0, found {t}")));
        }
        Ok(Self {
            width,
            height,
            taps,
        })
    }

    pub fn delta(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        let mut taps = vec![0.0; size * size];
        taps[size * size / 2] = 1.0;
        Self {
            width: size,
            height: size,
            taps,
        }
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        let n = size * size;
        Self {
            width: size,
            height: size,
            taps: vec![1.0 / n as f64; n],
        }
    }

    /// Projects arbitrary real taps onto the set of valid blur kernels:
    /// negatives (and NaN) become zero, then the taps are scaled to unit sum.
    /// Falls back to a delta when nothing positive remains.
    pub fn project_normalized(width: usize, height: usize, mut taps: Vec<f64>) -> Result<Self> {
        for t in taps.iter_mut() {
            if !(*t > 0.0) || !t.is_finite() {
                *t = 0.0;
            }
        }
        let sum: f64 = taps.iter().sum();
        if sum <= 0.0 {
            taps.fill(0.0);
            taps[width * height / 2] = 1.0;
        } else {
            taps.iter_mut().for_each(|t| *t /= sum);
        }
        Self::new_rect(width, height, taps)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Side length of a square kernel (the width for rectangular ones).
    pub fn size(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius_x(&self) -> usize {
        self.width / 2
    }

    pub fn radius_y(&self) -> usize {
        self.height / 2
    }

    /// Tap at offset `(dx, dy)` from the centre.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let x = dx + self.radius_x() as isize;
        let y = dy + self.radius_y() as isize;
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.taps[y as usize * self.width + x as usize]
        }
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= 1e-9
    }

    pub fn normalized(&self) -> Result<Self> {
        Self::project_normalized(self.width, self.height, self.taps.clone())
    }

    /// Population variance of the taps.
    pub fn variance(&self) -> f64 {
        let n = self.taps.len() as f64;
        let mean = self.sum() / n;
        self.taps.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n
    }

    /// Intensity-weighted centre of mass relative to the centre tap.
    pub fn center_of_mass(&self) -> (f64, f64) {
        let s = self.sum();
        if s <= 0.0 {
            return (0.0, 0.0);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let t = self.taps[y * self.width + x];
                cx += t * (x as f64 - self.radius_x() as f64);
                cy += t * (y as f64 - self.radius_y() as f64);
            }
        }
        (cx / s, cy / s)
    }

    /// Zero-pads (or centre-crops) to a square of side `size`.
    pub fn resized(&self, size: usize) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        let r = (size / 2) as isize;
        let mut taps = Vec::with_capacity(size * size);
        for dy in -r..=r {
            for dx in -r..=r {
                taps.push(self.at(dx, dy));
            }
        }
        Self::new(size, taps)
    }
}
