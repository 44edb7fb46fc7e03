//! Parametric light spread function: a delta plus a radially symmetric
//! stretched-exponential scatter term,
//!
//! ```text
//! i(r) = p1 * delta(r) + p2 * exp(-p3 * r^p4)
//! ```
//!
//! applied to linear radiance on a zero-padded canvas and calibrated from a
//! captured/ground-truth pair by minimising the log-domain L2 residual.

use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Kernel2D, PaddedFft, RadianceImage};
use crate::optim::NelderMead;

/// Radiance floor applied before taking logs.
pub const LOG_FLOOR: f64 = 1e-6;
/// Taps below this fraction of the centre value are zeroed.
pub const TRUNCATION: f64 = 1e-12;
/// Upper clamp on the delta weight during fitting.
pub const P1_MAX: f64 = 1.5;
/// Starting point for calibration when none is given.
pub const DEFAULT_FIT_INIT: LsfParams = LsfParams {
    p1: 1.0,
    p2: 0.02,
    p3: 0.8,
    p4: 1.0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsfParams {
    /// Delta (unscattered) weight.
    pub p1: f64,
    /// Scatter amplitude.
    pub p2: f64,
    /// Decay rate, in pixels^-p4.
    pub p3: f64,
    /// Decay exponent.
    pub p4: f64,
}

impl LsfParams {
    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64) -> Result<Self> {
        let p = Self { p1, p2, p3, p4 };
        p.validate()?;
        Ok(p)
    }

    /// A pure delta: no scatter at all.
    pub fn identity() -> Self {
        Self {
            p1: 1.0,
            p2: 0.0,
            p3: 1.0,
            p4: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.p1, self.p2, self.p3, self.p4].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid(format!("non-finite LSF parameters {self}")));
        }
        if self.p3 <= 0.0 || self.p4 <= 0.0 {
            return Err(Error::invalid(format!("LSF decay p3, p4 must be > 0 ({self})")));
        }
        if self.p1 <= 0.0 || self.p2 < 0.0 {
            return Err(Error::invalid(format!("LSF weights need p1 > 0, p2 >= 0 ({self})")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }

    /// Value of the LSF at integer offset `(dx, dy)`, including truncation.
    pub fn tap(&self, dx: isize, dy: isize) -> f64 {
        let center = self.p1 + self.p2;
        if dx == 0 && dy == 0 {
            return center;
        }
        let r = ((dx * dx + dy * dy) as f64).sqrt();
        let v = self.p2 * (-self.p3 * r.powf(self.p4)).exp();
        if v < TRUNCATION * center { 0.0 } else { v }
    }

    /// `key=value` text form, one parameter per line.
    pub fn to_kv_string(&self) -> String {
        format!("p1={}\np2={}\np3={}\np4={}\n", self.p1, self.p2, self.p3, self.p4)
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut vals = [None; 4];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("LSF parameters", format!("missing '=' in {line:?}")))?;
            let idx = match k.trim() {
                "p1" => 0,
                "p2" => 1,
                "p3" => 2,
                "p4" => 3,
                other => return Err(Error::format("LSF parameters", format!("unknown key {other:?}"))),
            };
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::format("LSF parameters", format!("bad value in {line:?}")))?;
            vals[idx] = Some(v);
        }
        match vals {
            [Some(p1), Some(p2), Some(p3), Some(p4)] => {
                Self::new(p1, p2, p3, p4).map_err(|e| Error::format("LSF parameters", e.to_string()))
            }
            _ => Err(Error::format("LSF parameters", "expected p1, p2, p3 and p4")),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for LsfParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(p1={}, p2={}, p3={}, p4={})", self.p1, self.p2, self.p3, self.p4)
    }
}

/// Renders the (non-normalised) LSF on a `width x height` canvas centred on
/// the middle tap. Even sizes are widened by one so that the centre is a tap.
pub fn render_lsf(params: &LsfParams, width: usize, height: usize) -> Result<Kernel2D> {
    params.validate()?;
    let (w, h) = (width | 1, height | 1);
    let (rx, ry) = ((w / 2) as isize, (h / 2) as isize);
    let mut taps = Vec::with_capacity(w * h);
    for dy in -ry..=ry {
        for dx in -rx..=rx {
            taps.push(params.tap(dx, dy));
        }
    }
    Kernel2D::new_rect(w, h, taps)
}

/// Precomputed LSF spectrum for a fixed frame size. Applying it equals zero-
/// boundary convolution with the LSF rendered over every offset that can
/// reach the frame (a kernel of twice the frame size).
pub struct LsfOperator {
    fft: PaddedFft,
    spectrum: Vec<Complex64>,
    params: LsfParams,
}

impl LsfOperator {
    pub fn new(params: &LsfParams, width: usize, height: usize) -> Result<Self> {
        params.validate()?;
        let fft = PaddedFft::new(width, height);
        let spectrum = fft.forward_taps(|dx, dy| params.tap(dx, dy), width - 1, height - 1);
        Ok(Self {
            fft,
            spectrum,
            params: *params,
        })
    }

    pub fn params(&self) -> &LsfParams {
        &self.params
    }

    pub fn frame(&self) -> (usize, usize) {
        self.fft.frame()
    }

    pub fn apply_plane(&self, plane: &[f64]) -> Vec<f64> {
        self.fft.convolve_with(plane, &self.spectrum)
    }

    /// Adjoint (correlation) of [`apply_plane`](Self::apply_plane).
    pub fn adjoint_plane(&self, plane: &[f64]) -> Vec<f64> {
        self.fft.correlate_with(plane, &self.spectrum)
    }

    /// Regularised Fourier division `conj(I) / (|I|^2 + reg)`, clamped at zero.
    pub fn wiener_plane(&self, plane: &[f64], reg: f64) -> Vec<f64> {
        let out = wiener_with(&self.fft, plane, &self.spectrum, reg);
        out.into_iter().map(|v| v.max(0.0)).collect()
    }

    /// Unclamped regularised division, for feasibility checks.
    pub(crate) fn wiener_plane_signed(&self, plane: &[f64], reg: f64) -> Vec<f64> {
        wiener_with(&self.fft, plane, &self.spectrum, reg)
    }

    /// Squared operator norm bound: `max |I(w)|^2`.
    pub fn lipschitz(&self) -> f64 {
        self.spectrum.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
    }
}

fn wiener_with(fft: &PaddedFft, plane: &[f64], spectrum: &[Complex64], reg: f64) -> Vec<f64> {
    let mut s = fft.forward_plane(plane);
    s.iter_mut()
        .zip(spectrum)
        .for_each(|(v, k)| *v = *v * k.conj() / (k.norm_sqr() + reg));
    fft.inverse_crop(s)
}

/// Convolves linear radiance with the LSF through the padded Fourier path.
pub fn apply_lsf(img: &RadianceImage, params: &LsfParams) -> Result<RadianceImage> {
    let op = LsfOperator::new(params, img.width(), img.height())?;
    let planes = img.planes().map(|p| op.apply_plane(p)).collect();
    Ok(RadianceImage::from_planes_clamped(img.width(), img.height(), planes))
}

/// Wiener-regularised deconvolution `conj(K) / (|K|^2 + reg)`, clamped at zero.
pub fn deconvolve_wiener(img: &RadianceImage, k: &Kernel2D, reg: f64) -> Result<RadianceImage> {
    if !(reg > 0.0) {
        return Err(Error::invalid(format!("Wiener regulariser must be > 0, got {reg}")));
    }
    let (w, h) = (img.width(), img.height());
    let fft = PaddedFft::new(w, h);
    let ks = fft.forward_kernel(k);
    let planes = img.planes().map(|p| wiener_with(&fft, p, &ks, reg)).collect();
    Ok(RadianceImage::from_planes_clamped(w, h, planes))
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Objective evaluations per Nelder–Mead run.
    pub max_evals: usize,
    /// Extra runs restarted from the previous optimum with a fresh simplex.
    pub restarts: usize,
    pub log_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_evals: 3000,
            restarts: 3,
            log_floor: LOG_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsfFit {
    pub params: LsfParams,
    pub residual: f64,
    pub initial_residual: f64,
    /// Best residual after every simplex iteration, across all restarts.
    pub history: Vec<f64>,
    pub evals: usize,
}

/// Log-L2 calibration objective for one captured/ground-truth pair.
pub struct LsfObjective {
    fft: PaddedFft,
    input_spectra: Vec<Vec<Complex64>>,
    log_capture: Vec<f64>,
    floor: f64,
    width: usize,
    height: usize,
}

impl LsfObjective {
    pub fn new(l_capt: &RadianceImage, l_in: &RadianceImage, floor: f64) -> Result<Self> {
        l_capt.check_same_shape(l_in)?;
        let (width, height) = (l_in.width(), l_in.height());
        let fft = PaddedFft::new(width, height);
        let input_spectra = l_in.planes().map(|p| fft.forward_plane(p)).collect();
        let log_capture = l_capt.data().iter().map(|v| v.max(floor).ln()).collect();
        Ok(Self {
            fft,
            input_spectra,
            log_capture,
            floor,
            width,
            height,
        })
    }

    /// `|| log(l_in * i) - log(l_capt) ||_2` for the given parameters.
    pub fn residual(&self, p: &LsfParams) -> f64 {
        if p.validate().is_err() {
            return f64::INFINITY;
        }
        let ks = self
            .fft
            .forward_taps(|dx, dy| p.tap(dx, dy), self.width - 1, self.height - 1);
        let n = self.width * self.height;
        let mut ss = 0.0;
        for (c, spec) in self.input_spectra.iter().enumerate() {
            let mut s = spec.clone();
            s.iter_mut().zip(&ks).for_each(|(a, b)| *a *= b);
            let ls = self.fft.inverse_crop(s);
            for (i, v) in ls.iter().enumerate() {
                let d = v.max(self.floor).ln() - self.log_capture[c * n + i];
                ss += d * d;
            }
        }
        ss.sqrt()
    }
}

// Optimiser coordinates: (p1, ln p2, ln p3, ln p4), p1 clamped to (0, P1_MAX].
fn to_coords(p: &LsfParams) -> [f64; 4] {
    [p.p1, p.p2.max(1e-300).ln(), p.p3.ln(), p.p4.ln()]
}

fn from_coords(x: &[f64]) -> LsfParams {
    LsfParams {
        p1: x[0].clamp(1e-9, P1_MAX),
        p2: x[1].exp(),
        p3: x[2].exp(),
        p4: x[3].exp(),
    }
}

/// Fits LSF parameters so that `l_in` convolved with the LSF matches `l_capt`
/// in the log domain.
pub fn fit_lsf(
    l_capt: &RadianceImage,
    l_in: &RadianceImage,
    init: &LsfParams,
    opts: &FitOptions,
) -> Result<LsfFit> {
    let objective = LsfObjective::new(l_capt, l_in, opts.log_floor)?;
    let mut start = *init;
    if start.p2 <= 0.0 {
        start.p2 = 1e-3;
    }
    start
        .validate()
        .map_err(|e| Error::FitInitialization(e.to_string()))?;
    let initial_residual = objective.residual(init);
    let start_residual = objective.residual(&start);
    if !initial_residual.is_finite() || !start_residual.is_finite() {
        return Err(Error::FitInitialization(format!(
            "non-finite residual at {init}"
        )));
    }

    // Outside the p1 box the residual would be flat; the penalty slopes back
    // towards it so the simplex cannot settle on the plateau.
    let f = |x: &[f64]| {
        let excess = (x[0] - P1_MAX).max(0.0) + (1e-9 - x[0]).max(0.0);
        objective.residual(&from_coords(x)) + 10.0 * excess
    };
    let mut x = to_coords(&start).to_vec();
    let mut best = start_residual;
    let mut history = vec![best];
    let mut evals = 0;
    let steps = [
        vec![0.1, 1.0, 0.5, 0.3],
        vec![0.05, 0.3, 0.2, 0.1],
        vec![0.02, 0.1, 0.05, 0.03],
    ];
    for run in 0..=opts.restarts {
        let step = steps[run.min(steps.len() - 1)].clone();
        let nm = NelderMead::new(4).with_step(step).with_max_evals(opts.max_evals);
        let r = nm.minimize(f, &x);
        evals += r.evals;
        for v in r.history {
            history.push(v.min(best));
        }
        if r.fx <= best {
            best = r.fx;
            x = r.x;
        }
    }

    let (mut params, mut residual) = if best <= initial_residual {
        (from_coords(&x), best)
    } else {
        (*init, initial_residual)
    };
    // A scatter term that never leaves the centre tap is just more delta.
    if let Some(folded) = fold_vanishing_scatter(&params) {
        let r = objective.residual(&folded);
        if r <= residual * (1.0 + 1e-9) + 1e-12 {
            params = folded;
            residual = r;
        }
    }
    Ok(LsfFit {
        params,
        residual,
        initial_residual,
        history,
        evals,
    })
}

fn fold_vanishing_scatter(p: &LsfParams) -> Option<LsfParams> {
    if p.p2 == 0.0 {
        return None;
    }
    let nearest = p.p2 * (-p.p3).exp();
    if nearest > 1e-9 * (p.p1 + p.p2) {
        return None;
    }
    Some(LsfParams {
        p1: p.p1 + p.p2,
        p2: 0.0,
        ..*p
    })
}

/// Fits several independent calibration pairs in parallel.
pub fn fit_lsf_batch(
    pairs: &[(RadianceImage, RadianceImage)],
    init: &LsfParams,
    opts: &FitOptions,
) -> Vec<Result<LsfFit>> {
    pairs
        .par_iter()
        .map(|(capt, gt)| fit_lsf(capt, gt, init, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{convolve_fft_padded, convolve_spatial, Boundary};

    fn disk(size: usize, radius: f64, value: f64) -> RadianceImage {
        let c = (size / 2) as f64;
        RadianceImage::from_fn(size, size, 1, |x, y, _| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            if d <= radius { value } else { 0.0 }
        })
        .unwrap()
    }

    #[test]
    fn render_center_and_radial_taps() {
        let p = LsfParams::new(0.9, 0.1, 1.0, 1.0).unwrap();
        let k = render_lsf(&p, 9, 9).unwrap();
        assert!((k.at(0, 0) - 1.0).abs() < 1e-15);
        assert!((k.at(2, 0) - 0.1 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((k.at(2, 0) - 0.013534).abs() < 1e-6);
    }

    #[test]
    fn render_is_radially_symmetric() {
        let p = LsfParams::new(0.8, 0.07, 0.3, 1.3).unwrap();
        let k = render_lsf(&p, 15, 15).unwrap();
        for dy in -7..=7isize {
            for dx in -7..=7isize {
                assert_eq!(k.at(dx, dy), k.at(-dx, -dy));
                assert_eq!(k.at(dx, dy), k.at(dy, dx));
            }
        }
    }

    #[test]
    fn render_pure_delta_and_even_sizes() {
        let k = render_lsf(&LsfParams::identity(), 6, 4).unwrap();
        assert_eq!((k.width(), k.height()), (7, 5));
        assert_eq!(k.sum(), 1.0);
        assert_eq!(k.at(0, 0), 1.0);
    }

    #[test]
    fn render_rejects_bad_decay() {
        let p = LsfParams {
            p1: 1.0,
            p2: 0.1,
            p3: 0.0,
            p4: 1.0,
        };
        assert!(matches!(render_lsf(&p, 5, 5), Err(Error::InvalidArgument(_))));
        let p = LsfParams { p3: 1.0, p4: -1.0, ..p };
        assert!(render_lsf(&p, 5, 5).is_err());
    }

    #[test]
    fn apply_identity_is_noop() {
        let img = disk(16, 3.0, 2.5);
        let out = apply_lsf(&img, &LsfParams::identity()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn apply_equals_rendered_kernel_convolution() {
        let img = RadianceImage::from_fn(12, 10, 1, |x, y, _| ((x * 7 + y * 3) % 5) as f64).unwrap();
        let p = LsfParams::new(0.9, 0.05, 0.4, 1.2).unwrap();
        let k = render_lsf(&p, 2 * 12 - 1, 2 * 10 - 1).unwrap();
        let a = apply_lsf(&img, &p).unwrap();
        let b = convolve_fft_padded(&img, &k);
        let c = convolve_spatial(&img, &k, Boundary::Zero).unwrap();
        for ((x, y), z) in a.data().iter().zip(b.data()).zip(c.data()) {
            assert!((x - y).abs() < 1e-9);
            assert!((x - z).abs() < 1e-9);
        }
    }

    #[test]
    fn single_pixel_halo_follows_profile() {
        let mut img = RadianceImage::zeros(21, 21, 1);
        img.set(10, 10, 0, 1.0);
        let p = LsfParams::new(0.9, 0.05, 0.4, 1.2).unwrap();
        let out = apply_lsf(&img, &p).unwrap();
        for (dx, dy) in [(0isize, 0isize), (1, 0), (3, 4), (0, 7)] {
            let v = out.get((10 + dx) as usize, (10 + dy) as usize, 0);
            assert!((v - p.tap(dx, dy)).abs() < 1e-9, "offset ({dx},{dy})");
        }
    }

    #[test]
    fn apply_is_linear() {
        let img = disk(16, 4.0, 1.0);
        let p = LsfParams::new(0.9, 0.05, 0.4, 1.2).unwrap();
        let a = apply_lsf(&img, &p).unwrap();
        let b = apply_lsf(&img.scaled(2.0), &p).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn wiener_cases() {
        let img = disk(24, 5.0, 0.7);
        let out = deconvolve_wiener(&img, &Kernel2D::delta(3), 1e-8).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let zero = deconvolve_wiener(&RadianceImage::zeros(8, 8, 1), &Kernel2D::uniform(3), 1e-3).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
        assert!(deconvolve_wiener(&img, &Kernel2D::uniform(3), 0.0).is_err());
    }

    #[test]
    fn wiener_round_trip_on_smooth_image() {
        let img = RadianceImage::from_fn(48, 48, 1, |x, y, _| {
            let g = |cx: f64, cy: f64, s: f64| {
                (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * s * s)).exp()
            };
            0.8 * g(20.0, 22.0, 5.0) + 0.5 * g(30.0, 28.0, 4.0)
        })
        .unwrap();
        let taps = (-2..=2isize)
            .flat_map(|dy| (-2..=2isize).map(move |dx| (-((dx * dx + dy * dy) as f64) / 2.0).exp()))
            .collect();
        let k = Kernel2D::project_normalized(5, 5, taps).unwrap();
        let blurred = convolve_fft_padded(&img, &k);
        let back = deconvolve_wiener(&blurred, &k, 1e-3).unwrap();
        let num: f64 = back.data().iter().zip(img.data()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = img.data().iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() <= 0.05, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn params_file_round_trip() {
        let p = LsfParams::new(0.9, 0.05, 0.4, 1.2).unwrap();
        assert_eq!(LsfParams::parse_kv(&p.to_kv_string()).unwrap(), p);
        assert!(LsfParams::parse_kv("p1=1\np2=0\np3=1").is_err());
        assert!(LsfParams::parse_kv("p1=1\np2=0\np3=-1\np4=1").is_err());
        assert!(LsfParams::parse_kv("p1=x\np2=0\np3=1\np4=1").is_err());
    }

    fn calib_pair(p: &LsfParams) -> (RadianceImage, RadianceImage) {
        let gt = disk(48, 2.0, 1e4);
        (apply_lsf(&gt, p).unwrap(), gt)
    }

    #[test]
    fn fit_recovers_synthetic_parameters() {
        let truth = LsfParams::new(0.9, 0.05, 0.4, 1.2).unwrap();
        let (capt, gt) = calib_pair(&truth);
        let init = LsfParams::new(1.0, 0.02, 0.8, 1.0).unwrap();
        let fit = fit_lsf(&capt, &gt, &init, &FitOptions::default()).unwrap();
        for (a, b) in fit.params.as_array().iter().zip(truth.as_array()) {
            assert!(((a - b) / b).abs() < 0.05, "{} vs {}", fit.params, truth);
        }
        assert!(fit.residual <= fit.initial_residual);
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fit_does_not_stall_at_the_p1_bound() {
        // From the default start this set used to drift onto p1 = P1_MAX.
        let truth = LsfParams::new(0.786, 0.0604, 0.362, 1.311).unwrap();
        let (capt, gt) = crate::synth::calibration_pair(65, &truth, 0.0, 107).unwrap();
        let fit = fit_lsf(&capt, &gt, &DEFAULT_FIT_INIT, &FitOptions::default()).unwrap();
        for (a, b) in fit.params.as_array().iter().zip(truth.as_array()) {
            assert!(((a - b) / b).abs() < 0.05, "{} vs {}", fit.params, truth);
        }
    }

    #[test]
    fn fit_of_identical_pair_tends_to_delta() {
        let gt = disk(32, 2.0, 1e4);
        let init = LsfParams::new(0.9, 0.05, 0.4, 1.2).unwrap();
        let fit = fit_lsf(&gt, &gt, &init, &FitOptions::default()).unwrap();
        assert!(fit.params.p2 < 1e-3, "{}", fit.params);
        assert!((fit.params.p1 - 1.0).abs() < 0.01, "{}", fit.params);
    }

    #[test]
    fn fit_from_truth_does_not_regress() {
        let truth = LsfParams::new(0.8, 0.03, 0.6, 1.5).unwrap();
        let (capt, gt) = calib_pair(&truth);
        let fit = fit_lsf(&capt, &gt, &truth, &FitOptions::default()).unwrap();
        assert!(fit.residual <= fit.initial_residual);
    }

    #[test]
    fn fit_rejects_non_finite_start() {
        let gt = disk(16, 2.0, 1e4);
        let bad = LsfParams {
            p1: f64::NAN,
            p2: 0.1,
            p3: 1.0,
            p4: 1.0,
        };
        assert!(matches!(
            fit_lsf(&gt, &gt, &bad, &FitOptions::default()),
            Err(Error::FitInitialization(_))
        ));
    }
}
