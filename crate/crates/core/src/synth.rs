//! Synthetic scenes and the forward degradation
//! `clip(B * (I * (e X)) + n)` used to test everything upstream.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{convolve_spatial, Boundary, ClippedImage, Kernel2D, RadianceImage};
use crate::io::{write_pfm, write_png, DEFAULT_GAMMA};
use crate::kv::{parse_list, parse_num, parse_pairs};
use crate::lsf::{apply_lsf, LsfParams};

/// Radiance below which a pixel counts as dark.
pub const DARK_LEVEL: f64 = 0.02;
/// Minimum fraction of dark pixels in every rendered scene.
pub const MIN_DARK_FRACTION: f64 = 0.01;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;
/// Exposure multipliers of the sweep, each step doubling the last.
pub const EXPOSURE_LADDER: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const MAX_BLUR_FRAMES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub radiance: f64,
    /// Width of the darkened ring around the disk (0 for none).
    pub surround: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    /// Upper radiance of the texture.
    pub level: f64,
    pub shapes: usize,
    pub strokes: usize,
    /// Fraction of pixels forced to zero radiance.
    pub speckle_fraction: f64,
    /// Multiplier applied to the texture inside source surrounds.
    pub surround_level: f64,
}

impl Background {
    /// Texture density of about one shape per 200 pixels and one stroke per 80.
    pub fn for_size(width: usize, height: usize) -> Self {
        let area = width * height;
        Self {
            level: 0.6,
            shapes: area / 200,
            strokes: area / 80,
            speckle_fraction: 0.02,
            surround_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub background: Background,
    pub sources: Vec<Source>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            channels: 3,
            background: Background::for_size(width, height),
            sources: Vec::new(),
            seed,
        }
    }

    pub fn with_source(mut self, x: f64, y: f64, radius: f64, radiance: f64) -> Self {
        self.sources.push(Source {
            x,
            y,
            radius,
            radiance,
            surround: 0.0,
        });
        self
    }

    /// `count` sources with radii 3..=6 and radiance drawn from `radiance`,
    /// kept a margin away from the border and each wrapped in a dark ring.
    pub fn random(width: usize, height: usize, count: usize, radiance: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_50c5);
        let mut spec = Self::new(width, height, seed);
        let margin = (width.min(height) as f64 * 0.2).max(8.0);
        for _ in 0..count {
            let radius = rng.random_range(3..=6) as f64;
            let x = rng.random_range(margin..(width as f64 - margin).max(margin + 1.0));
            let y = rng.random_range(margin..(height as f64 - margin).max(margin + 1.0));
            let r = if radiance.1 > radiance.0 {
                rng.random_range(radiance.0..radiance.1)
            } else {
                radiance.0
            };
            spec.sources.push(Source {
                x,
                y,
                radius,
                radiance: r,
                surround: 3.0 * radius,
            });
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene must be non-empty"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        let b = &self.background;
        if !(b.level >= 0.0 && b.level < 1.0) || !(0.0..=0.5).contains(&b.speckle_fraction) {
            return Err(Error::invalid("background level must be in [0, 1) and speckles in [0, 0.5]"));
        }
        for s in &self.sources {
            if !(s.radiance >= 1.0) || !(s.radius >= 0.0) || !(s.surround >= 0.0) {
                return Err(Error::invalid(format!("bad source {s:?}")));
            }
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let b = &self.background;
        let mut s = String::new();
        let _ = writeln!(s, "width = {}\nheight = {}\nchannels = {}\nseed = {}", self.width, self.height, self.channels, self.seed);
        let _ = writeln!(
            s,
            "level = {}\nshapes = {}\nstrokes = {}\nspeckle_fraction = {}\nsurround_level = {}",
            b.level, b.shapes, b.strokes, b.speckle_fraction, b.surround_level
        );
        for src in &self.sources {
            let _ = writeln!(s, "source = {},{},{},{},{}", src.x, src.y, src.radius, src.radiance, src.surround);
        }
        s
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        const WHAT: &str = "scene spec";
        let mut spec = Self::new(0, 0, 0);
        for (k, v) in parse_pairs(text, WHAT)? {
            let b = &mut spec.background;
            match k.as_str() {
                "width" => spec.width = parse_num(&k, &v, WHAT)?,
                "height" => spec.height = parse_num(&k, &v, WHAT)?,
                "channels" => spec.channels = parse_num(&k, &v, WHAT)?,
                "seed" => spec.seed = parse_num(&k, &v, WHAT)?,
                "level" => b.level = parse_num(&k, &v, WHAT)?,
                "shapes" => b.shapes = parse_num(&k, &v, WHAT)?,
                "strokes" => b.strokes = parse_num(&k, &v, WHAT)?,
                "speckle_fraction" => b.speckle_fraction = parse_num(&k, &v, WHAT)?,
                "surround_level" => b.surround_level = parse_num(&k, &v, WHAT)?,
                "source" => {
                    let f = parse_list(&k, &v, WHAT)?;
                    if f.len() != 4 && f.len() != 5 {
                        return Err(Error::format(WHAT, "source needs x,y,radius,radiance[,surround]"));
                    }
                    spec.sources.push(Source {
                        x: f[0],
                        y: f[1],
                        radius: f[2],
                        radiance: f[3],
                        surround: f.get(4).copied().unwrap_or(0.0),
                    });
                }
                _ => return Err(Error::format(WHAT, format!("unknown key {k}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn in_disk(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> bool {
    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
    dx * dx + dy * dy <= r * r
}

/// Renders the scene; deterministic in the seed.
pub fn render_scene(spec: &SceneSpec) -> Result<RadianceImage> {
    spec.validate()?;
    let (w, h, ch) = (spec.width, spec.height, spec.channels);
    let n = w * h;
    let bg = &spec.background;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut planes = vec![vec![0.0; n]; ch];

    // smooth gradient
    for plane in planes.iter_mut() {
        let base = bg.level * rng.random_range(0.1..0.4);
        let gx = bg.level * rng.random_range(-0.2..0.2);
        let gy = bg.level * rng.random_range(-0.2..0.2);
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = base + gx * x as f64 / w as f64 + gy * y as f64 / h as f64;
            }
        }
    }
    // rectangles and ellipses
    for _ in 0..bg.shapes {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let rx = rng.random_range(2.0..(w as f64 / 6.0).max(3.0));
        let ry = rng.random_range(2.0..(h as f64 / 6.0).max(3.0));
        let ellipse = rng.random_bool(0.5);
        let color: Vec<f64> = (0..ch).map(|_| bg.level * rng.random_range(0.0..1.0)).collect();
        let (x0, x1) = ((cx - rx).max(0.0) as usize, ((cx + rx) as usize).min(w - 1));
        let (y0, y1) = ((cy - ry).max(0.0) as usize, ((cy + ry) as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if !ellipse || dx * dx + dy * dy <= 1.0 {
                    for (p, c) in planes.iter_mut().zip(&color) {
                        p[y * w + x] = *c;
                    }
                }
            }
        }
    }
    // thin strokes, like handwriting or text
    for _ in 0..bg.strokes {
        let (mut x, mut y) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(6.0..24.0);
        let v = if rng.random_bool(0.5) { 0.0 } else { bg.level * rng.random_range(0.5..1.0) };
        for _ in 0..len as usize {
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                let i = y as usize * w + x as usize;
                planes.iter_mut().for_each(|p| p[i] = v);
            }
            x += angle.cos();
            y += angle.sin();
        }
    }
    // dark surrounds
    for s in spec.sources.iter().filter(|s| s.surround > 0.0) {
        let outer = s.radius + s.surround;
        for y in 0..h {
            for x in 0..w {
                if in_disk(x, y, s.x, s.y, outer) {
                    planes.iter_mut().for_each(|p| p[y * w + x] *= bg.surround_level);
                }
            }
        }
    }
    // zero-radiance speckles
    let speckles = (bg.speckle_fraction * n as f64).round() as usize;
    for _ in 0..speckles {
        let i = rng.random_range(0..n);
        planes.iter_mut().for_each(|p| p[i] = 0.0);
    }
    // sources last so their pixels hold the exact radiance
    for s in &spec.sources {
        for y in 0..h {
            for x in 0..w {
                if in_disk(x, y, s.x, s.y, s.radius) {
                    planes.iter_mut().for_each(|p| p[y * w + x] = s.radiance);
                }
            }
        }
    }
    let source_px = |i: usize| spec.sources.iter().any(|s| in_disk(i % w, i / w, s.x, s.y, s.radius));
    let is_dark = |planes: &[Vec<f64>], i: usize| planes.iter().all(|p| p[i] < DARK_LEVEL);
    let need = (MIN_DARK_FRACTION * n as f64).ceil() as usize;
    let mut have = (0..n).filter(|&i| is_dark(&planes, i)).count();
    let mut guard = 0;
    while have < need && guard < 100 * n {
        let i = rng.random_range(0..n);
        if !is_dark(&planes, i) && !source_px(i) {
            planes.iter_mut().for_each(|p| p[i] = 0.0);
            have += 1;
        }
        guard += 1;
    }
    for p in planes.iter_mut() {
        p.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let data = planes.concat();
    RadianceImage::new(w, h, ch, data)
}

/// Fraction of pixels whose every channel is below [`DARK_LEVEL`].
pub fn dark_fraction(img: &RadianceImage) -> f64 {
    let max = img.max_plane();
    max.iter().filter(|v| **v < DARK_LEVEL).count() as f64 / max.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeSpec {
    pub lsf: LsfParams,
    pub blur: Kernel2D,
    pub noise_sigma: f64,
    pub exposure: f64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            lsf: LsfParams::identity(),
            blur: Kernel2D::delta(1),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            exposure: 1.0,
        }
    }
}

impl DegradeSpec {
    pub fn with_frames(mut self, k: usize) -> Result<Self> {
        self.blur = blur_ladder(k)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.lsf.validate()?;
        if !(self.exposure > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("exposure must be > 0 and noise sigma >= 0"));
        }
        Ok(())
    }

    /// Key-value form; a blur given as `frames = k` maps through [`blur_ladder`].
    pub fn to_kv_string(&self) -> String {
        let l = &self.lsf;
        let taps: Vec<String> = self.blur.taps().iter().map(|t| t.to_string()).collect();
        format!(
            "p1 = {}\np2 = {}\np3 = {}\np4 = {}\nnoise_sigma = {}\nexposure = {}\nblur_size = {},{}\nblur_taps = {}\n",
            l.p1,
            l.p2,
            l.p3,
            l.p4,
            self.noise_sigma,
            self.exposure,
            self.blur.width(),
            self.blur.height(),
            taps.join(",")
        )
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        const WHAT: &str = "degradation spec";
        let mut spec = Self::default();
        let mut lsf = spec.lsf.as_array();
        let mut size: Option<(usize, usize)> = None;
        let mut taps: Option<Vec<f64>> = None;
        for (k, v) in parse_pairs(text, WHAT)? {
            match k.as_str() {
                "p1" => lsf[0] = parse_num(&k, &v, WHAT)?,
                "p2" => lsf[1] = parse_num(&k, &v, WHAT)?,
                "p3" => lsf[2] = parse_num(&k, &v, WHAT)?,
                "p4" => lsf[3] = parse_num(&k, &v, WHAT)?,
                "noise_sigma" => spec.noise_sigma = parse_num(&k, &v, WHAT)?,
                "exposure" => spec.exposure = parse_num(&k, &v, WHAT)?,
                "frames" => spec.blur = blur_ladder(parse_num(&k, &v, WHAT)?)?,
                "blur_size" => {
                    let f = parse_list(&k, &v, WHAT)?;
                    if f.len() != 2 {
                        return Err(Error::format(WHAT, "blur_size needs width,height"));
                    }
                    size = Some((f[0] as usize, f[1] as usize));
                }
                "blur_taps" => taps = Some(parse_list(&k, &v, WHAT)?),
                _ => return Err(Error::format(WHAT, format!("unknown key {k}"))),
            }
        }
        match (size, taps) {
            (Some((w, h)), Some(t)) => spec.blur = Kernel2D::new_rect(w, h, t)?,
            (None, None) => {}
            _ => return Err(Error::format(WHAT, "blur_size and blur_taps go together")),
        }
        spec.lsf = LsfParams::new(lsf[0], lsf[1], lsf[2], lsf[3])?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Horizontal box of `2k - 1` taps standing in for `k` merged frames.
pub fn blur_ladder(k_frames: usize) -> Result<Kernel2D> {
    if !(1..=MAX_BLUR_FRAMES).contains(&k_frames) {
        return Err(Error::invalid(format!("frames must be in 1..={MAX_BLUR_FRAMES}, got {k_frames}")));
    }
    let len = 2 * k_frames - 1;
    Kernel2D::new_rect(len, 1, vec![1.0 / len as f64; len])
}

/// Exposure, scatter, motion blur (replicated borders), noise, clipping.
pub fn degrade(x: &RadianceImage, spec: &DegradeSpec, seed: u64) -> Result<ClippedImage> {
    spec.validate()?;
    let scattered = apply_lsf(&x.scaled(spec.exposure), &spec.lsf)?;
    let blurred = if spec.blur.width() == 1 && spec.blur.height() == 1 {
        scattered
    } else {
        convolve_spatial(&scattered, &spec.blur, Boundary::Replicate)?
    };
    let mut data = blurred.into_data();
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    ClippedImage::from_data(x.width(), x.height(), x.channels(), data)
}

/// Noise-free, blur-free reference `clip(I * (e X))`: what a perfect
/// deblurrer returns at that exposure.
pub fn sharp_reference(x: &RadianceImage, lsf: &LsfParams, exposure: f64) -> Result<ClippedImage> {
    let spec = DegradeSpec {
        lsf: *lsf,
        noise_sigma: 0.0,
        exposure,
        ..DegradeSpec::default()
    };
    degrade(x, &spec, 0)
}

/// Writes `<stem>.pfm` (linear radiance) and `<stem>.png` (display) into `dir`.
pub fn save_pair(dir: impl AsRef<Path>, stem: &str, img: &RadianceImage) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pfm(dir.join(format!("{stem}.pfm")), img)?;
    write_png(dir.join(format!("{stem}.png")), &img.clamp_unit().into_radiance(), DEFAULT_GAMMA)
}

/// Radius and radiance of the point-like calibration target.
pub const CALIB_RADIUS: f64 = 2.0;
pub const CALIB_RADIANCE: f64 = 1e4;

/// Scatter model used by the benchmark scenes: a long, faint tail.
pub const BENCH_LSF: LsfParams = LsfParams {
    p1: 0.9,
    p2: 0.005,
    p3: 0.3,
    p4: 1.0,
};

/// Black single-channel field with one centred disk.
pub fn calibration_target(size: usize) -> Result<RadianceImage> {
    let c = (size / 2) as f64;
    RadianceImage::from_fn(size, size, 1, |x, y, _| {
        if in_disk(x, y, c, c, CALIB_RADIUS) {
            CALIB_RADIANCE
        } else {
            0.0
        }
    })
}

/// `(capture, target)` for LSF calibration. The capture is the target seen
/// through `lsf`, with multiplicative Gaussian noise of relative std
/// `rel_noise` (unclipped, as from an HDR merge).
pub fn calibration_pair(size: usize, lsf: &LsfParams, rel_noise: f64, seed: u64) -> Result<(RadianceImage, RadianceImage)> {
    if !(rel_noise >= 0.0) {
        return Err(Error::invalid(format!("relative noise must be >= 0, got {rel_noise}")));
    }
    let target = calibration_target(size)?;
    let capture = apply_lsf(&target, lsf)?;
    if rel_noise == 0.0 {
        return Ok((capture, target));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, rel_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut data = capture.into_data();
    data.iter_mut().for_each(|v| *v = (*v * (1.0 + normal.sample(&mut rng))).max(0.0));
    Ok((RadianceImage::new(size, size, 1, data)?, target))
}
