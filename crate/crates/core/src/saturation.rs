//! Recovery of the radiance hidden behind clipped pixels.
//!
//! Scattered light from a saturated source lands on nearby dark pixels. With
//! the light spread function `I` known, the radiance of the source `X_s` is the
//! value whose scatter best explains what the dark pixels `D` record:
//!
//! ```text
//! min  1/2 |Y(D) - (I*X_s)(D) - (I*X_up)(D)|^2 + lambda |(I*X_up)(D)|_1
//! s.t. X_s >= Y on the mask, X_up >= 0,
//!      Y_u - I*X_s >= 0 on unsaturated pixels,
//!      (I*X_s + Y_u) / I >= 0 (regularised division)
//! ```
//!
//! `X_up` is the unsaturated radiance of the selected patches; the sparsity
//! term keeps it from soaking up the scatter. Because `X_up >= 0`, the l1 term
//! is linear and the whole problem is convex. It is solved per channel by
//! projected gradient descent in the metric of a separable quadratic majoriser,
//! with backtracking that also rejects steps leaving the feasible set.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ClippedImage, RadianceImage};
use crate::lsf::{LsfOperator, LsfParams};

/// Slack allowed on every constraint family.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// Dilation radius used to build the unsaturated support when none is given.
pub const DEFAULT_REGION_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SatSolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step: f64,
    /// Relative objective decrease below which the solver stops.
    pub tol: f64,
    pub wiener_reg: f64,
    /// Sensor noise standard deviation. The scatter budget tolerates
    /// [`NOISE_ALLOWANCE`] times this much; estimated from the image if unset.
    pub noise_sigma: Option<f64>,
}

/// Noise standard deviations by which predicted scatter may exceed the
/// observation before a step is rejected.
pub const NOISE_ALLOWANCE: f64 = 4.0;

/// Fraction of the scatter budget within which a pixel counts as an active
/// constraint.
const ACTIVE_FRACTION: f64 = 0.05;

impl Default for SatSolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iters: 300,
            step: 1.0,
            tol: 1e-5,
            wiener_reg: 1e-3,
            noise_sigma: None,
        }
    }
}

impl SatSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) || !(self.step > 0.0) || !(self.wiener_reg > 0.0) {
            return Err(Error::invalid("tol, step and wiener_reg must be > 0"));
        }
        if let Some(n) = self.noise_sigma {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(Error::invalid(format!("noise sigma must be >= 0, got {n}")));
            }
        }
        Ok(())
    }
}

/// Largest constraint violation per family at the returned point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Feasibility {
    pub bounds: f64,
    pub scatter_budget: f64,
    pub fourier: f64,
}

impl Feasibility {
    pub fn max(&self) -> f64 {
        self.bounds.max(self.scatter_budget).max(self.fourier)
    }
}

#[derive(Debug, Clone)]
pub struct SaturationEstimate {
    width: usize,
    height: usize,
    pub mask: BinaryMask,
    pub region: BinaryMask,
    pub dark: BinaryMask,
    /// Per channel, one value per mask pixel in scan order.
    pub x_s: Vec<Vec<f64>>,
    /// Per channel, one value per region pixel in scan order.
    pub x_up: Vec<Vec<f64>>,
    /// Objective summed over channels, one entry per iteration.
    pub residual_history: Vec<f64>,
    pub channel_history: Vec<Vec<f64>>,
    /// `|(I*X_up)(D)|_1` per channel at the solution.
    pub sparsity: Vec<f64>,
    /// Violation beyond what the starting point already had.
    pub feasibility: Feasibility,
}

impl SaturationEstimate {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.x_s.len()
    }

    pub fn iterations(&self) -> usize {
        self.residual_history.len().saturating_sub(1)
    }

    /// Mean recovered radiance over mask pixels and channels.
    pub fn mean_x_s(&self) -> Option<f64> {
        let n: usize = self.x_s.iter().map(Vec::len).sum();
        (n > 0).then(|| self.x_s.iter().flatten().sum::<f64>() / n as f64)
    }

    /// Full-frame plane holding `X_s` on the mask and zero elsewhere.
    pub fn x_s_plane(&self, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        for (i, v) in self.mask.indices().zip(&self.x_s[c]) {
            out[i] = *v;
        }
        out
    }

    pub fn write_history_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,objective")?;
        for (i, v) in self.residual_history.iter().enumerate() {
            writeln!(out, "{i},{v:e}")?;
        }
        Ok(())
    }

    pub fn write_history_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_history_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Estimates `X_s` with the unsaturated support taken as the dark pixels
/// dilated by [`DEFAULT_REGION_RADIUS`].
pub fn estimate_saturation(
    y: &ClippedImage,
    sat_mask: &BinaryMask,
    dark: &BinaryMask,
    lsf: &LsfParams,
    cfg: &SatSolverConfig,
) -> Result<SaturationEstimate> {
    let region = dark.dilate(DEFAULT_REGION_RADIUS);
    estimate_saturation_in(y, sat_mask, dark, &region, lsf, cfg)
}

/// As [`estimate_saturation`] with an explicit support for `X_up`, normally
/// the union of the selected patches. Mask pixels are removed from it and
/// dark pixels added.
pub fn estimate_saturation_in(
    y: &ClippedImage,
    sat_mask: &BinaryMask,
    dark: &BinaryMask,
    region: &BinaryMask,
    lsf: &LsfParams,
    cfg: &SatSolverConfig,
) -> Result<SaturationEstimate> {
    cfg.validate()?;
    let img = y.as_radiance();
    let (w, h) = (img.width(), img.height());
    for m in [sat_mask, dark, region] {
        if !m.matches(img) {
            return Err(Error::DimensionMismatch {
                expected: format!("{w}x{h}"),
                actual: format!("{}x{}", m.width(), m.height()),
            });
        }
    }
    if dark.is_empty() {
        return Err(Error::SaturationUnavailable("no dark pixels"));
    }
    if dark.intersects(sat_mask) {
        return Err(Error::invalid("dark pixels overlap the saturation mask"));
    }
    let region = BinaryMask::from_fn(w, h, |x, yy| {
        !sat_mask.get(x, yy) && (region.get(x, yy) || dark.get(x, yy))
    });
    let op = LsfOperator::new(lsf, w, h)?;
    let problem = Problem::new(&op, sat_mask, dark, &region, cfg);

    let mut x_s = Vec::new();
    let mut x_up = Vec::new();
    let mut histories = Vec::new();
    let mut sparsity = Vec::new();
    let mut feas = Feasibility::default();
    for c in 0..img.channels() {
        let sol = problem.solve(img.plane(c));
        feas.bounds = feas.bounds.max(sol.feasibility.bounds);
        feas.scatter_budget = feas.scatter_budget.max(sol.feasibility.scatter_budget);
        feas.fourier = feas.fourier.max(sol.feasibility.fourier);
        sparsity.push(sol.sparsity);
        histories.push(sol.history);
        x_s.push(sol.s);
        x_up.push(sol.u);
    }
    let len = histories.iter().map(Vec::len).max().unwrap_or(0);
    let residual_history = (0..len)
        .map(|i| histories.iter().map(|hst| hst[i.min(hst.len() - 1)]).sum())
        .collect();
    Ok(SaturationEstimate {
        width: w,
        height: h,
        mask: sat_mask.clone(),
        region,
        dark: dark.clone(),
        x_s,
        x_up,
        residual_history,
        channel_history: histories,
        sparsity,
        feasibility: feas,
    })
}

/// Writes the recovered radiance into the mask; every other pixel is copied.
pub fn replace_saturated_pixels(y: &ClippedImage, est: &SaturationEstimate) -> Result<RadianceImage> {
    let img = y.as_radiance();
    if img.width() != est.width || img.height() != est.height || img.channels() != est.channels() {
        return Err(Error::DimensionMismatch {
            expected: img.shape_string(),
            actual: format!("{}x{}x{}", est.width, est.height, est.channels()),
        });
    }
    let mut data = img.data().to_vec();
    let n = img.pixel_count();
    for c in 0..img.channels() {
        for (i, v) in est.mask.indices().zip(&est.x_s[c]) {
            data[c * n + i] = *v;
        }
    }
    RadianceImage::new(img.width(), img.height(), img.channels(), data)
}

/// Robust noise level of one plane: the median absolute horizontal
/// difference between neighbouring unclipped pixels, scaled to a Gaussian
/// standard deviation.
pub fn estimate_noise_sigma(plane: &[f64], width: usize) -> f64 {
    let unclipped = |v: f64| v > 0.0 && v < 1.0;
    let mut diffs: Vec<f64> = plane
        .chunks(width)
        .flat_map(|row| row.windows(2))
        .filter(|p| unclipped(p[0]) && unclipped(p[1]))
        .map(|p| (p[1] - p[0]).abs())
        .collect();
    if diffs.is_empty() {
        return 0.0;
    }
    let mid = diffs.len() / 2;
    let (_, median, _) = diffs.select_nth_unstable_by(mid, f64::total_cmp);
    1.4826 * *median / std::f64::consts::SQRT_2
}

struct ChannelSolution {
    s: Vec<f64>,
    u: Vec<f64>,
    history: Vec<f64>,
    sparsity: f64,
    feasibility: Feasibility,
}

struct Problem<'a> {
    op: &'a LsfOperator,
    cfg: &'a SatSolverConfig,
    n: usize,
    mask_idx: Vec<usize>,
    region_idx: Vec<usize>,
    dark_idx: Vec<usize>,
    /// Unsaturated pixels, where the scatter budget is checked.
    unsat_idx: Vec<usize>,
    /// `I^T 1_D`: weight of each variable in the l1 term.
    l1_weight: Vec<f64>,
    /// Separable majoriser curvature per pixel.
    curvature: Vec<f64>,
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    conv_s: Vec<f64>,
    conv_u: Vec<f64>,
    f: f64,
}

impl<'a> Problem<'a> {
    fn new(
        op: &'a LsfOperator,
        mask: &BinaryMask,
        dark: &BinaryMask,
        region: &BinaryMask,
        cfg: &'a SatSolverConfig,
    ) -> Self {
        let n = mask.width() * mask.height();
        let mut dark_plane = vec![0.0; n];
        dark.indices().for_each(|i| dark_plane[i] = 1.0);
        let l1_weight = op.adjoint_plane(&dark_plane);

        // Curvature of the separable majoriser A^T(1_D . A g) / g. The mask
        // variables get a larger weight g so that their collective reach at D
        // is on the same footing as the direct term of the dark pixels.
        let mut mask_plane = vec![0.0; n];
        mask.indices().for_each(|i| mask_plane[i] = 1.0);
        let reach = op.apply_plane(&mask_plane);
        let mean_reach = dark.indices().map(|d| reach[d]).sum::<f64>() / dark.count().max(1) as f64;
        let mask_weight = if mean_reach > 0.0 {
            (op.params().p1 / mean_reach).clamp(1.0, 1e6)
        } else {
            1.0
        };
        let mut gamma = vec![0.0; n];
        region.indices().for_each(|i| gamma[i] = 1.0);
        mask.indices().for_each(|i| gamma[i] = mask_weight);
        let spread = op.apply_plane(&gamma);
        let weighted: Vec<f64> = spread.iter().zip(&dark_plane).map(|(r, d)| r * d).collect();
        let mut curvature: Vec<f64> = op
            .adjoint_plane(&weighted)
            .into_iter()
            .zip(&gamma)
            .map(|(c, g)| if *g > 0.0 { c / g } else { c })
            .collect();
        let peak = curvature.iter().copied().fold(0.0, f64::max);
        let floor = (peak * 1e-10).max(f64::MIN_POSITIVE);
        curvature.iter_mut().for_each(|c| *c = c.max(floor));

        Self {
            op,
            cfg,
            n,
            mask_idx: mask.indices().collect(),
            region_idx: region.indices().collect(),
            dark_idx: dark.indices().collect(),
            unsat_idx: (0..n).filter(|i| !mask.bits()[*i]).collect(),
            l1_weight,
            curvature,
        }
    }

    fn pixel(&self, k: usize) -> usize {
        if k < self.mask_idx.len() {
            self.mask_idx[k]
        } else {
            self.region_idx[k - self.mask_idx.len()]
        }
    }

    fn split_planes(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.mask_idx.len();
        let mut s = vec![0.0; self.n];
        let mut u = vec![0.0; self.n];
        self.mask_idx.iter().zip(&x[..m]).for_each(|(i, v)| s[*i] = *v);
        self.region_idx.iter().zip(&x[m..]).for_each(|(i, v)| u[*i] = *v);
        (s, u)
    }

    fn evaluate(&self, y: &[f64], x: Vec<f64>) -> State {
        let (s, u) = self.split_planes(&x);
        let conv_s = self.op.apply_plane(&s);
        let conv_u = self.op.apply_plane(&u);
        let f = self.objective(y, &conv_s, &conv_u);
        State { x, conv_s, conv_u, f }
    }

    fn objective(&self, y: &[f64], conv_s: &[f64], conv_u: &[f64]) -> f64 {
        let mut data = 0.0;
        let mut l1 = 0.0;
        for &d in &self.dark_idx {
            let r = y[d] - conv_s[d] - conv_u[d];
            data += r * r;
            l1 += conv_u[d].abs();
        }
        0.5 * data + self.cfg.lambda * l1
    }

    fn gradient(&self, y: &[f64], st: &State) -> Vec<f64> {
        let mut resid = vec![0.0; self.n];
        for &d in &self.dark_idx {
            resid[d] = y[d] - st.conv_s[d] - st.conv_u[d];
        }
        let back = self.op.adjoint_plane(&resid);
        let m = self.mask_idx.len();
        (0..st.x.len())
            .map(|k| {
                let p = self.pixel(k);
                let g = -back[p];
                if k < m { g } else { g + self.cfg.lambda * self.l1_weight[p] }
            })
            .collect()
    }

    /// Largest `(I*X_s) - Y` over unsaturated pixels.
    fn scatter_violation(&self, y: &[f64], conv_s: &[f64]) -> f64 {
        self.unsat_idx
            .iter()
            .map(|&i| conv_s[i] - y[i])
            .fold(0.0, f64::max)
    }

    /// Mask variables that may not grow this iteration. A pixel whose
    /// scatter is within [`ACTIVE_FRACTION`] of the budget is treated as an
    /// active constraint: the growing variables that dominate its increase are
    /// frozen until the step no longer raises it. Without this a bright halo
    /// at the edge of the mask blocks every step, including those that only
    /// need to brighten the core.
    fn freeze_for_active(
        &self,
        y: &[f64],
        state: &State,
        budget: f64,
        step: impl Fn(&[bool]) -> Vec<f64>,
    ) -> Vec<bool> {
        let m = self.mask_idx.len();
        let mut frozen = vec![false; m];
        let limit = budget * (1.0 - ACTIVE_FRACTION);
        let active: Vec<usize> = self
            .unsat_idx
            .iter()
            .copied()
            .filter(|&i| state.conv_s[i] - y[i] >= limit)
            .collect();
        if active.is_empty() {
            return frozen;
        }
        let w = self.op.frame().0 as isize;
        let lsf = self.op.params();
        let coords: Vec<(isize, isize)> = self
            .mask_idx
            .iter()
            .map(|&p| (p as isize % w, p as isize / w))
            .collect();
        for _ in 0..=m {
            let cand = step(&frozen);
            let mut changed = false;
            for &a in &active {
                let (ax, ay) = (a as isize % w, a as isize / w);
                let contrib: Vec<(usize, f64)> = (0..m)
                    .map(|k| {
                        let d = cand[k] - state.x[k];
                        (k, lsf.tap(ax - coords[k].0, ay - coords[k].1) * d)
                    })
                    .collect();
                if contrib.iter().map(|c| c.1).sum::<f64>() <= 0.0 {
                    continue;
                }
                let peak = contrib.iter().map(|c| c.1).fold(0.0, f64::max);
                for (k, c) in contrib {
                    if c > 0.0 && c >= 0.5 * peak && !frozen[k] {
                        frozen[k] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        frozen
    }

    /// Largest negative part of the regularised division of `I*X_s + Y_u`.
    fn fourier_violation(&self, y_u: &[f64], conv_s: &[f64]) -> f64 {
        let num: Vec<f64> = conv_s.iter().zip(y_u).map(|(a, b)| a + b).collect();
        self.op
            .wiener_plane_signed(&num, self.cfg.wiener_reg)
            .into_iter()
            .fold(0.0, |acc, v| acc.max(-v))
    }

    fn solve(&self, y: &[f64]) -> ChannelSolution {
        let m = self.mask_idx.len();
        let p1 = self.op.params().p1;
        let lower: Vec<f64> = (0..m + self.region_idx.len())
            .map(|k| if k < m { y[self.pixel(k)] } else { 0.0 })
            .collect();

        // Unsaturated observation and its deconvolution.
        let mut y_u = y.to_vec();
        self.mask_idx.iter().for_each(|i| y_u[*i] = 0.0);
        let x_tilde = self.op.wiener_plane(&y_u, self.cfg.wiener_reg);

        let mut x0: Vec<f64> = lower.clone();
        for k in 0..m {
            x0[k] = (lower[k] / p1).max(lower[k]);
        }
        let dark_set: std::collections::HashSet<usize> = self.dark_idx.iter().copied().collect();
        for k in m..x0.len() {
            let p = self.pixel(k);
            x0[k] = if dark_set.contains(&p) { 0.0 } else { x_tilde[p] };
        }

        let floor_state = self.evaluate(y, lower.clone());
        let mut state = self.evaluate(y, x0);
        let sigma = self
            .cfg
            .noise_sigma
            .unwrap_or_else(|| estimate_noise_sigma(y, self.op.frame().0));
        let mut budget_b = self.scatter_violation(y, &floor_state.conv_s) + NOISE_ALLOWANCE * sigma;
        let mut budget_c = self.fourier_violation(&y_u, &floor_state.conv_s);
        let vb = self.scatter_violation(y, &state.conv_s);
        let vc = self.fourier_violation(&y_u, &state.conv_s);
        if vb > budget_b + FEASIBILITY_SLACK || vc > budget_c + FEASIBILITY_SLACK {
            // the unclipping guess is already infeasible; start at the floor
            let mut x = state.x.clone();
            x[..m].copy_from_slice(&lower[..m]);
            state = self.evaluate(y, x);
        }
        budget_b = budget_b.max(self.scatter_violation(y, &state.conv_s));
        budget_c = budget_c.max(self.fourier_violation(&y_u, &state.conv_s));

        let mut history = vec![state.f];
        for _ in 0..self.cfg.max_iters {
            if state.f <= 0.0 {
                break;
            }
            let g = self.gradient(y, &state);
            let mut t = self.cfg.step;
            let mut accepted = None;
            let step = |t: f64, frozen: &[bool]| -> Vec<f64> {
                state
                    .x
                    .iter()
                    .zip(&g)
                    .enumerate()
                    .map(|(k, (v, gk))| {
                        let next = (v - t * gk / self.curvature[self.pixel(k)]).max(lower[k]);
                        if k < m && frozen[k] { next.min(*v) } else { next }
                    })
                    .collect()
            };
            let frozen = self.freeze_for_active(y, &state, budget_b, |fr| step(t, fr));
            for _ in 0..40 {
                let cand = step(t, &frozen);
                let moved: f64 = cand
                    .iter()
                    .zip(&state.x)
                    .zip(&g)
                    .enumerate()
                    .map(|(k, ((a, b), gk))| {
                        let d = a - b;
                        gk * d + 0.5 * self.curvature[self.pixel(k)] * d * d / t
                    })
                    .sum();
                if moved >= 0.0 {
                    break;
                }
                let next = self.evaluate(y, cand);
                let feasible = self.scatter_violation(y, &next.conv_s) <= budget_b + FEASIBILITY_SLACK
                    && self.fourier_violation(&y_u, &next.conv_s) <= budget_c + FEASIBILITY_SLACK;
                if feasible && next.f <= state.f + moved + 1e-15 * state.f.abs() {
                    accepted = Some(next);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else { break };
            let decrease = state.f - next.f;
            state = next;
            history.push(state.f);
            if decrease <= self.cfg.tol * history[history.len() - 2].abs() {
                break;
            }
        }

        let feasibility = Feasibility {
            bounds: state
                .x
                .iter()
                .zip(&lower)
                .map(|(v, lo)| lo - v)
                .fold(0.0, f64::max),
            scatter_budget: (self.scatter_violation(y, &state.conv_s) - budget_b).max(0.0),
            fourier: (self.fourier_violation(&y_u, &state.conv_s) - budget_c).max(0.0),
        };
        let sparsity = self.dark_idx.iter().map(|&d| state.conv_u[d].abs()).sum();
        let mut x = state.x;
        let u = x.split_off(m);
        ChannelSolution {
            s: x,
            u,
            history,
            sparsity,
            feasibility,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsf::apply_lsf;

    fn disk_scene(size: usize, radiance: f64, background: f64) -> (RadianceImage, BinaryMask) {
        let c = size as f64 / 2.0;
        let truth = RadianceImage::from_fn(size, size, 1, |x, y, _| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            if d <= 4.0 { radiance } else { background }
        })
        .unwrap();
        let disk = BinaryMask::from_fn(size, size, |x, y| {
            ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() <= 4.0
        });
        (truth, disk)
    }

    fn ring_dark(size: usize, inner: f64, outer: f64) -> BinaryMask {
        let c = size as f64 / 2.0;
        BinaryMask::from_fn(size, size, |x, y| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            d >= inner && d <= outer && (x + y) % 3 == 0
        })
    }

    fn lsf() -> LsfParams {
        LsfParams::new(0.9, 0.004, 0.25, 1.0).unwrap()
    }

    #[test]
    fn recovers_disk_radiance() {
        let (truth, _) = disk_scene(64, 8.0, 0.0);
        let observed = apply_lsf(&truth, &lsf()).unwrap().clamp_unit();
        let mask = crate::patch::saturation_mask(&observed, 0.98);
        let dark = ring_dark(64, 7.0, 20.0);
        let est = estimate_saturation(&observed, &mask, &dark, &lsf(), &SatSolverConfig::default()).unwrap();
        let mean = est.mean_x_s().unwrap();
        assert!((mean - 8.0).abs() / 8.0 < 0.1, "mean {mean}");
        assert!(est.residual_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(est.feasibility.max() <= FEASIBILITY_SLACK, "{:?}", est.feasibility);
        for v in &est.x_s[0] {
            assert!(*v >= 0.98);
        }
    }

    #[test]
    fn delta_lsf_without_clipping_is_trivial() {
        let img = ClippedImage::from_data(16, 16, 1, vec![0.0; 256]).unwrap();
        let mask = BinaryMask::new(16, 16);
        let dark = BinaryMask::from_fn(16, 16, |x, y| x < 4 && y < 4);
        let est = estimate_saturation(&img, &mask, &dark, &LsfParams::identity(), &SatSolverConfig::default())
            .unwrap();
        assert_eq!(est.residual_history[0], 0.0);
        assert!(est.x_s[0].is_empty());
        assert_eq!(replace_saturated_pixels(&img, &est).unwrap().data(), img.as_radiance().data());
    }

    #[test]
    fn empty_dark_set_is_unavailable() {
        let img = ClippedImage::from_data(8, 8, 1, vec![0.5; 64]).unwrap();
        let mask = BinaryMask::from_fn(8, 8, |x, _| x == 0);
        let r = estimate_saturation(&img, &mask, &BinaryMask::new(8, 8), &lsf(), &SatSolverConfig::default());
        assert!(matches!(r, Err(Error::SaturationUnavailable(_))));
        let overlap = estimate_saturation(&img, &mask, &mask, &lsf(), &SatSolverConfig::default());
        assert!(overlap.is_err());
    }

    #[test]
    fn larger_lambda_shrinks_penalty() {
        let (truth, _) = disk_scene(48, 6.0, 0.02);
        let observed = apply_lsf(&truth, &lsf()).unwrap().clamp_unit();
        let mask = crate::patch::saturation_mask(&observed, 0.98);
        let dark = ring_dark(48, 6.0, 16.0);
        let mut cfg = SatSolverConfig {
            lambda: 0.005,
            max_iters: 600,
            tol: 1e-9,
            ..SatSolverConfig::default()
        };
        let a = estimate_saturation(&observed, &mask, &dark, &lsf(), &cfg).unwrap();
        cfg.lambda *= 2.0;
        let b = estimate_saturation(&observed, &mask, &dark, &lsf(), &cfg).unwrap();
        assert!(b.sparsity[0] <= a.sparsity[0] + 1e-9, "{} > {}", b.sparsity[0], a.sparsity[0]);
    }

    #[test]
    fn replacement_is_pointwise() {
        let img = ClippedImage::from_data(3, 3, 1, vec![0.2, 0.3, 0.4, 0.5, 1.0, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let mask = BinaryMask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        let est = SaturationEstimate {
            width: 3,
            height: 3,
            mask: mask.clone(),
            region: BinaryMask::new(3, 3),
            dark: BinaryMask::new(3, 3),
            x_s: vec![vec![8.0]],
            x_up: vec![vec![]],
            residual_history: vec![0.0],
            channel_history: vec![vec![0.0]],
            sparsity: vec![0.0],
            feasibility: Feasibility::default(),
        };
        let out = replace_saturated_pixels(&img, &est).unwrap();
        assert_eq!(out.get(1, 1, 0), 8.0);
        for (i, (a, b)) in out.data().iter().zip(img.as_radiance().data()).enumerate() {
            if i != 4 {
                assert_eq!(a, b);
            }
        }
        let wrong = ClippedImage::from_data(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(replace_saturated_pixels(&wrong, &est).is_err());
    }

    #[test]
    fn history_csv_lists_every_iteration() {
        let (truth, _) = disk_scene(32, 4.0, 0.0);
        let observed = apply_lsf(&truth, &lsf()).unwrap().clamp_unit();
        let mask = crate::patch::saturation_mask(&observed, 0.98);
        let dark = ring_dark(32, 6.0, 12.0);
        let est = estimate_saturation(&observed, &mask, &dark, &lsf(), &SatSolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        est.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), est.residual_history.len() + 1);
    }
}
