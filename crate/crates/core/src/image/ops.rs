use std::collections::VecDeque;

use super::{BinaryMask, RadianceImage};
use crate::error::{Error, Result};

/// Per-pixel gradient magnitude of the grayscale image. Central differences
/// in the interior, one-sided differences on the border.
pub fn gradient_magnitude(img: &RadianceImage) -> RadianceImage {
    let (w, h) = (img.width(), img.height());
    let g = gradient_magnitude_plane(&img.gray_plane(), w, h);
    RadianceImage::from_planes_clamped(w, h, vec![g])
}

pub fn gradient_magnitude_plane(p: &[f64], w: usize, h: usize) -> Vec<f64> {
    let diff = |a: f64, b: f64, span: usize| if span == 0 { 0.0 } else { (a - b) / span as f64 };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = diff(p[y * w + x1], p[y * w + x0], x1 - x0);
            let gy = diff(p[y1 * w + x], p[y0 * w + x], y1 - y0);
            out[y * w + x] = gx.hypot(gy);
        }
    }
    out
}

/// 8-connected components of the set pixels, each listed in BFS order.
/// Components are ordered by their first pixel in scan order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in mask.indices() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Arithmetic mean of `(x, y)` coordinates.
pub fn centroid(pixels: &[(usize, usize)]) -> Result<(f64, f64)> {
    if pixels.is_empty() {
        return Err(Error::EmptyRegion("centroid of an empty pixel set"));
    }
    let n = pixels.len() as f64;
    let (sx, sy) = pixels
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
    Ok((sx / n, sy / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_constant_is_zero() {
        let img = RadianceImage::filled(6, 5, 3, 0.4);
        assert!(gradient_magnitude(&img).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_edge_gives_half_height() {
        let h = 0.8;
        let img = RadianceImage::from_fn(8, 6, 1, |x, _, _| if x >= 4 { h } else { 0.0 }).unwrap();
        let g = gradient_magnitude(&img);
        for y in 0..6 {
            assert!((g.get(3, y, 0) - h / 2.0).abs() < 1e-12);
            assert!((g.get(4, y, 0) - h / 2.0).abs() < 1e-12);
            assert_eq!(g.get(1, y, 0), 0.0);
            assert_eq!(g.get(6, y, 0), 0.0);
        }
    }

    #[test]
    fn ramp_has_unit_gradient() {
        let img = RadianceImage::from_fn(10, 10, 1, |x, _, _| x as f64).unwrap();
        let g = gradient_magnitude(&img);
        for y in 0..10 {
            for x in 0..10 {
                assert!((g.get(x, y, 0) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn components_cases() {
        assert!(connected_components(&BinaryMask::new(5, 5)).is_empty());

        let blocks = BinaryMask::from_fn(8, 8, |x, y| (x < 2 && y < 2) || ((5..7).contains(&x) && (5..7).contains(&y)));
        let comps = connected_components(&blocks);
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.len() == 4));

        let diag = BinaryMask::from_fn(6, 6, |x, y| x == y);
        let comps = connected_components(&diag);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 6);
    }

    #[test]
    fn centroid_cases() {
        assert_eq!(centroid(&[(3, 7)]).unwrap(), (3.0, 7.0));
        assert_eq!(centroid(&[(0, 0), (2, 0), (0, 2), (2, 2)]).unwrap(), (1.0, 1.0));
        assert_eq!(centroid(&[(1, 1), (2, 1), (3, 4)]).unwrap(), (2.0, 2.0));
        assert!(matches!(centroid(&[]), Err(Error::EmptyRegion(_))));
    }
}
