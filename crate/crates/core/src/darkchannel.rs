//! Dark channel prior and dark-pixel selection.

use crate::error::{Error, Result};
use crate::image::{BinaryMask, PatchRect, RadianceImage};

pub const DEFAULT_PATCH: usize = 5;
pub const DEFAULT_QUANTILE: f64 = 0.05;

/// Per-pixel minimum over a `patch x patch` neighbourhood and over channels,
/// with replicated borders.
pub fn dark_channel(img: &RadianceImage, patch: usize) -> Result<RadianceImage> {
    if patch % 2 == 0 {
        return Err(Error::invalid(format!("dark-channel patch {patch} must be odd")));
    }
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let channel_min: Vec<f64> = (0..n)
        .map(|i| img.planes().map(|p| p[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let r = patch / 2;
    let mut rows = vec![0.0; n];
    for y in 0..h {
        let row = &channel_min[y * w..(y + 1) * w];
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = row[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    let mut out = vec![0.0; n];
    for x in 0..w {
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    RadianceImage::from_plane(w, h, out)
}

/// Marks the pixels of the given patches whose dark-channel value is in the
/// lowest `quantile` fraction over those patches. Ties resolve in scan order.
pub fn select_dark_pixels(img: &RadianceImage, patches: &[PatchRect], quantile: f64) -> Result<BinaryMask> {
    select_dark_pixels_excluding(img, patches, quantile, None)
}

/// As [`select_dark_pixels`], never selecting pixels set in `exclude`.
pub fn select_dark_pixels_excluding(
    img: &RadianceImage,
    patches: &[PatchRect],
    quantile: f64,
    exclude: Option<&BinaryMask>,
) -> Result<BinaryMask> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::invalid(format!("quantile {quantile} outside (0, 1]")));
    }
    if patches.is_empty() {
        return Err(Error::EmptyRegion("no patches to select dark pixels from"));
    }
    let (w, h) = (img.width(), img.height());
    if let Some(m) = exclude {
        if !m.matches(img) {
            return Err(Error::DimensionMismatch {
                expected: format!("{w}x{h}"),
                actual: format!("{}x{}", m.width(), m.height()),
            });
        }
    }
    let mut region = BinaryMask::new(w, h);
    for p in patches {
        if p.col + p.size > w || p.row + p.size > h {
            return Err(Error::invalid(format!("patch {p:?} outside image")));
        }
        for (x, y) in p.pixels() {
            if !exclude.is_some_and(|m| m.get(x, y)) {
                region.set(x, y, true);
            }
        }
    }
    let dc = dark_channel(img, DEFAULT_PATCH)?;
    let dc = dc.plane(0);
    let mut candidates: Vec<usize> = region.indices().collect();
    if candidates.is_empty() {
        return Err(Error::EmptyRegion("patches contain no eligible pixels"));
    }
    candidates.sort_by(|a, b| dc[*a].total_cmp(&dc[*b]).then(a.cmp(b)));
    let take = ((quantile * candidates.len() as f64).ceil() as usize).clamp(1, candidates.len());
    let mut mask = BinaryMask::new(w, h);
    for &i in &candidates[..take] {
        mask.set(i % w, i / w, true);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{convolve_spatial, Boundary, Kernel2D};
    use proptest::prelude::*;

    #[test]
    fn constant_image() {
        let img = RadianceImage::filled(7, 6, 3, 0.3);
        let dc = dark_channel(&img, 5).unwrap();
        assert!(dc.data().iter().all(|v| *v == 0.3));
    }

    #[test]
    fn zero_pixel_spreads_over_footprint() {
        let mut img = RadianceImage::filled(9, 9, 3, 0.5);
        img.set(4, 4, 1, 0.0);
        let dc = dark_channel(&img, 5).unwrap();
        for y in 0..9usize {
            for x in 0..9usize {
                let inside = x.abs_diff(4) <= 2 && y.abs_diff(4) <= 2;
                assert_eq!(dc.get(x, y, 0), if inside { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn sliding_min_by_hand() {
        let img = RadianceImage::from_plane(5, 1, vec![5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        let dc = dark_channel(&img, 3).unwrap();
        assert_eq!(dc.data(), &[1.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(dark_channel(&img, 4).is_err());
    }

    #[test]
    fn quantile_one_selects_everything() {
        let img = RadianceImage::from_fn(10, 10, 1, |x, y, _| (x * y) as f64).unwrap();
        let p = PatchRect::new(2, 3, 4);
        let m = select_dark_pixels(&img, &[p], 1.0).unwrap();
        assert_eq!(m.count(), 16);
        assert!(m.iter_set().all(|(x, y)| p.contains(x, y)));
    }

    #[test]
    fn quantile_count_and_order() {
        // distinct dark-channel values inside the patch
        let img = RadianceImage::from_fn(12, 12, 1, |x, y, _| (x + 12 * y) as f64).unwrap();
        let p = PatchRect::new(0, 0, 10);
        let m = select_dark_pixels(&img, &[p], 0.1).unwrap();
        assert_eq!(m.count(), 10);
        let dc = dark_channel(&img, DEFAULT_PATCH).unwrap();
        let mut vals: Vec<f64> = p.pixels().map(|(x, y)| dc.get(x, y, 0)).collect();
        vals.sort_by(f64::total_cmp);
        let cutoff = vals[9];
        assert!(m.iter_set().all(|(x, y)| dc.get(x, y, 0) <= cutoff));
    }

    #[test]
    fn ties_break_in_scan_order() {
        let img = RadianceImage::filled(8, 8, 1, 0.2);
        let p = PatchRect::new(1, 1, 5);
        let m = select_dark_pixels(&img, &[p], 0.2).unwrap();
        let got: Vec<_> = m.iter_set().collect();
        let expect: Vec<_> = p.pixels().take(5).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn errors() {
        let img = RadianceImage::filled(8, 8, 1, 0.2);
        assert!(matches!(select_dark_pixels(&img, &[], 0.1), Err(Error::EmptyRegion(_))));
        assert!(select_dark_pixels(&img, &[PatchRect::new(0, 0, 4)], 0.0).is_err());
        assert!(select_dark_pixels(&img, &[PatchRect::new(6, 6, 4)], 0.5).is_err());
    }

    #[test]
    fn exclusion_mask_respected() {
        let img = RadianceImage::from_fn(8, 8, 1, |x, _, _| x as f64).unwrap();
        let exclude = BinaryMask::from_fn(8, 8, |x, _| x < 2);
        let m = select_dark_pixels_excluding(&img, &[PatchRect::new(0, 0, 8)], 0.5, Some(&exclude)).unwrap();
        assert!(!m.intersects(&exclude));
        assert_eq!(m.count(), 24);
    }

    fn arb_image() -> impl Strategy<Value = RadianceImage> {
        (3usize..12, 3usize..12, prop::bool::ANY).prop_flat_map(|(w, h, color)| {
            let c = if color { 3 } else { 1 };
            prop::collection::vec(0.0f64..2.0, w * h * c)
                .prop_map(move |d| RadianceImage::new(w, h, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dark_channel_below_every_channel(img in arb_image()) {
            let dc = dark_channel(&img, 5).unwrap();
            for c in 0..img.channels() {
                for (d, v) in dc.data().iter().zip(img.plane(c)) {
                    prop_assert!(d <= v);
                }
            }
        }

        #[test]
        fn dark_channel_is_monotone(img in arb_image(), bump in 0.0f64..1.0) {
            let brighter = img.map(|v| v + bump * v.sqrt());
            let a = dark_channel(&img, 3).unwrap();
            let b = dark_channel(&brighter, 3).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(x <= y);
            }
        }
    }

    #[test]
    fn blur_raises_dark_channel() {
        let img = RadianceImage::from_fn(32, 32, 3, |x, y, c| {
            if (x / 4 + y / 4 + c) % 3 == 0 { 0.0 } else { 0.6 }
        })
        .unwrap();
        let blurred = convolve_spatial(&img, &Kernel2D::uniform(5), Boundary::Replicate).unwrap();
        let a = dark_channel(&img, 5).unwrap().mean();
        let b = dark_channel(&blurred, 5).unwrap().mean();
        assert!(b >= a, "{b} < {a}");
    }
}
