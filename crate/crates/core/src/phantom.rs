//! Synthetic dynamic phantoms and their time activity curves.
//!
//! All phantoms are built from labeled regions on a square grid; the
//! dynamic image assigns every pixel of region `r` the value of curve `r`
//! at each frame, so the ground truth factorizes exactly through the
//! region indicators.

use ndarray::Array2;

use crate::error::{ensure, Result};
use crate::model::DynamicImage;

/// Region labels on a square grid; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub labels: Vec<u32>,
    pub size: usize,
}

impl LabelMap {
    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    /// Number of regions (the largest label).
    pub fn region_count(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn region_pixels(&self, region: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == region)
            .map(|(p, _)| p)
            .collect()
    }

    /// Indicator matrix, `pixels x regions`.
    pub fn indicators(&self) -> Array2<f64> {
        let r = self.region_count();
        let mut out = Array2::zeros((self.pixels(), r));
        for (p, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[[p, (l - 1) as usize]] = 1.0;
            }
        }
        out
    }
}

fn paint<F: Fn(f64, f64) -> bool>(map: &mut LabelMap, label: u32, inside: F) {
    let n = map.size;
    let half = (n as f64 - 1.0) / 2.0;
    let scale = n as f64 / 2.0;
    for y in 0..n {
        for x in 0..n {
            let cx = (x as f64 - half) / scale;
            let cy = (y as f64 - half) / scale;
            if inside(cx, cy) {
                map.labels[y * n + x] = label;
            }
        }
    }
}

fn ellipse(cx0: f64, cy0: f64, rx: f64, ry: f64) -> impl Fn(f64, f64) -> bool {
    move |cx, cy| {
        let dx = (cx - cx0) / rx;
        let dy = (cy - cy0) / ry;
        dx * dx + dy * dy <= 1.0
    }
}

/// Two stationary non-overlapping ellipses (blood pool and liver).
pub fn make_ellipse_phantom(size: usize) -> Result<LabelMap> {
    ensure!(size >= 16, Config, "ellipse phantom needs size >= 16, got {size}");
    let mut map = LabelMap { labels: vec![0; size * size], size };
    paint(&mut map, 1, ellipse(-0.38, 0.0, 0.26, 0.46));
    paint(&mut map, 2, ellipse(0.36, 0.0, 0.30, 0.55));
    Ok(map)
}

/// Four-region abdomen-like phantom: heart (1), liver (2), kidneys (3),
/// surrounding body tissue (4).
pub fn make_rat_phantom(size: usize) -> Result<LabelMap> {
    ensure!(size >= 16, Config, "rat phantom needs size >= 16, got {size}");
    let mut map = LabelMap { labels: vec![0; size * size], size };
    paint(&mut map, 4, ellipse(0.0, 0.02, 0.78, 0.88));
    paint(&mut map, 2, ellipse(0.18, 0.02, 0.34, 0.30));
    paint(&mut map, 3, ellipse(-0.32, 0.35, 0.13, 0.13));
    paint(&mut map, 3, ellipse(0.05, 0.45, 0.13, 0.13));
    paint(&mut map, 1, ellipse(-0.12, -0.45, 0.16, 0.16));
    Ok(map)
}

/// One outer circle (1) containing two disjoint inner circles (2).
pub fn make_circle_phantom(size: usize) -> Result<LabelMap> {
    ensure!(size >= 32, Config, "circle phantom needs size >= 32, got {size}");
    let mut map = LabelMap { labels: vec![0; size * size], size };
    paint(&mut map, 1, ellipse(0.0, 0.0, 0.78, 0.78));
    paint(&mut map, 2, ellipse(-0.33, 0.0, 0.17, 0.17));
    paint(&mut map, 2, ellipse(0.33, 0.0, 0.17, 0.17));
    Ok(map)
}

/// Curve families for region activity over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TacKind {
    Blood,
    Liver,
    Myocardium,
    Kidney,
    Tissue,
    Constant,
}

/// Gamma-variate parameters: `c(t) = amplitude * (t/peak)^shape * exp(shape * (1 - t/peak))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TacParams {
    pub amplitude: f64,
    pub shape: f64,
    pub peak: f64,
}

impl TacKind {
    /// Default curve parameters; these are the ground truth for all tests.
    pub fn params(self) -> TacParams {
        match self {
            TacKind::Blood => TacParams { amplitude: 1.0, shape: 2.0, peak: 6.0 },
            TacKind::Liver => TacParams { amplitude: 0.85, shape: 1.5, peak: 50.0 },
            TacKind::Myocardium => TacParams { amplitude: 0.8, shape: 2.0, peak: 24.0 },
            TacKind::Kidney => TacParams { amplitude: 0.9, shape: 2.0, peak: 16.0 },
            TacKind::Tissue => TacParams { amplitude: 0.35, shape: 1.2, peak: 70.0 },
            TacKind::Constant => TacParams { amplitude: 0.5, shape: 0.0, peak: 1.0 },
        }
    }
}

/// One nonnegative activity curve per region.
#[derive(Debug, Clone, PartialEq)]
pub struct TacSet {
    pub curves: Vec<Vec<f64>>,
}

impl TacSet {
    pub fn frames(&self) -> usize {
        self.curves.first().map_or(0, Vec::len)
    }
}

fn gamma_variate(t: f64, p: TacParams) -> f64 {
    if p.shape == 0.0 {
        return p.amplitude;
    }
    p.amplitude * (t / p.peak).powf(p.shape) * (p.shape * (1.0 - t / p.peak)).exp()
}

/// Evaluate the default curve of each kind at frames `1..=t`.
pub fn make_tacs(t: usize, kinds: &[TacKind]) -> Result<TacSet> {
    ensure!(t >= 2, Config, "activity curves need at least 2 frames");
    let curves = kinds
        .iter()
        .map(|k| {
            let p = k.params();
            (1..=t).map(|frame| gamma_variate(frame as f64, p)).collect()
        })
        .collect();
    Ok(TacSet { curves })
}

/// Build the dynamic image `U(p, t) = curve[label(p)](t)`, zero on
/// background. The result has rank at most the number of regions.
pub fn synthesize_dynamic(labels: &LabelMap, tacs: &TacSet) -> Result<DynamicImage> {
    let regions = labels.region_count();
    ensure!(
        regions == tacs.curves.len(),
        Dim,
        "{} regions but {} curves",
        regions,
        tacs.curves.len()
    );
    for r in 1..=regions {
        ensure!(
            labels.labels.iter().any(|&l| l == r as u32),
            Data,
            "region {r} is empty"
        );
    }
    let t = tacs.frames();
    let mut u = DynamicImage::zeros(labels.size, labels.size, t);
    for (p, &l) in labels.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let curve = &tacs.curves[(l - 1) as usize];
        for (frame, &v) in curve.iter().enumerate() {
            u.data[[p, frame]] = v;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;

    fn region_sizes(map: &LabelMap) -> Vec<usize> {
        (1..=map.region_count())
            .map(|r| map.region_pixels(r as u32).len())
            .collect()
    }

    #[test]
    fn ellipse_phantom_has_two_disjoint_regions() {
        let map = make_ellipse_phantom(64).unwrap();
        assert_eq!(map.region_count(), 2);
        let sizes = region_sizes(&map);
        assert!(sizes.iter().all(|&s| s > 50), "sizes {sizes:?}");
        assert!(map.labels.iter().all(|&l| l <= 2));
        // labeling is exclusive by construction; make sure both ellipses
        // stayed where they were painted (no overwrite happened)
        let painted: usize = sizes.iter().sum();
        let nonzero = map.labels.iter().filter(|&&l| l != 0).count();
        assert_eq!(painted, nonzero);
    }

    #[test]
    fn ellipse_phantom_small_scale_topology() {
        let map = make_ellipse_phantom(16).unwrap();
        assert_eq!(map.region_count(), 2);
        assert!(region_sizes(&map).iter().all(|&s| s > 0));
    }

    #[test]
    fn rat_phantom_has_four_regions() {
        let map = make_rat_phantom(64).unwrap();
        assert_eq!(map.region_count(), 4);
        assert!(region_sizes(&map).iter().all(|&s| s > 0));
        assert!(map.labels.iter().all(|&l| l <= 4));
    }

    #[test]
    fn circle_phantom_nesting() {
        let map = make_circle_phantom(129).unwrap();
        assert_eq!(map.region_count(), 2);
        let n = map.size;
        let half = (n as f64 - 1.0) / 2.0;
        let scale = n as f64 / 2.0;
        // inner circles lie strictly inside the outer circle radius
        for (p, &l) in map.labels.iter().enumerate() {
            if l == 2 {
                let (x, y) = (p % n, p / n);
                let cx = (x as f64 - half) / scale;
                let cy = (y as f64 - half) / scale;
                assert!(cx.hypot(cy) < 0.78);
            }
        }
        // the two inner discs are disjoint: they split into a left and a
        // right component with a gap between
        let inner = map.region_pixels(2);
        assert!(!inner.is_empty());
        let labeled = map.labels.iter().filter(|&&l| l > 0).count();
        assert!(labeled < n * n);
    }

    #[test]
    fn tacs_are_nonnegative_and_ordered() {
        let tacs = make_tacs(90, &[TacKind::Blood, TacKind::Liver]).unwrap();
        for c in &tacs.curves {
            assert_eq!(c.len(), 90);
            assert!(c.iter().all(|&v| v.is_finite() && v >= 0.0));
        }
        let argmax = |c: &[f64]| {
            c.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert!(argmax(&tacs.curves[0]) < argmax(&tacs.curves[1]));
    }

    #[test]
    fn constant_kind_is_flat() {
        let tacs = make_tacs(12, &[TacKind::Constant]).unwrap();
        assert!(tacs.curves[0].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn synthesized_image_has_low_rank() {
        let map = make_ellipse_phantom(32).unwrap();
        let tacs = make_tacs(20, &[TacKind::Blood, TacKind::Liver]).unwrap();
        let u = synthesize_dynamic(&map, &tacs).unwrap();
        let sv = singular_values(&u.data);
        assert!(sv[0] > 0.0);
        for &s in &sv[2..] {
            assert!(s <= 1e-8 * sv[0], "rank exceeds region count: {sv:?}");
        }
        // background pixels are zero rows
        for (p, &l) in map.labels.iter().enumerate() {
            if l == 0 {
                assert!(u.data.row(p).iter().all(|&v| v == 0.0));
            }
        }
        // each column is the indicator-weighted sum of curves
        for t in 0..20 {
            for (p, &l) in map.labels.iter().enumerate() {
                let want = if l == 0 { 0.0 } else { tacs.curves[(l - 1) as usize][t] };
                assert_eq!(u.data[[p, t]], want);
            }
        }
    }

    #[test]
    fn synthesis_recovers_factors_by_least_squares() {
        // U = alpha * B^T with alpha the indicators; projecting U back onto
        // the indicators must return the curves exactly.
        let map = make_ellipse_phantom(32).unwrap();
        let tacs = make_tacs(15, &[TacKind::Blood, TacKind::Liver]).unwrap();
        let u = synthesize_dynamic(&map, &tacs).unwrap();
        let ind = map.indicators();
        // normal equations are diagonal because indicator columns are disjoint
        let counts: Vec<f64> = (0..2).map(|r| ind.column(r).sum()).collect();
        let proj = ind.t().dot(&u.data); // 2 x T
        for r in 0..2 {
            for t in 0..15 {
                let recovered = proj[[r, t]] / counts[r];
                assert!((recovered - tacs.curves[r][t]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_counts_rejected() {
        let map = make_ellipse_phantom(32).unwrap();
        let tacs = make_tacs(10, &[TacKind::Blood]).unwrap();
        assert!(synthesize_dynamic(&map, &tacs).is_err());
    }
}
