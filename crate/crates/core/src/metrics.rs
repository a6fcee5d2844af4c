//! Cobb angles from vertebra corners, and the SMAPE / mean landmark error
//! evaluation metrics.
//!
//! Each vertebra's axis runs from the midpoint of its left edge (TL–BL) to
//! the midpoint of its right edge (TR–BR). Angles between vertebrae are
//! undirected line angles in degrees. The main-thoracic angle is the largest
//! pairwise angle; the proximal-thoracic and thoracolumbar angles are the
//! largest angles reachable above the upper and below the lower MT vertebra.
//! Every argmax breaks ties toward smaller indices.

use crate::error::{Error, Result};
use crate::types::{Point2, SpineAnnotation, VertebraCorners};

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CobbResult {
    pub pt_deg: f64,
    pub mt_deg: f64,
    pub tl_deg: f64,
    /// Upper and lower vertebra of the main-thoracic curve.
    pub mt_pair: (usize, usize),
    pub pt_partner: usize,
    pub tl_partner: usize,
}

impl CobbResult {
    pub fn angles(&self) -> AngleTriple {
        AngleTriple {
            pt: self.pt_deg,
            mt: self.mt_deg,
            tl: self.tl_deg,
        }
    }
}

/// PT / MT / TL angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngleTriple {
    pub pt: f64,
    pub mt: f64,
    pub tl: f64,
}

impl AngleTriple {
    pub fn new(pt: f64, mt: f64, tl: f64) -> Self {
        Self { pt, mt, tl }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.pt, self.mt, self.tl]
    }

    pub fn get(&self, region: Region) -> f64 {
        match region {
            Region::Pt => self.pt,
            Region::Mt => self.mt,
            Region::Tl => self.tl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Pt,
    Mt,
    Tl,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Pt, Region::Mt, Region::Tl];

    pub fn label(self) -> &'static str {
        match self {
            Region::Pt => "PT",
            Region::Mt => "MT",
            Region::Tl => "TL",
        }
    }
}

/// Unit vector along the vertebra's left→right axis.
pub fn vertebra_direction(corners: &VertebraCorners) -> Result<Point2> {
    let left = corners.tl.midpoint(corners.bl);
    let right = corners.tr.midpoint(corners.br);
    let d = right - left;
    let len = d.norm();
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::DegenerateVertebra { index: None });
    }
    Ok(d * (1.0 / len))
}

/// Undirected angle between two unit vectors, in degrees within [0, 90].
pub fn angle_between(d1: Point2, d2: Point2) -> Result<f64> {
    for d in [d1, d2] {
        if !((d.norm() - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::invalid(format!(
                "direction ({}, {}) is not a unit vector",
                d.x, d.y
            )));
        }
    }
    // atan2(|cross|, |dot|) equals arccos(|dot|) for unit vectors and stays
    // accurate for nearly parallel lines.
    let dot = (d1.x * d2.x + d1.y * d2.y).abs();
    let cross = (d1.x * d2.y - d1.y * d2.x).abs();
    Ok(cross.atan2(dot).to_degrees().clamp(0.0, 90.0))
}

pub fn cobb_angles(ann: &SpineAnnotation) -> Result<CobbResult> {
    let count = ann.vertebrae.len();
    if count < 2 {
        return Err(Error::invalid(format!(
            "Cobb angles need at least 2 vertebrae, got {count}"
        )));
    }
    let dirs = ann
        .vertebrae
        .iter()
        .enumerate()
        .map(|(i, v)| {
            vertebra_direction(v).map_err(|_| Error::DegenerateVertebra { index: Some(i) })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = vec![0.0; count * count];
    for i in 0..count {
        for j in (i + 1)..count {
            let a = angle_between(dirs[i], dirs[j])?;
            table[i * count + j] = a;
            table[j * count + i] = a;
        }
    }
    let angle = |i: usize, j: usize| table[i * count + j];

    let (mut upper, mut lower, mut mt) = (0, 1, angle(0, 1));
    for i in 0..count {
        for j in (i + 1)..count {
            if angle(i, j) > mt {
                (upper, lower, mt) = (i, j, angle(i, j));
            }
        }
    }

    let argmax = |range: std::ops::RangeInclusive<usize>, anchor: usize| {
        range.fold((anchor, 0.0), |best, k| {
            let a = angle(k, anchor);
            if a > best.1 {
                (k, a)
            } else {
                best
            }
        })
    };
    let (pt_partner, pt) = argmax(0..=upper, upper);
    let (tl_partner, tl) = argmax(lower..=count - 1, lower);

    Ok(CobbResult {
        pt_deg: pt,
        mt_deg: mt,
        tl_deg: tl,
        mt_pair: (upper, lower),
        pt_partner,
        tl_partner,
    })
}

fn check_pairs(estimates: &[AngleTriple], truths: &[AngleTriple]) -> Result<()> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::invalid(format!(
            "SMAPE needs equal nonempty inputs, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    Ok(())
}

/// Symmetric mean absolute percentage error over the three regional angles,
/// in percent.
pub fn smape(estimates: &[AngleTriple], truths: &[AngleTriple]) -> Result<f64> {
    check_pairs(estimates, truths)?;
    let mut total = 0.0;
    for (index, (a, b)) in estimates.iter().zip(truths).enumerate() {
        let (a, b) = (a.as_array(), b.as_array());
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let den: f64 = a.iter().zip(&b).map(|(x, y)| x + y).sum();
        if !(den > 0.0) {
            return Err(Error::UndefinedImage { index });
        }
        total += num / den;
    }
    Ok(100.0 * total / estimates.len() as f64)
}

/// SMAPE restricted to one region, in percent. An image where both angles
/// are zero agrees perfectly and contributes 0.
pub fn smape_region(estimates: &[AngleTriple], truths: &[AngleTriple], region: Region) -> Result<f64> {
    check_pairs(estimates, truths)?;
    let total: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(a, b)| {
            let (x, y) = (a.get(region), b.get(region));
            let den = x + y;
            if den > 0.0 {
                (x - y).abs() / den
            } else {
                0.0
            }
        })
        .sum();
    Ok(100.0 * total / estimates.len() as f64)
}

/// Mean Euclidean distance between index-matched landmarks, in pixels.
pub fn error_dec(detected: &[Point2], truth: &[Point2]) -> Result<f64> {
    if detected.len() != truth.len() {
        return Err(Error::invalid(format!(
            "landmark counts differ: {} detected, {} true",
            detected.len(),
            truth.len()
        )));
    }
    if detected.is_empty() {
        return Err(Error::invalid("no landmarks to compare"));
    }
    let sum: f64 = detected
        .iter()
        .zip(truth)
        .map(|(d, g)| d.distance(*g))
        .sum();
    Ok(sum / detected.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::VERTEBRA_COUNT;

    fn oriented(center: Point2, angle_deg: f64, w: f64, h: f64) -> VertebraCorners {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let u = Point2::new(c, s);
        let v = Point2::new(-s, c);
        VertebraCorners::new(
            center - u * (w / 2.0) - v * (h / 2.0),
            center + u * (w / 2.0) - v * (h / 2.0),
            center - u * (w / 2.0) + v * (h / 2.0),
            center + u * (w / 2.0) + v * (h / 2.0),
        )
    }

    fn spine_with_tilts(tilts: &[f64]) -> SpineAnnotation {
        let vertebrae = tilts
            .iter()
            .enumerate()
            .map(|(i, &a)| oriented(Point2::new(100.0, 20.0 + 12.0 * i as f64), a, 30.0, 8.0))
            .collect();
        SpineAnnotation::new(200, 240, vertebrae)
    }

    #[test]
    fn direction_of_axis_aligned_box() {
        let d = vertebra_direction(&oriented(Point2::new(5.0, 5.0), 0.0, 4.0, 2.0)).unwrap();
        assert_eq!(d, Point2::new(1.0, 0.0));
    }

    #[test]
    fn direction_of_rotated_box() {
        let box30 = oriented(Point2::new(3.0, -2.0), 30.0, 10.0, 4.0);
        let d = vertebra_direction(&box30).unwrap();
        let (s, c) = 30f64.to_radians().sin_cos();
        assert!((d.x - c).abs() < 1e-12 && (d.y - s).abs() < 1e-12);
        let scaled = vertebra_direction(&box30.map(|p| p * 5.0)).unwrap();
        assert!((scaled.x - d.x).abs() < 1e-15 && (scaled.y - d.y).abs() < 1e-15);
    }

    #[test]
    fn degenerate_vertebra_is_an_error() {
        let p = Point2::new(1.0, 1.0);
        let flat = VertebraCorners::new(p, p, Point2::new(1.0, 2.0), Point2::new(1.0, 2.0));
        assert!(matches!(
            vertebra_direction(&flat),
            Err(Error::DegenerateVertebra { index: None })
        ));
        let mut ann = spine_with_tilts(&[0.0; VERTEBRA_COUNT]);
        ann.vertebrae[6] = flat;
        assert!(matches!(
            cobb_angles(&ann),
            Err(Error::DegenerateVertebra { index: Some(6) })
        ));
    }

    #[test]
    fn angles_between_lines() {
        let x = Point2::new(1.0, 0.0);
        assert_eq!(angle_between(x, x).unwrap(), 0.0);
        assert_eq!(angle_between(x, Point2::new(0.0, 1.0)).unwrap(), 90.0);
        assert_eq!(angle_between(x, Point2::new(-1.0, 0.0)).unwrap(), 0.0);
        let (s, c) = 20f64.to_radians().sin_cos();
        assert!((angle_between(x, Point2::new(c, s)).unwrap() - 20.0).abs() < 1e-9);
        assert!(angle_between(x, Point2::new(2.0, 0.0)).is_err());
    }

    #[test]
    fn straight_spine_has_zero_angles() {
        let r = cobb_angles(&spine_with_tilts(&[0.0; VERTEBRA_COUNT])).unwrap();
        assert_eq!(r.angles(), AngleTriple::new(0.0, 0.0, 0.0));
        assert_eq!(r.mt_pair, (0, 1));
    }

    #[test]
    fn linear_ramp_selects_endpoints() {
        let tilts: Vec<f64> = (0..VERTEBRA_COUNT).map(|i| 2.0 * i as f64).collect();
        let r = cobb_angles(&spine_with_tilts(&tilts)).unwrap();
        assert!((r.mt_deg - 32.0).abs() < 1e-9);
        assert_eq!(r.mt_pair, (0, 16));
        assert_eq!((r.pt_deg, r.tl_deg), (0.0, 0.0));
        assert_eq!((r.pt_partner, r.tl_partner), (0, 16));
    }

    #[test]
    fn s_curve_fills_all_regions() {
        // Tilts rise, fall, then rise again.
        let tilts = [
            -5.0, 0.0, 5.0, 10.0, 6.0, 0.0, -6.0, -12.0, -18.0, -22.0, -15.0, -8.0, 0.0, 6.0, 9.0,
            4.0, 1.0,
        ];
        let r = cobb_angles(&spine_with_tilts(&tilts)).unwrap();
        assert_eq!(r.mt_pair, (3, 9));
        assert!((r.mt_deg - 32.0).abs() < 1e-9);
        assert_eq!(r.pt_partner, 0);
        assert!((r.pt_deg - 15.0).abs() < 1e-9);
        assert_eq!(r.tl_partner, 14);
        assert!((r.tl_deg - 31.0).abs() < 1e-9);
    }

    #[test]
    fn smape_examples() {
        let t = [AngleTriple::new(10.0, 20.0, 30.0)];
        assert_eq!(smape(&t, &t).unwrap(), 0.0);
        let b = [AngleTriple::new(20.0, 20.0, 20.0)];
        assert!((smape(&t, &b).unwrap() - 100.0 * 20.0 / 120.0).abs() < 1e-12);

        let a2 = [t[0], AngleTriple::new(5.0, 5.0, 5.0)];
        let b2 = [b[0], AngleTriple::new(10.0, 5.0, 0.0)];
        let r1 = 20.0 / 120.0;
        let r2 = 10.0 / 30.0;
        assert!((smape(&a2, &b2).unwrap() - 100.0 * (r1 + r2) / 2.0).abs() < 1e-12);
        assert_eq!(smape(&a2, &b2).unwrap(), smape(&b2, &a2).unwrap());
    }

    #[test]
    fn smape_errors() {
        let z = [AngleTriple::new(1.0, 1.0, 1.0), AngleTriple::default()];
        assert!(matches!(smape(&z, &z), Err(Error::UndefinedImage { index: 1 })));
        assert!(smape(&[], &[]).is_err());
        assert!(smape(&z[..1], &z).is_err());
    }

    #[test]
    fn regional_smape() {
        let a = [AngleTriple::new(0.0, 20.0, 10.0), AngleTriple::new(4.0, 10.0, 0.0)];
        let b = [AngleTriple::new(0.0, 30.0, 10.0), AngleTriple::new(6.0, 10.0, 0.0)];
        assert!((smape_region(&a, &b, Region::Pt).unwrap() - 100.0 * (0.0 + 0.2) / 2.0).abs() < 1e-12);
        assert!((smape_region(&a, &b, Region::Mt).unwrap() - 100.0 * (0.2 + 0.0) / 2.0).abs() < 1e-12);
        assert_eq!(smape_region(&a, &b, Region::Tl).unwrap(), 0.0);
    }

    #[test]
    fn error_dec_examples() {
        let g = [Point2::new(1.0, 1.0)];
        assert_eq!(error_dec(&g, &g).unwrap(), 0.0);
        assert_eq!(error_dec(&[Point2::new(4.0, 5.0)], &g).unwrap(), 5.0);
        let g2 = [Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)];
        let d2 = [Point2::new(1.0, 0.0), Point2::new(0.0, 2.0)];
        assert_eq!(error_dec(&d2, &g2).unwrap(), 1.5);
        assert!(error_dec(&d2, &g).is_err());
    }
}
