//! Training-target encoding and landmark decoding.
//!
//! Each vertebra is represented on the downsampled output grid by its center
//! cell. The heatmap carries an unnormalized Gaussian disk around every center,
//! the two center-offset channels hold the sub-cell remainder lost to integer
//! division, and the eight corner-offset channels hold the vector from the
//! (sub-cell) center to each corner in grid units, ordered
//! `tl.x, tl.y, tr.x, tr.y, bl.x, bl.y, br.x, br.y`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::types::{
    center_of, validate_annotation, GridPeak, Point2, SpineAnnotation, VertebraCorners,
    CORNERS_PER_VERTEBRA, VERTEBRA_COUNT,
};

pub const CENTER_OFFSET_CHANNELS: usize = 2;
pub const CORNER_OFFSET_CHANNELS: usize = 2 * CORNERS_PER_VERTEBRA;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    /// Downsampling factor between input pixels and output cells.
    pub n: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub min_overlap: f64,
    pub sigma_floor: f64,
    pub topk: usize,
    /// Peaks must score strictly above this value.
    pub score_threshold: f64,
    /// Half-width of the non-maximum-suppression window along x.
    pub nms_radius_x: usize,
    /// Half-height of the non-maximum-suppression window along y. Adjacent
    /// grid rows can both hold vertebra centers at n = 4, so this defaults
    /// to 0.
    pub nms_radius_y: usize,
}

impl CodecConfig {
    pub const DEFAULT_N: usize = 4;

    /// Default configuration for an input image of the given size.
    pub fn for_input(width: usize, height: usize) -> Result<Self> {
        Self::with_downsampling(width, height, Self::DEFAULT_N)
    }

    pub fn with_downsampling(width: usize, height: usize, n: usize) -> Result<Self> {
        if n == 0 || width == 0 || height == 0 || width % n != 0 || height % n != 0 {
            return Err(Error::invalid(format!(
                "input {width}x{height} is not divisible by downsampling factor {n}"
            )));
        }
        Ok(Self {
            n,
            out_height: height / n,
            out_width: width / n,
            min_overlap: 0.7,
            sigma_floor: 1.0,
            topk: VERTEBRA_COUNT,
            score_threshold: 0.0,
            nms_radius_x: 1,
            nms_radius_y: 0,
        })
    }

    pub fn input_width(&self) -> usize {
        self.out_width * self.n
    }

    pub fn input_height(&self) -> usize {
        self.out_height * self.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.out_height == 0 || self.out_width == 0 {
            return Err(Error::invalid("codec dimensions must be positive"));
        }
        if self.topk == 0 {
            return Err(Error::invalid("topk must be at least 1"));
        }
        if !(self.min_overlap > 0.0 && self.min_overlap < 1.0) {
            return Err(Error::invalid("min_overlap must lie in (0, 1)"));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::invalid("sigma_floor must be positive"));
        }
        if !self.score_threshold.is_finite() {
            return Err(Error::invalid("score_threshold must be finite"));
        }
        Ok(())
    }

    fn map_shape(&self, channels: usize) -> [usize; 3] {
        [channels, self.out_height, self.out_width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub heatmap: Tensor,
    pub center_offset: Tensor,
    pub corner_offset: Tensor,
    pub center_mask: Tensor,
}

impl TargetMaps {
    /// The targets viewed as a perfect prediction.
    pub fn as_prediction(&self) -> PredictionMaps {
        PredictionMaps {
            heatmap: self.heatmap.clone(),
            center_offset: self.center_offset.clone(),
            corner_offset: self.corner_offset.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub heatmap: Tensor,
    pub center_offset: Tensor,
    pub corner_offset: Tensor,
}

/// Radius (in grid cells) by which a box corner may move while the moved box
/// keeps IoU ≥ `min_overlap` with the original. Takes the tightest of the
/// three standard cases: one corner in / one out, both inside, both outside.
pub fn gaussian_radius(box_height: f64, box_width: f64, min_overlap: f64) -> Result<f64> {
    if !(box_height > 0.0 && box_width > 0.0) || !box_height.is_finite() || !box_width.is_finite()
    {
        return Err(Error::invalid(format!(
            "box dimensions must be positive, got {box_height}x{box_width}"
        )));
    }
    if !(min_overlap > 0.0 && min_overlap < 1.0) {
        return Err(Error::invalid(format!(
            "min_overlap must lie in (0, 1), got {min_overlap}"
        )));
    }
    let (h, w, o) = (box_height, box_width, min_overlap);

    // Smaller and larger roots of a·r² + b·r + c = 0, a > 0.
    let root = |a: f64, b: f64, c: f64| {
        let disc = (b * b - 4.0 * a * c).max(0.0);
        (-b - disc.sqrt()) / (2.0 * a)
    };
    let root_pos = |a: f64, b: f64, c: f64| {
        let disc = (b * b - 4.0 * a * c).max(0.0);
        (-b + disc.sqrt()) / (2.0 * a)
    };

    // Shifted box: (h−r)(w−r) / (2hw − (h−r)(w−r)) = o.
    let r1 = root(1.0, -(h + w), w * h * (1.0 - o) / (1.0 + o));
    // Shrunk box: (h−2r)(w−2r) = o·hw.
    let r2 = root(4.0, -2.0 * (h + w), (1.0 - o) * w * h);
    // Grown box: hw = o·(h+2r)(w+2r).
    let r3 = root_pos(4.0 * o, 2.0 * o * (h + w), (o - 1.0) * w * h);

    Ok(r1.min(r2).min(r3).max(0.0))
}

fn grid_cell(p: Point2, n: f64) -> (i64, i64) {
    ((p.x / n).floor() as i64, (p.y / n).floor() as i64)
}

/// Gaussian σ (grid cells) used for one vertebra.
pub fn vertebra_sigma(corners: &VertebraCorners, cfg: &CodecConfig) -> Result<f64> {
    let pts = corners.points();
    let n = cfg.n as f64;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let radius = gaussian_radius((y1 - y0) / n, (x1 - x0) / n, cfg.min_overlap)?;
    Ok(cfg.sigma_floor.max(radius / 3.0))
}

/// Encodes one annotation into heatmap, offset and mask targets.
pub fn encode_targets(ann: &SpineAnnotation, cfg: &CodecConfig) -> Result<TargetMaps> {
    cfg.validate()?;
    if ann.image_width != cfg.input_width() || ann.image_height != cfg.input_height() {
        return Err(Error::invalid(format!(
            "annotation is {}x{} but codec expects {}x{}",
            ann.image_width,
            ann.image_height,
            cfg.input_width(),
            cfg.input_height()
        )));
    }
    if let Some(first) = validate_annotation(ann).into_iter().next() {
        return Err(Error::invalid(format!("invalid annotation: {first}")));
    }

    let (oh, ow) = (cfg.out_height, cfg.out_width);
    let n = cfg.n as f64;
    let mut heatmap = Tensor::zeros(&cfg.map_shape(1));
    let mut center_offset = Tensor::zeros(&cfg.map_shape(CENTER_OFFSET_CHANNELS));
    let mut corner_offset = Tensor::zeros(&cfg.map_shape(CORNER_OFFSET_CHANNELS));
    let mut center_mask = Tensor::zeros(&cfg.map_shape(1));

    let mut owners: Vec<Option<usize>> = vec![None; oh * ow];

    for (index, vertebra) in ann.vertebrae.iter().enumerate() {
        let center = center_of(vertebra);
        let (cx, cy) = grid_cell(center, n);
        // Valid annotations keep every point, hence every center, in the image.
        let (cx, cy) = (cx as usize, cy as usize);
        let slot = &mut owners[cy * ow + cx];
        if let Some(first) = *slot {
            return Err(Error::EncodingCollision {
                first,
                second: index,
                cx,
                cy,
            });
        }
        *slot = Some(index);

        let sigma = vertebra_sigma(vertebra, cfg)?;
        splat_gaussian(&mut heatmap, cx, cy, sigma);
        heatmap.set3(0, cy, cx, 1.0);
        center_mask.set3(0, cy, cx, 1.0);

        let (gx, gy) = (center.x / n, center.y / n);
        center_offset.set3(0, cy, cx, gx - cx as f64);
        center_offset.set3(1, cy, cx, gy - cy as f64);
        for (k, corner) in vertebra.points().into_iter().enumerate() {
            corner_offset.set3(2 * k, cy, cx, corner.x / n - gx);
            corner_offset.set3(2 * k + 1, cy, cx, corner.y / n - gy);
        }
    }

    Ok(TargetMaps {
        heatmap,
        center_offset,
        corner_offset,
        center_mask,
    })
}

/// Draws `exp(−(dx²+dy²)/(2σ²))` around `(cx, cy)`, merging by maximum.
fn splat_gaussian(heatmap: &mut Tensor, cx: usize, cy: usize, sigma: f64) {
    let (_, h, w) = heatmap.chw().expect("heatmap is rank 3");
    let reach = (3.0 * sigma).ceil() as i64;
    let two_var = 2.0 * sigma * sigma;
    let (cx, cy) = (cx as i64, cy as i64);
    for y in (cy - reach).max(0)..=(cy + reach).min(h as i64 - 1) {
        for x in (cx - reach).max(0)..=(cx + reach).min(w as i64 - 1) {
            let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
            let g = (-(dx * dx + dy * dy) / two_var).exp();
            let (xu, yu) = (x as usize, y as usize);
            if g > heatmap.at3(0, yu, xu) {
                heatmap.set3(0, yu, xu, g);
            }
        }
    }
}

/// Local maxima of a 1×H×W heatmap, best first.
///
/// A cell qualifies when it scores above the threshold and no cell in its NMS
/// window is larger; equal-valued neighbours suppress every cell after the
/// first in row-major order.
pub fn extract_peaks(heatmap: &Tensor, cfg: &CodecConfig) -> Result<Vec<GridPeak>> {
    let (c, h, w) = heatmap.chw()?;
    if c != 1 {
        return Err(Error::invalid(format!("heatmap must have 1 channel, got {c}")));
    }
    let data = heatmap.data();
    let (ry, rx) = (cfg.nms_radius_y, cfg.nms_radius_x);
    let mut peaks = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let v = data[idx];
            if !(v > cfg.score_threshold) {
                continue;
            }
            let mut is_peak = true;
            'window: for ny in y.saturating_sub(ry)..=(y + ry).min(h - 1) {
                for nx in x.saturating_sub(rx)..=(x + rx).min(w - 1) {
                    let nidx = ny * w + nx;
                    if nidx == idx {
                        continue;
                    }
                    let nv = data[nidx];
                    if nv > v || (nv == v && nidx < idx) {
                        is_peak = false;
                        break 'window;
                    }
                }
            }
            if is_peak {
                peaks.push(GridPeak {
                    cx: x,
                    cy: y,
                    score: v,
                });
            }
        }
    }

    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.cy, a.cx).cmp(&(b.cy, b.cx)))
    });
    peaks.truncate(cfg.topk);
    Ok(peaks)
}

/// Landmarks traced from heatmap peaks through the offset maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSpine {
    /// Decoded vertebrae, top to bottom. Holds fewer than `expected` entries
    /// when not enough peaks qualified.
    pub annotation: SpineAnnotation,
    /// Refined vertebra centers in input pixels, aligned with `annotation`.
    pub centers: Vec<Point2>,
    /// Peaks aligned with `annotation`.
    pub peaks: Vec<GridPeak>,
    pub expected: usize,
}

impl DecodedSpine {
    pub fn is_complete(&self) -> bool {
        self.annotation.vertebrae.len() == self.expected
    }

    pub fn found(&self) -> usize {
        self.annotation.vertebrae.len()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.score).collect()
    }
}

/// Decodes prediction maps into ordered vertebra corners.
pub fn decode_landmarks(pred: &PredictionMaps, cfg: &CodecConfig) -> Result<DecodedSpine> {
    cfg.validate()?;
    let expect = |t: &Tensor, channels: usize, name: &str| -> Result<()> {
        let want = cfg.map_shape(channels);
        if t.shape() != want {
            return Err(Error::invalid(format!(
                "{name} has shape {:?}, expected {want:?}",
                t.shape()
            )));
        }
        Ok(())
    };
    expect(&pred.heatmap, 1, "heatmap")?;
    expect(&pred.center_offset, CENTER_OFFSET_CHANNELS, "center offset")?;
    expect(&pred.corner_offset, CORNER_OFFSET_CHANNELS, "corner offset")?;

    let n = cfg.n as f64;
    let mut traced: Vec<(GridPeak, Point2, VertebraCorners)> = extract_peaks(&pred.heatmap, cfg)?
        .into_iter()
        .map(|peak| {
            let (x, y) = (peak.cx, peak.cy);
            let gx = x as f64 + pred.center_offset.at3(0, y, x);
            let gy = y as f64 + pred.center_offset.at3(1, y, x);
            let corner = |k: usize| {
                Point2::new(
                    (gx + pred.corner_offset.at3(2 * k, y, x)) * n,
                    (gy + pred.corner_offset.at3(2 * k + 1, y, x)) * n,
                )
            };
            let corners = VertebraCorners::new(corner(0), corner(1), corner(2), corner(3));
            (peak, Point2::new(gx * n, gy * n), corners)
        })
        .collect();

    // Top-to-bottom by refined center; grid position settles exact ties.
    traced.sort_by(|a, b| {
        a.1.y
            .total_cmp(&b.1.y)
            .then((a.0.cy, a.0.cx).cmp(&(b.0.cy, b.0.cx)))
    });

    let mut peaks = Vec::with_capacity(traced.len());
    let mut centers = Vec::with_capacity(traced.len());
    let mut vertebrae = Vec::with_capacity(traced.len());
    for (peak, center, corners) in traced {
        peaks.push(peak);
        centers.push(center);
        vertebrae.push(corners);
    }
    Ok(DecodedSpine {
        annotation: SpineAnnotation::new(cfg.input_width(), cfg.input_height(), vertebrae),
        centers,
        peaks,
        expected: cfg.topk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(cx: f64, cy: f64, w: f64, h: f64) -> VertebraCorners {
        VertebraCorners::new(
            Point2::new(cx - w / 2.0, cy - h / 2.0),
            Point2::new(cx + w / 2.0, cy - h / 2.0),
            Point2::new(cx - w / 2.0, cy + h / 2.0),
            Point2::new(cx + w / 2.0, cy + h / 2.0),
        )
    }

    fn straight_spine() -> SpineAnnotation {
        let vertebrae = (0..VERTEBRA_COUNT)
            .map(|i| rect(32.3, 7.1 + 7.0 * i as f64, 18.0, 5.0))
            .collect();
        SpineAnnotation::new(64, 128, vertebrae)
    }

    fn cfg() -> CodecConfig {
        CodecConfig::for_input(64, 128).unwrap()
    }

    /// IoU of two axis-aligned boxes `(x0, y0, x1, y1)`.
    fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
        let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = iw * ih;
        let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
        inter / (area(a) + area(b) - inter)
    }

    /// Worst IoU across the three corner-shift cases at radius `r`.
    fn worst_case_iou(h: f64, w: f64, r: f64) -> f64 {
        let base = [0.0, 0.0, w, h];
        let shifted = [r, r, w + r, h + r];
        let shrunk = [r, r, w - r, h - r];
        let grown = [-r, -r, w + r, h + r];
        iou(base, shifted).min(iou(base, shrunk)).min(iou(base, grown))
    }

    #[test]
    fn radius_vanishes_as_overlap_approaches_one() {
        let r = gaussian_radius(10.0, 10.0, 1.0 - 1e-12).unwrap();
        assert!(r.abs() < 1e-9, "r = {r}");
    }

    #[test]
    fn radius_is_the_largest_shift_keeping_overlap() {
        for &(h, w) in &[(10.0, 10.0), (4.0, 1.25), (3.0, 17.0)] {
            let r = gaussian_radius(h, w, 0.7).unwrap();
            assert!(r > 0.0);
            assert!(worst_case_iou(h, w, r) >= 0.7 - 1e-12);
            assert!(worst_case_iou(h, w, r * (1.0 + 1e-6)) < 0.7);
            // Diagonal outward shift of both corners by r/√2.
            let d = r / 2f64.sqrt();
            assert!(iou([0.0, 0.0, w, h], [-d, -d, w + d, h + d]) >= 0.7);
        }
    }

    #[test]
    fn radius_grows_with_box() {
        let small = gaussian_radius(10.0, 10.0, 0.7).unwrap();
        let large = gaussian_radius(20.0, 20.0, 0.7).unwrap();
        assert!(large >= small);
    }

    #[test]
    fn radius_rejects_bad_boxes() {
        assert!(gaussian_radius(0.0, 3.0, 0.7).is_err());
        assert!(gaussian_radius(2.0, -1.0, 0.7).is_err());
        assert!(gaussian_radius(2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn center_offset_is_fractional_remainder() {
        // Center (10, 13) → cell (2, 3) and offset (0.5, 0.25).
        let mut ann = straight_spine();
        ann.vertebrae[1] = rect(10.0, 13.0, 18.0, 5.0);
        let maps = encode_targets(&ann, &cfg()).unwrap();
        assert_eq!(maps.center_mask.at3(0, 3, 2), 1.0);
        assert_eq!(maps.center_offset.at3(0, 3, 2), 0.5);
        assert_eq!(maps.center_offset.at3(1, 3, 2), 0.25);
    }

    #[test]
    fn corner_offset_in_grid_units() {
        // tl (4, 8) with center (12, 16) → (−2, −2).
        let mut ann = straight_spine();
        ann.vertebrae[1] = rect(12.0, 16.0, 16.0, 16.0);
        ann.vertebrae[0] = rect(30.0, 3.0, 16.0, 3.0);
        let maps = encode_targets(&ann, &cfg()).unwrap();
        assert_eq!(maps.corner_offset.at3(0, 4, 3), -2.0);
        assert_eq!(maps.corner_offset.at3(1, 4, 3), -2.0);
    }

    #[test]
    fn heatmap_is_gaussian_around_centers() {
        let mut c = cfg();
        c.min_overlap = 0.999; // radius → 0, σ hits the floor of 1 cell
        let ann = straight_spine();
        let maps = encode_targets(&ann, &c).unwrap();
        let center = center_of(&ann.vertebrae[8]);
        let (cx, cy) = ((center.x / 4.0) as usize, (center.y / 4.0) as usize);
        assert_eq!(maps.heatmap.at3(0, cy, cx), 1.0);
        let side = maps.heatmap.at3(0, cy, cx + 1);
        assert!((side - (-0.5f64).exp()).abs() < 1e-15, "{side}");
        assert!((side - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn heatmap_has_exactly_the_center_ones() {
        let maps = encode_targets(&straight_spine(), &cfg()).unwrap();
        let ones = maps.heatmap.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, VERTEBRA_COUNT);
        assert!(maps.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(maps.center_mask.sum(), VERTEBRA_COUNT as f64);
        for (h, m) in maps.heatmap.data().iter().zip(maps.center_mask.data()) {
            assert_eq!(*h == 1.0, *m == 1.0);
        }
    }

    #[test]
    fn collisions_name_both_vertebrae() {
        let mut ann = straight_spine();
        // Move vertebra 5 next to vertebra 4 inside the same 4×4 cell.
        let c4 = center_of(&ann.vertebrae[4]);
        let c5 = center_of(&ann.vertebrae[5]);
        let target = Point2::new(c4.x, (c4.y / 4.0).floor() * 4.0 + 3.9);
        ann.vertebrae[5] = ann.vertebrae[5].map(|p| p + (target - c5));
        if target.y <= c4.y {
            panic!("test construction must keep centers increasing");
        }
        match encode_targets(&ann, &cfg()) {
            Err(Error::EncodingCollision { first, second, .. }) => {
                assert_eq!((first, second), (4, 5));
            }
            other => panic!("expected collision, got {other:?}"),
        }
    }

    #[test]
    fn encode_rejects_mismatched_dims() {
        let mut ann = straight_spine();
        ann.image_width = 68;
        assert!(matches!(
            encode_targets(&ann, &cfg()),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn map_from(rows: &[&[f64]]) -> Tensor {
        let h = rows.len();
        let w = rows[0].len();
        Tensor::from_vec(&[1, h, w], rows.concat()).unwrap()
    }

    #[test]
    fn single_peak_is_found() {
        let mut c = CodecConfig::for_input(16, 24).unwrap();
        c.topk = 5;
        let mut hm = Tensor::zeros(&[1, 6, 4]);
        for y in 0..6 {
            for x in 0..4 {
                let d2 = (x as f64 - 2.0).powi(2) + (y as f64 - 3.0).powi(2);
                hm.set3(0, y, x, (-d2 / 2.0).exp());
            }
        }
        let peaks = extract_peaks(&hm, &c).unwrap();
        assert_eq!((peaks[0].cx, peaks[0].cy, peaks[0].score), (2, 3, 1.0));
        assert!(peaks[1..].iter().all(|p| p.score < 0.7));
    }

    #[test]
    fn square_window_plateau_keeps_first_index() {
        let mut c = CodecConfig::for_input(16, 12).unwrap();
        c.nms_radius_y = 1;
        // Vertical and horizontal 2-cell plateaus.
        for (rows, expect) in [
            (
                vec![&[0.1, 0.2, 0.1, 0.0][..], &[0.1, 0.9, 0.1, 0.0], &[0.1, 0.9, 0.1, 0.0]],
                (1, 1),
            ),
            (
                vec![&[0.0, 0.1, 0.1, 0.0][..], &[0.1, 0.9, 0.9, 0.1], &[0.0, 0.1, 0.1, 0.0]],
                (1, 1),
            ),
        ] {
            let hm = map_from(&rows);
            let peaks = extract_peaks(&hm, &c).unwrap();
            assert_eq!(peaks.len(), 1, "{peaks:?}");
            assert_eq!((peaks[0].cx, peaks[0].cy), expect);
            // Exhaustive check: the winner is the first cell holding the max.
            let data = hm.data();
            let max = data.iter().cloned().fold(f64::MIN, f64::max);
            let first = data.iter().position(|&v| v == max).unwrap();
            assert_eq!(first, expect.1 * 4 + expect.0);
        }
    }

    #[test]
    fn default_window_keeps_vertically_adjacent_peaks() {
        let c = CodecConfig::for_input(16, 12).unwrap();
        let hm = map_from(&[&[0.1, 0.2, 0.1, 0.0], &[0.1, 1.0, 0.1, 0.0], &[0.1, 1.0, 0.1, 0.0]]);
        let peaks = extract_peaks(&hm, &c).unwrap();
        assert_eq!((peaks[0].cx, peaks[0].cy), (1, 1));
        assert_eq!((peaks[1].cx, peaks[1].cy), (1, 2));
        // Horizontal plateau still collapses to its first cell.
        let hm = map_from(&[&[0.0, 0.0, 0.0, 0.0], &[0.1, 0.9, 0.9, 0.1], &[0.0, 0.0, 0.0, 0.0]]);
        let peaks = extract_peaks(&hm, &c).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!((peaks[0].cx, peaks[0].cy), (1, 1));
    }

    #[test]
    fn threshold_and_topk_limit_results() {
        let mut c = CodecConfig::for_input(16, 12).unwrap();
        let hm = map_from(&[&[0.0, 0.5, 0.0, 0.3], &[0.0, 0.0, 0.0, 0.0], &[0.8, 0.0, 0.0, 0.0]]);
        assert_eq!(extract_peaks(&hm, &c).unwrap().len(), 3);
        c.score_threshold = 0.4;
        let peaks = extract_peaks(&hm, &c).unwrap();
        assert_eq!(peaks.iter().map(|p| p.score).collect::<Vec<_>>(), vec![0.8, 0.5]);
        c.topk = 1;
        assert_eq!(extract_peaks(&hm, &c).unwrap().len(), 1);
    }

    #[test]
    fn encoded_heatmap_peaks_are_the_centers() {
        let ann = straight_spine();
        let c = cfg();
        let maps = encode_targets(&ann, &c).unwrap();
        let peaks = extract_peaks(&maps.heatmap, &c).unwrap();
        assert_eq!(peaks.len(), VERTEBRA_COUNT);
        let mut cells: Vec<_> = peaks.iter().map(|p| (p.cy, p.cx)).collect();
        cells.sort();
        let mut expected: Vec<_> = ann
            .centers()
            .iter()
            .map(|p| ((p.y / 4.0) as usize, (p.x / 4.0) as usize))
            .collect();
        expected.sort();
        assert_eq!(cells, expected);
    }

    #[test]
    fn zero_offsets_collapse_corners_onto_cell_origin() {
        let mut c = CodecConfig::for_input(16, 24).unwrap();
        c.topk = 1;
        let mut heatmap = Tensor::full(&[1, 6, 4], 0.1);
        heatmap.set3(0, 3, 2, 0.9);
        let pred = PredictionMaps {
            heatmap,
            center_offset: Tensor::zeros(&[2, 6, 4]),
            corner_offset: Tensor::zeros(&[8, 6, 4]),
        };
        let decoded = decode_landmarks(&pred, &c).unwrap();
        assert!(decoded.is_complete());
        for p in decoded.annotation.landmarks() {
            assert_eq!(p, Point2::new(8.0, 12.0));
        }
    }

    #[test]
    fn decoded_order_is_top_to_bottom() {
        let mut c = CodecConfig::for_input(16, 32).unwrap();
        c.topk = 2;
        let mut heatmap = Tensor::full(&[1, 8, 4], 0.05);
        heatmap.set3(0, 5, 1, 0.9);
        heatmap.set3(0, 2, 2, 0.8);
        let pred = PredictionMaps {
            heatmap,
            center_offset: Tensor::zeros(&[2, 8, 4]),
            corner_offset: Tensor::zeros(&[8, 8, 4]),
        };
        let decoded = decode_landmarks(&pred, &c).unwrap();
        assert_eq!(decoded.peaks[0].cy, 2);
        assert_eq!(decoded.peaks[1].cy, 5);
        assert_eq!(decoded.centers[0], Point2::new(8.0, 8.0));
    }

    #[test]
    fn partial_decode_reports_count() {
        let mut c = CodecConfig::for_input(16, 24).unwrap();
        c.score_threshold = 0.5;
        let mut heatmap = Tensor::full(&[1, 6, 4], 0.1);
        heatmap.set3(0, 1, 1, 0.9);
        heatmap.set3(0, 4, 2, 0.7);
        let pred = PredictionMaps {
            heatmap,
            center_offset: Tensor::zeros(&[2, 6, 4]),
            corner_offset: Tensor::zeros(&[8, 6, 4]),
        };
        let decoded = decode_landmarks(&pred, &c).unwrap();
        assert!(!decoded.is_complete());
        assert_eq!(decoded.found(), 2);
        assert_eq!(decoded.expected, VERTEBRA_COUNT);
    }

    #[test]
    fn round_trip_recovers_landmarks() {
        let ann = straight_spine();
        let c = cfg();
        let decoded = decode_landmarks(&encode_targets(&ann, &c).unwrap().as_prediction(), &c)
            .unwrap();
        assert!(decoded.is_complete());
        for (a, b) in decoded.annotation.landmarks().iter().zip(ann.landmarks()) {
            assert!(a.distance(b) < 1e-9);
        }
    }

    #[test]
    fn decode_rejects_wrong_shapes() {
        let c = cfg();
        let pred = PredictionMaps {
            heatmap: Tensor::zeros(&[1, 4, 4]),
            center_offset: Tensor::zeros(&[2, 4, 4]),
            corner_offset: Tensor::zeros(&[8, 4, 4]),
        };
        assert!(decode_landmarks(&pred, &c).is_err());
    }
}
