//! Domain vocabulary shared by every stage of the pipeline.
//!
//! Coordinates are continuous input-image pixels with the origin at the
//! top-left corner and pixel centers on integer coordinates; `x` grows to the
//! right and `y` grows downward.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

pub const VERTEBRA_COUNT: usize = 17;
pub const CORNERS_PER_VERTEBRA: usize = 4;
pub const LANDMARK_COUNT: usize = VERTEBRA_COUNT * CORNERS_PER_VERTEBRA;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// The four corner landmarks of one vertebra body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertebraCorners {
    pub tl: Point2,
    pub tr: Point2,
    pub bl: Point2,
    pub br: Point2,
}

impl VertebraCorners {
    pub fn new(tl: Point2, tr: Point2, bl: Point2, br: Point2) -> Self {
        Self { tl, tr, bl, br }
    }

    /// Corners in landmark order: TL, TR, BL, BR.
    pub fn points(&self) -> [Point2; CORNERS_PER_VERTEBRA] {
        [self.tl, self.tr, self.bl, self.br]
    }

    pub fn from_points(p: [Point2; CORNERS_PER_VERTEBRA]) -> Self {
        Self::new(p[0], p[1], p[2], p[3])
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self::from_points(self.points().map(f))
    }

    pub fn center(&self) -> Point2 {
        center_of(self)
    }
}

/// Mean of the four corners.
pub fn center_of(corners: &VertebraCorners) -> Point2 {
    let sx = corners.tl.x + corners.tr.x + corners.bl.x + corners.br.x;
    let sy = corners.tl.y + corners.tr.y + corners.bl.y + corners.br.y;
    Point2::new(sx / 4.0, sy / 4.0)
}

/// Ground-truth (or decoded) landmarks for one image, vertebrae ordered top
/// to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineAnnotation {
    pub image_width: usize,
    pub image_height: usize,
    pub vertebrae: Vec<VertebraCorners>,
}

impl SpineAnnotation {
    pub fn new(image_width: usize, image_height: usize, vertebrae: Vec<VertebraCorners>) -> Self {
        Self {
            image_width,
            image_height,
            vertebrae,
        }
    }

    /// Builds an annotation from a flat landmark list. Trailing points that do
    /// not complete a vertebra are dropped.
    pub fn from_landmarks(image_width: usize, image_height: usize, landmarks: &[Point2]) -> Self {
        let vertebrae = landmarks
            .chunks_exact(CORNERS_PER_VERTEBRA)
            .map(|c| VertebraCorners::new(c[0], c[1], c[2], c[3]))
            .collect();
        Self::new(image_width, image_height, vertebrae)
    }

    pub fn landmarks(&self) -> Vec<Point2> {
        self.vertebrae.iter().flat_map(|v| v.points()).collect()
    }

    pub fn centers(&self) -> Vec<Point2> {
        self.vertebrae.iter().map(center_of).collect()
    }

    /// Applies `f` to every landmark, keeping the image size.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self {
            image_width: self.image_width,
            image_height: self.image_height,
            vertebrae: self.vertebrae.iter().map(|v| v.map(&f)).collect(),
        }
    }
}

/// A local maximum of a heatmap on the output grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPeak {
    pub cx: usize,
    pub cy: usize,
    pub score: f64,
}

/// Lists every broken annotation invariant. An empty list means the annotation
/// is valid.
pub fn validate_annotation(ann: &SpineAnnotation) -> Vec<String> {
    let mut violations = Vec::new();
    if ann.vertebrae.len() != VERTEBRA_COUNT {
        violations.push(format!(
            "vertebra count {} != {VERTEBRA_COUNT}",
            ann.vertebrae.len()
        ));
    }
    let (w, h) = (ann.image_width as f64, ann.image_height as f64);
    const NAMES: [&str; CORNERS_PER_VERTEBRA] = ["tl", "tr", "bl", "br"];

    for (i, v) in ann.vertebrae.iter().enumerate() {
        for (name, p) in NAMES.iter().zip(v.points()) {
            if !p.is_finite() {
                violations.push(format!("vertebra {i}: landmark {name} is not finite"));
            } else if !(0.0..w).contains(&p.x) || !(0.0..h).contains(&p.y) {
                violations.push(format!(
                    "vertebra {i}: landmark {name} ({}, {}) outside {}x{} image",
                    p.x, p.y, ann.image_width, ann.image_height
                ));
            }
        }
        if v.tl.x >= v.tr.x {
            violations.push(format!("vertebra {i}: tl.x >= tr.x"));
        }
        if v.bl.x >= v.br.x {
            violations.push(format!("vertebra {i}: bl.x >= br.x"));
        }
        if (v.tl.y + v.tr.y) / 2.0 >= (v.bl.y + v.br.y) / 2.0 {
            violations.push(format!("vertebra {i}: top edge not above bottom edge"));
        }
    }

    for (i, pair) in ann.vertebrae.windows(2).enumerate() {
        if center_of(&pair[0]).y >= center_of(&pair[1]).y {
            violations.push(format!("center y not increasing at index {i}"));
        }
    }
    violations
}
