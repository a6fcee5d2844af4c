//! Synthetic AP-spine images with exact landmark ground truth, and the
//! expand / crop / contrast / brightness training augmentations.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::types::{
    validate_annotation, Point2, SpineAnnotation, VertebraCorners, VERTEBRA_COUNT,
};

/// Spine geometry and rendering parameters. The centerline is
/// `x(t) = W/2 + a1·sin(2π·f1·t + φ1) + a2·sin(2π·f2·t + φ2)` with `t = y / H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineGenConfig {
    pub width: usize,
    pub height: usize,
    pub amp1: f64,
    pub freq1: f64,
    pub phase1: f64,
    pub amp2: f64,
    pub freq2: f64,
    pub phase2: f64,
    pub vertebra_width: f64,
    pub vertebra_height: f64,
    pub vertebra_gap: f64,
    pub background: f64,
    pub foreground: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SpineGenConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 128,
            amp1: 0.0,
            freq1: 1.0,
            phase1: 0.0,
            amp2: 0.0,
            freq2: 2.0,
            phase2: 0.0,
            vertebra_width: 18.0,
            vertebra_height: 4.5,
            vertebra_gap: 2.5,
            background: 0.2,
            foreground: 0.7,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SpineGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Generation(msg));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive".into());
        }
        let finite = [
            self.amp1,
            self.freq1,
            self.phase1,
            self.amp2,
            self.freq2,
            self.phase2,
            self.vertebra_width,
            self.vertebra_height,
            self.vertebra_gap,
            self.background,
            self.foreground,
            self.noise_std,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.vertebra_width <= 0.0 || self.vertebra_height <= 0.0 || self.vertebra_gap < 0.0 {
            return bad("vertebra size must be positive and gap nonnegative".into());
        }
        if self.span() >= self.height as f64 {
            return bad(format!(
                "{VERTEBRA_COUNT} vertebrae span {} px, image is {} px tall",
                self.span(),
                self.height
            ));
        }
        if self.foreground <= self.background {
            return bad("vertebra intensity must exceed background".into());
        }
        if self.noise_std < 0.0 {
            return bad("noise std must be nonnegative".into());
        }
        Ok(())
    }

    /// Vertical extent of the stacked vertebrae, gaps included.
    pub fn span(&self) -> f64 {
        let n = VERTEBRA_COUNT as f64;
        n * self.vertebra_height + (n - 1.0) * self.vertebra_gap
    }

    pub fn centerline_x(&self, t: f64) -> f64 {
        self.width as f64 / 2.0
            + self.amp1 * (TAU * self.freq1 * t + self.phase1).sin()
            + self.amp2 * (TAU * self.freq2 * t + self.phase2).sin()
    }

    /// dx/dy of the centerline.
    pub fn centerline_slope(&self, t: f64) -> f64 {
        let dxdt = self.amp1 * TAU * self.freq1 * (TAU * self.freq1 * t + self.phase1).cos()
            + self.amp2 * TAU * self.freq2 * (TAU * self.freq2 * t + self.phase2).cos();
        dxdt / self.height as f64
    }

    /// Centers and unit tangents (pointing down the spine) of the vertebrae.
    pub fn vertebra_frames(&self) -> Vec<(Point2, Point2)> {
        let h = self.height as f64;
        let top = (h - self.span()) / 2.0 + self.vertebra_height / 2.0;
        let pitch = self.vertebra_height + self.vertebra_gap;
        (0..VERTEBRA_COUNT)
            .map(|k| {
                let y = top + pitch * k as f64;
                let t = y / h;
                let slope = self.centerline_slope(t);
                let len = slope.hypot(1.0);
                (
                    Point2::new(self.centerline_x(t), y),
                    Point2::new(slope / len, 1.0 / len),
                )
            })
            .collect()
    }
}

/// Ranges from which [`randomized_config`] draws per-sample curve parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRanges {
    pub amp1: (f64, f64),
    pub freq1: (f64, f64),
    pub amp2: (f64, f64),
    pub freq2: (f64, f64),
}

impl Default for CurveRanges {
    fn default() -> Self {
        Self {
            amp1: (5.0, 12.0),
            freq1: (0.5, 1.0),
            amp2: (0.0, 3.0),
            freq2: (1.5, 2.5),
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws curve parameters for one sample until the spine fits the canvas.
pub fn randomized_config(
    base: &SpineGenConfig,
    ranges: &CurveRanges,
    seed: u64,
) -> Result<SpineGenConfig> {
    const ATTEMPTS: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0b_b1e5);
    for _ in 0..ATTEMPTS {
        let cfg = SpineGenConfig {
            amp1: uniform(&mut rng, ranges.amp1),
            freq1: uniform(&mut rng, ranges.freq1),
            phase1: uniform(&mut rng, (0.0, TAU)),
            amp2: uniform(&mut rng, ranges.amp2),
            freq2: uniform(&mut rng, ranges.freq2),
            phase2: uniform(&mut rng, (0.0, TAU)),
            seed,
            ..base.clone()
        };
        if landmarks_of(&cfg).is_ok() {
            return Ok(cfg);
        }
    }
    Err(Error::Generation(format!(
        "no in-bounds spine after {ATTEMPTS} draws for seed {seed}"
    )))
}

fn landmarks_of(cfg: &SpineGenConfig) -> Result<SpineAnnotation> {
    cfg.validate()?;
    let (hw, hh) = (cfg.vertebra_width / 2.0, cfg.vertebra_height / 2.0);
    let vertebrae = cfg
        .vertebra_frames()
        .into_iter()
        .map(|(c, v)| {
            // Left→right axis, perpendicular to the downward tangent.
            let u = Point2::new(v.y, -v.x);
            VertebraCorners::new(
                c - u * hw - v * hh,
                c + u * hw - v * hh,
                c - u * hw + v * hh,
                c + u * hw + v * hh,
            )
        })
        .collect();
    let ann = SpineAnnotation::new(cfg.width, cfg.height, vertebrae);
    if let Some(problem) = validate_annotation(&ann).into_iter().next() {
        return Err(Error::Generation(format!(
            "spine leaves the canvas ({problem}); reduce the curve amplitudes"
        )));
    }
    Ok(ann)
}

/// Renders one sample. Pixel `(row, col)` is sampled at its center `(col, row)`.
pub fn generate_sample(cfg: &SpineGenConfig) -> Result<(Tensor, SpineAnnotation)> {
    let ann = landmarks_of(cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let (hw, hh) = (cfg.vertebra_width / 2.0, cfg.vertebra_height / 2.0);
    let frames = cfg.vertebra_frames();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Generation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut data = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let p = Point2::new(col as f64, row as f64);
            let inside = frames.iter().any(|&(c, v)| {
                let d = p - c;
                let along = d.x * v.x + d.y * v.y;
                let across = d.x * v.y - d.y * v.x;
                along.abs() <= hh && across.abs() <= hw
            });
            let base = if inside { cfg.foreground } else { cfg.background };
            data.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    Ok((Tensor::from_vec(&[1, h, w], data)?, ann))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Largest canvas growth per axis, as a fraction of the image size.
    pub max_expand: f64,
    /// Smallest retained fraction per axis when cropping.
    pub min_crop: f64,
    /// Brightness shift drawn from `[-max_brightness, max_brightness]`.
    pub max_brightness: f64,
    /// Contrast factor drawn from `[1 - max_contrast, 1 + max_contrast]`.
    pub max_contrast: f64,
    /// Fill value for expanded borders.
    pub pad_value: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_expand: 0.1,
            min_crop: 0.9,
            max_brightness: 0.1,
            max_contrast: 0.2,
            pad_value: SpineGenConfig::default().background,
            max_attempts: 20,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All ranges zero-width: the augmentation is the identity.
    pub fn identity() -> Self {
        Self {
            max_expand: 0.0,
            min_crop: 1.0,
            max_brightness: 0.0,
            max_contrast: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.max_expand) {
            return Err(Error::invalid("max_expand must lie in [0, 0.5]"));
        }
        if !(self.min_crop > 0.5 && self.min_crop <= 1.0) {
            return Err(Error::invalid("min_crop must lie in (0.5, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_brightness) || !(0.0..1.0).contains(&self.max_contrast) {
            return Err(Error::invalid("photometric ranges out of bounds"));
        }
        Ok(())
    }
}

/// Maps input-image coordinates to output coordinates: `p ↦ p·scale + shift`
/// per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAffine {
    pub scale: Point2,
    pub shift: Point2,
}

impl AxisAffine {
    pub const IDENTITY: AxisAffine = AxisAffine {
        scale: Point2::new(1.0, 1.0),
        shift: Point2::new(0.0, 0.0),
    };

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x * self.scale.x + self.shift.x,
            p.y * self.scale.y + self.shift.y,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: Tensor,
    pub annotation: SpineAnnotation,
    pub transform: AxisAffine,
    /// No crop kept every landmark; only photometric changes were applied.
    pub skipped: bool,
}

struct Window {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

pub fn augment(image: &Tensor, ann: &SpineAnnotation, cfg: &AugmentConfig) -> Result<Augmented> {
    cfg.validate()?;
    let (c, h, w) = image.chw()?;
    if c != 1 || w != ann.image_width || h != ann.image_height {
        return Err(Error::invalid(format!(
            "image {:?} does not match annotation {}x{}",
            image.shape(),
            ann.image_width,
            ann.image_height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Expand.
    let ew = (w as f64 * (1.0 + uniform(&mut rng, (0.0, cfg.max_expand)))).round() as usize;
    let eh = (h as f64 * (1.0 + uniform(&mut rng, (0.0, cfg.max_expand)))).round() as usize;
    let ox = rng.random_range(0..=ew - w);
    let oy = rng.random_range(0..=eh - h);

    // Crop: keep every landmark at least one pixel inside the window.
    let pts = ann.landmarks();
    let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
    for p in &pts {
        lo = Point2::new(lo.x.min(p.x + ox as f64), lo.y.min(p.y + oy as f64));
        hi = Point2::new(hi.x.max(p.x + ox as f64), hi.y.max(p.y + oy as f64));
    }
    let mut window = None;
    for _ in 0..cfg.max_attempts.max(1) {
        let cw = ((ew as f64 * uniform(&mut rng, (cfg.min_crop, 1.0))).round() as usize).clamp(1, ew);
        let ch = ((eh as f64 * uniform(&mut rng, (cfg.min_crop, 1.0))).round() as usize).clamp(1, eh);
        let x0 = rng.random_range(0..=ew - cw);
        let y0 = rng.random_range(0..=eh - ch);
        let fits = lo.x >= x0 as f64 + 1.0
            && lo.y >= y0 as f64 + 1.0
            && hi.x <= (x0 + cw) as f64 - 2.0
            && hi.y <= (y0 + ch) as f64 - 2.0;
        if fits {
            window = Some(Window { x0, y0, w: cw, h: ch });
            break;
        }
    }
    let brightness = uniform(&mut rng, (-cfg.max_brightness, cfg.max_brightness));
    let contrast = uniform(&mut rng, (1.0 - cfg.max_contrast, 1.0 + cfg.max_contrast));

    let (mut out, annotation, transform, skipped) = match window {
        Some(win) => {
            let pixel = |x: usize, y: usize| -> f64 {
                // Window coordinates → expanded canvas → source image.
                let (ex, ey) = (x + win.x0, y + win.y0);
                if ex < ox || ey < oy || ex >= ox + w || ey >= oy + h {
                    cfg.pad_value
                } else {
                    image.at3(0, ey - oy, ex - ox)
                }
            };
            let mut crop = Tensor::zeros(&[1, win.h, win.w]);
            for y in 0..win.h {
                for x in 0..win.w {
                    crop.set3(0, y, x, pixel(x, y));
                }
            }
            let shift = Point2::new(ox as f64 - win.x0 as f64, oy as f64 - win.y0 as f64);
            (crop, shift, win, false)
        }
        None => (
            image.clone(),
            Point2::new(0.0, 0.0),
            Window { x0: 0, y0: 0, w, h },
            true,
        ),
    }
    .pipe(|(img, shift, win, skipped)| {
        let sx = w as f64 / win.w as f64;
        let sy = h as f64 / win.h as f64;
        // Pixel-center aligned resize: x' = (x + 0.5)·s − 0.5.
        let transform = if win.w == w && win.h == h {
            AxisAffine {
                scale: Point2::new(1.0, 1.0),
                shift,
            }
        } else {
            AxisAffine {
                scale: Point2::new(sx, sy),
                shift: Point2::new((shift.x + 0.5) * sx - 0.5, (shift.y + 0.5) * sy - 0.5),
            }
        };
        let annotation = ann.map_points(|p| transform.apply(p));
        (img, annotation, transform, skipped)
    });

    // Photometric: contrast about the mean, then brightness, then clamp.
    let mean = out.sum() / out.len() as f64;
    for v in out.data_mut() {
        *v = (*v * contrast + mean * (1.0 - contrast) + brightness).clamp(0.0, 1.0);
    }
    let (_, oh, ow) = out.chw()?;
    if ow != w || oh != h {
        out = resize_bilinear(&out, w, h)?;
    }
    Ok(Augmented {
        image: out,
        annotation,
        transform,
        skipped,
    })
}

trait Pipe: Sized {
    fn pipe<R>(self, f: impl FnOnce(Self) -> R) -> R {
        f(self)
    }
}

impl<T> Pipe for T {}

/// Bilinear resampling of a 1×H×W image with pixel-center alignment.
pub fn resize_bilinear(image: &Tensor, width: usize, height: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if c != 1 || width == 0 || height == 0 {
        return Err(Error::invalid("resize expects a 1×H×W image and positive size"));
    }
    let (sx, sy) = (w as f64 / width as f64, h as f64 / height as f64);
    let mut out = Tensor::zeros(&[1, height, width]);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = image.at3(0, y0, x0) * (1.0 - tx) + image.at3(0, y0, x1) * tx;
            let bottom = image.at3(0, y1, x0) * (1.0 - tx) + image.at3(0, y1, x1) * tx;
            out.set3(0, y, x, top * (1.0 - ty) + bottom * ty);
        }
    }
    Ok(out)
}
