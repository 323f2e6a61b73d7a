//! Flat-shaded cartoon faces whose mouth curvature encodes valence and whose
//! eye opening and brow height encode arousal, plus the analytic inverse.
//!
//! All coordinates are in pixels of the 96×96 canvas; pixel `(row, col)`
//! covers `[col, col+1) × [row, row+1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affect::{EmotionLabel, ImageTensor};
use crate::error::{Error, Result};

pub const CANVAS: usize = 96;
const SUPERSAMPLE: usize = 4;
const SUBCOLUMNS: usize = 16;

pub const BACKGROUND: [f32; 3] = [0.80, 0.86, 0.92];
/// Color of eyes, brows, and mouth.
pub const FEATURE: [f32; 3] = [0.15, 0.08, 0.08];
/// Standard deviation of the per-pixel render noise (0..1 units).
pub const NOISE_STD: f64 = 0.004;

pub const FACE_CENTER: (f64, f64) = (48.0, 50.0);
/// Vertical semi-axis exceeds the horizontal one by this much.
pub const FACE_ELONGATION: f64 = 8.0;
pub const FACE_RADIUS_RANGE: (f64, f64) = (30.0, 34.0);
pub const EYE_SPACING_RANGE: (f64, f64) = (26.0, 32.0);

pub const EYE_Y: f64 = 44.0;
pub const EYE_SEMI_X: f64 = 6.0;
/// Eye semi-height is `EYE_H0 + EYE_H_SLOPE · arousal`.
pub const EYE_H0: f64 = 2.5;
pub const EYE_H_SLOPE: f64 = 1.75;
/// Brow center row is `BROW_Y0 - BROW_SLOPE · arousal`.
pub const BROW_Y0: f64 = 33.0;
pub const BROW_SLOPE: f64 = 3.0;
pub const BROW_WIDTH: f64 = 12.0;
pub const BROW_HEIGHT: f64 = 3.0;

/// Mouth centerline: `x = 48 + MOUTH_HALF_WIDTH·t`,
/// `y = MOUTH_Y + MOUTH_CURVE·valence·(0.5 − t²)` for `t ∈ [−1, 1]`.
pub const MOUTH_Y: f64 = 68.0;
pub const MOUTH_HALF_WIDTH: f64 = 14.0;
pub const MOUTH_CURVE: f64 = 5.0;
pub const MOUTH_THICKNESS: f64 = 3.0;

/// Pixel regions `(rows, cols)` that contain everything the mouth, and
/// everything the eyes and brows, can touch.
pub const MOUTH_REGION: ((usize, usize), (usize, usize)) = ((59, 78), (29, 68));
pub const EYE_REGION: ((usize, usize), (usize, usize)) = ((26, 51), (22, 75));

/// Identity of a synthetic face: everything but the expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub eye_spacing: f64,
    pub face_radius: f64,
}

impl Identity {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let skin = [
            rng.random_range(0.75..0.95),
            rng.random_range(0.55..0.80),
            rng.random_range(0.45..0.70),
        ];
        let r: f32 = rng.random_range(0.10..0.60);
        let g = r * rng.random_range(0.6..0.9);
        let b = g * rng.random_range(0.6..0.9);
        Self {
            skin,
            hair: [r, g, b],
            eye_spacing: rng.random_range(EYE_SPACING_RANGE.0..=EYE_SPACING_RANGE.1),
            face_radius: rng.random_range(FACE_RADIUS_RANGE.0..=FACE_RADIUS_RANGE.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in01 = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in01(&self.skin) || !in01(&self.hair) {
            return Err(Error::Config("identity colors must lie in [0, 1]".into()));
        }
        if !(EYE_SPACING_RANGE.0..=EYE_SPACING_RANGE.1).contains(&self.eye_spacing) {
            return Err(Error::Config(format!("eye spacing {} out of range", self.eye_spacing)));
        }
        if !(FACE_RADIUS_RANGE.0..=FACE_RADIUS_RANGE.1).contains(&self.face_radius) {
            return Err(Error::Config(format!("face radius {} out of range", self.face_radius)));
        }
        let contrast: f32 = self.skin.iter().zip(FEATURE).map(|(s, f)| (s - f).powi(2)).sum::<f32>().sqrt();
        if contrast < 0.3 {
            return Err(Error::Config("skin is too close to the feature color".into()));
        }
        Ok(())
    }
}

impl Default for Identity {
    fn default() -> Self {
        Self {
            skin: [0.85, 0.68, 0.56],
            hair: [0.35, 0.25, 0.18],
            eye_spacing: 29.0,
            face_radius: 32.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub identity: Identity,
    pub expression: EmotionLabel,
    pub noise_seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Paint {
    Background,
    Hair,
    Skin,
}

struct Layout {
    face_rx: f64,
    face_ry: f64,
    eye_xs: [f64; 2],
    eye_h: f64,
    brow_y: f64,
    valence: f64,
}

impl Layout {
    fn new(p: &FaceParams) -> Self {
        let (v, a) = (p.expression.valence() as f64, p.expression.arousal() as f64);
        let half = p.identity.eye_spacing / 2.0;
        Self {
            face_rx: p.identity.face_radius,
            face_ry: p.identity.face_radius + FACE_ELONGATION,
            eye_xs: [48.0 - half, 48.0 + half],
            eye_h: EYE_H0 + EYE_H_SLOPE * a,
            brow_y: BROW_Y0 - BROW_SLOPE * a,
            valence: v,
        }
    }

    fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
        let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
        dx * dx + dy * dy <= 1.0
    }

    /// Vertical extent of the mouth stroke at column position `x`: the
    /// centerline offset by half the thickness measured perpendicular to it.
    fn mouth_span(&self, x: f64) -> Option<(f64, f64)> {
        let t = (x - 48.0) / MOUTH_HALF_WIDTH;
        if t.abs() > 1.0 {
            return None;
        }
        let c = MOUTH_Y + MOUTH_CURVE * self.valence * (0.5 - t * t);
        let slope = -2.0 * MOUTH_CURVE * self.valence * t / MOUTH_HALF_WIDTH;
        let half = MOUTH_THICKNESS / 2.0 * (1.0 + slope * slope).sqrt();
        Some((c - half, c + half))
    }

    /// Vertical extents of the eye and brow shapes crossing column
    /// position `x`.
    fn eye_spans(&self, x: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.eye_xs.iter().flat_map(move |&ex| {
            let dx = (x - ex) / EYE_SEMI_X;
            let eye = (dx.abs() <= 1.0).then(|| {
                let half = self.eye_h * (1.0 - dx * dx).sqrt();
                (EYE_Y - half, EYE_Y + half)
            });
            let brow = ((x - ex).abs() <= BROW_WIDTH / 2.0)
                .then_some((self.brow_y - BROW_HEIGHT / 2.0, self.brow_y + BROW_HEIGHT / 2.0));
            eye.into_iter().chain(brow)
        })
    }

    /// Fraction of pixel `(row, col)` covered by facial features, exact
    /// along rows and sampled at `SUBCOLUMNS` positions along columns.
    /// Features never overlap each other.
    fn feature_coverage(&self, row: usize, col: usize) -> f64 {
        let (top, bottom) = (row as f64, row as f64 + 1.0);
        let mut acc = 0.0;
        for k in 0..SUBCOLUMNS {
            let x = col as f64 + (k as f64 + 0.5) / SUBCOLUMNS as f64;
            for (lo, hi) in self.mouth_span(x).into_iter().chain(self.eye_spans(x)) {
                acc += (hi.min(bottom) - lo.max(top)).max(0.0);
            }
        }
        (acc / SUBCOLUMNS as f64).min(1.0)
    }

    fn paint(&self, x: f64, y: f64) -> Paint {
        let (cx, cy) = FACE_CENTER;
        if Self::in_ellipse(x, y, cx, cy, self.face_rx, self.face_ry) {
            Paint::Skin
        } else if Self::in_ellipse(x, y, cx, cy - 6.0, self.face_rx + 4.0, self.face_ry - 2.0) && y < cy {
            Paint::Hair
        } else {
            Paint::Background
        }
    }
}

/// Renders a 96×96 face. Deterministic in all of `p`.
pub fn render_face(p: &FaceParams) -> ImageTensor {
    let layout = Layout::new(p);
    let colors = |paint: Paint| match paint {
        Paint::Background => BACKGROUND,
        Paint::Hair => p.identity.hair,
        Paint::Skin => p.identity.skin,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.noise_seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let plane = CANVAS * CANVAS;
    let mut data = vec![0f32; 3 * plane];
    let sub = SUPERSAMPLE as f64;
    for row in 0..CANVAS {
        for col in 0..CANVAS {
            let mut acc = [0f64; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = col as f64 + (sx as f64 + 0.5) / sub;
                    let y = row as f64 + (sy as f64 + 0.5) / sub;
                    let c = colors(layout.paint(x, y));
                    for k in 0..3 {
                        acc[k] += c[k] as f64;
                    }
                }
            }
            let in_region = |((r0, r1), (c0, c1)): ((usize, usize), (usize, usize))| {
                (r0..r1).contains(&row) && (c0..c1).contains(&col)
            };
            let cover = if in_region(MOUTH_REGION) || in_region(EYE_REGION) {
                layout.feature_coverage(row, col)
            } else {
                0.0
            };
            for (k, a) in acc.iter().enumerate() {
                let base = a / (sub * sub);
                let v = base + cover * (FEATURE[k] as f64 - base) + noise.sample(&mut rng);
                data[k * plane + row * CANVAS + col] = (v.clamp(0.0, 1.0) * 2.0 - 1.0) as f32;
            }
        }
    }
    ImageTensor::new(CANVAS, CANVAS, data).expect("canvas shape")
}

/// Per-pixel coverage of the feature color, estimated by projecting each
/// pixel onto the skin→feature color axis. Unclamped, so noise averages out.
struct Darkness {
    values: Vec<f64>,
}

impl Darkness {
    fn new(img: &ImageTensor, skin: [f64; 3]) -> Result<Self> {
        let axis: Vec<f64> = (0..3).map(|c| FEATURE[c] as f64 - skin[c]).collect();
        let norm2: f64 = axis.iter().map(|a| a * a).sum();
        if norm2 < 0.04 {
            return Err(Error::Oracle("skin and feature colors are indistinguishable".into()));
        }
        let mut values = vec![0.0; CANVAS * CANVAS];
        for row in 0..CANVAS {
            for col in 0..CANVAS {
                let p = img.pixel(row, col);
                let d: f64 = (0..3).map(|c| ((p[c] as f64 + 1.0) / 2.0 - skin[c]) * axis[c]).sum();
                values[row * CANVAS + col] = d / norm2;
            }
        }
        Ok(Self { values })
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * CANVAS + col]
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn estimate_skin(img: &ImageTensor) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut samples = Vec::new();
        for row in 52..58 {
            for col in (30..36).chain(60..66) {
                samples.push((img.at(c, row, col) as f64 + 1.0) / 2.0);
            }
        }
        *o = median(samples);
    }
    out
}

/// Threshold below which a pixel's darkness is treated as skin when
/// locating the mouth stroke.
const STROKE_THRESHOLD: f64 = 0.15;

/// Half-height in rows of the window used to refine stroke centroids.
const STROKE_WINDOW: f64 = 4.0;

fn read_valence(d: &Darkness) -> Result<f64> {
    let ((r0, r1), _) = MOUTH_REGION;
    // Stay clear of the rounded stroke ends.
    let (c0, c1) = (36, 60);
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for col in c0..c1 {
        let (mut mass, mut moment) = (0.0, 0.0);
        for row in r0..r1 {
            let w = (d.at(row, col) - STROKE_THRESHOLD).max(0.0);
            mass += w;
            moment += w * (row as f64 + 0.5);
        }
        if mass > 0.5 {
            // Refine with raw coverage in a window around the coarse
            // centroid; thresholding alone quantizes to the pixel grid.
            let coarse = moment / mass;
            let lo = ((coarse - STROKE_WINDOW).floor() as usize).max(r0);
            let hi = ((coarse + STROKE_WINDOW).ceil() as usize).min(r1);
            let (mut mass, mut moment) = (0.0, 0.0);
            for row in lo..hi {
                let w = d.at(row, col);
                mass += w;
                moment += w * (row as f64 + 0.5);
            }
            if mass > 0.5 {
                ts.push((col as f64 + 0.5 - 48.0) / MOUTH_HALF_WIDTH);
                ys.push(moment / mass);
            }
        }
    }
    if ts.len() < (c1 - c0) / 2 {
        return Err(Error::Oracle(format!(
            "mouth stroke found in only {} of {} columns",
            ts.len(),
            c1 - c0
        )));
    }
    // Least squares y = a + b·t².
    let n = ts.len() as f64;
    let u: Vec<f64> = ts.iter().map(|t| t * t).collect();
    let mu = u.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let suu: f64 = u.iter().map(|x| (x - mu).powi(2)).sum();
    let suy: f64 = u.iter().zip(&ys).map(|(x, y)| (x - mu) * (y - my)).sum();
    let b = suy / suu;
    Ok(-b / MOUTH_CURVE)
}

fn read_arousal(d: &Darkness) -> Result<f64> {
    let ((_, r1), (c0, c1)) = EYE_REGION;
    let mid = 48;
    // Eye opening from ink mass: each eye is an ellipse of area π·6·h.
    let mut eye_h = Vec::new();
    for (lo, hi) in [(c0, mid), (mid, c1)] {
        let mass: f64 = (38..r1).flat_map(|row| (lo..hi).map(move |col| (row, col))).map(|(r, c)| d.at(r, c)).sum();
        if mass < 5.0 {
            return Err(Error::Oracle("eye not found".into()));
        }
        eye_h.push(mass / (std::f64::consts::PI * EYE_SEMI_X));
    }
    let h = (eye_h[0] + eye_h[1]) / 2.0;
    let from_eyes = (h - EYE_H0) / EYE_H_SLOPE;

    // Brow height from the ink centroid of the rows above the eyes.
    let (mut mass, mut moment) = (0.0, 0.0);
    for row in 26..38 {
        for col in 25..71 {
            let w = (d.at(row, col) - STROKE_THRESHOLD).max(0.0);
            mass += w;
            moment += w * (row as f64 + 0.5);
        }
    }
    let expected = 2.0 * BROW_WIDTH * BROW_HEIGHT;
    if mass < 0.3 * expected {
        return Err(Error::Oracle("brows not found".into()));
    }
    let from_brows = (BROW_Y0 - moment / mass) / BROW_SLOPE;
    Ok((from_eyes + from_brows) / 2.0)
}

/// Recovers the expression of a rendered face from mouth curvature, eye
/// opening, and brow height. Estimates are clamped into `[-1, 1]`.
pub fn read_expression(img: &ImageTensor) -> Result<EmotionLabel> {
    if img.height() != CANVAS || img.width() != CANVAS {
        return Err(Error::Oracle(format!(
            "expected a {CANVAS}x{CANVAS} face, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let d = Darkness::new(img, estimate_skin(img))?;
    let v = read_valence(&d)?;
    let a = read_arousal(&d)?;
    if !(v.is_finite() && a.is_finite()) {
        return Err(Error::Oracle("non-finite measurement".into()));
    }
    Ok(EmotionLabel::clamped(v as f32, a as f32))
}

/// Identity plus a uniformly random expression.
pub fn sample_face(rng: &mut impl Rng) -> FaceParams {
    let identity = Identity::sample(rng);
    let expression = EmotionLabel::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)).expect("in range");
    FaceParams {
        identity,
        expression,
        noise_seed: rng.random(),
    }
}
