use image::{GrayImage, Luma, RgbImage};
use serde::Serialize;

use super::metrics::{MetricReport, Subset};
use super::{Editor, Rater};
use crate::affect::{denormalize_image, image_to_rgb, EmotionLabel, ImageTensor};
use crate::error::{Error, Result};

/// Half-open pixel rectangle `((row0, row1), (col0, col1))`.
pub type Region = ((usize, usize), (usize, usize));

/// Square grid of labels. Row `r` holds valence from high (top) to low,
/// column `c` arousal from high (left) to low, each spanning
/// `center ± half_span` in `n` even steps and clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelGrid {
    pub n: usize,
    pub center: [f64; 2],
    pub half_span: f64,
}

impl LabelGrid {
    /// `n × n` labels covering `[-1, 1]²`.
    pub fn full(n: usize) -> Result<Self> {
        Self::around(n, [0.0, 0.0], 1.0)
    }

    pub fn around(n: usize, center: [f64; 2], half_span: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("label grid needs at least 2 steps per axis, got {n}")));
        }
        for (field, value) in [("valence", center[0]), ("arousal", center[1])] {
            if !(value.is_finite() && (-1.0..=1.0).contains(&value)) {
                return Err(Error::LabelOutOfRange { field, value });
            }
        }
        if !(half_span.is_finite() && half_span > 0.0 && half_span <= 2.0) {
            return Err(Error::Config(format!("grid half span {half_span} must be in (0, 2]")));
        }
        Ok(Self { n, center, half_span })
    }

    fn value(&self, axis: usize, i: usize) -> f32 {
        let t = 1.0 - 2.0 * i as f64 / (self.n - 1) as f64;
        (self.center[axis] + self.half_span * t).clamp(-1.0, 1.0) as f32
    }

    pub fn label(&self, row: usize, col: usize) -> EmotionLabel {
        EmotionLabel::clamped(self.value(0, row), self.value(1, col))
    }

    /// All labels, row-major.
    pub fn labels(&self) -> Vec<EmotionLabel> {
        (0..self.n).flat_map(|r| (0..self.n).map(move |c| self.label(r, c))).collect()
    }

    /// Row-major index of the exactly neutral label, if the grid has one.
    pub fn neutral_index(&self) -> Option<usize> {
        self.labels().iter().position(|y| *y == EmotionLabel::NEUTRAL)
    }
}

/// Outcome of [`quantitative_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct QuantitativeResult {
    pub all: MetricReport,
    pub extreme: MetricReport,
    pub threshold: f32,
    pub sources: usize,
    pub labels: usize,
    /// Edits the rater could not read. They count as a `(0, 0)` rating,
    /// which agrees in sign with no nonzero label.
    pub unrated: usize,
}

/// Edits every source to every label, rates the edits, and scores the
/// ratings against the intended labels, over all edits and over edits
/// whose label has both magnitudes at least `threshold`.
pub fn quantitative_experiment(
    editor: &dyn Editor,
    rater: &dyn Rater,
    sources: &[ImageTensor],
    labels: &[EmotionLabel],
    threshold: f32,
    mut progress: impl FnMut(usize),
) -> Result<QuantitativeResult> {
    if sources.is_empty() || labels.is_empty() {
        return Err(Error::Config("quantitative experiment needs sources and labels".into()));
    }
    if !labels.iter().any(|y| y.is_extreme(threshold)) {
        return Err(Error::Config(format!("no label reaches the extreme threshold {threshold}")));
    }
    let mut targets = Vec::with_capacity(sources.len() * labels.len());
    let mut preds = Vec::with_capacity(targets.capacity());
    let mut unrated = 0;
    for (i, src) in sources.iter().enumerate() {
        let edits = editor.edit(src, labels)?;
        if edits.len() != labels.len() {
            return Err(Error::Shape(format!("editor returned {} edits for {} labels", edits.len(), labels.len())));
        }
        for (y, rating) in labels.iter().zip(rater.rate_batch(&edits)) {
            targets.push([y.valence() as f64, y.arousal() as f64]);
            preds.push(rating.unwrap_or_else(|_| {
                unrated += 1;
                [0.0, 0.0]
            }));
        }
        progress(i + 1);
    }
    let (ext_t, ext_p): (Vec<_>, Vec<_>) = targets
        .iter()
        .zip(&preds)
        .filter(|(t, _)| t[0].abs() >= threshold as f64 && t[1].abs() >= threshold as f64)
        .unzip();
    Ok(QuantitativeResult {
        all: MetricReport::compute(Subset::All, &targets, &preds)?,
        extreme: MetricReport::compute(Subset::Extreme, &ext_t, &ext_p)?,
        threshold,
        sources: sources.len(),
        labels: labels.len(),
        unrated,
    })
}

/// Per-pixel maximum over channels of the absolute difference.
pub fn diff_heatmap(a: &ImageTensor, b: &ImageTensor) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot compare {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let plane = a.height() * a.width();
    let (da, db) = (a.data(), b.data());
    Ok((0..plane)
        .map(|p| {
            (0..ImageTensor::CHANNELS)
                .map(|c| (da[c * plane + p] as f64 - db[c * plane + p] as f64).abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Aggregated difference map for one label, scaled so its peak is 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub label: EmotionLabel,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Sum of the aggregate before scaling.
    pub total: f64,
}

impl Heatmap {
    pub fn normalized(label: EmotionLabel, height: usize, width: usize, sums: Vec<f64>) -> Self {
        let peak = sums.iter().copied().fold(0.0, f64::max);
        let total = sums.iter().sum();
        let values = if peak > 0.0 {
            sums.iter().map(|&v| if v == peak { 1.0 } else { v / peak }).collect()
        } else {
            sums
        };
        Self {
            label,
            height,
            width,
            values,
            total,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Share of the map's mass inside `region`; 0 for an all-zero map.
    pub fn mass_fraction(&self, region: Region) -> f64 {
        region_mass_fraction(&self.values, self.width, region)
    }

    /// 8-bit grayscale, white where the change is largest.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.values[y as usize * self.width + x as usize];
            Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }
}

pub fn region_mass_fraction(values: &[f64], width: usize, region: Region) -> f64 {
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let ((r0, r1), (c0, c1)) = region;
    let inside: f64 = values
        .chunks(width)
        .enumerate()
        .filter(|(r, _)| (r0..r1).contains(r))
        .map(|(_, row)| row[c0.min(width)..c1.min(width)].iter().sum::<f64>())
        .sum();
    inside / total
}

/// Outcome of [`qualitative_experiment`].
#[derive(Debug, Clone)]
pub struct QualitativeResult {
    pub grid: LabelGrid,
    pub faces: usize,
    /// One map per non-neutral label, in row-major grid order.
    pub heatmaps: Vec<Heatmap>,
    /// The first face edited to the neutral label.
    pub neutral_preview: ImageTensor,
}

impl QualitativeResult {
    pub fn heatmap(&self, row: usize, col: usize) -> Option<&Heatmap> {
        let y = self.grid.label(row, col);
        self.heatmaps.iter().find(|h| h.label == y)
    }
}

/// Edits each face to every grid label, sums each edit's difference from
/// the same face's neutral edit over faces, and normalizes each sum.
pub fn qualitative_experiment(
    editor: &dyn Editor,
    faces: &[ImageTensor],
    grid: LabelGrid,
    mut progress: impl FnMut(usize),
) -> Result<QualitativeResult> {
    let neutral = grid
        .neutral_index()
        .ok_or_else(|| Error::Config("label grid does not contain the neutral label".into()))?;
    let first = faces.first().ok_or_else(|| Error::Config("qualitative experiment needs at least one face".into()))?;
    let labels = grid.labels();
    let (h, w) = (first.height(), first.width());
    let mut sums = vec![vec![0.0f64; h * w]; labels.len()];
    let mut neutral_preview = None;
    for (i, face) in faces.iter().enumerate() {
        let edits = editor.edit(face, &labels)?;
        if edits.len() != labels.len() {
            return Err(Error::Shape(format!("editor returned {} edits for {} labels", edits.len(), labels.len())));
        }
        for (k, edit) in edits.iter().enumerate() {
            if k != neutral {
                for (s, d) in sums[k].iter_mut().zip(diff_heatmap(edit, &edits[neutral])?) {
                    *s += d;
                }
            }
        }
        neutral_preview.get_or_insert_with(|| edits[neutral].clone());
        progress(i + 1);
    }
    let heatmaps = labels
        .iter()
        .zip(sums)
        .enumerate()
        .filter(|(k, _)| *k != neutral)
        .map(|(_, (&y, s))| Heatmap::normalized(y, h, w, s))
        .collect();
    Ok(QualitativeResult {
        grid,
        faces: faces.len(),
        heatmaps,
        neutral_preview: neutral_preview.expect("at least one face"),
    })
}

/// Where the changes of single-axis edits land: the share of the summed
/// aggregate difference, over the maps that change only one axis, that
/// falls inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Localization {
    /// Share inside `valence_region` for maps that change only valence.
    pub valence: f64,
    /// Share inside `arousal_region` for maps that change only arousal.
    pub arousal: f64,
}

pub fn localization(result: &QualitativeResult, valence_region: Region, arousal_region: Region) -> Localization {
    let share = |fixed: fn(&EmotionLabel) -> f32, region| {
        let (inside, total) = result
            .heatmaps
            .iter()
            .filter(|m| fixed(&m.label) == 0.0)
            .fold((0.0, 0.0), |(i, t), m| (i + m.total * m.mass_fraction(region), t + m.total));
        if total > 0.0 {
            inside / total
        } else {
            0.0
        }
    };
    Localization {
        valence: share(|y| y.arousal(), valence_region),
        arousal: share(|y| y.valence(), arousal_region),
    }
}

/// Heatmaps laid out as the grid, `n` rows by `n + 1` columns of tiles.
/// The first column marks each row's valence with a bar whose height runs
/// from the top (+1) to the bottom (-1) of the tile; the neutral cell
/// shows the first face's neutral edit in grayscale.
pub fn heatmap_montage(result: &QualitativeResult) -> GrayImage {
    let (h, w) = (result.neutral_preview.height() as u32, result.neutral_preview.width() as u32);
    let n = result.grid.n as u32;
    let mut out = GrayImage::from_pixel((n + 1) * w, n * h, Luma([0]));
    let neutral = gray_of(&result.neutral_preview);
    for r in 0..n {
        let v = result.grid.label(r as usize, 0).valence() as f64;
        let bar = ((1.0 - v) / 2.0 * (h - 1) as f64).round() as u32;
        for y in 0..h {
            for x in 0..w {
                let on_axis = x == w / 2;
                let on_bar = y.abs_diff(bar) <= 2 && x.abs_diff(w / 2) <= w / 4;
                let px = if on_bar { 255 } else if on_axis { 128 } else { 32 };
                out.put_pixel(x, r * h + y, Luma([px]));
            }
        }
        for c in 0..n {
            let tile = match result.heatmap(r as usize, c as usize) {
                Some(m) => m.to_gray(),
                None => neutral.clone(),
            };
            image::imageops::replace(&mut out, &tile, ((c + 1) * w) as i64, (r * h) as i64);
        }
    }
    out
}

fn gray_of(img: &ImageTensor) -> GrayImage {
    let bytes = denormalize_image(img);
    GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let i = 3 * (y as usize * img.width() + x as usize);
        let sum: u32 = bytes[i..i + 3].iter().map(|&b| b as u32).sum();
        Luma([((sum + 1) / 3) as u8])
    })
}

/// `n × n` edits, row-major, tiled into one image.
pub fn edit_montage(edits: &[ImageTensor], n: usize) -> Result<RgbImage> {
    let first = edits.first().ok_or_else(|| Error::Shape("no edits to tile".into()))?;
    if edits.len() != n * n || edits.iter().any(|e| !e.same_shape(first)) {
        return Err(Error::Shape(format!("expected {} equally sized edits, got {}", n * n, edits.len())));
    }
    let (h, w) = (first.height() as u32, first.width() as u32);
    let mut out = RgbImage::new(n as u32 * w, n as u32 * h);
    for (k, e) in edits.iter().enumerate() {
        let (r, c) = ((k / n) as u32, (k % n) as u32);
        image::imageops::replace(&mut out, &image_to_rgb(e), (c * w) as i64, (r * h) as i64);
    }
    Ok(out)
}
