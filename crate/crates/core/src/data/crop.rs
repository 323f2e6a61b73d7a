use image::RgbImage;

use crate::affect::ImageTensor;
use crate::error::{Error, Result};

/// Crops the largest centered square and downsamples it to
/// `target × target` by area averaging.
pub fn center_crop_align(img: &RgbImage, target: usize) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < target || h < target || target == 0 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: target,
        });
    }
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let mut square = vec![0f64; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let p = img.get_pixel((x0 + x) as u32, (y0 + y) as u32).0;
            for c in 0..3 {
                square[(c * side + y) * side + x] = p[c] as f64;
            }
        }
    }
    let out = area_resize(&square, 3, side, target);
    let data = out.iter().map(|&b| b as f32 / 127.5 - 1.0).collect();
    ImageTensor::from_clamped(target, target, data)
}

/// Area-averaging resize of square planar images; each output pixel is the
/// overlap-weighted mean of the input pixels it covers.
pub fn area_resize(src: &[f64], channels: usize, from: usize, to: usize) -> Vec<f64> {
    assert_eq!(src.len(), channels * from * from);
    if from == to {
        return src.to_vec();
    }
    let weights = area_weights(from, to);
    // Rows first, then columns.
    let mut tmp = vec![0f64; channels * to * from];
    for c in 0..channels {
        for (oy, ws) in weights.iter().enumerate() {
            for &(iy, wt) in ws {
                let srow = &src[(c * from + iy) * from..(c * from + iy + 1) * from];
                let drow = &mut tmp[(c * to + oy) * from..(c * to + oy + 1) * from];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += wt * s;
                }
            }
        }
    }
    let mut out = vec![0f64; channels * to * to];
    for c in 0..channels {
        for y in 0..to {
            let trow = &tmp[(c * to + y) * from..(c * to + y + 1) * from];
            for (ox, ws) in weights.iter().enumerate() {
                out[(c * to + y) * to + ox] = ws.iter().map(|&(ix, wt)| wt * trow[ix]).sum();
            }
        }
    }
    out
}

/// For each output index, the contributing input indices and normalized
/// overlap weights.
fn area_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(from);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                    (overlap > 1e-12).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-downsamples an image tensor to `to × to` (square inputs only).
pub fn resize_image(img: &ImageTensor, to: usize) -> Result<ImageTensor> {
    if img.height() != img.width() {
        return Err(Error::Shape(format!("expected a square image, got {}x{}", img.height(), img.width())));
    }
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let out = area_resize(&src, 3, img.width(), to);
    ImageTensor::from_clamped(to, to, out.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::image_from_rgb;
    use image::Rgb;

    #[test]
    fn target_sized_input_is_unchanged() {
        let img = RgbImage::from_fn(96, 96, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8]));
        let out = center_crop_align(&img, 96).unwrap();
        assert_eq!(out, image_from_rgb(&img));
    }

    #[test]
    fn wide_input_crops_center_square() {
        // 200x100: the centered square spans columns 50..150. Mark it
        // white and everything else black.
        let img = RgbImage::from_fn(200, 100, |x, _| if (50..150).contains(&x) { Rgb([255; 3]) } else { Rgb([0; 3]) });
        let out = center_crop_align(&img, 96).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RgbImage::from_pixel(157, 131, Rgb([10, 128, 250]));
        let out = center_crop_align(&img, 96).unwrap();
        let want = [10.0 / 127.5 - 1.0, 128.0 / 127.5 - 1.0, 250.0 / 127.5 - 1.0];
        for y in 0..96 {
            for x in 0..96 {
                let p = out.pixel(y, x);
                for c in 0..3 {
                    assert!((p[c] - want[c] as f32).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        let img = RgbImage::new(95, 200);
        assert!(matches!(center_crop_align(&img, 96), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn halving_averages_pixel_pairs() {
        let src = vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0];
        let out = area_resize(&src, 1, 4, 2);
        assert_eq!(out, [5.0, 9.0, 21.0, 25.0]);
    }

    #[test]
    fn area_weights_sum_to_one() {
        for (from, to) in [(100, 96), (131, 96), (96, 32), (7, 3)] {
            for ws in area_weights(from, to) {
                let s: f64 = ws.iter().map(|w| w.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
