//! Per-image ops: horizontal flip, reflect-pad-and-crop, and Cutout.

use crate::data::Image;
use crate::rng::RngStream;

/// Fill value used by Cutout and by geometric ops outside the source image.
pub const FILL: f32 = 0.5;

/// Mirrors columns.
pub fn flip_horizontal(image: &Image) -> Image {
    let mut out = image.clone();
    let w = image.width();
    for c in 0..image.channels() {
        for row in out.plane_mut(c).chunks_exact_mut(w) {
            row.reverse();
        }
    }
    out
}

/// Flips with probability `probability`; returns whether it flipped.
pub fn hflip(image: &Image, probability: f64, rng: &mut RngStream) -> (Image, bool) {
    if rng.bernoulli(probability) {
        (flip_horizontal(image), true)
    } else {
        (image.clone(), false)
    }
}

/// Reflection index (no edge repeat) into `0..n`, for any offset.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

/// Reflect-pads by `padding` and crops an `H x W` window whose top-left corner
/// in padded coordinates is `(oy, ox)`.
pub fn pad_crop_at(image: &Image, padding: usize, oy: usize, ox: usize) -> Image {
    let (channels, h, w) = image.shape();
    let mut out = image.clone();
    let p = padding as i64;
    for c in 0..channels {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = reflect(y as i64 + oy as i64 - p, h);
            for x in 0..w {
                let sx = reflect(x as i64 + ox as i64 - p, w);
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Random crop of the reflect-padded image; returns the window offset.
pub fn pad_crop(image: &Image, padding: usize, rng: &mut RngStream) -> (Image, (usize, usize)) {
    let oy = rng.below(2 * padding + 1);
    let ox = rng.below(2 * padding + 1);
    (pad_crop_at(image, padding, oy, ox), (oy, ox))
}

/// Square region `[y0, y1) x [x0, x1)` blanked by Cutout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CutoutRegion {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

/// Fills a `size x size` square centred on `(cy, cx)`, clipped at the
/// borders, with [`FILL`] in every channel.
pub fn cutout_at(image: &Image, size: usize, cy: usize, cx: usize) -> (Image, CutoutRegion) {
    let (channels, h, w) = image.shape();
    let half = (size / 2) as i64;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let y0 = cy as i64 - half;
    let x0 = cx as i64 - half;
    let region = CutoutRegion {
        y0: clip(y0, h),
        x0: clip(x0, w),
        y1: clip(y0 + size as i64, h),
        x1: clip(x0 + size as i64, w),
    };
    let mut out = image.clone();
    for c in 0..channels {
        let plane = out.plane_mut(c);
        for y in region.y0..region.y1 {
            plane[y * w + region.x0..y * w + region.x1].fill(FILL);
        }
    }
    (out, region)
}

/// Cutout centred on a uniformly drawn pixel.
pub fn cutout(image: &Image, size: usize, rng: &mut RngStream) -> (Image, CutoutRegion) {
    let cy = rng.below(image.height());
    let cx = rng.below(image.width());
    cutout_at(image, size, cy, cx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        let n = c * h * w;
        let px: Vec<f32> = (0..n)
            .map(|i| (i as f32 + 1.0) / (n as f32 + 2.0))
            .collect();
        Image::new(c, h, w, px).unwrap()
    }

    #[test]
    fn double_flip_is_identity() {
        let img = ramp(3, 5, 7);
        let once = flip_horizontal(&img);
        assert_ne!(once, img);
        assert_eq!(flip_horizontal(&once), img);
        let mut rng = RngStream::new(0);
        let (f, flipped) = hflip(&img, 1.0, &mut rng);
        assert!(flipped);
        assert_eq!(hflip(&f, 1.0, &mut rng).0, img);
        assert_eq!(hflip(&img, 0.0, &mut rng).0, img);
    }

    #[test]
    fn zero_padding_is_identity() {
        let img = ramp(2, 6, 6);
        let mut rng = RngStream::new(1);
        for _ in 0..5 {
            assert_eq!(pad_crop(&img, 0, &mut rng).0, img);
        }
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, [2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1].to_vec());
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn cutout_counts() {
        let img = ramp(3, 32, 32);
        assert_eq!(cutout_at(&img, 0, 10, 10).0, img);
        let (out, region) = cutout_at(&img, 4, 15, 20);
        assert_eq!((region.y1 - region.y0, region.x1 - region.x0), (4, 4));
        for c in 0..3 {
            let changed = out
                .plane(c)
                .iter()
                .zip(img.plane(c))
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(changed, 16);
        }
        let (all, _) = cutout_at(&img, 64, 31, 0);
        assert!(all.pixels().iter().all(|&v| v == FILL));
    }

    #[test]
    fn cutout_clips_at_corner() {
        let img = ramp(1, 8, 8);
        let (_, r) = cutout_at(&img, 4, 0, 0);
        assert_eq!(
            r,
            CutoutRegion {
                y0: 0,
                x0: 0,
                y1: 2,
                x1: 2
            }
        );
    }
}
