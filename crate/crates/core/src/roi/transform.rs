use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::TransformTag;

/// How pixels uncovered by a non-right-angle rotation are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Half-sample symmetric reflection of the raster (`dcba|abcd|dcba`).
    #[default]
    Reflect,
    Constant([u8; 3]),
}

pub fn apply_transform(raster: &RgbImage, tag: TransformTag) -> RgbImage {
    apply_transform_with(raster, tag, FillPolicy::default())
}

/// Rotations are counter-clockwise. Rot25 and Rot45 keep the canvas size and
/// resample bilinearly; Rot90 swaps the dimensions.
pub fn apply_transform_with(raster: &RgbImage, tag: TransformTag, fill: FillPolicy) -> RgbImage {
    match tag {
        TransformTag::Identity => raster.clone(),
        TransformTag::HFlip => imageops::flip_horizontal(raster),
        TransformTag::VFlip => imageops::flip_vertical(raster),
        TransformTag::Rot90 => imageops::rotate270(raster),
        TransformTag::Rot25 => rotate(raster, 25.0, fill),
        TransformTag::Rot45 => rotate(raster, 45.0, fill),
    }
}

fn reflect(i: i64, n: u32) -> u32 {
    let n = i64::from(n);
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as u32
}

fn rotate(raster: &RgbImage, degrees: f64, fill: FillPolicy) -> RgbImage {
    let (w, h) = raster.dimensions();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    RgbImage::from_fn(w, h, |x, y| {
        let dx = f64::from(x) - cx;
        let dy = f64::from(y) - cy;
        let sx = cx + cos * dx - sin * dy;
        let sy = cy + sin * dx + cos * dy;
        sample_bilinear(raster, sx, sy, fill)
    })
}

fn sample_bilinear(raster: &RgbImage, sx: f64, sy: f64, fill: FillPolicy) -> Rgb<u8> {
    let (w, h) = raster.dimensions();
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let tap = |xi: i64, yi: i64| -> [f64; 3] {
        let px = match fill {
            FillPolicy::Reflect => *raster.get_pixel(reflect(xi, w), reflect(yi, h)),
            FillPolicy::Constant(c) => {
                if xi < 0 || yi < 0 || xi >= i64::from(w) || yi >= i64::from(h) {
                    Rgb(c)
                } else {
                    *raster.get_pixel(xi as u32, yi as u32)
                }
            }
        };
        px.0.map(f64::from)
    };
    let taps = [
        (tap(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (tap(x0 + 1, y0), fx * (1.0 - fy)),
        (tap(x0, y0 + 1), (1.0 - fx) * fy),
        (tap(x0 + 1, y0 + 1), fx * fy),
    ];
    let mut out = [0u8; 3];
    for (c, v) in out.iter_mut().enumerate() {
        let s: f64 = taps.iter().map(|(p, wgt)| p[c] * wgt).sum();
        *v = s.round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Bilinear stretch to `(width, height)` with pixel-centre alignment.
/// Aspect ratio is not preserved.
pub fn resize_for_backbone(raster: &RgbImage, target: (u32, u32)) -> RgbImage {
    let (tw, th) = target;
    assert!(tw > 0 && th > 0, "target dimensions must be positive");
    let (w, h) = raster.dimensions();
    if (w, h) == (tw, th) {
        return raster.clone();
    }
    let scale_x = f64::from(w) / f64::from(tw);
    let scale_y = f64::from(h) / f64::from(th);
    let max_x = f64::from(w - 1);
    let max_y = f64::from(h - 1);
    RgbImage::from_fn(tw, th, |x, y| {
        let sx = ((f64::from(x) + 0.5) * scale_x - 0.5).clamp(0.0, max_x);
        let sy = ((f64::from(y) + 0.5) * scale_y - 0.5).clamp(0.0, max_y);
        // taps stay in range after the clamp, so the fill policy never applies
        sample_bilinear(raster, sx, sy, FillPolicy::Reflect)
    })
}
