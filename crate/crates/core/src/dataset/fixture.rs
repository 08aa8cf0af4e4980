//! Synthetic, class-separable wound photos for desk-scale runs.
//!
//! Each image is a noisy skin-tone background with one or more wound boxes.
//! Box interiors are filled from a per-class colour distribution with
//! additive noise, so a colour-sensitive model can separate the classes.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{serialize_manifest, BoundingBox, DatasetError, ImageRecord, LoadedImage, Result, SeverityClass};
use crate::seed;

const SKIN: [f64; 3] = [214.0, 170.0, 140.0];

fn class_color(class: SeverityClass) -> [f64; 3] {
    match class {
        SeverityClass::Green => [70.0, 165.0, 80.0],
        SeverityClass::Yellow => [215.0, 195.0, 60.0],
        SeverityClass::Red => [140.0, 25.0, 45.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    /// Images per class in (green, yellow, red) order.
    pub per_class: [usize; 3],
    pub width: u32,
    pub height: u32,
    /// Inclusive range of wound boxes per image.
    pub boxes_per_image: (usize, usize),
    /// Half-width of the uniform per-pixel noise, in intensity levels.
    pub noise: f64,
}

impl FixtureSpec {
    pub fn balanced(per_class: usize, size: u32) -> Self {
        Self {
            per_class: [per_class; 3],
            width: size,
            height: size,
            boxes_per_image: (1, 1),
            noise: 12.0,
        }
    }

    pub fn with_boxes(mut self, min: usize, max: usize) -> Self {
        self.boxes_per_image = (min, max);
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.per_class.iter().sum::<usize>() == 0 {
            return bad("at least one image is required");
        }
        if self.width < 8 || self.height < 8 {
            return bad("rasters must be at least 8x8");
        }
        let (lo, hi) = self.boxes_per_image;
        if lo == 0 || lo > hi {
            return bad("boxes_per_image must satisfy 1 <= min <= max");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub images: Vec<LoadedImage>,
}

impl Fixture {
    pub fn records(&self) -> Vec<ImageRecord> {
        self.images.iter().map(|i| i.record.clone()).collect()
    }

    /// Writes `images/<id>.png` and `manifest.csv` under `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir.join("images"))?;
        for img in &self.images {
            let path = dir.join(&img.record.path);
            img.raster
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|source| DatasetError::Image { path: path.clone(), source })?;
        }
        let manifest = dir.join("manifest.csv");
        fs::write(&manifest, serialize_manifest(&self.records())?)?;
        Ok(manifest)
    }
}

/// Labels are emitted round-robin (green, yellow, red, green, ...), skipping
/// classes whose quota is exhausted.
pub fn generate_fixture(spec: &FixtureSpec, seed: u64) -> Result<Fixture> {
    spec.validate()?;
    let mut rng = seed::rng_for(seed, "fixture");
    let mut remaining = spec.per_class;
    let total: usize = remaining.iter().sum();
    let mut images = Vec::with_capacity(total);
    let mut cursor = 0usize;
    for n in 0..total {
        while remaining[cursor % 3] == 0 {
            cursor += 1;
        }
        let class = SeverityClass::ALL[cursor % 3];
        remaining[cursor % 3] -= 1;
        cursor += 1;

        let image_id = format!("img{n:04}");
        let (raster, boxes) = draw_image(spec, class, &mut rng);
        let record = ImageRecord::new(image_id.clone(), format!("images/{image_id}.png"), class).with_boxes(boxes);
        images.push(LoadedImage::new(record, raster)?);
    }
    Ok(Fixture { images })
}

fn draw_image(spec: &FixtureSpec, class: SeverityClass, rng: &mut ChaCha8Rng) -> (RgbImage, Vec<BoundingBox>) {
    let (w, h) = (spec.width, spec.height);
    let mut raster = RgbImage::new(w, h);
    let shade: f64 = rng.random_range(-15.0..=15.0);
    for px in raster.pixels_mut() {
        *px = noisy(SKIN, shade, spec.noise, rng);
    }

    let n_boxes = rng.random_range(spec.boxes_per_image.0..=spec.boxes_per_image.1);
    let short = w.min(h);
    let mut boxes = Vec::with_capacity(n_boxes);
    for _ in 0..n_boxes {
        let bw = rng.random_range((short / 4).max(2)..=(short / 2).max(2));
        let bh = rng.random_range((short / 4).max(2)..=(short / 2).max(2));
        let x = rng.random_range(0..=w - bw);
        let y = rng.random_range(0..=h - bh);
        boxes.push(BoundingBox { x_min: x, y_min: y, x_max: x + bw, y_max: y + bh });
    }

    let base = class_color(class);
    let jitter: f64 = rng.random_range(-12.0..=12.0);
    for b in &boxes {
        for y in b.y_min..b.y_max {
            for x in b.x_min..b.x_max {
                raster.put_pixel(x, y, noisy(base, jitter, spec.noise, rng));
            }
        }
    }
    (raster, boxes)
}

fn noisy(base: [f64; 3], shift: f64, noise: f64, rng: &mut ChaCha8Rng) -> Rgb<u8> {
    let mut px = [0u8; 3];
    for (c, v) in px.iter_mut().enumerate() {
        let n = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
        *v = (base[c] + shift + n).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{class_counts, parse_manifest, ClassCounts};

    #[test]
    fn ten_per_class() {
        let fx = generate_fixture(&FixtureSpec::balanced(10, 128), 1).unwrap();
        assert_eq!(fx.images.len(), 30);
        for img in &fx.images {
            assert_eq!(img.raster.dimensions(), (128, 128));
            assert_eq!(img.record.boxes.len(), 1);
            img.record.validate_dims(128, 128).unwrap();
        }
        // round-robin labels, counted by enumeration
        let labels: Vec<_> = fx.images.iter().map(|i| i.record.label).collect();
        assert_eq!(&labels[..3], &SeverityClass::ALL);
        assert_eq!(class_counts(&fx.records()).unwrap(), ClassCounts { green: 10, yellow: 10, red: 10 });
    }

    #[test]
    fn uneven_quota() {
        let spec = FixtureSpec { per_class: [1, 0, 3], ..FixtureSpec::balanced(0, 32) };
        let fx = generate_fixture(&spec, 0).unwrap();
        let labels: Vec<_> = fx.images.iter().map(|i| i.record.label).collect();
        use SeverityClass::*;
        assert_eq!(labels, vec![Green, Red, Red, Red]);
    }

    #[test]
    fn two_boxes() {
        let fx = generate_fixture(&FixtureSpec::balanced(2, 64).with_boxes(2, 2), 4).unwrap();
        assert!(fx.images.iter().all(|i| i.record.boxes.len() == 2));
    }

    #[test]
    fn invalid_specs() {
        let base = FixtureSpec::balanced(1, 64);
        for spec in [
            FixtureSpec { per_class: [0, 0, 0], ..base.clone() },
            FixtureSpec { width: 4, ..base.clone() },
            base.clone().with_boxes(0, 1),
            base.clone().with_boxes(3, 2),
            FixtureSpec { noise: -1.0, ..base.clone() },
        ] {
            assert!(matches!(generate_fixture(&spec, 0), Err(DatasetError::InvalidSpec(_))));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = FixtureSpec::balanced(3, 48).with_boxes(1, 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_fixture(&spec, 13).unwrap().write(a.path()).unwrap();
        let mb = generate_fixture(&spec, 13).unwrap().write(b.path()).unwrap();
        assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
        assert_eq!(
            fs::read(a.path().join("images/img0004.png")).unwrap(),
            fs::read(b.path().join("images/img0004.png")).unwrap()
        );
        let recs = parse_manifest(&fs::read_to_string(&ma).unwrap()).unwrap();
        assert_eq!(recs.len(), 9);
        let loaded = crate::dataset::load_images(&recs, a.path()).unwrap();
        assert_eq!(loaded[0].raster, generate_fixture(&spec, 13).unwrap().images[0].raster);
    }
}
