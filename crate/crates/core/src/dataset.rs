//! Synthetic object-on-background classification data with bounding boxes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Rect};
use crate::rng::child;
use crate::scene::{random_place, render, Color, Material, ObjectSpec, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub image_size: usize,
    /// Number of shape classes, at most the number of renderable shapes.
    pub num_classes: usize,
    /// Placement side range for a single instance, as fractions of the image side.
    pub min_side_frac: f64,
    pub max_side_frac: f64,
    /// Probability of drawing a second instance of the class object.
    pub second_instance_prob: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            num_classes: 6,
            min_side_frac: 0.4,
            max_side_frac: 0.7,
            second_instance_prob: 0.2,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > Shape::ALL.len() {
            return Err(Error::invalid(format!(
                "num_classes must be in 2..={}",
                Shape::ALL.len()
            )));
        }
        if self.image_size < 8 {
            return Err(Error::invalid("image_size must be at least 8"));
        }
        if !(0.0 < self.min_side_frac && self.min_side_frac <= self.max_side_frac && self.max_side_frac <= 1.0) {
            return Err(Error::invalid("object side fractions must satisfy 0 < min <= max <= 1"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        Shape::ALL[..self.num_classes].iter().map(|s| s.name().to_string()).collect()
    }
}

/// Images with class labels and per-image ground-truth boxes.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub boxes: Vec<Vec<Rect>>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            boxes: idx.iter().map(|&i| self.boxes[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Per-channel mean pixel over the whole set.
    pub fn channel_means(&self) -> Vec<f32> {
        let Some(first) = self.images.first() else {
            return Vec::new();
        };
        let mut acc = vec![0.0f64; first.channels()];
        for img in &self.images {
            for (a, m) in acc.iter_mut().zip(img.channel_means()) {
                *a += m as f64;
            }
        }
        acc.iter().map(|a| (a / self.images.len() as f64) as f32).collect()
    }
}

/// Renders one labeled sample from its own random stream.
pub fn generate_sample<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> (Image, usize, Vec<Rect>) {
    let size = cfg.image_size;
    let label = rng.random_range(0..cfg.num_classes);
    let shape = Shape::ALL[label];
    let material = Material::ALL[rng.random_range(0..Material::ALL.len())];
    let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
    let two = rng.random_bool(cfg.second_instance_prob);
    let (lo, hi) = if two {
        (cfg.min_side_frac * 0.7, cfg.max_side_frac * 0.6)
    } else {
        (cfg.min_side_frac, cfg.max_side_frac)
    };
    let side = |f: f64| ((size as f64 * f).round() as usize).clamp(3, size);
    let (lo, hi) = (side(lo), side(hi).max(side(lo)));
    let mut specs = vec![ObjectSpec {
        shape,
        color,
        place: random_place(size, lo, hi, rng),
    }];
    if two {
        specs.push(ObjectSpec {
            shape,
            color,
            place: random_place(size, lo, hi, rng),
        });
    }
    let scene = render(size, material, &specs, rng);
    let boxes = scene.objects.iter().filter_map(|o| o.bounding_box(size)).collect();
    (scene.image, label, boxes)
}

/// `count` samples; sample `i` uses stream `(seed, stream, i)`.
pub fn generate(cfg: &DatasetConfig, count: usize, seed: u64, stream: &str) -> Result<LabeledSet> {
    cfg.validate()?;
    let mut set = LabeledSet {
        num_classes: cfg.num_classes,
        ..Default::default()
    };
    for i in 0..count {
        let (img, label, boxes) = generate_sample(cfg, &mut child(seed, stream, i as u64));
        set.images.push(img);
        set.labels.push(label);
        set.boxes.push(boxes);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_inside_and_deterministic() {
        let cfg = DatasetConfig::default();
        let a = generate(&cfg, 50, 3, "train").unwrap();
        let b = generate(&cfg, 50, 3, "train").unwrap();
        assert_eq!(a.images, b.images);
        for (boxes, img) in a.boxes.iter().zip(&a.images) {
            assert!(!boxes.is_empty());
            for r in boxes {
                assert!(!r.is_empty() && r.fits(img.width(), img.height()));
            }
        }
        assert!(a.labels.iter().all(|&l| l < cfg.num_classes));
    }

    #[test]
    fn rejects_too_many_classes() {
        let cfg = DatasetConfig {
            num_classes: 9,
            ..Default::default()
        };
        assert!(generate(&cfg, 1, 0, "x").is_err());
    }
}
