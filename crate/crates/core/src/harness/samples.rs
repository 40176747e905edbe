use rand::seq::SliceRandom;
use rand::Rng;

use super::oracle::probabilities;
use super::ModelCheckpoint;
use crate::alignment::BoxSet;
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::image::{Image, Rect};

/// Evaluation image with its ground truth and every model's score for the
/// true class.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub index: usize,
    pub image: Image,
    pub class: usize,
    pub boxes: Vec<Rect>,
    pub box_fraction: f64,
    pub scores: Vec<f32>,
}

/// Confidence floor and box-area window; all bounds are exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleFilter {
    pub min_score: f32,
    pub min_box_fraction: f64,
    pub max_box_fraction: f64,
}

impl Default for SampleFilter {
    fn default() -> Self {
        Self {
            min_score: 0.6,
            min_box_fraction: 0.10,
            max_box_fraction: 0.50,
        }
    }
}

pub fn passes_filter(filter: &SampleFilter, scores: &[f32], box_fraction: f64) -> bool {
    scores.iter().all(|&s| s > filter.min_score)
        && box_fraction > filter.min_box_fraction
        && box_fraction < filter.max_box_fraction
}

/// Picks `n` random samples that every model classifies with probability
/// above the floor and whose box union covers a mid-sized share of the image.
/// The result is ordered by dataset index.
pub fn select_eval_samples<R: Rng + ?Sized>(
    models: &[&ModelCheckpoint],
    data: &LabeledSet,
    n: usize,
    filter: &SampleFilter,
    rng: &mut R,
) -> Result<Vec<EvalSample>> {
    if models.is_empty() {
        return Err(Error::invalid("need at least one model to select samples"));
    }
    let per_model: Vec<Vec<Vec<f32>>> = models
        .iter()
        .map(|m| probabilities(&m.network, &data.images))
        .collect();
    let mut passing = Vec::new();
    for i in 0..data.len() {
        let img = &data.images[i];
        let class = data.labels[i];
        let scores: Vec<f32> = per_model.iter().map(|p| p[i][class]).collect();
        let frac = BoxSet::new(data.boxes[i].clone(), img.width(), img.height())?.union_fraction();
        if passes_filter(filter, &scores, frac) {
            passing.push(EvalSample {
                index: i,
                image: img.clone(),
                class,
                boxes: data.boxes[i].clone(),
                box_fraction: frac,
                scores,
            });
        }
    }
    if passing.len() < n {
        return Err(Error::InsufficientSamples {
            passed: passing.len(),
            requested: n,
        });
    }
    passing.shuffle(rng);
    passing.truncate(n);
    passing.sort_by_key(|s| s.index);
    Ok(passing)
}
