//! Agreement between attribution maps and human-drawn boxes: energy-based
//! pointing game, effective heat ratio, and box IoU after thresholding.

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::image::Rect;
use crate::scene::mask_bounding_box;

pub const METRIC_ENERGY_PG: &str = "energy_pg";
pub const METRIC_EHR: &str = "ehr";
pub const METRIC_WSOL_IOU: &str = "wsol_iou";

/// Ground-truth boxes of one image, merged by union.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    boxes: Vec<Rect>,
    width: usize,
    height: usize,
    union: Vec<bool>,
}

impl BoxSet {
    pub fn new(boxes: Vec<Rect>, width: usize, height: usize) -> Result<Self> {
        let mut union = vec![false; width * height];
        for b in &boxes {
            if b.is_empty() || !b.fits(width, height) {
                return Err(Error::invalid(format!("box {b:?} is empty or outside {width}×{height}")));
            }
            for y in b.y0..b.y1 {
                union[y * width + b.x0..y * width + b.x1].fill(true);
            }
        }
        Ok(Self {
            boxes,
            width,
            height,
            union,
        })
    }

    pub fn boxes(&self) -> &[Rect] {
        &self.boxes
    }

    pub fn union_mask(&self) -> &[bool] {
        &self.union
    }

    pub fn union_area(&self) -> usize {
        self.union.iter().filter(|&&b| b).count()
    }

    pub fn union_fraction(&self) -> f64 {
        self.union_area() as f64 / (self.width * self.height) as f64
    }

    fn check(&self, map: &AttributionMap) -> Result<()> {
        if map.width != self.width || map.height != self.height {
            return Err(Error::invalid(format!(
                "map is {}×{} but boxes refer to {}×{}",
                map.height, map.width, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Ascending thresholds in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid(Vec<f32>);

impl ThresholdGrid {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("threshold grid needs at least two values"));
        }
        if values.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::invalid("thresholds must lie in [0, 1)"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        Ok(Self(values))
    }

    /// `count` evenly spaced thresholds from `lo` to `hi` inclusive.
    pub fn linspace(lo: f32, hi: f32, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::invalid("threshold grid needs at least two values"));
        }
        let step = (hi as f64 - lo as f64) / (count - 1) as f64;
        Self::new((0..count).map(|i| (lo as f64 + step * i as f64) as f32).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn span(&self) -> f64 {
        (self.0[self.0.len() - 1] - self.0[0]) as f64
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::linspace(0.0, 0.99, 100).expect("valid default grid")
    }
}

/// Share of attribution mass inside the box union. Zero for an all-zero map.
pub fn energy_pg(map: &AttributionMap, boxes: &BoxSet) -> Result<f64> {
    boxes.check(map)?;
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (&v, &b) in map.values.iter().zip(&boxes.union) {
        total += v as f64;
        if b {
            inside += v as f64;
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

/// Which attribution mass enters the effective-heat numerator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EhrNumerator {
    /// In-box mass of the pixels above the threshold.
    #[default]
    SuperThreshold,
    /// All in-box mass regardless of the threshold.
    AllInBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EhrScore {
    /// Area under the ratio curve divided by the threshold span.
    pub score: f64,
    /// Unnormalized trapezoid area.
    pub raw_auc: f64,
    pub ratios: Vec<f64>,
}

/// Effective heat ratio over a threshold grid. A threshold with no pixel above
/// it repeats the previous ratio (0 for the first threshold).
pub fn ehr(map: &AttributionMap, boxes: &BoxSet, grid: &ThresholdGrid, numerator: EhrNumerator) -> Result<EhrScore> {
    boxes.check(map)?;
    if !map.in_unit_range() {
        return Err(Error::invalid("effective heat ratio needs a map normalized to [0, 1]"));
    }
    let all_in_box: f64 = map
        .values
        .iter()
        .zip(&boxes.union)
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v as f64)
        .sum();
    let mut ratios = Vec::with_capacity(grid.values().len());
    let mut prev = 0.0;
    for &lam in grid.values() {
        let mut count = 0usize;
        let mut hit = 0.0f64;
        for (&v, &b) in map.values.iter().zip(&boxes.union) {
            if v > lam {
                count += 1;
                if b {
                    hit += v as f64;
                }
            }
        }
        let ratio = if count == 0 {
            prev
        } else {
            match numerator {
                EhrNumerator::SuperThreshold => hit / count as f64,
                EhrNumerator::AllInBox => all_in_box / count as f64,
            }
        };
        ratios.push(ratio);
        prev = ratio;
    }
    let lams = grid.values();
    let raw_auc: f64 = (1..lams.len())
        .map(|i| 0.5 * (ratios[i] + ratios[i - 1]) * (lams[i] - lams[i - 1]) as f64)
        .sum();
    Ok(EhrScore {
        score: raw_auc / grid.span(),
        raw_auc,
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WsolResult {
    pub iou: f64,
    pub estimated: Option<Rect>,
}

pub const WSOL_THRESHOLD: f32 = 0.15;

/// Tightest box around pixels above `threshold`, scored by IoU against the
/// best-matching ground-truth box. An empty mask scores 0 with no box.
pub fn wsol_iou(map: &AttributionMap, boxes: &BoxSet, threshold: f32) -> Result<WsolResult> {
    boxes.check(map)?;
    let mask: Vec<bool> = map.values.iter().map(|&v| v > threshold).collect();
    let Some(est) = mask_bounding_box(&mask, map.height, map.width) else {
        return Ok(WsolResult { iou: 0.0, estimated: None });
    };
    let iou = boxes.boxes.iter().map(|b| est.iou(b)).fold(0.0, f64::max);
    Ok(WsolResult {
        iou,
        estimated: Some(est),
    })
}
