//! Cutout, Mixup, CutMix and SaliencyMix.
//!
//! Every operation returns a [`MixOutcome`] whose `mix_weight` is the share of
//! `label_a` in the training target. For the cut-based methods the weight is
//! recomputed from the box area left after border clipping, so it always equals
//! the fraction of pixels that still come from `image_a`.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{argmax, Image, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    Baseline,
    Cutout,
    Mixup,
    Cutmix,
    Saliencymix,
}

impl Augmentation {
    pub const ALL: [Augmentation; 5] = [
        Augmentation::Baseline,
        Augmentation::Cutout,
        Augmentation::Mixup,
        Augmentation::Cutmix,
        Augmentation::Saliencymix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Baseline => "baseline",
            Augmentation::Cutout => "cutout",
            Augmentation::Mixup => "mixup",
            Augmentation::Cutmix => "cutmix",
            Augmentation::Saliencymix => "saliencymix",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation '{name}'")))
    }

    /// Whether the regime combines two samples and their labels.
    pub fn mixes_labels(self) -> bool {
        matches!(self, Augmentation::Mixup | Augmentation::Cutmix | Augmentation::Saliencymix)
    }
}

impl std::fmt::Display for Augmentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-regime parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub cutout_side: usize,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub saliencymix_alpha: f64,
    /// Probability that a batch is augmented at all.
    pub prob: f64,
}

impl AugmentParams {
    pub fn for_image_size(size: usize) -> Self {
        Self {
            cutout_side: (size / 2).max(1),
            mixup_alpha: 0.2,
            cutmix_alpha: 1.0,
            saliencymix_alpha: 1.0,
            prob: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub image: Image,
    pub label_a: usize,
    /// Absent for Cutout.
    pub label_b: Option<usize>,
    pub mix_weight: f64,
    pub region: Option<Rect>,
}

impl MixOutcome {
    /// Soft target vector: `mix_weight` on `label_a`, the rest on `label_b`.
    pub fn target(&self, classes: usize) -> Vec<f32> {
        let mut t = vec![0.0f32; classes];
        t[self.label_a] += self.mix_weight as f32;
        if let Some(b) = self.label_b {
            t[b] += (1.0 - self.mix_weight) as f32;
        }
        t
    }
}

fn check_pair(a: &Image, b: &Image, alpha: f64) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("beta parameter must be positive, got {alpha}")));
    }
    Ok(())
}

fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let dist = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("beta({alpha}): {e}")))?;
    Ok(dist.sample(rng).clamp(0.0, 1.0))
}

/// Zeroes a `patch_side` square around `(cx, cy)`, clipped at the borders.
pub fn cutout_at(image: &Image, patch_side: usize, cx: usize, cy: usize) -> Result<MixOutcome> {
    if patch_side == 0 {
        return Err(Error::invalid("cutout patch side must be positive"));
    }
    let rect = Rect::centered_clipped(cx, cy, patch_side, patch_side, image.width(), image.height());
    let mut out = image.clone();
    out.fill_rect(rect, &vec![0.0; image.channels()]);
    Ok(MixOutcome {
        image: out,
        label_a: 0,
        label_b: None,
        mix_weight: 1.0,
        region: Some(rect),
    })
}

/// Cutout with a uniformly chosen center. The returned `label_a` is a
/// placeholder; callers carry the sample's own label.
pub fn cutout<R: Rng + ?Sized>(image: &Image, patch_side: usize, rng: &mut R) -> Result<MixOutcome> {
    if patch_side == 0 {
        return Err(Error::invalid("cutout patch side must be positive"));
    }
    let cx = rng.random_range(0..image.width());
    let cy = rng.random_range(0..image.height());
    cutout_at(image, patch_side, cx, cy)
}

pub fn mixup_with_weight(
    image_a: &Image,
    image_b: &Image,
    label_a: usize,
    label_b: usize,
    lam: f64,
) -> Result<MixOutcome> {
    check_pair(image_a, image_b, 1.0)?;
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::invalid(format!("mix weight {lam} outside [0, 1]")));
    }
    let l = lam as f32;
    let data = image_a
        .data()
        .iter()
        .zip(image_b.data())
        .map(|(&a, &b)| l * a + (1.0 - l) * b)
        .collect();
    let (c, h, w) = image_a.shape();
    Ok(MixOutcome {
        image: Image::new(c, h, w, data)?,
        label_a,
        label_b: Some(label_b),
        mix_weight: lam,
        region: None,
    })
}

pub fn mixup<R: Rng + ?Sized>(
    image_a: &Image,
    image_b: &Image,
    label_a: usize,
    label_b: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MixOutcome> {
    check_pair(image_a, image_b, alpha)?;
    let lam = sample_beta(alpha, rng)?;
    mixup_with_weight(image_a, image_b, label_a, label_b, lam)
}

/// Side lengths of the cut box for a nominal mix ratio.
pub fn cut_box_sides(lam: f64, width: usize, height: usize) -> (usize, usize) {
    let ratio = (1.0 - lam).max(0.0).sqrt();
    (
        (width as f64 * ratio).round() as usize,
        (height as f64 * ratio).round() as usize,
    )
}

/// Cut box for ratio `lam` centered at `(cx, cy)`, with the area-exact weight
/// `1 - clipped_area / (width·height)`.
pub fn cut_box_at(lam: f64, width: usize, height: usize, cx: usize, cy: usize) -> Result<(Rect, f64)> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::invalid(format!("mix ratio {lam} outside [0, 1]")));
    }
    let (w, h) = cut_box_sides(lam, width, height);
    let rect = if w == 0 || h == 0 {
        Rect::new(cx, cy, cx, cy)
    } else {
        Rect::centered_clipped(cx, cy, w, h, width, height)
    };
    let total = width * height;
    let weight = (total - rect.area()) as f64 / total as f64;
    Ok((rect, weight))
}

pub fn sample_cut_box<R: Rng + ?Sized>(lam: f64, width: usize, height: usize, rng: &mut R) -> Result<(Rect, f64)> {
    let cx = rng.random_range(0..width);
    let cy = rng.random_range(0..height);
    cut_box_at(lam, width, height, cx, cy)
}

/// Pastes `rect` of `image_b` into `image_a`.
pub fn paste_box(image_a: &Image, image_b: &Image, label_a: usize, label_b: usize, rect: Rect) -> Result<MixOutcome> {
    check_pair(image_a, image_b, 1.0)?;
    if !rect.fits(image_a.width(), image_a.height()) {
        return Err(Error::invalid(format!("box {rect:?} outside image")));
    }
    let mut out = image_a.clone();
    out.paste_from(image_b, rect);
    Ok(MixOutcome {
        image: out,
        label_a,
        label_b: Some(label_b),
        mix_weight: (image_a.pixels() - rect.area()) as f64 / image_a.pixels() as f64,
        region: Some(rect),
    })
}

pub fn cutmix<R: Rng + ?Sized>(
    image_a: &Image,
    image_b: &Image,
    label_a: usize,
    label_b: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MixOutcome> {
    check_pair(image_a, image_b, alpha)?;
    let lam = sample_beta(alpha, rng)?;
    let (rect, _) = sample_cut_box(lam, image_a.width(), image_a.height(), rng)?;
    paste_box(image_a, image_b, label_a, label_b, rect)
}

/// Non-negative saliency map, same H×W as the image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SaliencyField {
    /// Row-major argmax; ties go to the smallest index. Returns `(x, y)`.
    pub fn peak(&self) -> (usize, usize) {
        let i = argmax(&self.values);
        (i % self.width, i / self.width)
    }
}

/// Pluggable saliency estimator used to place SaliencyMix patches.
pub trait SaliencyEstimator {
    fn saliency(&self, image: &Image) -> SaliencyField;
}

/// Grayscale gradient magnitude (central differences, replicated border)
/// smoothed with a 3×3 box filter over the in-bounds neighbourhood.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientSaliency;

impl SaliencyEstimator for GradientSaliency {
    fn saliency(&self, image: &Image) -> SaliencyField {
        fine_grained_saliency(image)
    }
}

pub fn fine_grained_saliency(image: &Image) -> SaliencyField {
    let (h, w) = (image.height(), image.width());
    let g = image.grayscale();
    let at = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        g[y * w + x]
    };
    let mut mag = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let mut values = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut count = 0;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    sum += mag[yy * w + xx];
                    count += 1;
                }
            }
            values[y * w + x] = sum / count as f32;
        }
    }
    SaliencyField { height: h, width: w, values }
}

/// SaliencyMix with an explicit mix ratio: the box is centered on the saliency
/// peak of `image_b` and copied into `image_a` at the same coordinates.
pub fn saliencymix_with_ratio(
    image_a: &Image,
    image_b: &Image,
    label_a: usize,
    label_b: usize,
    lam: f64,
    estimator: &dyn SaliencyEstimator,
) -> Result<MixOutcome> {
    check_pair(image_a, image_b, 1.0)?;
    let (cx, cy) = estimator.saliency(image_b).peak();
    let (rect, _) = cut_box_at(lam, image_a.width(), image_a.height(), cx, cy)?;
    paste_box(image_a, image_b, label_a, label_b, rect)
}

pub fn saliencymix<R: Rng + ?Sized>(
    image_a: &Image,
    image_b: &Image,
    label_a: usize,
    label_b: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MixOutcome> {
    check_pair(image_a, image_b, alpha)?;
    let lam = sample_beta(alpha, rng)?;
    saliencymix_with_ratio(image_a, image_b, label_a, label_b, lam, &GradientSaliency)
}

/// Applies a regime to a batch. Each sample is paired with the sample at the
/// same position of a uniform permutation of the batch; with probability
/// `1 - params.prob` the batch passes through unchanged.
pub fn augment_batch<R: Rng + ?Sized>(
    images: &[Image],
    labels: &[usize],
    regime: Augmentation,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<Vec<MixOutcome>> {
    assert_eq!(images.len(), labels.len());
    let identity = |i: usize| MixOutcome {
        image: images[i].clone(),
        label_a: labels[i],
        label_b: None,
        mix_weight: 1.0,
        region: None,
    };
    if regime == Augmentation::Baseline || rng.random::<f64>() >= params.prob {
        return Ok((0..images.len()).map(identity).collect());
    }
    let mut partner: Vec<usize> = (0..images.len()).collect();
    rand::seq::SliceRandom::shuffle(partner.as_mut_slice(), rng);
    let mut out = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let j = partner[i];
        let (a, b, la, lb) = (&images[i], &images[j], labels[i], labels[j]);
        let outcome = match regime {
            Augmentation::Baseline => unreachable!(),
            Augmentation::Cutout => MixOutcome {
                label_a: la,
                ..cutout(a, params.cutout_side, rng)?
            },
            Augmentation::Mixup => mixup(a, b, la, lb, params.mixup_alpha, rng)?,
            Augmentation::Cutmix => cutmix(a, b, la, lb, params.cutmix_alpha, rng)?,
            Augmentation::Saliencymix => saliencymix(a, b, la, lb, params.saliencymix_alpha, rng)?,
        };
        out.push(outcome);
    }
    Ok(out)
}
