//! Information bottleneck attribution: a learned mask mixes a hidden feature
//! map with Gaussian noise matched to its calibration statistics, and the
//! information that passes the mask is the attribution.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{softmax, Adam, Mode, Network, Tensor};

pub const STD_FLOOR: f64 = 1e-6;
pub const DEFAULT_MIN_CALIBRATION: usize = 100;

/// Per-channel activation statistics at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    /// Floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
    /// Channels whose measured deviation fell below the floor.
    pub degenerate: Vec<bool>,
    /// Activations contributing to each channel (images × positions).
    pub count: usize,
}

/// Mean and standard deviation per channel over all positions and images.
pub fn iba_fit_statistics(net: &Network<f32>, layer: usize, images: &[Image], min_images: usize) -> Result<FeatureStats> {
    if images.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    if images.len() < min_images {
        return Err(Error::invalid(format!(
            "calibration needs at least {min_images} images, got {}",
            images.len()
        )));
    }
    if layer >= net.num_layers() {
        return Err(Error::invalid(format!("layer {layer} out of range")));
    }
    let c = net.layer_channels(layer);
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut count = 0usize;
    for chunk in images.chunks(64) {
        let f = net.features(Tensor::from_images(chunk), layer, Mode::Eval);
        let plane = f.plane();
        for i in 0..f.n {
            let s = f.sample(i);
            for ch in 0..c {
                for &v in &s[ch * plane..(ch + 1) * plane] {
                    sum[ch] += v as f64;
                    sq[ch] += v as f64 * v as f64;
                }
            }
        }
        count += f.n * plane;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let raw: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / count as f64 - m * m).max(0.0).sqrt())
        .collect();
    if raw.iter().chain(&mean).any(|v| !v.is_finite()) {
        return Err(Error::invalid("calibration activations are not finite"));
    }
    Ok(FeatureStats {
        layer,
        degenerate: raw.iter().map(|&s| s < STD_FLOOR).collect(),
        std: raw.iter().map(|&s| s.max(STD_FLOOR)).collect(),
        mean,
        count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbaParams {
    pub beta: f64,
    pub steps: usize,
    pub lr: f64,
    pub samples: usize,
    /// Initial mask logit; the mask starts almost fully open.
    pub init_logit: f64,
}

impl Default for IbaParams {
    fn default() -> Self {
        Self {
            beta: 10.0,
            steps: 10,
            lr: 1.0,
            samples: 10,
            init_logit: 5.0,
        }
    }
}

impl IbaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        if self.steps == 0 || self.samples == 0 {
            return Err(Error::invalid("steps and samples must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Raw bottleneck output before upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct IbaOutcome {
    pub map: AttributionMap,
    /// Information per bottleneck position, summed over channels (nats).
    pub capacity: Vec<f64>,
    pub mask: Vec<f64>,
    pub final_loss: f64,
}

impl IbaOutcome {
    pub fn total_information(&self) -> f64 {
        self.capacity.iter().sum()
    }

    pub fn mean_mask(&self) -> f64 {
        self.mask.iter().sum::<f64>() / self.mask.len() as f64
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// KL divergence of `N(m·r, (1−m)²)` from `N(0, 1)`, where `r` is the
/// standardized feature; `q = 1 − m` is passed separately to keep precision.
fn kl(m: f64, q: f64, r: f64) -> f64 {
    0.5 * (q * q + m * m * r * r - 1.0) - q.ln()
}

fn dkl_dm(m: f64, q: f64, r: f64) -> f64 {
    -q + m * r * r + 1.0 / q
}

pub fn iba(
    net: &Network<f32>,
    image: &Image,
    class: usize,
    params: &IbaParams,
    stats: &FeatureStats,
    rng: &mut impl Rng,
) -> Result<AttributionMap> {
    Ok(iba_detailed(net, image, class, params, stats, rng)?.map)
}

/// Fits the mask and returns the normalized map along with the raw capacity.
pub fn iba_detailed(
    net: &Network<f32>,
    image: &Image,
    class: usize,
    params: &IbaParams,
    stats: &FeatureStats,
    rng: &mut impl Rng,
) -> Result<IbaOutcome> {
    params.validate()?;
    let k = net.num_classes();
    if class >= k {
        return Err(Error::invalid(format!("class {class} out of range for {k} classes")));
    }
    let layer = stats.layer;
    if layer >= net.num_layers() || stats.mean.len() != net.layer_channels(layer) {
        return Err(Error::invalid("feature statistics do not belong to this network layer"));
    }
    let a = net.arch();
    if image.shape() != (a.in_channels, a.image_size, a.image_size) {
        return Err(Error::invalid(format!("image shape {:?} does not match model input", image.shape())));
    }
    let f = net.features(Tensor::from_images([image]), layer, Mode::Eval);
    let (c, h, w) = (f.c, f.h, f.w);
    let plane = h * w;
    let len = c * plane;
    let feat: Vec<f64> = f.data.iter().map(|&v| v as f64).collect();
    let mu: Vec<f64> = (0..len).map(|i| stats.mean[i / plane]).collect();
    let sd: Vec<f64> = (0..len).map(|i| stats.std[i / plane]).collect();
    let r: Vec<f64> = (0..len).map(|i| (feat[i] - mu[i]) / sd[i]).collect();

    let s = params.samples;
    let mut alpha = vec![params.init_logit; len];
    let mut adam = Adam::new(len, params.lr);
    let mut final_loss = f64::NAN;
    let mut eps = vec![0.0f64; s * len];
    for step in 0..params.steps {
        let m: Vec<f64> = alpha.iter().map(|&x| sigmoid(x)).collect();
        let q: Vec<f64> = alpha.iter().map(|&x| sigmoid(-x)).collect();
        eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        let mut z = Vec::with_capacity(s * len);
        for j in 0..s {
            for i in 0..len {
                z.push((m[i] * feat[i] + q[i] * (mu[i] + sd[i] * eps[j * len + i])) as f32);
            }
        }
        let trace = net.forward_from(Tensor::from_vec(s, c, h, w, z), layer + 1, Mode::Eval);
        let p = softmax(&trace.logits, k);
        let mut ce = 0.0f64;
        let mut dlogits = vec![0.0f32; s * k];
        for j in 0..s {
            ce -= (p[j * k + class].max(f32::MIN_POSITIVE) as f64).ln() / s as f64;
            for t in 0..k {
                let target = if t == class { 1.0 } else { 0.0 };
                dlogits[j * k + t] = (p[j * k + t] - target) / s as f32;
            }
        }
        let dz = net.backward(&trace, &dlogits, layer + 1, None);
        let info: f64 = (0..len).map(|i| kl(m[i], q[i], r[i])).sum::<f64>() / len as f64;
        final_loss = ce + params.beta * info;
        if !final_loss.is_finite() || !dz.is_finite() {
            return Err(Error::AttributionFailure {
                step,
                detail: format!("non-finite loss {final_loss}"),
            });
        }
        let mut grad = vec![0.0f64; len];
        for (i, g) in grad.iter_mut().enumerate() {
            let mut dm = 0.0;
            for j in 0..s {
                dm += dz.data[j * len + i] as f64 * (feat[i] - mu[i] - sd[i] * eps[j * len + i]);
            }
            dm += params.beta * dkl_dm(m[i], q[i], r[i]) / len as f64;
            *g = dm * m[i] * q[i];
        }
        adam.step(&mut alpha, &grad);
    }

    let mask: Vec<f64> = alpha.iter().map(|&x| sigmoid(x)).collect();
    let mut capacity = vec![0.0f64; plane];
    for (i, &x) in alpha.iter().enumerate() {
        capacity[i % plane] += kl(sigmoid(x), sigmoid(-x), r[i]).max(0.0);
    }
    if capacity.iter().any(|v| !v.is_finite()) {
        return Err(Error::AttributionFailure {
            step: params.steps,
            detail: "non-finite information term".into(),
        });
    }
    let coarse: Vec<f32> = capacity.iter().map(|&v| v as f32).collect();
    let map = AttributionMap::upsampled(&coarse, h, w, image.height(), image.width(), class, Method::Iba)?.normalize();
    Ok(IbaOutcome {
        map,
        capacity,
        mask,
        final_loss,
    })
}
