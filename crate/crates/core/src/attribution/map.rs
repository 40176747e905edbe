use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::resize_bilinear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gradcam,
    Iba,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Gradcam, Method::Iba];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gradcam => "gradcam",
            Method::Iba => "iba",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gradcam" => Ok(Method::Gradcam),
            "iba" => Ok(Method::Iba),
            other => Err(Error::invalid(format!("unknown attribution method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-negative per-pixel importance for one class at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub target_class: usize,
    pub method: Method,
    pub normalized: bool,
}

impl AttributionMap {
    /// Validates shape, finiteness and non-negativity.
    pub fn new(height: usize, width: usize, values: Vec<f32>, target_class: usize, method: Method) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::invalid(format!(
                "attribution map of {} values cannot be {height}×{width}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("attribution values must be finite and non-negative, found {v}")));
        }
        Ok(Self {
            height,
            width,
            values,
            target_class,
            method,
            normalized: false,
        })
    }

    /// Bilinear resize of a coarse map, clamping interpolation undershoot at zero.
    pub fn upsampled(coarse: &[f32], h: usize, w: usize, height: usize, width: usize, class: usize, method: Method) -> Result<Self> {
        let values = resize_bilinear(coarse, h, w, height, width)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        Self::new(height, width, values, class, method)
    }

    /// Min-max scaling to `[0, 1]`. A constant map becomes all zeros.
    pub fn normalize(&self) -> Self {
        Self {
            values: min_max(&self.values),
            normalized: true,
            ..self.clone()
        }
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// True when every value lies in `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.values.iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

pub fn min_max(values: &[f32]) -> Vec<f32> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}
