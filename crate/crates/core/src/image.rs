//! Planar float images and integer pixel rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A channel-first (C×H×W) float image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty image");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Image whose every pixel holds the given per-channel value.
    pub fn from_pixel(height: usize, width: usize, pixel: &[f32]) -> Self {
        let mut img = Self::filled(pixel.len(), height, width, 0.0);
        for (c, &v) in pixel.iter().enumerate() {
            img.channel_mut(c).fill(v);
        }
        img
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    /// Luminance for 3-channel images, channel mean otherwise.
    pub fn grayscale(&self) -> Vec<f32> {
        let n = self.pixels();
        if self.channels == 3 {
            let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
            (0..n)
                .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
                .collect()
        } else {
            let mut out = vec![0.0; n];
            for c in 0..self.channels {
                for (o, v) in out.iter_mut().zip(self.channel(c)) {
                    *o += v;
                }
            }
            let k = self.channels as f32;
            out.iter_mut().for_each(|v| *v /= k);
            out
        }
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<f32> {
        (0..self.channels)
            .map(|c| {
                let s: f64 = self.channel(c).iter().map(|&v| v as f64).sum();
                (s / self.pixels() as f64) as f32
            })
            .collect()
    }

    /// Copies the pixels inside `rect` (all channels) from `src`.
    pub fn paste_from(&mut self, src: &Image, rect: Rect) {
        debug_assert!(self.same_shape(src));
        for c in 0..self.channels {
            for y in rect.y0..rect.y1 {
                let row = (c * self.height + y) * self.width;
                self.data[row + rect.x0..row + rect.x1]
                    .copy_from_slice(&src.data[row + rect.x0..row + rect.x1]);
            }
        }
    }

    /// Sets every channel of the pixels inside `rect` to the given per-channel value.
    pub fn fill_rect(&mut self, rect: Rect, pixel: &[f32]) {
        for (c, &v) in pixel.iter().enumerate().take(self.channels) {
            for y in rect.y0..rect.y1 {
                let row = (c * self.height + y) * self.width;
                self.data[row + rect.x0..row + rect.x1].fill(v);
            }
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                let row = (c * self.height + y) * self.width;
                out.data[row..row + self.width].reverse();
            }
        }
        out
    }

    /// Translates by (dx, dy), filling uncovered pixels with zero. Equivalent to
    /// zero-padding followed by a crop at the shifted offset.
    pub fn shifted(&self, dx: isize, dy: isize) -> Image {
        let mut out = Image::filled(self.channels, self.height, self.width, 0.0);
        let (h, w) = (self.height as isize, self.width as isize);
        for c in 0..self.channels {
            for y in 0..h {
                let sy = y - dy;
                if sy < 0 || sy >= h {
                    continue;
                }
                for x in 0..w {
                    let sx = x - dx;
                    if sx < 0 || sx >= w {
                        continue;
                    }
                    out.set(c, y as usize, x as usize, self.get(c, sy as usize, sx as usize));
                }
            }
        }
        out
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Rectangle of the given extent around a center, clipped to `width × height`.
    /// Coordinates before clipping are `center - side / 2 .. center - side / 2 + side`.
    pub fn centered_clipped(
        cx: usize,
        cy: usize,
        side_w: usize,
        side_h: usize,
        width: usize,
        height: usize,
    ) -> Self {
        let clip = |center: usize, side: usize, limit: usize| -> (usize, usize) {
            if side >= limit {
                return (0, limit);
            }
            let lo = center as isize - (side / 2) as isize;
            let hi = lo + side as isize;
            (
                lo.clamp(0, limit as isize) as usize,
                hi.clamp(0, limit as isize) as usize,
            )
        };
        let (x0, x1) = clip(cx, side_w, width);
        let (y0, y1) = clip(cy, side_h, height);
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn intersection(&self, other: &Rect) -> Rect {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1).max(x0);
        let y1 = self.y1.min(other.y1).max(y0);
        Rect { x0, y0, x1, y1 }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other).area();
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Bilinear resize of a single-channel row-major map (half-pixel centers,
/// edge-clamped), matching the common `align_corners = false` convention.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let axis = |o: usize, scale: f32, n: usize| -> (usize, usize, f32) {
        let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f32)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, sy, h);
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Index of the maximum value; ties go to the smallest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
