use super::Scalar;
use crate::image::Image;

/// Dense NCHW activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor buffer size mismatch");
        Self { n, c, h, w, data }
    }

    /// Stacks equally shaped images into a batch.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Self {
        let mut data = Vec::new();
        let mut shape = None;
        let mut n = 0;
        for img in images {
            let s = img.shape();
            if let Some(prev) = shape {
                assert_eq!(prev, s, "batch images must share a shape");
            }
            shape = Some(s);
            data.extend(img.data().iter().map(|&v| T::of(v as f64)));
            n += 1;
        }
        let (c, h, w) = shape.unwrap_or((0, 0, 0));
        Self { n, c, h, w, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Reorders `N × C × P` into `C × (N·P)`.
    pub(crate) fn to_channel_major(&self) -> Vec<T> {
        let p = self.plane();
        let np = self.n * p;
        let mut out = vec![T::zero(); self.len()];
        for i in 0..self.n {
            for c in 0..self.c {
                let src = (i * self.c + c) * p;
                let dst = c * np + i * p;
                out[dst..dst + p].copy_from_slice(&self.data[src..src + p]);
            }
        }
        out
    }

    /// Inverse of [`Tensor::to_channel_major`].
    pub(crate) fn from_channel_major(n: usize, c: usize, h: usize, w: usize, cm: &[T]) -> Self {
        let p = h * w;
        let np = n * p;
        let mut data = vec![T::zero(); n * c * p];
        for i in 0..n {
            for ch in 0..c {
                let dst = (i * c + ch) * p;
                let src = ch * np + i * p;
                data[dst..dst + p].copy_from_slice(&cm[src..src + p]);
            }
        }
        Self { n, c, h, w, data }
    }
}
