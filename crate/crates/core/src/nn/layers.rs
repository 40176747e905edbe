use std::ops::Range;

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Square-kernel 2D convolution with zero padding, evaluated as im2col + GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Range<usize>,
    pub bias: Option<Range<usize>>,
}

impl Conv2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, ho: usize, wo: usize) -> Vec<T> {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = ho * wo;
        let np = x.n * p;
        let mut col = vec![T::zero(); self.col_rows() * np];
        for c in 0..x.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst_row = &mut col[row * np..(row + 1) * np];
                    for i in 0..x.n {
                        let src = &x.data[(i * x.c + c) * x.h * x.w..][..x.h * x.w];
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * x.w..][..x.w];
                            let dst = &mut dst_row[i * p + oy * wo..][..wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - pad;
                                if ix >= 0 && ix < x.w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im<T: Scalar>(&self, col: &[T], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Tensor<T> {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = ho * wo;
        let np = n * p;
        let mut dx = Tensor::zeros(n, self.in_c, h, w);
        for c in 0..self.in_c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src_row = &col[row * np..(row + 1) * np];
                    for i in 0..n {
                        let dst = &mut dx.data[(i * self.in_c + c) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &src_row[i * p + oy * wo..][..wo];
                            for (ox, &g) in src.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    dst[iy as usize * w + ix as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.c, self.in_c);
        let (ho, wo) = self.out_hw(x.h, x.w);
        let np = x.n * ho * wo;
        let col = self.im2col(x, ho, wo);
        let mut out = vec![T::zero(); self.out_c * np];
        T::gemm(
            self.out_c,
            self.col_rows(),
            np,
            T::one(),
            &params[self.weight.clone()],
            false,
            &col,
            false,
            T::zero(),
            &mut out,
        );
        if let Some(b) = &self.bias {
            for (row, &bv) in out.chunks_mut(np).zip(&params[b.clone()]) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        Tensor::from_channel_major(x.n, self.out_c, ho, wo, &out)
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns the
    /// input gradient.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<&mut [T]>,
    ) -> Tensor<T> {
        let (ho, wo) = (dy.h, dy.w);
        let np = x.n * ho * wo;
        let dym = dy.to_channel_major();
        if let Some(g) = grads {
            let col = self.im2col(x, ho, wo);
            T::gemm(
                self.out_c,
                np,
                self.col_rows(),
                T::one(),
                &dym,
                false,
                &col,
                true,
                T::one(),
                &mut g[self.weight.clone()],
            );
            if let Some(b) = &self.bias {
                for (gb, row) in g[b.clone()].iter_mut().zip(dym.chunks(np)) {
                    *gb += row.iter().copied().sum::<T>();
                }
            }
        }
        let mut dcol = vec![T::zero(); self.col_rows() * np];
        T::gemm(
            self.col_rows(),
            self.out_c,
            np,
            T::one(),
            &params[self.weight.clone()],
            true,
            &dym,
            false,
            T::zero(),
            &mut dcol,
        );
        self.col2im(&dcol, x.n, x.h, x.w, ho, wo)
    }
}

/// Per-channel batch normalization. Running statistics live in the network's
/// buffer vector.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub c: usize,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
    pub running_mean: Range<usize>,
    pub running_var: Range<usize>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
    /// Batch mean and unbiased variance, present in training mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

impl BatchNorm {
    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        buffers: &[T],
        x: &Tensor<T>,
        mode: Mode,
    ) -> (Tensor<T>, BnCache<T>) {
        let p = x.plane();
        let count = x.n * p;
        let eps = T::of(BN_EPS);
        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); self.c];
                let mut var = vec![T::zero(); self.c];
                for (ch, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                    let mut s = 0.0f64;
                    for i in 0..x.n {
                        s += x.data[(i * x.c + ch) * p..][..p].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut ss = 0.0f64;
                    for i in 0..x.n {
                        ss += x.data[(i * x.c + ch) * p..][..p]
                            .iter()
                            .map(|v| (v.f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    *m = T::of(mu);
                    *v = T::of(ss / count as f64);
                }
                let unbiased = var
                    .iter()
                    .map(|&v| v * T::of(count as f64 / (count.max(2) - 1) as f64))
                    .collect();
                (mean.clone(), var, Some((mean, unbiased)))
            }
            Mode::Eval => (
                buffers[self.running_mean.clone()].to_vec(),
                buffers[self.running_var.clone()].to_vec(),
                None,
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = &params[self.gamma.clone()];
        let beta = &params[self.beta.clone()];
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            for ch in 0..self.c {
                let off = (i * x.c + ch) * p;
                for j in off..off + p {
                    let xh = (x.data[j] - mean[ch]) * inv_std[ch];
                    xhat.data[j] = xh;
                    y.data[j] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mode,
                batch_stats,
            },
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        cache: &BnCache<T>,
        dy: &Tensor<T>,
        grads: Option<&mut [T]>,
    ) -> Tensor<T> {
        let p = dy.plane();
        let count = T::of((dy.n * p) as f64);
        let gamma = &params[self.gamma.clone()];
        let mut sum_dy = vec![T::zero(); self.c];
        let mut sum_dy_xhat = vec![T::zero(); self.c];
        for i in 0..dy.n {
            for ch in 0..self.c {
                let off = (i * dy.c + ch) * p;
                for j in off..off + p {
                    sum_dy[ch] += dy.data[j];
                    sum_dy_xhat[ch] += dy.data[j] * cache.xhat.data[j];
                }
            }
        }
        if let Some(g) = grads {
            for ch in 0..self.c {
                g[self.gamma.start + ch] += sum_dy_xhat[ch];
                g[self.beta.start + ch] += sum_dy[ch];
            }
        }
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for i in 0..dy.n {
            for ch in 0..self.c {
                let scale = gamma[ch] * cache.inv_std[ch];
                let off = (i * dy.c + ch) * p;
                for j in off..off + p {
                    dx.data[j] = match cache.mode {
                        Mode::Eval => dy.data[j] * scale,
                        Mode::Train => {
                            scale / count
                                * (count * dy.data[j]
                                    - sum_dy[ch]
                                    - cache.xhat.data[j] * sum_dy_xhat[ch])
                        }
                    };
                }
            }
        }
        dx
    }
}

/// Fully connected layer `y = x Wᵀ + b` on `N × F` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], n: usize) -> Vec<T> {
        let mut y = vec![T::zero(); n * self.out_f];
        T::gemm(
            n,
            self.in_f,
            self.out_f,
            T::one(),
            x,
            false,
            &params[self.weight.clone()],
            true,
            T::zero(),
            &mut y,
        );
        let b = &params[self.bias.clone()];
        for row in y.chunks_mut(self.out_f) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &[T],
        dy: &[T],
        n: usize,
        grads: Option<&mut [T]>,
    ) -> Vec<T> {
        if let Some(g) = grads {
            T::gemm(
                self.out_f,
                n,
                self.in_f,
                T::one(),
                dy,
                true,
                x,
                false,
                T::one(),
                &mut g[self.weight.clone()],
            );
            for row in dy.chunks(self.out_f) {
                for (gb, &d) in g[self.bias.clone()].iter_mut().zip(row) {
                    *gb += d;
                }
            }
        }
        let mut dx = vec![T::zero(); n * self.in_f];
        T::gemm(
            n,
            self.out_f,
            self.in_f,
            T::one(),
            dy,
            false,
            &params[self.weight.clone()],
            false,
            T::zero(),
            &mut dx,
        );
        dx
    }
}

pub fn relu<T: Scalar>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let p = T::of(x.plane() as f64);
    x.data
        .chunks(x.plane())
        .map(|plane| plane.iter().copied().sum::<T>() / p)
        .collect()
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &[T], n: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let p = h * w;
    let inv = T::one() / T::of(p as f64);
    let mut dx = Tensor::zeros(n, c, h, w);
    for (plane, &g) in dx.data.chunks_mut(p).zip(dy) {
        plane.fill(g * inv);
    }
    dx
}
