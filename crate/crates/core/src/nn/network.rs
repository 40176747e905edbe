use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, BnCache, Conv2d, Linear,
    Mode, BN_MOMENTUM,
};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Residual CNN shape: a 3×3 stem, `stage_widths.len()` stages of basic blocks
/// (every stage after the first halves the resolution), global average pooling
/// and a linear classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub batch_norm: bool,
}

impl ArchConfig {
    /// ResNet-8 style default for 32×32 RGB inputs.
    pub fn resnet8(num_classes: usize) -> Self {
        Self {
            in_channels: 3,
            image_size: 32,
            stem_width: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 1,
            num_classes,
            batch_norm: true,
        }
    }

    /// Weighted layers: stem, two convolutions per block, classifier.
    pub fn depth(&self) -> usize {
        2 + 2 * self.blocks_per_stage * self.stage_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_width == 0 || self.num_classes < 2 {
            return Err(Error::invalid(
                "architecture needs input channels, a stem width and at least two classes",
            ));
        }
        if self.image_size < 4 {
            return Err(Error::invalid("image size must be at least 4"));
        }
        if !self.stage_widths.is_empty() && self.blocks_per_stage == 0 {
            return Err(Error::invalid("blocks_per_stage must be positive"));
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::invalid("stage widths must be positive"));
        }
        let downsample = 1usize << self.stage_widths.len().saturating_sub(1);
        if self.image_size < downsample {
            return Err(Error::invalid(format!(
                "image size {} too small for {} stages",
                self.image_size,
                self.stage_widths.len()
            )));
        }
        Ok(())
    }

    /// Stable hash of the architecture descriptor.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone)]
struct ConvUnit {
    conv: Conv2d,
    bn: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
struct UnitCache<T> {
    x: Tensor<T>,
    bn: Option<BnCache<T>>,
}

impl ConvUnit {
    fn forward<T: Scalar>(&self, params: &[T], buffers: &[T], x: Tensor<T>, mode: Mode) -> (Tensor<T>, UnitCache<T>) {
        let y = self.conv.forward(params, &x);
        match &self.bn {
            Some(bn) => {
                let (y, c) = bn.forward(params, buffers, &y, mode);
                (y, UnitCache { x, bn: Some(c) })
            }
            None => (y, UnitCache { x, bn: None }),
        }
    }

    fn backward<T: Scalar>(
        &self,
        params: &[T],
        cache: &UnitCache<T>,
        dy: Tensor<T>,
        mut grads: Option<&mut [T]>,
    ) -> Tensor<T> {
        let dy = match (&self.bn, &cache.bn) {
            (Some(bn), Some(c)) => bn.backward(params, c, &dy, grads.as_deref_mut()),
            _ => dy,
        };
        self.conv.backward(params, &cache.x, &dy, grads)
    }
}

#[derive(Debug, Clone)]
struct Block {
    a: ConvUnit,
    b: ConvUnit,
    shortcut: Option<ConvUnit>,
}

#[derive(Debug, Clone)]
enum Module {
    Stem(ConvUnit),
    Block(Block),
}

#[derive(Debug, Clone)]
enum ModuleCache<T> {
    Stem {
        unit: UnitCache<T>,
        out: Tensor<T>,
    },
    Block {
        a: UnitCache<T>,
        b: UnitCache<T>,
        shortcut: Option<UnitCache<T>>,
        out: Tensor<T>,
    },
}

impl<T> ModuleCache<T> {
    fn output(&self) -> &Tensor<T> {
        match self {
            ModuleCache::Stem { out, .. } | ModuleCache::Block { out, .. } => out,
        }
    }

    fn bn_caches(&self) -> Vec<&BnCache<T>> {
        let units: Vec<&UnitCache<T>> = match self {
            ModuleCache::Stem { unit, .. } => vec![unit],
            ModuleCache::Block { a, b, shortcut, .. } => {
                let mut v = vec![a, b];
                v.extend(shortcut.as_ref());
                v
            }
        };
        units.into_iter().filter_map(|u| u.bn.as_ref()).collect()
    }
}

/// Forward record needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    start: usize,
    caches: Vec<ModuleCache<T>>,
    head_input: Tensor<T>,
    pooled: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn batch(&self) -> usize {
        self.head_input.n
    }

    /// Output of feature layer `layer`, which must have been computed by this trace.
    pub fn layer_output(&self, layer: usize) -> &Tensor<T> {
        assert!(layer >= self.start, "layer {layer} precedes the traced range");
        self.caches[layer - self.start].output()
    }

    pub fn logits_of(&self, i: usize) -> &[T] {
        let k = self.logits.len() / self.batch();
        &self.logits[i * k..(i + 1) * k]
    }
}

struct Allocator {
    params: usize,
    buffers: usize,
}

impl Allocator {
    fn param(&mut self, n: usize) -> std::ops::Range<usize> {
        let r = self.params..self.params + n;
        self.params += n;
        r
    }

    fn buffer(&mut self, n: usize) -> std::ops::Range<usize> {
        let r = self.buffers..self.buffers + n;
        self.buffers += n;
        r
    }

    fn unit(&mut self, in_c: usize, out_c: usize, k: usize, stride: usize, bn: bool) -> ConvUnit {
        let weight = self.param(out_c * in_c * k * k);
        let bias = if bn { None } else { Some(self.param(out_c)) };
        let conv = Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
            weight,
            bias,
        };
        let bn = bn.then(|| BatchNorm {
            c: out_c,
            gamma: self.param(out_c),
            beta: self.param(out_c),
            running_mean: self.buffer(out_c),
            running_var: self.buffer(out_c),
        });
        ConvUnit { conv, bn }
    }
}

/// Residual classifier whose parameters and batch-norm statistics are stored
/// in two flat vectors.
#[derive(Debug, Clone)]
pub struct Network<T> {
    arch: ArchConfig,
    modules: Vec<Module>,
    fc: Linear,
    names: Vec<String>,
    pub params: Vec<T>,
    pub buffers: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds the layout with zeroed parameters.
    pub fn zeroed(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let bn = arch.batch_norm;
        let mut alloc = Allocator { params: 0, buffers: 0 };
        let mut modules = vec![Module::Stem(alloc.unit(arch.in_channels, arch.stem_width, 3, 1, bn))];
        let mut names = vec!["stem".to_string()];
        let mut in_c = arch.stem_width;
        for (s, &width) in arch.stage_widths.iter().enumerate() {
            for b in 0..arch.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let a = alloc.unit(in_c, width, 3, stride, bn);
                let second = alloc.unit(width, width, 3, 1, bn);
                let shortcut = (stride != 1 || in_c != width).then(|| alloc.unit(in_c, width, 1, stride, bn));
                modules.push(Module::Block(Block { a, b: second, shortcut }));
                names.push(format!("stage{s}.block{b}"));
                in_c = width;
            }
        }
        let fc = Linear {
            in_f: in_c,
            out_f: arch.num_classes,
            weight: alloc.param(in_c * arch.num_classes),
            bias: alloc.param(arch.num_classes),
        };
        Ok(Self {
            arch: arch.clone(),
            modules,
            fc,
            names,
            params: vec![T::zero(); alloc.params],
            buffers: vec![T::zero(); alloc.buffers],
        })
    }

    /// He-normal convolutions, uniform classifier, identity batch norm.
    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(arch)?;
        let mut units: Vec<ConvUnit> = Vec::new();
        for m in &net.modules {
            match m {
                Module::Stem(u) => units.push(u.clone()),
                Module::Block(b) => {
                    units.push(b.a.clone());
                    units.push(b.b.clone());
                    units.extend(b.shortcut.clone());
                }
            }
        }
        for u in &units {
            let fan_out = (u.conv.out_c * u.conv.k * u.conv.k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).expect("valid std");
            for p in &mut net.params[u.conv.weight.clone()] {
                *p = T::of(normal.sample(rng));
            }
            if let Some(bn) = &u.bn {
                net.params[bn.gamma.clone()].fill(T::one());
                net.buffers[bn.running_var.clone()].fill(T::one());
            }
        }
        let bound = 1.0 / (net.fc.in_f as f64).sqrt();
        let uni = Uniform::new(-bound, bound).expect("valid bounds");
        // Classifier weight and bias are allocated back to back.
        for p in &mut net.params[net.fc.weight.start..net.fc.bias.end] {
            *p = T::of(uni.sample(rng));
        }
        Ok(net)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Number of feature layers (stem plus residual blocks).
    pub fn num_layers(&self) -> usize {
        self.modules.len()
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// The last convolutional feature layer.
    pub fn last_conv_layer(&self) -> usize {
        self.modules.len() - 1
    }

    /// Output of the last block of the next-to-last stage (the stem when the
    /// network has fewer than two stages).
    pub fn penultimate_stage_layer(&self) -> usize {
        let stages = self.arch.stage_widths.len();
        if stages < 2 {
            0
        } else {
            (stages - 1) * self.arch.blocks_per_stage
        }
    }

    pub fn layer_channels(&self, layer: usize) -> usize {
        match &self.modules[layer] {
            Module::Stem(u) => u.conv.out_c,
            Module::Block(b) => b.b.conv.out_c,
        }
    }

    /// Mutable access to a convolution's weights and bias by layer, for
    /// hand-built networks. `which` selects the stem unit (0) or, for blocks,
    /// the first (0) or second (1) convolution.
    pub fn conv_params_mut(&mut self, layer: usize, which: usize) -> (&mut [T], Option<std::ops::Range<usize>>) {
        let conv = match &self.modules[layer] {
            Module::Stem(u) => &u.conv,
            Module::Block(b) if which == 0 => &b.a.conv,
            Module::Block(b) => &b.b.conv,
        };
        let (w, bias) = (conv.weight.clone(), conv.bias.clone());
        (&mut self.params[w], bias)
    }

    /// Classifier weight (`classes × features`, row-major) and bias ranges.
    pub fn classifier_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (self.fc.weight.clone(), self.fc.bias.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            modules: self.modules.clone(),
            fc: self.fc.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
            buffers: self.buffers.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    fn module_forward(&self, m: &Module, x: Tensor<T>, mode: Mode) -> ModuleCache<T> {
        let (p, b) = (&self.params[..], &self.buffers[..]);
        match m {
            Module::Stem(u) => {
                let (mut y, unit) = u.forward(p, b, x, mode);
                relu(&mut y);
                ModuleCache::Stem { unit, out: y }
            }
            Module::Block(blk) => {
                let (mut ya, ca) = blk.a.forward(p, b, x, mode);
                relu(&mut ya);
                let (mut yb, cb) = blk.b.forward(p, b, ya, mode);
                let shortcut = match &blk.shortcut {
                    Some(sc) => {
                        let (ys, cs) = sc.forward(p, b, ca.x.clone(), mode);
                        yb.add_assign(&ys);
                        Some(cs)
                    }
                    None => {
                        yb.add_assign(&ca.x);
                        None
                    }
                };
                relu(&mut yb);
                ModuleCache::Block {
                    a: ca,
                    b: cb,
                    shortcut,
                    out: yb,
                }
            }
        }
    }

    fn module_backward(&self, m: &Module, cache: &ModuleCache<T>, dy: Tensor<T>, mut grads: Option<&mut [T]>) -> Tensor<T> {
        let p = &self.params[..];
        match (m, cache) {
            (Module::Stem(u), ModuleCache::Stem { unit, out }) => {
                let d = relu_backward(out, &dy);
                u.backward(p, unit, d, grads)
            }
            (Module::Block(blk), ModuleCache::Block { a, b, shortcut, out }) => {
                let d = relu_backward(out, &dy);
                let dmid = blk.b.backward(p, b, d.clone(), grads.as_deref_mut());
                // Input of `b` is the post-ReLU output of `a`.
                let dmid = relu_backward(&b.x, &dmid);
                let mut dx = blk.a.backward(p, a, dmid, grads.as_deref_mut());
                match (&blk.shortcut, shortcut) {
                    (Some(sc), Some(cs)) => dx.add_assign(&sc.backward(p, cs, d, grads)),
                    _ => dx.add_assign(&d),
                }
                dx
            }
            _ => unreachable!("cache does not match module"),
        }
    }

    /// Runs feature layers `start..` on `x` (the image when `start == 0`,
    /// otherwise the output of layer `start - 1`) and the classifier head.
    pub fn forward_from(&self, x: Tensor<T>, start: usize, mode: Mode) -> Trace<T> {
        let mut caches = Vec::with_capacity(self.modules.len() - start);
        let mut cur = x;
        for m in &self.modules[start..] {
            let c = self.module_forward(m, cur, mode);
            cur = c.output().clone();
            caches.push(c);
        }
        let n = cur.n;
        let pooled = global_avg_pool(&cur);
        let logits = self.fc.forward(&self.params, &pooled, n);
        Trace {
            start,
            caches,
            head_input: cur,
            pooled,
            logits,
        }
    }

    pub fn forward(&self, x: Tensor<T>, mode: Mode) -> Trace<T> {
        self.forward_from(x, 0, mode)
    }

    /// Activations of feature layer `layer` without recording a trace.
    pub fn features(&self, x: Tensor<T>, layer: usize, mode: Mode) -> Tensor<T> {
        let mut cur = x;
        for m in &self.modules[..=layer] {
            cur = match self.module_forward(m, cur, mode) {
                ModuleCache::Stem { out, .. } | ModuleCache::Block { out, .. } => out,
            };
        }
        cur
    }

    pub fn logits(&self, x: Tensor<T>) -> Vec<T> {
        self.forward(x, Mode::Eval).logits
    }

    /// Backpropagates `dlogits` through the head and feature layers down to
    /// `stop`, returning the gradient with respect to the input of layer
    /// `stop` (the image for 0, the head input for `num_layers()`).
    /// Parameter gradients are accumulated into `grads` when given.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &[T], stop: usize, mut grads: Option<&mut [T]>) -> Tensor<T> {
        assert!(stop >= trace.start && stop <= self.modules.len());
        let hi = &trace.head_input;
        let dpooled = self.fc.backward(&self.params, &trace.pooled, dlogits, hi.n, grads.as_deref_mut());
        let mut d = global_avg_pool_backward(&dpooled, hi.n, hi.c, hi.h, hi.w);
        for idx in (stop..self.modules.len()).rev() {
            let cache = &trace.caches[idx - trace.start];
            d = self.module_backward(&self.modules[idx], cache, d, grads.as_deref_mut());
        }
        d
    }

    /// Folds training-mode batch statistics of `trace` into the running estimates.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        let m = T::of(BN_MOMENTUM);
        let bns: Vec<BatchNorm> = self
            .modules
            .iter()
            .flat_map(|m| match m {
                Module::Stem(u) => vec![u.bn.clone()],
                Module::Block(b) => vec![b.a.bn.clone(), b.b.bn.clone(), b.shortcut.as_ref().and_then(|s| s.bn.clone())],
            })
            .flatten()
            .collect();
        let caches: Vec<&BnCache<T>> = trace.caches.iter().flat_map(|c| c.bn_caches()).collect();
        if caches.len() != bns.len() {
            return;
        }
        for (bn, cache) in bns.iter().zip(caches) {
            let Some((mean, var)) = &cache.batch_stats else { continue };
            for ch in 0..bn.c {
                let rm = &mut self.buffers[bn.running_mean.start + ch];
                *rm = (T::one() - m) * *rm + m * mean[ch];
                let rv = &mut self.buffers[bn.running_var.start + ch];
                *rv = (T::one() - m) * *rv + m * var[ch];
            }
        }
    }
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Mean cross-entropy against soft targets and its gradient w.r.t. the logits.
pub fn soft_cross_entropy<T: Scalar>(logits: &[T], targets: &[T], classes: usize) -> (T, Vec<T>) {
    assert_eq!(logits.len(), targets.len());
    let n = logits.len() / classes;
    let probs = softmax(logits, classes);
    let mut loss = T::zero();
    for (row, t) in logits.chunks(classes).zip(targets.chunks(classes)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (&l, &tv) in row.iter().zip(t) {
            if tv != T::zero() {
                loss += tv * (lse - l);
            }
        }
    }
    let scale = T::one() / T::of(n as f64);
    let grad = probs.iter().zip(targets).map(|(&p, &t)| (p - t) * scale).collect();
    (loss * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch(bn: bool) -> ArchConfig {
        ArchConfig {
            in_channels: 3,
            image_size: 8,
            stem_width: 4,
            stage_widths: vec![4, 6],
            blocks_per_stage: 1,
            num_classes: 3,
            batch_norm: bn,
        }
    }

    fn input(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(n, 3, 8, 8, (0..n * 192).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn depth_counts_weighted_layers() {
        assert_eq!(ArchConfig::resnet8(10).depth(), 8);
        assert_eq!(tiny_arch(true).depth(), 6);
    }

    #[test]
    fn invalid_arch_rejected() {
        let mut a = tiny_arch(true);
        a.num_classes = 1;
        assert!(matches!(Network::<f32>::zeroed(&a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::<f32>::init(&tiny_arch(true), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Network::<f32>::init(&tiny_arch(true), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.params, b.params);
    }

    /// Parameter gradients of the training-mode loss against central differences.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Network::<f64>::init(&tiny_arch(true), &mut rng).unwrap();
        for p in net.params.iter_mut() {
            *p += 0.05 * (rng.random::<f64>() - 0.5);
        }
        let x = input(3, 5);
        let mut targets = vec![0.0; 9];
        targets[0] = 0.7;
        targets[1] = 0.3;
        targets[5] = 1.0;
        targets[7] = 1.0;
        let loss_at = |net: &Network<f64>| {
            let t = net.forward(x.clone(), Mode::Train);
            soft_cross_entropy(&t.logits, &targets, 3).0
        };
        let trace = net.forward(x.clone(), Mode::Train);
        let (_, dlogits) = soft_cross_entropy(&trace.logits, &targets, 3);
        let mut grads = vec![0.0; net.params.len()];
        net.backward(&trace, &dlogits, 0, Some(&mut grads));
        let h = 1e-6;
        for idx in (0..net.params.len()).step_by(7) {
            let orig = net.params[idx];
            net.params[idx] = orig + h;
            let up = loss_at(&net);
            net.params[idx] = orig - h;
            let down = loss_at(&net);
            net.params[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grads[idx]).abs() / (fd.abs().max(grads[idx].abs()).max(1e-6));
            assert!(err < 1e-4, "param {idx}: fd {fd} vs analytic {}", grads[idx]);
        }
    }

    #[test]
    fn soft_targets_reduce_to_hard_cross_entropy() {
        let logits = vec![1.0f64, 2.0, 0.5];
        let (mixed, _) = soft_cross_entropy(&logits, &[0.0, 1.0, 0.0], 3);
        let p = softmax(&logits, 3);
        assert!((mixed + p[1].ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1.0f32, -3.0, 2.0, 100.0, 100.0, 99.0], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
