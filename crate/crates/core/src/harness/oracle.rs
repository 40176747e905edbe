use super::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{softmax, Mode, Network, Tensor};

/// Batched, side-effect free scoring of images for one class.
pub trait ScoreOracle: Sync {
    fn num_classes(&self) -> usize;

    /// Softmax probability of `class` for every image.
    fn scores(&self, images: &[Image], class: usize) -> Result<Vec<f32>>;

    /// Top-1 class and its probability; ties go to the smallest class.
    fn predict(&self, image: &Image) -> Result<(usize, f32)> {
        let mut best = (0, f32::NEG_INFINITY);
        for c in 0..self.num_classes() {
            let s = self.scores(std::slice::from_ref(image), c)?[0];
            if s > best.1 {
                best = (c, s);
            }
        }
        Ok(best)
    }
}

const CHUNK: usize = 128;

/// Per-image class probabilities of a network in inference mode.
pub fn probabilities(net: &Network<f32>, images: &[Image]) -> Vec<Vec<f32>> {
    let k = net.num_classes();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let trace = net.forward(Tensor::from_images(chunk), Mode::Eval);
        let p = softmax(&trace.logits, k);
        out.extend(p.chunks(k).map(<[f32]>::to_vec));
    }
    out
}

/// Oracle over a borrowed network.
pub struct ClassifierOracle<'a>(pub &'a Network<f32>);

impl ScoreOracle for ClassifierOracle<'_> {
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn scores(&self, images: &[Image], class: usize) -> Result<Vec<f32>> {
        if class >= self.num_classes() {
            return Err(Error::invalid(format!(
                "class {class} out of range for {} classes",
                self.num_classes()
            )));
        }
        let size = self.0.arch().image_size;
        let channels = self.0.arch().in_channels;
        if let Some(bad) = images.iter().find(|i| i.shape() != (channels, size, size)) {
            return Err(Error::invalid(format!(
                "image shape {:?} does not match model input ({channels}, {size}, {size})",
                bad.shape()
            )));
        }
        Ok(probabilities(self.0, images).into_iter().map(|p| p[class]).collect())
    }
}

impl ScoreOracle for ModelCheckpoint {
    fn num_classes(&self) -> usize {
        self.network.num_classes()
    }

    fn scores(&self, images: &[Image], class: usize) -> Result<Vec<f32>> {
        ClassifierOracle(&self.network).scores(images, class)
    }
}
