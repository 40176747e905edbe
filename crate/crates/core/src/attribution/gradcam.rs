use super::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Mode, Network, Tensor};

const CHUNK: usize = 64;

fn check_input(net: &Network<f32>, image: &Image, class: usize) -> Result<()> {
    if class >= net.num_classes() {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} classes",
            net.num_classes()
        )));
    }
    let a = net.arch();
    if image.shape() != (a.in_channels, a.image_size, a.image_size) {
        return Err(Error::invalid(format!(
            "image shape {:?} does not match model input ({}, {}, {})",
            image.shape(),
            a.in_channels,
            a.image_size,
            a.image_size
        )));
    }
    Ok(())
}

/// GradCAM at the last convolutional layer, upsampled and min-max normalized.
pub fn gradcam(net: &Network<f32>, image: &Image, class: usize) -> Result<AttributionMap> {
    Ok(gradcam_batch(net, std::slice::from_ref(image), &[class])?.remove(0))
}

/// GradCAM for many images, one target class each. Inference-mode samples are
/// independent, so a batch is explained with one forward and backward pass.
pub fn gradcam_batch(net: &Network<f32>, images: &[Image], classes: &[usize]) -> Result<Vec<AttributionMap>> {
    if images.len() != classes.len() {
        return Err(Error::invalid("one target class per image is required"));
    }
    for (img, &c) in images.iter().zip(classes) {
        check_input(net, img, c)?;
    }
    let layer = net.last_conv_layer();
    let k = net.num_classes();
    let mut out = Vec::with_capacity(images.len());
    for (imgs, cls) in images.chunks(CHUNK).zip(classes.chunks(CHUNK)) {
        let trace = net.forward(Tensor::from_images(imgs), Mode::Eval);
        let mut dlogits = vec![0.0f32; imgs.len() * k];
        for (i, &c) in cls.iter().enumerate() {
            dlogits[i * k + c] = 1.0;
        }
        let grad = net.backward(&trace, &dlogits, layer + 1, None);
        let act = trace.layer_output(layer);
        let plane = act.h * act.w;
        for (i, img) in imgs.iter().enumerate() {
            let a = act.sample(i);
            let g = grad.sample(i);
            let mut cam = vec![0.0f32; plane];
            for ch in 0..act.c {
                let gs = &g[ch * plane..(ch + 1) * plane];
                let weight = gs.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                for (m, &v) in cam.iter_mut().zip(&a[ch * plane..(ch + 1) * plane]) {
                    *m += weight as f32 * v;
                }
            }
            cam.iter_mut().for_each(|v| *v = v.max(0.0));
            let map = AttributionMap::upsampled(&cam, act.h, act.w, img.height(), img.width(), cls[i], Method::Gradcam)?;
            out.push(map.normalize());
        }
    }
    Ok(out)
}
