//! Portable tensor file: one JSON header line, then row-major little-endian
//! f32 values. Maps and masks are single-plane; images add a `channels` field
//! and store planes one after another.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub height: usize,
    pub width: usize,
    /// Producer of the values: an attribution method, or `"mask"`.
    pub method: String,
    /// Target class for maps, concept id for masks.
    pub class: usize,
    pub normalized: bool,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub channels: usize,
}

fn one() -> usize {
    1
}

fn is_one(c: &usize) -> bool {
    *c == 1
}

impl TensorHeader {
    fn len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

pub fn write_tensor(path: &Path, header: &TensorHeader, values: &[f32]) -> Result<()> {
    if values.len() != header.len() {
        return Err(Error::invalid("tensor payload does not match header shape"));
    }
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(TensorHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "tensor file not found".into(),
        },
        _ => e.into(),
    })?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: TensorHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != header.len() * 4 {
        return Err(Error::format(
            path,
            format!("payload of {} bytes does not match {}×{}", payload.len(), header.height, header.width),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

pub fn save_map(path: &Path, map: &AttributionMap) -> Result<()> {
    let header = TensorHeader {
        height: map.height,
        width: map.width,
        method: map.method.name().to_string(),
        class: map.target_class,
        normalized: map.normalized,
        channels: 1,
    };
    write_tensor(path, &header, &map.values)
}

pub fn load_map(path: &Path) -> Result<AttributionMap> {
    let (h, values) = read_tensor(path)?;
    if h.channels != 1 {
        return Err(Error::format(path, "attribution maps have one channel"));
    }
    let method = Method::parse(&h.method).map_err(|_| Error::format(path, format!("unknown method '{}'", h.method)))?;
    let mut map = AttributionMap::new(h.height, h.width, values, h.class, method)
        .map_err(|e| Error::format(path, e.to_string()))?;
    map.normalized = h.normalized;
    Ok(map)
}

pub fn save_mask(path: &Path, concept: usize, height: usize, width: usize, mask: &[bool]) -> Result<()> {
    let header = TensorHeader {
        height,
        width,
        method: "mask".into(),
        class: concept,
        normalized: true,
        channels: 1,
    };
    let values: Vec<f32> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_tensor(path, &header, &values)
}

pub fn load_mask(path: &Path) -> Result<(usize, Vec<bool>)> {
    let (h, values) = read_tensor(path)?;
    if h.method != "mask" || h.channels != 1 || values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(path, "not a binary mask"));
    }
    Ok((h.class, values.into_iter().map(|v| v == 1.0).collect()))
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    let header = TensorHeader {
        height: image.height(),
        width: image.width(),
        method: "image".into(),
        class: 0,
        normalized: false,
        channels: image.channels(),
    };
    write_tensor(path, &header, image.data())
}

pub fn load_image(path: &Path) -> Result<Image> {
    let (h, values) = read_tensor(path)?;
    if h.method != "image" {
        return Err(Error::format(path, "not an image"));
    }
    Image::new(h.channels, h.height, h.width, values).map_err(|e| Error::format(path, e.to_string()))
}
