use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::Augmentation;
use crate::error::{Error, Result};
use crate::nn::{ArchConfig, Network};

const FORMAT: &str = "mixinterp-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub augmentation: Augmentation,
    pub seed: u64,
    pub epochs: usize,
    /// Top-1 accuracy on the held-out split (training split if none was given).
    pub final_top1: f64,
    pub final_loss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: ArchConfig,
    arch_hash: String,
    meta: TrainingMeta,
    params: usize,
    buffers: usize,
}

/// A trained network plus its training metadata.
///
/// On disk: one line of JSON (architecture descriptor, metadata and payload
/// lengths) followed by the parameters and batch-norm buffers as
/// little-endian `f32`.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub network: Network<f32>,
    pub meta: TrainingMeta,
}

impl ModelCheckpoint {
    pub fn arch(&self) -> &ArchConfig {
        self.network.arch()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            arch: self.network.arch().clone(),
            arch_hash: self.network.arch().hash(),
            meta: self.meta.clone(),
            params: self.network.params.len(),
            buffers: self.network.buffers.len(),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for v in self.network.params.iter().chain(&self.network.buffers) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `mixinterp train` first".into(),
            },
            _ => Error::Io(e),
        })?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::format(path, "not a version 1 checkpoint"));
        }
        let mut network = Network::<f32>::zeroed(&header.arch)?;
        if network.params.len() != header.params || network.buffers.len() != header.buffers {
            return Err(Error::format(path, "payload size does not match architecture"));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 4 * (header.params + header.buffers) {
            return Err(Error::format(path, "truncated parameter payload"));
        }
        let mut vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        network.params.iter_mut().for_each(|p| *p = vals.next().unwrap());
        network.buffers.iter_mut().for_each(|p| *p = vals.next().unwrap());
        Ok(Self {
            network,
            meta: header.meta,
        })
    }
}
