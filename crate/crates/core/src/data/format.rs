//! Dataset file layout:
//!
//! ```text
//! <TOML header>
//! SENTINEL line
//! per video, in order:
//!   u64 id | u32 label | u32 steps | u32 d_audio | u32 d_appearance | u32 d_motion
//!   f32[steps × d_audio] | f32[steps × d_appearance] | f32[steps × d_motion]
//! ```
//!
//! All integers and reals are little-endian; feature blocks are row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Modality;

use super::{Dataset, FeatureSequence};

pub const FORMAT_VERSION: u32 = 1;
pub const SENTINEL: &str = "=== HCMS FEATURE BLOCKS ===\n";

const BLOCK_PREFIX: usize = 8 + 4 * 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub classes: usize,
    /// Feature sizes for audio, appearance, motion.
    pub dims: [usize; 3],
    pub default_steps: usize,
    pub videos: usize,
    /// Declared per-step backbone GFLOPs for audio, appearance, motion.
    pub backbone_gflops: [f64; 3],
    /// Optional per-class tag (e.g. which modality carries the signal).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_groups: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Digest of the run config that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl DatasetHeader {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Format(format!("non-positive dims {:?}", self.dims)));
        }
        if self.classes < 2 {
            return Err(Error::Format(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }
}

fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let header = &dataset.header;
    header.validate()?;
    if header.videos != dataset.videos.len() {
        return Err(Error::Format(format!(
            "header declares {} videos, dataset has {}",
            header.videos,
            dataset.videos.len()
        )));
    }
    let text = toml::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(text.as_bytes());
    if !text.ends_with('\n') {
        out.push(b'\n');
    }
    out.extend_from_slice(SENTINEL.as_bytes());
    for (index, v) in dataset.videos.iter().enumerate() {
        if v.dims() != header.dims {
            return Err(Error::DimMismatch {
                video_index: index,
                header: header.dims,
                block: v.dims(),
            });
        }
        if v.label >= header.classes {
            return Err(Error::LabelOutOfRange {
                label: v.label,
                classes: header.classes,
            });
        }
        out.extend_from_slice(&v.id.to_le_bytes());
        out.extend_from_slice(&(v.label as u32).to_le_bytes());
        out.extend_from_slice(&(v.steps() as u32).to_le_bytes());
        for d in v.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for m in Modality::ALL {
            for x in v.stream(m) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    let sentinel = SENTINEL.as_bytes();
    let split = bytes
        .windows(sentinel.len())
        .position(|w| w == sentinel)
        .ok_or_else(|| Error::Format("missing block sentinel".into()))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;

    // Check the version before the full schema so old files get a clear error.
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| Error::Format("header has no version".into()))?;
    if version != FORMAT_VERSION as i64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: DatasetHeader = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    header.validate()?;

    let mut body = &bytes[split + sentinel.len()..];
    let mut videos = Vec::with_capacity(header.videos);
    for index in 0..header.videos {
        let truncated = || Error::Truncated { video_index: index };
        if body.len() < BLOCK_PREFIX {
            return Err(truncated());
        }
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
        let id = u64::from_le_bytes(body[..8].try_into().unwrap());
        let label = u32_at(8);
        let steps = u32_at(12);
        let dims = [u32_at(16), u32_at(20), u32_at(24)];
        if dims != header.dims {
            return Err(Error::DimMismatch {
                video_index: index,
                header: header.dims,
                block: dims,
            });
        }
        if label >= header.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: header.classes,
            });
        }
        body = &body[BLOCK_PREFIX..];
        let needed = steps * dims.iter().sum::<usize>() * 4;
        if body.len() < needed {
            return Err(truncated());
        }
        let mut streams: [Vec<f32>; 3] = Default::default();
        for (i, stream) in streams.iter_mut().enumerate() {
            let n = steps * dims[i];
            *stream = body[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            body = &body[n * 4..];
        }
        videos.push(FeatureSequence::new(id, label, dims, streams)?);
    }
    if !body.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last video",
            body.len()
        )));
    }
    Ok(Dataset { header, videos })
}

/// Writes `dataset` to `path`, replacing any existing file.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dataset)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
