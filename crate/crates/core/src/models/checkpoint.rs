//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  content
//! 0       8     magic  b"O2OCKPT\0"
//! 8       8     u64    header length H in bytes
//! 16      H     UTF-8 JSON header (see `Header`)
//! 16+H    4*E   f32 payload: every tensor listed in header.tensors, in order
//! ```
//!
//! The header carries `format_version`, the architecture specs, the training
//! mode, the step counter, the next alternation direction, the rng state, an
//! optional config snapshot and, for each tensor, its name, shape and element
//! offset into the payload. Tensor names are `g.*` (generator), `d.*`
//! (discriminator) and `opt.{g,d}.{m,v}.*` (Adam moments).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DiscriminatorSpec, GeneratorSpec};
use crate::error::{Error, Result};
use crate::nn::Module;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"O2OCKPT\0";

/// Which model a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    /// One generator trained alternately in both directions.
    #[serde(rename = "one2one")]
    One2One,
    /// Baseline trained on X -> Y only.
    #[serde(rename = "pix2pixA")]
    Pix2PixA,
    /// Baseline trained on Y -> X only.
    #[serde(rename = "pix2pixB")]
    Pix2PixB,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::One2One => "one2one",
            TrainMode::Pix2PixA => "pix2pixA",
            TrainMode::Pix2PixB => "pix2pixB",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one2one" => Ok(TrainMode::One2One),
            "pix2pixA" => Ok(TrainMode::Pix2PixA),
            "pix2pixB" => Ok(TrainMode::Pix2PixB),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected one2one, pix2pixA or pix2pixB)"
            ))),
        }
    }
}

/// Translation direction: A maps domain X to Y, B maps Y to X.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    A,
    B,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::A => Direction::B,
            Direction::B => Direction::A,
        }
    }

    /// `A2B` / `B2A` labels used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Direction::A => "A2B",
            Direction::B => "B2A",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::A => "A",
            Direction::B => "B",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" | "A2B" | "a2b" => Ok(Direction::A),
            "B" | "b" | "B2A" | "b2a" => Ok(Direction::B),
            other => Err(Error::Config(format!("unknown direction `{other}` (expected A2B or B2A)"))),
        }
    }
}

/// Every random stream of a run is derived from the seed and the step
/// counter, so the seed is the whole rng state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
}

/// Adam step counters; the moments live in the tensor table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub generator_steps: u64,
    pub discriminator_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mode: TrainMode,
    pub generator_spec: GeneratorSpec,
    pub discriminator_spec: Option<DiscriminatorSpec>,
    pub step: u64,
    pub next_direction: Direction,
    pub rng_state: RngState,
    pub optimizer: Option<OptimizerState>,
    /// Free-form provenance (resolved training config).
    pub config: Option<serde_json::Value>,
    pub tensors: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    mode: TrainMode,
    generator_spec: GeneratorSpec,
    discriminator_spec: Option<DiscriminatorSpec>,
    step: u64,
    next_direction: Direction,
    rng_state: RngState,
    optimizer: Option<OptimizerState>,
    config: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
    payload_elements: u64,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedArray> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors whose names start with `prefix.`, keyed by the remainder.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, &NamedArray> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(&p).map(|rest| (rest.to_string(), t)))
            .collect()
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.optimizer.is_some()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for t in &self.tensors {
            let len: usize = t.shape.iter().product();
            if len != t.data.len() {
                return Err(Error::CheckpointTensor {
                    name: t.name.clone(),
                    detail: format!("shape {:?} but {} elements", t.shape, t.data.len()),
                });
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += len as u64;
        }
        let header = Header {
            format_version: self.format_version,
            mode: self.mode,
            generator_spec: self.generator_spec.clone(),
            discriminator_spec: self.discriminator_spec.clone(),
            step: self.step,
            next_direction: self.next_direction,
            rng_state: self.rng_state,
            optimizer: self.optimizer,
            config: self.config.clone(),
            tensors: entries,
            payload_elements: offset,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::CheckpointCorrupt("missing checkpoint magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::CheckpointCorrupt("truncated header".into()))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| Error::CheckpointCorrupt(format!("unreadable header: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CheckpointCorrupt("header lacks format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::CheckpointVersion {
                found: version as u32,
                expected: FORMAT_VERSION,
            });
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| Error::CheckpointCorrupt(format!("bad header: {e}")))?;
        let payload = &bytes[hend..];
        if payload.len() as u64 != header.payload_elements * 4 {
            return Err(Error::CheckpointCorrupt(format!(
                "payload holds {} bytes, header declares {} elements",
                payload.len(),
                header.payload_elements
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0u64;
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + len as u64 > header.payload_elements {
                return Err(Error::CheckpointCorrupt(format!("tensor `{}` has a bad offset", e.name)));
            }
            let start = e.offset as usize * 4;
            let data = payload[start..start + len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected_offset += len as u64;
            tensors.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Checkpoint {
            format_version: header.format_version,
            mode: header.mode,
            generator_spec: header.generator_spec,
            discriminator_spec: header.discriminator_spec,
            step: header.step,
            next_direction: header.next_direction,
            rng_state: header.rng_state,
            optimizer: header.optimizer,
            config: header.config,
            tensors,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Parameters followed by buffers, each named `prefix.<layer name>`.
pub fn export_state(model: &dyn Module<f32>, prefix: &str) -> Vec<NamedArray> {
    model
        .params()
        .into_iter()
        .chain(model.buffers())
        .map(|p| NamedArray {
            name: format!("{prefix}.{}", p.name),
            shape: p.shape.clone(),
            data: p.value.clone(),
        })
        .collect()
}

/// Load every parameter and buffer of `model` from `ckpt` tensors under
/// `prefix`. Missing tensors, shape mismatches and leftover tensors are all
/// reported by name.
pub fn import_state(model: &mut dyn Module<f32>, prefix: &str, ckpt: &Checkpoint) -> Result<()> {
    let mut available = ckpt.group(prefix);
    for p in model.params_mut() {
        assign(p, prefix, &mut available)?;
    }
    for b in model.buffers_mut() {
        assign(b, prefix, &mut available)?;
    }
    if let Some((name, _)) = available.into_iter().next() {
        return Err(Error::CheckpointTensor {
            name: format!("{prefix}.{name}"),
            detail: "not part of the model architecture".into(),
        });
    }
    Ok(())
}

fn assign(
    p: &mut crate::nn::Param<f32>,
    prefix: &str,
    available: &mut BTreeMap<String, &NamedArray>,
) -> Result<()> {
    let t = available.remove(&p.name).ok_or_else(|| Error::CheckpointTensor {
        name: format!("{prefix}.{}", p.name),
        detail: "missing from checkpoint".into(),
    })?;
    if t.shape != p.shape {
        return Err(Error::CheckpointTensor {
            name: t.name.clone(),
            detail: format!("checkpoint shape {:?}, model expects {:?}", t.shape, p.shape),
        });
    }
    p.value.copy_from_slice(&t.data);
    Ok(())
}
