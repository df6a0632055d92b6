//! Binary checkpoint: a fixed header followed by named little-endian f32
//! tensors.
//!
//! ```text
//! magic "MHCRCKPT" | version u32 | d u32 | users u64 | items u64
//! | hyper_num u32 | modalities u32 | tensor count u32
//! then per tensor: name_len u32 | name utf-8 | rows u64 | cols u64 | f32 values
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::params::{ModalityParams, ModelParameters};
use crate::dataio::Modality;
use crate::error::{MhcrError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MHCRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header fields, checked against the data a checkpoint is loaded for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub hyper_num: usize,
    pub num_modalities: usize,
}

pub fn encode_checkpoint(params: &ModelParameters, num_users: usize) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(num_users as u64).to_le_bytes());
    out.extend_from_slice(&((params.num_nodes() - num_users) as u64).to_le_bytes());
    out.extend_from_slice(&(params.hyper_num() as u32).to_le_bytes());
    out.extend_from_slice(&(params.modalities.len() as u32).to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for &v in t.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(
    params: &ModelParameters,
    num_users: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, num_users)).map_err(|e| MhcrError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(MhcrError::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| MhcrError::Format(format!("size {v} does not fit")))
    }
}

fn parse_modality(name: &str, prefix: &str) -> Result<Modality> {
    name.strip_prefix(prefix)
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| MhcrError::Format(format!("unexpected tensor name {name:?}")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParameters)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(MhcrError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(MhcrError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header = CheckpointHeader {
        dim: r.u32()?,
        num_users: r.u64()?,
        num_items: r.u64()?,
        hyper_num: r.u32()?,
        num_modalities: r.u32()?,
    };
    let count = r.u32()?;
    if count != 1 + 2 * header.num_modalities {
        return Err(MhcrError::Format(format!(
            "{count} tensors for {} modalities",
            header.num_modalities
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| MhcrError::Format("tensor name is not utf-8".into()))?
            .to_string();
        let rows = r.u64()?;
        let cols = r.u64()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| MhcrError::Format(format!("tensor {name} too large")))?;
        let data: Vec<f64> = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push((name, Array2::from_shape_vec((rows, cols), data).unwrap()));
    }
    if r.pos != bytes.len() {
        return Err(MhcrError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }

    let mut iter = tensors.into_iter();
    let (name, embeddings) = iter.next().unwrap();
    if name != "embeddings" {
        return Err(MhcrError::Format(format!("first tensor is {name:?}")));
    }
    if embeddings.dim() != (header.num_users + header.num_items, header.dim) {
        return Err(MhcrError::Format(
            "embedding shape disagrees with header".into(),
        ));
    }
    let mut modalities = Vec::with_capacity(header.num_modalities);
    while let Some((pname, projection)) = iter.next() {
        let (hname, hyperedges) = iter.next().unwrap();
        let modality = parse_modality(&pname, "projection.")?;
        if parse_modality(&hname, "hyperedges.")? != modality {
            return Err(MhcrError::Format(format!(
                "{hname} does not follow {pname}"
            )));
        }
        if projection.ncols() != header.dim
            || hyperedges.nrows() != header.hyper_num
            || hyperedges.ncols() != projection.nrows()
        {
            return Err(MhcrError::Format(format!(
                "{modality} tensor shapes disagree with header"
            )));
        }
        modalities.push(ModalityParams {
            modality,
            projection,
            hyperedges,
        });
    }
    Ok((
        header,
        ModelParameters {
            embeddings,
            modalities,
        },
    ))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ModelParameters)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MhcrError::io(path, e))?;
    decode_checkpoint(&bytes)
}
