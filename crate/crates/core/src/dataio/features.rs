use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{MhcrError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"MHCRFEAT";
pub const FEATURE_VERSION: u32 = 1;

/// Content channel of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Video,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Video, Modality::Text];

    pub fn tag(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Video => 1,
            Modality::Text => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = MhcrError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| MhcrError::Config(format!("unknown modality {s:?}")))
    }
}

/// Precomputed `|I| x d_m` feature matrix for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    modality: Modality,
    matrix: Array2<f64>,
}

impl ModalityFeatures {
    /// Rejects non-finite values and all-zero rows.
    pub fn new(modality: Modality, matrix: Array2<f64>) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(MhcrError::Validation(format!(
                "{modality} features have zero width"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(MhcrError::Validation(format!(
                "{modality} features contain non-finite values"
            )));
        }
        if let Some(row) = matrix
            .rows()
            .into_iter()
            .position(|r| r.iter().all(|&v| v == 0.0))
        {
            return Err(MhcrError::Validation(format!(
                "{modality} feature row {row} is all zero"
            )));
        }
        Ok(Self { modality, matrix })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn num_items(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn check_items(&self, num_items: usize) -> Result<()> {
        if self.num_items() != num_items {
            return Err(MhcrError::Validation(format!(
                "{} features have {} rows but the dataset has {num_items} items",
                self.modality,
                self.num_items()
            )));
        }
        Ok(())
    }
}

/// Writes the binary feature container. Values are narrowed to `f32`.
pub fn write_features(features: &ModalityFeatures, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| MhcrError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&[features.modality.tag()]).map_err(io)?;
    w.write_all(&(features.num_items() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(features.dim() as u64).to_le_bytes())
        .map_err(io)?;
    for &v in features.matrix.iter() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<ModalityFeatures> {
    let path = path.as_ref();
    let io = |e| MhcrError::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != FEATURE_MAGIC {
        return Err(MhcrError::Format(format!(
            "{}: not a feature file (bad magic)",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(io)?;
    let version = u32::from_le_bytes(buf4);
    if version != FEATURE_VERSION {
        return Err(MhcrError::Format(format!(
            "{}: unsupported feature file version {version}",
            path.display()
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(io)?;
    let modality = Modality::from_tag(tag[0]).ok_or_else(|| {
        MhcrError::Format(format!(
            "{}: unknown modality tag {}",
            path.display(),
            tag[0]
        ))
    })?;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(io)?;
    let rows = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8).map_err(io)?;
    let cols = u64::from_le_bytes(buf8) as usize;

    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| MhcrError::Format(format!("{}: {rows}x{cols} overflows", path.display())))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != len * 4 {
        return Err(MhcrError::Format(format!(
            "{}: expected {} payload bytes for {rows}x{cols}, found {}",
            path.display(),
            len * 4,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let matrix = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| MhcrError::Format(e.to_string()))?;
    ModalityFeatures::new(modality, matrix)
}
