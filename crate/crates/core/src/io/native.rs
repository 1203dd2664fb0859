//! Native volume container.
//!
//! Byte layout:
//! - magic `FODV` (4 bytes)
//! - format version, one byte (currently 1)
//! - dtype code, one byte (1 = f32, 2 = f64)
//! - two reserved zero bytes
//! - u32 little-endian JSON header length
//! - JSON header: dims, voxel size, channel count, affine
//! - little-endian payload, x fastest, channels interleaved per voxel
//!
//! An f64 round trip is bit-exact; writing f32 narrows each sample.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::volume::{ChannelVolume, VolumeGeom};
use crate::Result;

const MAGIC: &[u8; 4] = b"FODV";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeDtype {
    F32,
    F64,
}

impl VolumeDtype {
    fn code(self) -> u8 {
        match self {
            VolumeDtype::F32 => 1,
            VolumeDtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(VolumeDtype::F32),
            2 => Some(VolumeDtype::F64),
            _ => None,
        }
    }

    fn element_size(self) -> usize {
        match self {
            VolumeDtype::F32 => 4,
            VolumeDtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    channels: usize,
    affine: [[f64; 4]; 4],
}

/// A volume plus its file metadata.
#[derive(Debug, Clone)]
pub struct VolumeFile {
    pub volume: ChannelVolume,
    pub dtype: VolumeDtype,
    pub affine: [[f64; 4]; 4],
}

/// Scaled-identity affine from the voxel size.
pub(crate) fn default_affine(voxel_size: [f64; 3]) -> [[f64; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    for i in 0..3 {
        a[i][i] = voxel_size[i];
    }
    a[3][3] = 1.0;
    a
}

pub fn write_volume(
    path: impl AsRef<Path>,
    volume: &ChannelVolume,
    dtype: VolumeDtype,
    affine: Option<[[f64; 4]; 4]>,
) -> Result<()> {
    let header = Header {
        dims: volume.geom.dims,
        voxel_size: volume.geom.voxel_size,
        channels: volume.channels,
        affine: affine.unwrap_or_else(|| default_affine(volume.geom.voxel_size)),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&[VERSION, dtype.code(), 0, 0])?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    match dtype {
        VolumeDtype::F64 => {
            for v in &volume.data {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        VolumeDtype::F32 => {
            for v in &volume.data {
                file.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeFile> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut head = [0u8; 8];
    file.read_exact(&mut head)
        .map_err(|_| FormatError::MalformedHeader("file shorter than the fixed header".into()))?;
    if &head[0..4] != MAGIC {
        return Err(FormatError::MalformedHeader("bad magic".into()).into());
    }
    if head[4] != VERSION {
        return Err(FormatError::Unsupported(format!("format version {}", head[4])).into());
    }
    let dtype = VolumeDtype::from_code(head[5])
        .ok_or(FormatError::UnsupportedDatatype(head[5] as i32))?;
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| FormatError::MalformedHeader("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 20 {
        return Err(FormatError::MalformedHeader(format!(
            "implausible header length {header_len}"
        ))
        .into());
    }
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| FormatError::MalformedHeader("truncated JSON header".into()))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;

    let n_values = header
        .dims
        .iter()
        .product::<usize>()
        .checked_mul(header.channels)
        .ok_or_else(|| FormatError::MalformedHeader("dims overflow".into()))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let expected = n_values * dtype.element_size();
    if payload.len() != expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            actual: payload.len(),
        }
        .into());
    }
    let data: Vec<f64> = match dtype {
        VolumeDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        VolumeDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    let geom = VolumeGeom::new(header.dims, header.voxel_size);
    Ok(VolumeFile {
        volume: ChannelVolume::from_data(geom, header.channels, data)?,
        dtype,
        affine: header.affine,
    })
}
