//! Minimal NIfTI-1 reader/writer.
//!
//! Supported subset: single-file `.nii`, magic `n+1`, little-endian,
//! float32/float64 payloads, up to 4 dimensions (the 4th maps to channels),
//! no scaling (`scl_slope` 0 or 1, `scl_inter` 0), uncompressed. Honored
//! header fields: `dim`, `pixdim`, `datatype`, `vox_offset`, and the sform
//! affine. Anything else in the subset is rejected with a typed error, and
//! arbitrary malformed headers must produce errors rather than panics.

use std::io::{Read, Write};
use std::path::Path;

use super::native::{default_affine, VolumeDtype, VolumeFile};
use crate::error::FormatError;
use crate::volume::{ChannelVolume, VolumeGeom};
use crate::Result;

const HEADER_SIZE: usize = 348;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

fn read_i16(buf: &[u8], offset: usize) -> i16 {
    i16::from_le_bytes([buf[offset], buf[offset + 1]])
}

fn read_i32(buf: &[u8], offset: usize) -> i32 {
    i32::from_le_bytes(buf[offset..offset + 4].try_into().unwrap())
}

fn read_f32(buf: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(buf[offset..offset + 4].try_into().unwrap())
}

fn write_i16(buf: &mut [u8], offset: usize, value: i16) {
    buf[offset..offset + 2].copy_from_slice(&value.to_le_bytes());
}

fn write_i32(buf: &mut [u8], offset: usize, value: i32) {
    buf[offset..offset + 4].copy_from_slice(&value.to_le_bytes());
}

fn write_f32(buf: &mut [u8], offset: usize, value: f32) {
    buf[offset..offset + 4].copy_from_slice(&value.to_le_bytes());
}

/// Reads a `.nii` file within the supported subset.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<VolumeFile> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; HEADER_SIZE];
    file.read_exact(&mut header)
        .map_err(|_| FormatError::MalformedHeader("file shorter than 348 bytes".into()))?;

    let sizeof_hdr = read_i32(&header, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(FormatError::MalformedHeader(format!(
            "sizeof_hdr = {sizeof_hdr}, expected 348 (big-endian files are unsupported)"
        ))
        .into());
    }
    let magic = &header[344..348];
    if magic != b"n+1\0" {
        if magic == b"ni1\0" {
            return Err(
                FormatError::Unsupported("two-file (.hdr/.img) layout".into()).into()
            );
        }
        return Err(FormatError::MalformedHeader("bad magic".into()).into());
    }

    let ndim = read_i16(&header, 40);
    if !(1..=4).contains(&ndim) {
        return Err(FormatError::Unsupported(format!(
            "{ndim}-dimensional images (supported: 1..=4)"
        ))
        .into());
    }
    let mut dims = [1usize; 4];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let raw = read_i16(&header, 40 + 2 * (i + 1));
        if raw < 1 {
            return Err(FormatError::MalformedHeader(format!(
                "dim[{}] = {raw} must be >= 1",
                i + 1
            ))
            .into());
        }
        *d = raw as usize;
    }

    let datatype = read_i16(&header, 70);
    let dtype = match datatype {
        DT_FLOAT32 => VolumeDtype::F32,
        DT_FLOAT64 => VolumeDtype::F64,
        other => return Err(FormatError::UnsupportedDatatype(other as i32).into()),
    };
    let elem = match dtype {
        VolumeDtype::F32 => 4usize,
        VolumeDtype::F64 => 8,
    };
    let bitpix = read_i16(&header, 72);
    if bitpix as usize != elem * 8 {
        return Err(FormatError::MalformedHeader(format!(
            "bitpix {bitpix} does not match datatype {datatype}"
        ))
        .into());
    }

    let scl_slope = read_f32(&header, 112);
    let scl_inter = read_f32(&header, 116);
    if !(scl_slope == 0.0 || scl_slope == 1.0) || scl_inter != 0.0 {
        return Err(FormatError::Unsupported(format!(
            "intensity scaling (slope {scl_slope}, inter {scl_inter})"
        ))
        .into());
    }

    let mut pixdim = [1.0f64; 3];
    for (i, p) in pixdim.iter_mut().enumerate() {
        let raw = read_f32(&header, 76 + 4 * (i + 1));
        if !(raw.is_finite() && raw > 0.0) {
            return Err(FormatError::MalformedHeader(format!(
                "pixdim[{}] = {raw} must be positive",
                i + 1
            ))
            .into());
        }
        *p = raw as f64;
    }

    let vox_offset_raw = read_f32(&header, 108);
    if !vox_offset_raw.is_finite()
        || vox_offset_raw < HEADER_SIZE as f32
        || vox_offset_raw.fract() != 0.0
    {
        return Err(FormatError::MalformedHeader(format!(
            "vox_offset {vox_offset_raw} invalid"
        ))
        .into());
    }
    let vox_offset = vox_offset_raw as usize;

    let sform_code = read_i16(&header, 254);
    let affine = if sform_code > 0 {
        let mut a = [[0.0f64; 4]; 4];
        for (r, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
            for c in 0..4 {
                let v = read_f32(&header, base + 4 * c);
                if !v.is_finite() {
                    return Err(
                        FormatError::MalformedHeader("non-finite sform entry".into()).into()
                    );
                }
                a[r][c] = v as f64;
            }
        }
        a[3][3] = 1.0;
        a
    } else {
        default_affine(pixdim)
    };

    // Skip the gap between the header and the payload.
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    let gap = vox_offset - HEADER_SIZE;
    if rest.len() < gap {
        return Err(FormatError::MalformedHeader(format!(
            "payload starts at {vox_offset} but file ends earlier"
        ))
        .into());
    }
    let payload = &rest[gap..];

    let n_voxels = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| FormatError::MalformedHeader("dims overflow".into()))?;
    let channels = dims[3];
    let n_values = n_voxels
        .checked_mul(channels)
        .ok_or_else(|| FormatError::MalformedHeader("dims overflow".into()))?;
    let expected = n_values
        .checked_mul(elem)
        .ok_or_else(|| FormatError::MalformedHeader("dims overflow".into()))?;
    if payload.len() != expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            actual: payload.len(),
        }
        .into());
    }

    // NIfTI stores the 4th dimension as planes; interleave per voxel.
    let geom = VolumeGeom::new([dims[0], dims[1], dims[2]], pixdim);
    let mut volume = ChannelVolume::zeros(geom, channels);
    for c in 0..channels {
        for v in 0..n_voxels {
            let at = (c * n_voxels + v) * elem;
            let value = match dtype {
                VolumeDtype::F32 => {
                    f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64
                }
                VolumeDtype::F64 => {
                    f64::from_le_bytes(payload[at..at + 8].try_into().unwrap())
                }
            };
            volume.voxel_mut(v)[c] = value;
        }
    }
    Ok(VolumeFile { volume, dtype, affine })
}

/// Writes a `.nii` file (always little-endian, vox_offset 352).
pub fn write_nifti(
    path: impl AsRef<Path>,
    volume: &ChannelVolume,
    dtype: VolumeDtype,
    affine: Option<[[f64; 4]; 4]>,
) -> Result<()> {
    let dims = volume.geom.dims;
    let channels = volume.channels;
    let mut header = [0u8; HEADER_SIZE];
    write_i32(&mut header, 0, HEADER_SIZE as i32);
    let ndim: i16 = if channels > 1 { 4 } else { 3 };
    write_i16(&mut header, 40, ndim);
    write_i16(&mut header, 42, dims[0] as i16);
    write_i16(&mut header, 44, dims[1] as i16);
    write_i16(&mut header, 46, dims[2] as i16);
    write_i16(&mut header, 48, channels as i16);
    for i in 5..=7 {
        write_i16(&mut header, 40 + 2 * i, 1);
    }
    let (datatype, elem) = match dtype {
        VolumeDtype::F32 => (DT_FLOAT32, 4usize),
        VolumeDtype::F64 => (DT_FLOAT64, 8),
    };
    write_i16(&mut header, 70, datatype);
    write_i16(&mut header, 72, (elem * 8) as i16);
    write_f32(&mut header, 76, 1.0);
    for i in 0..3 {
        write_f32(&mut header, 76 + 4 * (i + 1), volume.geom.voxel_size[i] as f32);
    }
    write_f32(&mut header, 76 + 16, 1.0);
    write_f32(&mut header, 108, 352.0);
    write_f32(&mut header, 112, 1.0); // scl_slope
    let affine = affine.unwrap_or_else(|| default_affine(volume.geom.voxel_size));
    write_i16(&mut header, 254, 1); // sform_code
    for (r, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for c in 0..4 {
            write_f32(&mut header, base + 4 * c, affine[r][c] as f32);
        }
    }
    header[344..348].copy_from_slice(b"n+1\0");

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&header)?;
    file.write_all(&[0u8; 4])?; // empty extender
    let n_voxels = volume.geom.n_voxels();
    for c in 0..channels {
        for v in 0..n_voxels {
            let value = volume.voxel(v)[c];
            match dtype {
                VolumeDtype::F32 => file.write_all(&(value as f32).to_le_bytes())?,
                VolumeDtype::F64 => file.write_all(&value.to_le_bytes())?,
            }
        }
    }
    Ok(())
}
