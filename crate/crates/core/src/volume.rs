//! In-memory volume containers.
//!
//! Voxels are addressed x-fastest (`index = x + nx*(y + ny*z)`), matching the
//! on-disk layouts in [`crate::io`]. Multi-channel data is stored interleaved
//! per voxel so a voxel's full measurement/coefficient vector is contiguous.

use serde::{Deserialize, Serialize};

/// Grid dimensions and physical voxel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeom {
    pub dims: [usize; 3],
    /// Voxel edge lengths in mm.
    pub voxel_size: [f64; 3],
}

impl VolumeGeom {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3]) -> Self {
        Self { dims, voxel_size }
    }

    pub fn isotropic(dims: [usize; 3], voxel_mm: f64) -> Self {
        Self { dims, voxel_size: [voxel_mm; 3] }
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }
}

/// Dense multi-channel scalar volume, channel-interleaved per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVolume {
    pub geom: VolumeGeom,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ChannelVolume {
    pub fn zeros(geom: VolumeGeom, channels: usize) -> Self {
        let data = vec![0.0; geom.n_voxels() * channels];
        Self { geom, channels, data }
    }

    pub fn from_data(geom: VolumeGeom, channels: usize, data: Vec<f64>) -> crate::Result<Self> {
        if data.len() != geom.n_voxels() * channels {
            return Err(crate::Error::InvalidArgument(format!(
                "volume data length {} does not match {} voxels x {} channels",
                data.len(),
                geom.n_voxels(),
                channels
            )));
        }
        Ok(Self { geom, channels, data })
    }

    pub fn voxel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn voxel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn set_voxel(&mut self, index: usize, values: &[f64]) {
        self.voxel_mut(index).copy_from_slice(values);
    }

    /// Single-channel accessor; panics if `channels != 1`.
    pub fn scalar(&self, index: usize) -> f64 {
        assert_eq!(self.channels, 1, "scalar() requires a 1-channel volume");
        self.data[index]
    }
}
