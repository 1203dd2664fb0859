//! Regression datasets over volumes and random patch sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::ChannelVolume;
use crate::{Error, Result};

/// Per-subject training data: input SH volume, target FOD SH volume, and a
/// voxel mask. Patches smaller than a volume edge are clamped to fit.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub input: ChannelVolume,
    pub target: ChannelVolume,
    pub mask: Vec<bool>,
    pub patch_size: usize,
}

impl RegressionDataset {
    pub fn new(
        input: ChannelVolume,
        target: ChannelVolume,
        mask: Vec<bool>,
        patch_size: usize,
    ) -> Result<Self> {
        if input.geom.dims != target.geom.dims {
            return Err(Error::InvalidArgument(format!(
                "input dims {:?} differ from target dims {:?}",
                input.geom.dims, target.geom.dims
            )));
        }
        if mask.len() != input.geom.n_voxels() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for {} voxels",
                mask.len(),
                input.geom.n_voxels()
            )));
        }
        if patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be >= 1".into()));
        }
        Ok(Self { input, target, mask, patch_size })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.input.geom.dims
    }

    /// Patch extent per axis (clamped to the volume).
    pub fn patch_extent(&self) -> [usize; 3] {
        let d = self.dims();
        [
            self.patch_size.min(d[0]),
            self.patch_size.min(d[1]),
            self.patch_size.min(d[2]),
        ]
    }

    /// Masked voxel indices covered by the patch at `origin`.
    pub fn patch_voxels(&self, origin: [usize; 3]) -> Vec<usize> {
        let e = self.patch_extent();
        let g = &self.input.geom;
        let mut out = Vec::new();
        for z in origin[2]..origin[2] + e[2] {
            for y in origin[1]..origin[1] + e[1] {
                for x in origin[0]..origin[0] + e[0] {
                    let idx = g.linear_index(x, y, z);
                    if self.mask[idx] {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    fn valid_origins(&self) -> Vec<[usize; 3]> {
        let d = self.dims();
        let e = self.patch_extent();
        let mut origins = Vec::new();
        for z in 0..=(d[2] - e[2]) {
            for y in 0..=(d[1] - e[1]) {
                for x in 0..=(d[0] - e[0]) {
                    origins.push([x, y, z]);
                }
            }
        }
        origins
    }
}

/// Draws `n` patch origins uniformly (with replacement) over positions
/// whose patch intersects the mask. Deterministic per seed.
pub fn sample_patches(
    dataset: &RegressionDataset,
    n: usize,
    seed: u64,
) -> Result<Vec<[usize; 3]>> {
    if !dataset.mask.iter().any(|&m| m) {
        return Err(Error::EmptyDataset("mask covers no voxel".into()));
    }
    let candidates: Vec<[usize; 3]> = dataset
        .valid_origins()
        .into_iter()
        .filter(|&o| !dataset.patch_voxels(o).is_empty())
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyDataset("no patch intersects the mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect())
}
