//! On-disk formats: the native volume container, a NIfTI-1 subset, and
//! FSL-style gradient text files.

mod fsl;
mod native;
mod nifti;

pub use fsl::{read_gradients, write_gradients, GradientsRead};
pub use native::{read_volume, write_volume, VolumeDtype, VolumeFile};
pub use nifti::{read_nifti, write_nifti};
