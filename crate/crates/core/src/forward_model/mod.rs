//! Multi-tensor synthetic signal generation: tissue compartments, Rician
//! noise, response-function derivation, DTI fitting, b0 normalization, and
//! phantom-cohort construction.

mod phantom;
mod response;
mod tensor;
mod tissue;

pub use phantom::{
    add_rician_noise, b0_normalize, generate_phantom, simulate_voxel, AssignmentRule,
    B0NormalizeReport, PhantomSpec, SignalVolume,
};
pub use response::{
    convolution_scales, convolve_coefficients, fod_to_signal, response_from_model, ResponseSet,
    ZonalResponse,
};
pub use tensor::{dti_fit, fa, tensor_signal, DiffusionTensor};
pub use tissue::{Fiber, FiberConfig, TissueParams, MIN_FIBER_SEPARATION_DEG};
