//! Real symmetric spherical harmonics, sphere tessellation, gradient tables,
//! and condition-number-driven direction subsampling.

mod basis;
mod direction;
mod gradient;
mod mesh;
mod quadrature;
mod subsample;

pub use basis::{
    max_order_for, n_coeffs, sh_basis_matrix, sh_eval, sh_eval_at, sh_eval_basis_at, sh_fit,
    ShBasisSpec, ShCoefficients, SH_Y00,
};
pub use direction::UnitDirection;
pub use gradient::{GradientEntry, GradientTable, B0_THRESHOLD};
pub use mesh::{tessellate_sphere, SphereMesh};
pub use quadrature::{gauss_legendre, legendre, product_quadrature};
pub use subsample::{condition_number, subsample_directions};
