//! Per-tissue, per-shell zonal response functions and the spherical
//! convolution forward model.
//!
//! The WM response is the single-tensor signal profile of a fiber aligned
//! with +z, projected onto the zonal (m = 0) basis functions; GM and CSF are
//! isotropic so only the l = 0 coefficient survives. Convolution of an FOD
//! with a zonal kernel is a per-coefficient scaling
//! `c_lm * r_l * sqrt(4 pi / (2l + 1))`.

use serde::{Deserialize, Serialize};

use super::TissueParams;
use crate::sphere_sh::{
    sh_eval, GradientTable, ShBasisSpec, ShCoefficients, UnitDirection,
};
use crate::{Error, Result};

/// Shell lookup tolerance in s/mm^2.
const SHELL_TOL: f64 = 10.0;

/// Zonal coefficients `r_l` (even `l` only, `l = 0, 2, ..`) at one b-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalResponse {
    pub bvalue: f64,
    /// `coeffs[k]` is the coefficient of degree `l = 2k`.
    pub coeffs: Vec<f64>,
}

impl ZonalResponse {
    pub fn order(&self) -> usize {
        2 * (self.coeffs.len() - 1)
    }

    pub fn r(&self, l: usize) -> f64 {
        debug_assert!(l % 2 == 0);
        self.coeffs.get(l / 2).copied().unwrap_or(0.0)
    }
}

/// Responses for every tissue and shell. GM and CSF carry a single (l = 0)
/// coefficient per shell; `r_0 > 0` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub wm: Vec<ZonalResponse>,
    pub gm: Vec<ZonalResponse>,
    pub csf: Vec<ZonalResponse>,
}

impl ResponseSet {
    /// Derives matched responses from the generative tissue model for all
    /// shells of `table` (including b=0), with the WM response expanded to
    /// `order`.
    pub fn from_tissue_params(
        params: &TissueParams,
        table: &GradientTable,
        order: usize,
    ) -> Result<Self> {
        let two_sqrt_pi = 2.0 * std::f64::consts::PI.sqrt();
        let mut wm = Vec::new();
        let mut gm = Vec::new();
        let mut csf = Vec::new();
        for (bvalue, _) in table.shells() {
            wm.push(ZonalResponse {
                bvalue,
                coeffs: response_from_model(
                    params.wm_lambda_par,
                    params.wm_lambda_perp,
                    bvalue,
                    order,
                )?,
            });
            gm.push(ZonalResponse {
                bvalue,
                coeffs: vec![(-bvalue * params.gm_diffusivity).exp() * two_sqrt_pi],
            });
            csf.push(ZonalResponse {
                bvalue,
                coeffs: vec![(-bvalue * params.csf_diffusivity).exp() * two_sqrt_pi],
            });
        }
        Ok(Self { wm, gm, csf })
    }

    fn find(list: &[ZonalResponse], bvalue: f64) -> Option<&ZonalResponse> {
        list.iter().find(|r| (r.bvalue - bvalue).abs() <= SHELL_TOL)
    }

    pub fn wm_at(&self, bvalue: f64) -> Result<&ZonalResponse> {
        Self::find(&self.wm, bvalue).ok_or_else(|| {
            Error::InvalidModel(format!("no WM response for shell b = {bvalue}"))
        })
    }

    pub fn gm_at(&self, bvalue: f64) -> Result<&ZonalResponse> {
        Self::find(&self.gm, bvalue).ok_or_else(|| {
            Error::InvalidModel(format!("no GM response for shell b = {bvalue}"))
        })
    }

    pub fn csf_at(&self, bvalue: f64) -> Result<&ZonalResponse> {
        Self::find(&self.csf, bvalue).ok_or_else(|| {
            Error::InvalidModel(format!("no CSF response for shell b = {bvalue}"))
        })
    }
}

/// Zonal projection of the axially symmetric single-tensor signal:
/// `r_l = 2 pi Int_{-1}^{1} exp(-b (l_perp + (l_par - l_perp) t^2)) Y_l0(t) dt`
/// computed by 64-node Gauss-Legendre quadrature. Odd degrees vanish by
/// symmetry and are not stored.
pub fn response_from_model(
    lambda_par: f64,
    lambda_perp: f64,
    bvalue: f64,
    order: usize,
) -> Result<Vec<f64>> {
    if order % 2 != 0 {
        return Err(Error::InvalidArgument(format!("order {order} must be even")));
    }
    if lambda_par < lambda_perp || lambda_perp <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need lambda_par >= lambda_perp > 0, got ({lambda_par}, {lambda_perp})"
        )));
    }
    let (nodes, weights) = crate::sphere_sh::gauss_legendre(64);
    let delta = lambda_par - lambda_perp;
    let mut coeffs = vec![0.0; order / 2 + 1];
    for (t, w) in nodes.iter().zip(&weights) {
        let s = (-bvalue * (lambda_perp + delta * t * t)).exp();
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c += w * s * zonal_basis(2 * k, *t);
        }
    }
    for c in &mut coeffs {
        *c *= 2.0 * std::f64::consts::PI;
    }
    Ok(coeffs)
}

/// `Y_l0(t) = sqrt((2l+1)/(4 pi)) P_l(t)`.
fn zonal_basis(l: usize, t: f64) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt()
        * crate::sphere_sh::legendre(l, t)
}

/// Spherical convolution of an FOD with a zonal response, evaluated at
/// `dirs`: per-coefficient scaling followed by basis evaluation.
pub fn fod_to_signal(
    fod: &ShCoefficients,
    response: &ZonalResponse,
    dirs: &[UnitDirection],
) -> Result<Vec<f64>> {
    let basis = fod.basis();
    if response.order() < basis.order() {
        return Err(Error::InvalidArgument(format!(
            "response order {} below FOD order {}",
            response.order(),
            basis.order()
        )));
    }
    let scaled = convolve_coefficients(fod, response)?;
    Ok(sh_eval(&scaled, dirs))
}

/// The coefficient-space convolution `c_lm -> c_lm r_l sqrt(4 pi / (2l+1))`.
pub fn convolve_coefficients(
    fod: &ShCoefficients,
    response: &ZonalResponse,
) -> Result<ShCoefficients> {
    let basis = fod.basis();
    let four_pi = 4.0 * std::f64::consts::PI;
    let values: Vec<f64> = fod
        .values()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let l = basis.degree_of(j);
            c * response.r(l) * (four_pi / (2 * l + 1) as f64).sqrt()
        })
        .collect();
    ShCoefficients::new(basis, values)
}

/// Per-coefficient convolution scale factors for a response, as a vector
/// aligned with the basis ordering. Used to assemble deconvolution designs.
pub fn convolution_scales(basis: ShBasisSpec, response: &ZonalResponse) -> Vec<f64> {
    let four_pi = 4.0 * std::f64::consts::PI;
    (0..basis.len())
        .map(|j| {
            let l = basis.degree_of(j);
            response.r(l) * (four_pi / (2 * l + 1) as f64).sqrt()
        })
        .collect()
}
