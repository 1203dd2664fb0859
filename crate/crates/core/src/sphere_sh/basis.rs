//! Real symmetric spherical-harmonics basis: evaluation, fitting, and the
//! coefficient container.
//!
//! Convention (fixed so fitted coefficients are bit-comparable between
//! implementations):
//!
//! - even degrees `l` only (antipodally symmetric functions);
//! - ordering: `l` ascending, and within each `l`, `m` from `-l` to `+l`;
//! - with `Y_l^m = N_l^m P_l^m(cos theta) e^{i m phi}` built from
//!   Condon-Shortley-free associated Legendre functions and
//!   `N_l^m = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)`, the real basis is
//!   `sqrt(2) Im(Y_l^{|m|})` for `m < 0`, `Y_l^0` for `m = 0`, and
//!   `sqrt(2) (-1)^m Re(Y_l^m)` for `m > 0`.
//!
//! The basis is orthonormal over the sphere; only the `l = 0` function has a
//! non-zero integral, so a function's sphere integral is `c_00 * 2 sqrt(pi)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::UnitDirection;
use crate::{Error, Result};

/// Value of the constant basis function `Y_00 = 1 / (2 sqrt(pi))`.
pub const SH_Y00: f64 = 0.28209479177387814;

/// Number of coefficients of the real symmetric basis of even order `order`:
/// `(order+1)(order+2)/2`.
pub fn n_coeffs(order: usize) -> Result<usize> {
    if order % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "spherical harmonic order must be even, got {order}"
        )));
    }
    Ok((order + 1) * (order + 2) / 2)
}

/// Largest even order whose basis has at most `n_meas` coefficients.
///
/// Requires `n_meas >= 1`; order 0 (a single coefficient) always fits.
pub fn max_order_for(n_meas: usize) -> usize {
    debug_assert!(n_meas >= 1, "max_order_for requires at least one measurement");
    let mut order = 0;
    while n_coeffs(order + 2).unwrap() <= n_meas {
        order += 2;
    }
    order
}

/// Basis specification: the (even) maximum order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShBasisSpec {
    order: usize,
}

impl ShBasisSpec {
    pub fn new(order: usize) -> Result<Self> {
        n_coeffs(order)?;
        Ok(Self { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        (self.order + 1) * (self.order + 2) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Degree `l` of coefficient `j` under the fixed ordering.
    pub fn degree_of(&self, j: usize) -> usize {
        debug_assert!(j < self.len());
        let mut l = 0usize;
        let mut offset = 0usize;
        loop {
            let block = 2 * l + 1;
            if j < offset + block {
                return l;
            }
            offset += block;
            l += 2;
        }
    }

    /// `(l, m)` of coefficient `j`.
    pub fn degree_order_of(&self, j: usize) -> (usize, i64) {
        let l = self.degree_of(j);
        let offset: usize = (0..l).step_by(2).map(|ll| 2 * ll + 1).sum();
        let m = j as i64 - offset as i64 - l as i64;
        (l, m)
    }
}

/// Coefficients of a function on the sphere in a fixed basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShCoefficients {
    basis: ShBasisSpec,
    values: Vec<f64>,
}

impl ShCoefficients {
    pub fn new(basis: ShBasisSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != basis.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients for order {}, got {}",
                basis.len(),
                basis.order(),
                values.len()
            )));
        }
        Ok(Self { basis, values })
    }

    pub fn zeros(basis: ShBasisSpec) -> Self {
        Self { basis, values: vec![0.0; basis.len()] }
    }

    pub fn basis(&self) -> ShBasisSpec {
        self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Integral over the sphere: only `Y_00` integrates to a non-zero value.
    pub fn sphere_integral(&self) -> f64 {
        self.values[0] * 2.0 * std::f64::consts::PI.sqrt()
    }
}

/// Condon-Shortley-free associated Legendre values `P_l^m(x)` for all
/// `0 <= m <= l <= lmax`, written into `table[l][m]`.
fn assoc_legendre_table(lmax: usize, x: f64, table: &mut [Vec<f64>]) {
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    for m in 0..=lmax {
        // P_m^m = (2m-1)!! (1-x^2)^{m/2}
        let mut pmm = 1.0;
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= fact * somx2;
            fact += 2.0;
        }
        table[m][m] = pmm;
        if m < lmax {
            // P_{m+1}^m = x (2m+1) P_m^m
            let pmmp1 = x * (2 * m + 1) as f64 * pmm;
            table[m + 1][m] = pmmp1;
            let mut p_prev = pmm;
            let mut p_curr = pmmp1;
            for l in (m + 2)..=lmax {
                let p_next = (x * (2 * l - 1) as f64 * p_curr
                    - (l + m - 1) as f64 * p_prev)
                    / (l - m) as f64;
                table[l][m] = p_next;
                p_prev = p_curr;
                p_curr = p_next;
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `N_l^m = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)`.
fn normalization(l: usize, m: usize) -> f64 {
    let four_pi = 4.0 * std::f64::consts::PI;
    ((2 * l + 1) as f64 / four_pi * factorial(l - m) / factorial(l + m)).sqrt()
}

/// Evaluates every basis function of `basis` at `dir`, writing into `out`.
pub fn sh_eval_basis_at(dir: &UnitDirection, basis: ShBasisSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), basis.len());
    let lmax = basis.order();
    let ct = dir.z().clamp(-1.0, 1.0);
    let phi = dir.y().atan2(dir.x());

    let mut table: Vec<Vec<f64>> = (0..=lmax).map(|l| vec![0.0; l + 1]).collect();
    assoc_legendre_table(lmax, ct, &mut table);

    let sqrt2 = std::f64::consts::SQRT_2;
    let mut j = 0;
    for l in (0..=lmax).step_by(2) {
        for m in -(l as i64)..=(l as i64) {
            let ma = m.unsigned_abs() as usize;
            let np = normalization(l, ma) * table[l][ma];
            out[j] = if m < 0 {
                sqrt2 * np * (ma as f64 * phi).sin()
            } else if m == 0 {
                np
            } else {
                let sign = if ma % 2 == 0 { 1.0 } else { -1.0 };
                sqrt2 * sign * np * (ma as f64 * phi).cos()
            };
            j += 1;
        }
    }
}

/// Design matrix: row `i`, column `j` is basis function `j` at `dirs[i]`.
///
/// Directions are unit by construction of [`UnitDirection`]; identical inputs
/// produce bit-identical matrices.
pub fn sh_basis_matrix(dirs: &[UnitDirection], basis: ShBasisSpec) -> DMatrix<f64> {
    let r = basis.len();
    let mut mat = DMatrix::zeros(dirs.len(), r);
    let mut row = vec![0.0; r];
    for (i, d) in dirs.iter().enumerate() {
        sh_eval_basis_at(d, basis, &mut row);
        for (j, v) in row.iter().enumerate() {
            mat[(i, j)] = *v;
        }
    }
    mat
}

/// Evaluates a coefficient vector at a single direction.
pub fn sh_eval_at(coeffs: &ShCoefficients, dir: &UnitDirection) -> f64 {
    let mut row = vec![0.0; coeffs.basis().len()];
    sh_eval_basis_at(dir, coeffs.basis(), &mut row);
    row.iter().zip(coeffs.values()).map(|(b, c)| b * c).sum()
}

/// Evaluates a coefficient vector at many directions (`B c`).
pub fn sh_eval(coeffs: &ShCoefficients, dirs: &[UnitDirection]) -> Vec<f64> {
    let b = sh_basis_matrix(dirs, coeffs.basis());
    let c = DVector::from_column_slice(coeffs.values());
    (b * c).data.into()
}

/// Relative singular-value cutoff treated as rank deficiency in [`sh_fit`].
const RANK_TOL: f64 = 1e-12;

/// Least-squares fit of coefficients to sampled values, with optional
/// Laplace-Beltrami regularization:
/// minimizes `|B c - values|^2 + lb_lambda |L c|^2` where `L` is diagonal
/// with entries `l(l+1)`.
pub fn sh_fit(
    values: &[f64],
    dirs: &[UnitDirection],
    basis: ShBasisSpec,
    lb_lambda: f64,
) -> Result<ShCoefficients> {
    if values.len() != dirs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values for {} directions",
            values.len(),
            dirs.len()
        )));
    }
    if lb_lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lb_lambda must be non-negative, got {lb_lambda}"
        )));
    }
    let r = basis.len();
    let b = sh_basis_matrix(dirs, basis);
    let y = DVector::from_column_slice(values);

    if lb_lambda == 0.0 {
        let svd = b.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = if svd.singular_values.len() < r {
            0.0
        } else {
            svd.singular_values.min()
        };
        if !(smin > smax * RANK_TOL) {
            let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            return Err(Error::IllConditioned { cond });
        }
        let c = svd
            .solve(&y, smax * RANK_TOL)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        ShCoefficients::new(basis, c.as_slice().to_vec())
    } else {
        // Normal equations B'B + lambda L^2; positive definite because the
        // l = 0 column has zero penalty and non-zero norm.
        let mut gram = b.transpose() * &b;
        for j in 0..r {
            let l = basis.degree_of(j) as f64;
            gram[(j, j)] += lb_lambda * (l * (l + 1.0)).powi(2);
        }
        let rhs = b.transpose() * y;
        let chol = gram.clone().cholesky().ok_or_else(|| {
            let svd = gram.svd(false, false);
            Error::IllConditioned {
                cond: svd.singular_values.max() / svd.singular_values.min().max(f64::MIN_POSITIVE),
            }
        })?;
        let c = chol.solve(&rhs);
        ShCoefficients::new(basis, c.as_slice().to_vec())
    }
}
