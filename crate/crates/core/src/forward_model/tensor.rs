//! Diffusion tensors: the single-tensor signal model, log-linear fitting,
//! and fractional anisotropy.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::sphere_sh::{GradientTable, UnitDirection};
use crate::{Error, Result};

/// Eigenvalues are clamped to at least this (mm^2/s) after fitting.
const EIGENVALUE_FLOOR: f64 = 1e-9;

/// A diffusion tensor stored by its eigensystem, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct DiffusionTensor {
    eigenvalues: [f64; 3],
    /// Columns are the unit eigenvectors matching `eigenvalues`.
    frame: Matrix3<f64>,
}

impl DiffusionTensor {
    /// Axially symmetric tensor: `lambda_par` along `axis`, `lambda_perp`
    /// on the two transverse eigenvectors.
    pub fn axisymmetric(lambda_par: f64, lambda_perp: f64, axis: UnitDirection) -> Result<Self> {
        if !(lambda_par >= lambda_perp && lambda_perp > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need lambda_par >= lambda_perp > 0, got ({lambda_par}, {lambda_perp})"
            )));
        }
        let (u, v) = axis.orthonormal_frame();
        let frame = Matrix3::from_columns(&[
            Vector3::new(axis.x(), axis.y(), axis.z()),
            Vector3::new(u.x(), u.y(), u.z()),
            Vector3::new(v.x(), v.y(), v.z()),
        ]);
        Ok(Self { eigenvalues: [lambda_par, lambda_perp, lambda_perp], frame })
    }

    /// Isotropic tensor with one diffusivity.
    pub fn isotropic(d: f64) -> Result<Self> {
        if d <= 0.0 {
            return Err(Error::InvalidArgument(format!("diffusivity {d} must be > 0")));
        }
        Ok(Self { eigenvalues: [d, d, d], frame: Matrix3::identity() })
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    pub fn principal_axis(&self) -> UnitDirection {
        let c = self.frame.column(0);
        UnitDirection::normalize(c[0], c[1], c[2]).expect("eigenvector is unit")
    }

    /// Reconstructs the full 3x3 tensor from the eigensystem.
    pub fn matrix(&self) -> Matrix3<f64> {
        let lambda = Matrix3::from_diagonal(&Vector3::new(
            self.eigenvalues[0],
            self.eigenvalues[1],
            self.eigenvalues[2],
        ));
        self.frame * lambda * self.frame.transpose()
    }

    /// Mean diffusivity `(l1 + l2 + l3) / 3`.
    pub fn mean_diffusivity(&self) -> f64 {
        (self.eigenvalues[0] + self.eigenvalues[1] + self.eigenvalues[2]) / 3.0
    }
}

/// Single-tensor signal `exp(-b d' D d)`, in `(0, 1]`.
pub fn tensor_signal(bvalue: f64, dir: &UnitDirection, tensor: &DiffusionTensor) -> f64 {
    debug_assert!(bvalue >= 0.0);
    let d = Vector3::new(dir.x(), dir.y(), dir.z());
    let q = (d.transpose() * tensor.matrix() * d)[(0, 0)];
    (-bvalue * q).exp()
}

/// Fractional anisotropy `sqrt(3/2) |lambda - mean| / |lambda|`, in `[0, 1]`.
pub fn fa(tensor: &DiffusionTensor) -> f64 {
    let l = tensor.eigenvalues;
    let mean = (l[0] + l[1] + l[2]) / 3.0;
    let dev2: f64 = l.iter().map(|x| (x - mean).powi(2)).sum();
    let norm2: f64 = l.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return 0.0;
    }
    ((1.5 * dev2 / norm2).sqrt()).clamp(0.0, 1.0)
}

/// Log-linear least-squares tensor fit.
///
/// Uses the mean of positive b=0 samples as the reference; non-positive
/// samples are excluded. Needs at least six usable non-b0 samples. Fitted
/// eigenvalues are clamped at 1e-9 mm^2/s.
pub fn dti_fit(signal: &[f64], table: &GradientTable) -> Result<DiffusionTensor> {
    if signal.len() != table.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for {} gradient entries",
            signal.len(),
            table.len()
        )));
    }
    let b0s: Vec<f64> = table
        .b0_indices()
        .iter()
        .map(|&i| signal[i])
        .filter(|&s| s > 0.0)
        .collect();
    if b0s.is_empty() {
        return Err(Error::Infeasible("no positive b=0 sample".into()));
    }
    let s0 = b0s.iter().sum::<f64>() / b0s.len() as f64;

    let mut rows: Vec<[f64; 6]> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..table.len() {
        if table.is_b0(i) || signal[i] <= 0.0 {
            continue;
        }
        let e = table.entry(i);
        let g = e.direction;
        let b = e.bvalue;
        rows.push([
            -b * g.x() * g.x(),
            -b * g.y() * g.y(),
            -b * g.z() * g.z(),
            -2.0 * b * g.x() * g.y(),
            -2.0 * b * g.x() * g.z(),
            -2.0 * b * g.y() * g.z(),
        ]);
        rhs.push((signal[i] / s0).ln());
    }
    if rows.len() < 6 {
        return Err(Error::Infeasible(format!(
            "only {} usable diffusion-weighted samples (need 6)",
            rows.len()
        )));
    }

    let design = DMatrix::from_fn(rows.len(), 6, |i, j| rows[i][j]);
    let y = DVector::from_vec(rhs);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let d = svd
        .solve(&y, smax * 1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let tensor_mat = Matrix3::new(d[0], d[3], d[4], d[3], d[1], d[5], d[4], d[5], d[2]);
    let eig = SymmetricEigen::new(tensor_mat);
    let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let eigenvalues = [
        pairs[0].0.max(EIGENVALUE_FLOOR),
        pairs[1].0.max(EIGENVALUE_FLOOR),
        pairs[2].0.max(EIGENVALUE_FLOOR),
    ];
    let frame = Matrix3::from_columns(&[pairs[0].1, pairs[1].1, pairs[2].1]);
    Ok(DiffusionTensor { eigenvalues, frame })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_sh::GradientTable;

    fn test_table() -> GradientTable {
        GradientTable::synthetic(&[(0.0, 2), (1000.0, 32)]).unwrap()
    }

    #[test]
    fn signal_at_b0_is_one() {
        let t = DiffusionTensor::axisymmetric(1.7e-3, 0.2e-3, UnitDirection::z_axis()).unwrap();
        assert_eq!(tensor_signal(0.0, &UnitDirection::x_axis(), &t), 1.0);
    }

    #[test]
    fn signal_along_and_across_axis() {
        let t = DiffusionTensor::axisymmetric(1.7e-3, 0.2e-3, UnitDirection::z_axis()).unwrap();
        let perp = tensor_signal(1000.0, &UnitDirection::x_axis(), &t);
        let par = tensor_signal(1000.0, &UnitDirection::z_axis(), &t);
        assert!((perp - (-0.2_f64).exp()).abs() < 1e-12, "perp {perp}");
        assert!((par - (-1.7_f64).exp()).abs() < 1e-12, "par {par}");
    }

    #[test]
    fn fa_examples() {
        let iso = DiffusionTensor::isotropic(0.9e-3).unwrap();
        assert!(fa(&iso) < 1e-12);
        let wm = DiffusionTensor::axisymmetric(1.7e-3, 0.2e-3, UnitDirection::z_axis()).unwrap();
        assert!((fa(&wm) - 0.8704).abs() < 1e-4, "fa {}", fa(&wm));
        // Degenerate stick limit.
        let stick = DiffusionTensor {
            eigenvalues: [1.0, 0.0, 0.0],
            frame: Matrix3::identity(),
        };
        assert!((fa(&stick) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dti_roundtrip_noiseless() {
        let table = test_table();
        let axis = UnitDirection::normalize(1.0, 0.5, -0.3).unwrap();
        let truth = DiffusionTensor::axisymmetric(1.5e-3, 0.3e-3, axis).unwrap();
        let signal: Vec<f64> = (0..table.len())
            .map(|i| tensor_signal(table.entry(i).bvalue, &table.entry(i).direction, &truth))
            .collect();
        let fitted = dti_fit(&signal, &table).unwrap();
        for (a, b) in fitted.eigenvalues().iter().zip(truth.eigenvalues()) {
            assert!((a - b).abs() / b < 1e-8, "{a} vs {b}");
        }
        assert!(fitted.principal_axis().axis_angle_to(&axis) < 1e-6);
    }

    #[test]
    fn dti_isotropic_input() {
        let table = test_table();
        let truth = DiffusionTensor::isotropic(0.9e-3).unwrap();
        let signal: Vec<f64> = (0..table.len())
            .map(|i| tensor_signal(table.entry(i).bvalue, &table.entry(i).direction, &truth))
            .collect();
        let fitted = dti_fit(&signal, &table).unwrap();
        let l = fitted.eigenvalues();
        assert!((l[0] - l[2]).abs() / l[0] < 1e-8);
    }

    #[test]
    fn dti_rotation_equivariance() {
        let table = test_table();
        // Two fits of the same tensor with rotated axes: eigenvalues agree,
        // axes track the rotation.
        let axis_a = UnitDirection::normalize(1.0, 0.0, 0.2).unwrap();
        let axis_b = UnitDirection::normalize(-0.4, 0.8, 0.45).unwrap();
        for axis in [axis_a, axis_b] {
            let truth = DiffusionTensor::axisymmetric(1.6e-3, 0.25e-3, axis).unwrap();
            let signal: Vec<f64> = (0..table.len())
                .map(|i| tensor_signal(table.entry(i).bvalue, &table.entry(i).direction, &truth))
                .collect();
            let fitted = dti_fit(&signal, &table).unwrap();
            assert!((fitted.eigenvalues()[0] - 1.6e-3).abs() / 1.6e-3 < 1e-8);
            assert!(fitted.principal_axis().axis_angle_to(&axis) < 1e-6);
        }
    }

    #[test]
    fn dti_rejects_underdetermined() {
        let table = GradientTable::synthetic(&[(0.0, 1), (1000.0, 5)]).unwrap();
        let signal = vec![1.0, 0.5, 0.5, 0.5, 0.5, 0.5];
        assert!(matches!(dti_fit(&signal, &table), Err(Error::Infeasible(_))));
    }

    #[test]
    fn dti_excludes_nonpositive_samples() {
        let table = test_table();
        let truth = DiffusionTensor::isotropic(1.0e-3).unwrap();
        let mut signal: Vec<f64> = (0..table.len())
            .map(|i| tensor_signal(table.entry(i).bvalue, &table.entry(i).direction, &truth))
            .collect();
        signal[5] = -0.1;
        signal[9] = 0.0;
        let fitted = dti_fit(&signal, &table).unwrap();
        assert!((fitted.mean_diffusivity() - 1.0e-3).abs() / 1.0e-3 < 1e-8);
    }
}
