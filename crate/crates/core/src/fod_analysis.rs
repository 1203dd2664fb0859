//! Peak extraction from FOD coefficients and apparent fiber density.
//!
//! Peaks are seeded at mesh-local maxima of the FOD amplitude, refined by a
//! few Newton steps on the sphere, filtered by a relative amplitude
//! threshold, then greedily selected with angular-separation suppression
//! (antipodal metric) and capped.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::sphere_sh::{
    sh_basis_matrix, sh_eval_at, ShBasisSpec, ShCoefficients, SphereMesh, UnitDirection,
};
use crate::{Error, Result};

/// One extracted fiber direction with its FOD amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Canonicalized axis (z >= 0; ties broken by y then x).
    pub axis: UnitDirection,
    pub amplitude: f64,
}

/// Up to `max_peaks` peaks sorted by descending amplitude, pairwise
/// separated by at least the separation angle, each at least
/// `relative_threshold` times the strongest amplitude.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn empty() -> Self {
        Self { peaks: Vec::new() }
    }

    /// Builds a set from raw peaks: axes are canonicalized and entries
    /// sorted by descending amplitude.
    pub fn from_peaks(mut peaks: Vec<Peak>) -> Self {
        for p in &mut peaks {
            p.axis = p.axis.canonical_axis();
        }
        peaks.sort_by(|a, b| b.amplitude.partial_cmp(&a.amplitude).unwrap());
        Self { peaks }
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

/// Extraction parameters; the defaults are the evaluation settings used
/// throughout the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakConfig {
    pub min_separation_deg: f64,
    pub relative_threshold: f64,
    pub max_peaks: usize,
    pub newton_iterations: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            min_separation_deg: 45.0,
            relative_threshold: 0.5,
            max_peaks: 3,
            newton_iterations: 10,
        }
    }
}

/// Newton steps are clamped to this arc length (radians).
const MAX_NEWTON_STEP: f64 = 0.0873; // 5 degrees

/// Prebuilt extractor: caches the mesh basis matrix so volumes of FODs can
/// be processed without re-evaluating the basis per voxel.
pub struct PeakExtractor<'m> {
    mesh: &'m SphereMesh,
    basis: ShBasisSpec,
    design: DMatrix<f64>,
}

impl<'m> PeakExtractor<'m> {
    pub fn new(mesh: &'m SphereMesh, basis: ShBasisSpec) -> Self {
        Self { mesh, basis, design: sh_basis_matrix(mesh.vertices(), basis) }
    }

    pub fn extract(&self, fod: &ShCoefficients, cfg: &PeakConfig) -> Result<PeakSet> {
        if fod.basis() != self.basis {
            return Err(Error::InvalidArgument(format!(
                "FOD order {} does not match extractor order {}",
                fod.basis().order(),
                self.basis.order()
            )));
        }
        let c = nalgebra::DVector::from_column_slice(fod.values());
        let amplitudes = &self.design * &c;

        // Mesh-local maxima over 1-ring neighborhoods.
        let mut seeds: Vec<usize> = Vec::new();
        for v in 0..self.mesh.n_vertices() {
            let a = amplitudes[v];
            if a <= 0.0 {
                continue;
            }
            if self
                .mesh
                .neighbors(v)
                .iter()
                .all(|&u| amplitudes[u] < a || (amplitudes[u] == a && u > v))
            {
                seeds.push(v);
            }
        }
        if seeds.is_empty() {
            return Ok(PeakSet::empty());
        }

        let mut candidates: Vec<Peak> = seeds
            .into_iter()
            .map(|v| refine_peak(fod, self.mesh.vertices()[v], cfg.newton_iterations))
            .filter(|p| p.amplitude > 0.0)
            .collect();

        // Descending amplitude; deterministic tie-break on the axis.
        candidates.sort_by(|a, b| {
            b.amplitude
                .partial_cmp(&a.amplitude)
                .unwrap()
                .then_with(|| {
                    a.axis
                        .as_array()
                        .iter()
                        .zip(b.axis.as_array())
                        .map(|(x, y)| x.partial_cmp(&y).unwrap())
                        .fold(std::cmp::Ordering::Equal, |acc, o| acc.then(o))
                })
        });

        let Some(strongest) = candidates.first().map(|p| p.amplitude) else {
            return Ok(PeakSet::empty());
        };
        let floor = strongest * cfg.relative_threshold;
        let min_sep = cfg.min_separation_deg.to_radians();

        let mut selected: Vec<Peak> = Vec::new();
        for peak in candidates {
            if selected.len() >= cfg.max_peaks {
                break;
            }
            if peak.amplitude < floor {
                break;
            }
            if selected
                .iter()
                .all(|s| s.axis.axis_angle_to(&peak.axis) >= min_sep)
            {
                selected.push(peak);
            }
        }
        Ok(PeakSet { peaks: selected })
    }
}

/// Riemannian Newton ascent of the FOD amplitude from a mesh seed, with
/// finite-difference derivatives in the tangent plane and the step clamped
/// to 5 degrees. Falls back to a small gradient step when the Hessian is
/// not negative definite.
fn refine_peak(fod: &ShCoefficients, seed: UnitDirection, iterations: usize) -> Peak {
    let mut p = seed;
    let h = 1e-4;
    for _ in 0..iterations {
        let (e1, e2) = p.orthonormal_frame();
        let f0 = sh_eval_at(fod, &p);
        let fp1 = sh_eval_at(fod, &move_on_sphere(&p, &e1, &e2, h, 0.0));
        let fm1 = sh_eval_at(fod, &move_on_sphere(&p, &e1, &e2, -h, 0.0));
        let fp2 = sh_eval_at(fod, &move_on_sphere(&p, &e1, &e2, 0.0, h));
        let fm2 = sh_eval_at(fod, &move_on_sphere(&p, &e1, &e2, 0.0, -h));
        let fpp = sh_eval_at(fod, &move_on_sphere(&p, &e1, &e2, h, h));
        let fmm = sh_eval_at(fod, &move_on_sphere(&p, &e1, &e2, -h, -h));

        let g1 = (fp1 - fm1) / (2.0 * h);
        let g2 = (fp2 - fm2) / (2.0 * h);
        let h11 = (fp1 - 2.0 * f0 + fm1) / (h * h);
        let h22 = (fp2 - 2.0 * f0 + fm2) / (h * h);
        let h12 = (fpp - fp1 - fp2 + 2.0 * f0 - fm1 - fm2 + fmm) / (2.0 * h * h);

        let det = h11 * h22 - h12 * h12;
        let (mut s1, mut s2) = if det > 0.0 && h11 < 0.0 {
            // Newton step -H^{-1} g on a negative-definite Hessian.
            (
                -(h22 * g1 - h12 * g2) / det,
                -(h11 * g2 - h12 * g1) / det,
            )
        } else {
            (g1 * 0.01, g2 * 0.01)
        };
        let norm = (s1 * s1 + s2 * s2).sqrt();
        if norm > MAX_NEWTON_STEP {
            s1 *= MAX_NEWTON_STEP / norm;
            s2 *= MAX_NEWTON_STEP / norm;
        }
        if norm < 1e-12 {
            break;
        }
        p = move_on_sphere(&p, &e1, &e2, s1, s2);
    }
    Peak { axis: p.canonical_axis(), amplitude: sh_eval_at(fod, &p) }
}

fn move_on_sphere(
    p: &UnitDirection,
    e1: &UnitDirection,
    e2: &UnitDirection,
    t1: f64,
    t2: f64,
) -> UnitDirection {
    UnitDirection::normalize(
        p.x() + t1 * e1.x() + t2 * e2.x(),
        p.y() + t1 * e1.y() + t2 * e2.y(),
        p.z() + t1 * e1.z() + t2 * e2.z(),
    )
    .expect("tangent step stays non-degenerate")
}

/// One-shot peak extraction.
pub fn extract_peaks(
    fod: &ShCoefficients,
    mesh: &SphereMesh,
    cfg: &PeakConfig,
) -> Result<PeakSet> {
    PeakExtractor::new(mesh, fod.basis()).extract(fod, cfg)
}

/// Apparent fiber density: the sphere integral of the FOD,
/// `c_00 * 2 sqrt(pi)`.
pub fn afd_total(fod: &ShCoefficients) -> f64 {
    fod.sphere_integral()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_sh::{sh_basis_matrix, sh_fit, tessellate_sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn delta_fod(axis: &UnitDirection, order: usize) -> ShCoefficients {
        let basis = ShBasisSpec::new(order).unwrap();
        let b = sh_basis_matrix(std::slice::from_ref(axis), basis);
        ShCoefficients::new(basis, b.row(0).transpose().as_slice().to_vec()).unwrap()
    }

    /// Dense-grid oracle: the argmax over a fine tessellation (vertex
    /// spacing about 1 degree, so the oracle is good to half a degree).
    fn dense_argmax(fod: &ShCoefficients) -> (UnitDirection, f64) {
        let mesh = tessellate_sphere(6).unwrap();
        let mut best = (UnitDirection::z_axis(), f64::MIN);
        for v in mesh.vertices() {
            let a = sh_eval_at(fod, v);
            if a > best.1 {
                best = (*v, a);
            }
        }
        best
    }

    #[test]
    fn zero_fod_has_no_peaks() {
        let basis = ShBasisSpec::new(8).unwrap();
        let mesh = tessellate_sphere(3).unwrap();
        let fod = ShCoefficients::zeros(basis);
        let peaks = extract_peaks(&fod, &mesh, &PeakConfig::default()).unwrap();
        assert!(peaks.is_empty());
        // Strictly negative FOD too.
        let mut neg = ShCoefficients::zeros(basis);
        neg.values_mut()[0] = -1.0;
        let peaks = extract_peaks(&neg, &mesh, &PeakConfig::default()).unwrap();
        assert!(peaks.is_empty());
    }

    #[test]
    fn single_lobe_peak_matches_dense_grid() {
        let axis = UnitDirection::normalize(0.3, -0.4, 0.85).unwrap();
        let fod = delta_fod(&axis, 8);
        let mesh = tessellate_sphere(3).unwrap();
        let peaks = extract_peaks(&fod, &mesh, &PeakConfig::default()).unwrap();
        assert_eq!(peaks.len(), 1);
        let peak = peaks.peaks()[0];
        let (oracle_axis, oracle_amp) = dense_argmax(&fod);
        assert!(
            peak.axis.axis_angle_to(&oracle_axis).to_degrees() < 1.0,
            "axis off dense-grid argmax"
        );
        assert!(peak.axis.axis_angle_to(&axis).to_degrees() < 0.1);
        assert!(peak.amplitude >= oracle_amp - 1e-9);
    }

    #[test]
    fn secondary_lobe_below_threshold_is_suppressed() {
        // Two lobes, the second at 0.4 x primary amplitude: threshold 0.5
        // keeps only the primary.
        let a1 = UnitDirection::z_axis();
        let a2 = UnitDirection::x_axis();
        let basis = ShBasisSpec::new(8).unwrap();
        let d1 = delta_fod(&a1, 8);
        let d2 = delta_fod(&a2, 8);
        let values: Vec<f64> = d1
            .values()
            .iter()
            .zip(d2.values())
            .map(|(x, y)| x + 0.4 * y)
            .collect();
        let fod = ShCoefficients::new(basis, values).unwrap();
        let mesh = tessellate_sphere(3).unwrap();
        let peaks = extract_peaks(&fod, &mesh, &PeakConfig::default()).unwrap();
        assert_eq!(peaks.len(), 1, "secondary lobe must be suppressed");
        assert!(peaks.peaks()[0].axis.axis_angle_to(&a1).to_degrees() < 1.0);
        // With a lower threshold both survive.
        let loose = PeakConfig { relative_threshold: 0.3, ..PeakConfig::default() };
        let peaks = extract_peaks(&fod, &mesh, &loose).unwrap();
        assert_eq!(peaks.len(), 2);
    }

    #[test]
    fn crossing_fibers_give_two_peaks() {
        let a1 = UnitDirection::z_axis();
        let a2 = UnitDirection::x_axis();
        let basis = ShBasisSpec::new(8).unwrap();
        let values: Vec<f64> = delta_fod(&a1, 8)
            .values()
            .iter()
            .zip(delta_fod(&a2, 8).values())
            .map(|(x, y)| x + y)
            .collect();
        let fod = ShCoefficients::new(basis, values).unwrap();
        let mesh = tessellate_sphere(3).unwrap();
        let peaks = extract_peaks(&fod, &mesh, &PeakConfig::default()).unwrap();
        assert_eq!(peaks.len(), 2);
        let found: Vec<f64> = peaks
            .peaks()
            .iter()
            .map(|p| {
                p.axis
                    .axis_angle_to(&a1)
                    .min(p.axis.axis_angle_to(&a2))
                    .to_degrees()
            })
            .collect();
        assert!(found.iter().all(|&d| d < 1.0), "{found:?}");
    }

    #[test]
    fn peak_set_invariants_hold_on_random_fods() {
        let basis = ShBasisSpec::new(8).unwrap();
        let mesh = tessellate_sphere(3).unwrap();
        let extractor = PeakExtractor::new(&mesh, basis);
        let cfg = PeakConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let values: Vec<f64> =
                (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fod = ShCoefficients::new(basis, values).unwrap();
            let peaks = extractor.extract(&fod, &cfg).unwrap();
            assert!(peaks.len() <= cfg.max_peaks);
            let ps = peaks.peaks();
            for (i, p) in ps.iter().enumerate() {
                assert!(p.amplitude > 0.0);
                // Canonical axis orientation.
                let a = p.axis;
                assert!(
                    a.z() > 0.0
                        || (a.z() == 0.0 && (a.y() > 0.0 || (a.y() == 0.0 && a.x() >= 0.0)))
                );
                // Sorted descending.
                if i > 0 {
                    assert!(ps[i - 1].amplitude >= p.amplitude);
                }
                // Threshold against the strongest.
                assert!(p.amplitude >= cfg.relative_threshold * ps[0].amplitude - 1e-12);
                // Pairwise separation.
                for q in &ps[i + 1..] {
                    assert!(
                        p.axis.axis_angle_to(&q.axis).to_degrees()
                            >= cfg.min_separation_deg - 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_equivariance_via_fit() {
        // Rotate an FOD by resampling (exact for band-limited functions)
        // and check the peak rotates with it.
        let basis = ShBasisSpec::new(8).unwrap();
        let axis = UnitDirection::normalize(0.2, 0.5, 0.84).unwrap();
        let fod = delta_fod(&axis, 8);

        // Rotation by 40 degrees around x: (x, y, z) -> (x, c y - s z, s y + c z).
        let (s, c) = 40.0_f64.to_radians().sin_cos();
        let rotate = |d: &UnitDirection| {
            UnitDirection::normalize(d.x(), c * d.y() - s * d.z(), s * d.y() + c * d.z()).unwrap()
        };
        let mesh = tessellate_sphere(4).unwrap();
        // Sample f(R^{-1} v) and refit.
        let unrotate = |d: &UnitDirection| {
            UnitDirection::normalize(d.x(), c * d.y() + s * d.z(), -s * d.y() + c * d.z())
                .unwrap()
        };
        let samples: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|v| sh_eval_at(&fod, &unrotate(v)))
            .collect();
        let rotated = sh_fit(&samples, mesh.vertices(), basis, 0.0).unwrap();

        let peak_mesh = tessellate_sphere(3).unwrap();
        let cfg = PeakConfig::default();
        let p0 = extract_peaks(&fod, &peak_mesh, &cfg).unwrap();
        let p1 = extract_peaks(&rotated, &peak_mesh, &cfg).unwrap();
        assert_eq!(p0.len(), 1);
        assert_eq!(p1.len(), 1);
        let expected = rotate(&p0.peaks()[0].axis);
        assert!(
            p1.peaks()[0].axis.axis_angle_to(&expected).to_degrees() < 1.0,
            "rotated peak off by {}",
            p1.peaks()[0].axis.axis_angle_to(&expected).to_degrees()
        );
        // AFD is rotation invariant.
        assert!((afd_total(&fod) - afd_total(&rotated)).abs() < 1e-9);
    }

    #[test]
    fn afd_examples() {
        let basis = ShBasisSpec::new(4).unwrap();
        assert_eq!(afd_total(&ShCoefficients::zeros(basis)), 0.0);
        // c00 = k / (2 sqrt(pi)) integrates to k.
        let k = 3.7;
        let mut c = ShCoefficients::zeros(basis);
        c.values_mut()[0] = k / (2.0 * std::f64::consts::PI.sqrt());
        assert!((afd_total(&c) - k).abs() < 1e-12);
    }

    #[test]
    fn afd_matches_quadrature() {
        // Gauss-Legendre x azimuth product rule: exact for order-8 functions,
        // so the 1e-6 tolerance is meaningful.
        let basis = ShBasisSpec::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fod = ShCoefficients::new(basis, values).unwrap();
        let quad: f64 = crate::sphere_sh::product_quadrature(16, 32)
            .iter()
            .map(|(v, w)| sh_eval_at(&fod, v) * w)
            .sum();
        let afd = afd_total(&fod);
        assert!(
            (afd - quad).abs() <= 1e-6 * afd.abs().max(1.0),
            "{afd} vs quadrature {quad}"
        );
    }

    #[test]
    fn afd_is_linear() {
        let basis = ShBasisSpec::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 1.5 * x - 2.0 * y).collect();
        let fa = afd_total(&ShCoefficients::new(basis, a).unwrap());
        let fb = afd_total(&ShCoefficients::new(basis, b).unwrap());
        let fc = afd_total(&ShCoefficients::new(basis, combo).unwrap());
        assert!((fc - (1.5 * fa - 2.0 * fb)).abs() < 1e-12);
    }
}
