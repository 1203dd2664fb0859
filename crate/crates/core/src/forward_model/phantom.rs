//! Synthetic phantom volumes: per-voxel multi-tensor signals, Rician noise,
//! and b0 normalization.
//!
//! Noise streams are counter-based per voxel index (one ChaCha stream per
//! voxel), so parallel and serial generation agree bitwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tensor_signal, DiffusionTensor, Fiber, FiberConfig, TissueParams};
use crate::sphere_sh::{GradientTable, UnitDirection};
use crate::volume::{ChannelVolume, VolumeGeom};
use crate::{Error, Result};

/// Per-voxel ground-truth assignment rule for phantom generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRule {
    /// Probabilities of 1, 2, and 3 fiber populations (must sum to 1).
    pub fiber_count_probs: [f64; 3],
    /// WM volume fraction drawn uniformly from this range.
    pub wm_fraction_range: (f64, f64),
    /// Minimum pairwise fiber separation in degrees.
    pub min_separation_deg: f64,
}

impl Default for AssignmentRule {
    fn default() -> Self {
        Self {
            fiber_count_probs: [0.40, 0.45, 0.15],
            wm_fraction_range: (0.55, 0.90),
            min_separation_deg: super::MIN_FIBER_SEPARATION_DEG,
        }
    }
}

/// Full phantom description; `(spec, table)` determines the volume bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    /// b0-referenced signal-to-noise ratio; `None` means noiseless.
    pub snr: Option<f64>,
    /// Post-menstrual age in weeks (26..=46).
    pub age_weeks: f64,
    pub seed: u64,
    #[serde(default)]
    pub assignment: AssignmentRule,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [20, 20, 10],
            voxel_size_mm: 1.5,
            snr: Some(20.0),
            age_weeks: 40.0,
            seed: 0,
            assignment: AssignmentRule::default(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("phantom dims must all be >= 1".into()));
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0) {
                return Err(Error::InvalidArgument(format!("SNR {snr} must be > 0")));
            }
        }
        TissueParams::at_age(self.age_weeks)?;
        let p = &self.assignment.fiber_count_probs;
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument(
                "fiber count probabilities must be non-negative and sum to 1".into(),
            ));
        }
        let (lo, hi) = self.assignment.wm_fraction_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "wm fraction range ({lo}, {hi}) invalid"
            )));
        }
        Ok(())
    }
}

/// A measured (or simulated) volume: per-voxel measurement vectors plus the
/// acquisition table, with optional ground truth attached.
#[derive(Debug, Clone)]
pub struct SignalVolume {
    pub geom: VolumeGeom,
    pub table: GradientTable,
    pub data: ChannelVolume,
    pub truth: Option<Vec<FiberConfig>>,
}

impl SignalVolume {
    pub fn n_voxels(&self) -> usize {
        self.geom.n_voxels()
    }

    /// Restricts every voxel to the measurements in `indices`.
    pub fn subset_measurements(&self, indices: &[usize]) -> Result<SignalVolume> {
        let table = self.table.subset(indices)?;
        let mut data = ChannelVolume::zeros(self.geom, indices.len());
        for v in 0..self.n_voxels() {
            let src = self.data.voxel(v);
            let dst = data.voxel_mut(v);
            for (k, &i) in indices.iter().enumerate() {
                dst[k] = src[i];
            }
        }
        Ok(SignalVolume { geom: self.geom, table, data, truth: self.truth.clone() })
    }
}

/// Noiseless multi-compartment signal for one voxel:
/// `S(b,g) = f_csf e^{-b d_csf} + f_gm e^{-b d_gm} + f_wm sum_k w_k S_tensor(b, g; T_k)`.
pub fn simulate_voxel(
    config: &FiberConfig,
    table: &GradientTable,
    params: &TissueParams,
) -> Vec<f64> {
    let tensors: Vec<DiffusionTensor> = config
        .fibers()
        .iter()
        .map(|f| {
            DiffusionTensor::axisymmetric(params.wm_lambda_par, params.wm_lambda_perp, f.axis)
                .expect("tissue parameters are valid")
        })
        .collect();
    (0..table.len())
        .map(|i| {
            let e = table.entry(i);
            let iso = config.f_csf() * (-e.bvalue * params.csf_diffusivity).exp()
                + config.f_gm() * (-e.bvalue * params.gm_diffusivity).exp();
            let wm: f64 = config
                .fibers()
                .iter()
                .zip(&tensors)
                .map(|(f, t)| f.fraction * tensor_signal(e.bvalue, &e.direction, t))
                .sum();
            iso + config.f_wm() * wm
        })
        .collect()
}

/// Rician sample: magnitude of the signal after complex Gaussian noise.
fn rician(value: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    let n1: f64 = normal.sample(rng);
    let n2: f64 = normal.sample(rng);
    ((value + n1).powi(2) + n2 * n2).sqrt()
}

/// Adds Rician noise with `sigma = S0 / snr`, `S0` the mean b=0 value of
/// `signal`. `snr = +inf` returns the input unchanged. Deterministic per
/// seed.
pub fn add_rician_noise(
    signal: &[f64],
    table: &GradientTable,
    snr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("SNR {snr} must be > 0")));
    }
    if snr.is_infinite() {
        return Ok(signal.to_vec());
    }
    let b0s = table.b0_indices();
    if b0s.is_empty() {
        return Err(Error::InvalidArgument(
            "need a b=0 measurement to reference the noise level".into(),
        ));
    }
    let s0 = b0s.iter().map(|&i| signal[i]).sum::<f64>() / b0s.len() as f64;
    let sigma = s0 / snr;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "non-positive noise level from S0 = {s0}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(signal.iter().map(|&s| rician(s, sigma, &mut rng)).collect())
}

fn draw_config(rule: &AssignmentRule, age_ok: &TissueParams, rng: &mut ChaCha8Rng) -> FiberConfig {
    let _ = age_ok;
    let u: f64 = rng.random_range(0.0..1.0);
    let n_fibers = if u < rule.fiber_count_probs[0] {
        1
    } else if u < rule.fiber_count_probs[0] + rule.fiber_count_probs[1] {
        2
    } else {
        3
    };

    let min_sep = rule.min_separation_deg.to_radians();
    let mut axes: Vec<UnitDirection> = Vec::with_capacity(n_fibers);
    while axes.len() < n_fibers {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).max(0.0).sqrt();
        let cand = UnitDirection::normalize(r * phi.cos(), r * phi.sin(), z)
            .expect("sampled direction");
        if axes.iter().all(|a| a.axis_angle_to(&cand) >= min_sep) {
            axes.push(cand);
        }
    }

    let raw: Vec<f64> = (0..n_fibers).map(|_| rng.random_range(0.5..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut fibers: Vec<Fiber> = axes
        .iter()
        .zip(&raw)
        .map(|(axis, w)| Fiber { axis: *axis, fraction: w / total })
        .collect();
    // Exact unit sum despite rounding.
    let correction: f64 = 1.0 - fibers.iter().map(|f| f.fraction).sum::<f64>();
    fibers[0].fraction += correction;

    let f_wm = rng.random_range(rule.wm_fraction_range.0..rule.wm_fraction_range.1);
    let split: f64 = rng.random_range(0.0..1.0);
    let rest = 1.0 - f_wm;
    let f_gm = rest * split;
    let f_csf = rest - f_gm;
    FiberConfig::new(fibers, f_wm, f_gm, f_csf).expect("drawn configuration is valid")
}

/// Generates a phantom volume: per-voxel configurations drawn by the
/// assignment rule, noiseless signals, then Rician noise. Reproducible per
/// `(spec, table)`; parallel and serial runs agree bitwise.
pub fn generate_phantom(spec: &PhantomSpec, table: &GradientTable) -> Result<SignalVolume> {
    spec.validate()?;
    let params = TissueParams::at_age(spec.age_weeks)?;
    let geom = VolumeGeom::isotropic(spec.dims, spec.voxel_size_mm);
    let n_vox = geom.n_voxels();
    let n_meas = table.len();

    let per_voxel: Vec<(FiberConfig, Vec<f64>)> = (0..n_vox)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(v as u64 + 1);
            let config = draw_config(&spec.assignment, &params, &mut rng);
            let mut signal = simulate_voxel(&config, table, &params);
            if let Some(snr) = spec.snr {
                if snr.is_finite() {
                    let sigma = 1.0 / snr; // noiseless b0 is exactly 1
                    for s in &mut signal {
                        *s = rician(*s, sigma, &mut rng);
                    }
                }
            }
            (config, signal)
        })
        .collect();

    let mut data = ChannelVolume::zeros(geom, n_meas);
    let mut truth = Vec::with_capacity(n_vox);
    for (v, (config, signal)) in per_voxel.into_iter().enumerate() {
        data.set_voxel(v, &signal);
        truth.push(config);
    }
    Ok(SignalVolume { geom, table: table.clone(), data, truth: Some(truth) })
}

/// Outcome of [`b0_normalize`]: the normalized volume (b=0 measurements
/// removed from the table) plus the indices of voxels zeroed because their
/// reference b0 was non-positive.
#[derive(Debug, Clone)]
pub struct B0NormalizeReport {
    pub volume: SignalVolume,
    pub flagged_voxels: Vec<usize>,
}

/// Divides every measurement by the first b=0 value of its voxel and drops
/// all b=0 entries from the table. Voxels with a non-positive reference are
/// zero-filled and reported.
pub fn b0_normalize(volume: &SignalVolume) -> Result<B0NormalizeReport> {
    let b0s = volume.table.b0_indices();
    let first_b0 = *b0s
        .first()
        .ok_or_else(|| Error::InvalidArgument("no b=0 measurement to normalize by".into()))?;
    let keep: Vec<usize> = (0..volume.table.len())
        .filter(|i| !volume.table.is_b0(*i))
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("table has only b=0 measurements".into()));
    }
    let table = volume.table.subset(&keep)?;
    let mut data = ChannelVolume::zeros(volume.geom, keep.len());
    let mut flagged = Vec::new();
    for v in 0..volume.n_voxels() {
        let src = volume.data.voxel(v);
        let reference = src[first_b0];
        let dst = data.voxel_mut(v);
        if reference > 0.0 {
            for (k, &i) in keep.iter().enumerate() {
                dst[k] = src[i] / reference;
            }
        } else {
            flagged.push(v);
        }
    }
    Ok(B0NormalizeReport {
        volume: SignalVolume {
            geom: volume.geom,
            table,
            data,
            truth: volume.truth.clone(),
        },
        flagged_voxels: flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_table() -> GradientTable {
        GradientTable::synthetic(&[(0.0, 2), (1000.0, 12)]).unwrap()
    }

    #[test]
    fn pure_csf_b0_is_one() {
        let config = FiberConfig::new(vec![], 0.0, 0.0, 1.0).unwrap();
        let table = GradientTable::synthetic(&[(0.0, 3)]).unwrap();
        let s = simulate_voxel(&config, &table, &TissueParams::default());
        for v in s {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_fiber_signal_peaks_perpendicular() {
        let config = FiberConfig::single_fiber(UnitDirection::z_axis());
        let table = small_table();
        let s = simulate_voxel(&config, &table, &TissueParams::default());
        let (mut best_i, mut best) = (0, f64::MIN);
        for i in 2..table.len() {
            if s[i] > best {
                best = s[i];
                best_i = i;
            }
        }
        // Maximal attenuation-free direction is the most perpendicular one.
        let axis_dot = table.entry(best_i).direction.z().abs();
        let most_perp = (2..table.len())
            .map(|i| table.entry(i).direction.z().abs())
            .fold(f64::INFINITY, f64::min);
        assert!((axis_dot - most_perp).abs() < 1e-12);
    }

    #[test]
    fn crossing_symmetric_under_axis_swap() {
        let table = small_table();
        let params = TissueParams::default();
        let a = UnitDirection::x_axis();
        let b = UnitDirection::y_axis();
        let cfg1 = FiberConfig::new(
            vec![Fiber { axis: a, fraction: 0.5 }, Fiber { axis: b, fraction: 0.5 }],
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        let cfg2 = FiberConfig::new(
            vec![Fiber { axis: b, fraction: 0.5 }, Fiber { axis: a, fraction: 0.5 }],
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        let s1 = simulate_voxel(&cfg1, &table, &params);
        let s2 = simulate_voxel(&cfg2, &table, &params);
        for (x, y) in s1.iter().zip(&s2) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn infinite_snr_is_identity() {
        let table = small_table();
        let signal = vec![1.0; table.len()];
        let out = add_rician_noise(&signal, &table, f64::INFINITY, 7).unwrap();
        assert_eq!(out, signal);
    }

    #[test]
    fn rician_zero_signal_mean_is_rayleigh() {
        // Monte-Carlo oracle: for s = 0 the Rician mean is sigma sqrt(pi/2).
        let sigma = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| rician(0.0, sigma, &mut rng)).sum::<f64>() / n as f64;
        let expected = sigma * (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean - expected).abs() / expected < 0.02, "{mean} vs {expected}");
    }

    #[test]
    fn rician_high_snr_bias_is_small() {
        // At SNR 30 and s = 1 the Rician bias is below 0.002.
        let sigma = 1.0 / 30.0;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| rician(1.0, sigma, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.002, "bias {}", mean - 1.0);
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec {
            dims: [4, 4, 2],
            snr: Some(25.0),
            seed: 11,
            ..PhantomSpec::default()
        };
        let table = small_table();
        let a = generate_phantom(&spec, &table).unwrap();
        let b = generate_phantom(&spec, &table).unwrap();
        assert_eq!(a.data.data, b.data.data);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn noiseless_single_voxel_matches_simulate() {
        let spec = PhantomSpec {
            dims: [1, 1, 1],
            snr: None,
            seed: 3,
            ..PhantomSpec::default()
        };
        let table = small_table();
        let vol = generate_phantom(&spec, &table).unwrap();
        let truth = &vol.truth.as_ref().unwrap()[0];
        let expected = simulate_voxel(truth, &table, &TissueParams::default());
        assert_eq!(vol.data.voxel(0), expected.as_slice());
    }

    #[test]
    fn fiber_count_distribution_follows_rule() {
        let spec = PhantomSpec {
            dims: [20, 20, 5],
            snr: None,
            seed: 5,
            ..PhantomSpec::default()
        };
        let table = small_table();
        let vol = generate_phantom(&spec, &table).unwrap();
        let truth = vol.truth.as_ref().unwrap();
        let n = truth.len() as f64;
        for k in 1..=3 {
            let frac = truth.iter().filter(|c| c.n_fibers() == k).count() as f64 / n;
            let expected = spec.assignment.fiber_count_probs[k - 1];
            // 2000 voxels: allow a generous multinomial margin.
            assert!(
                (frac - expected).abs() < 0.035,
                "count {k}: {frac} vs {expected}"
            );
        }
        let multi = truth.iter().filter(|c| c.n_fibers() >= 2).count() as f64 / n;
        assert!((multi - 0.60).abs() < 0.04, "multi-fiber fraction {multi}");
    }

    #[test]
    fn b0_normalize_contract() {
        let table = GradientTable::synthetic(&[(0.0, 2), (1000.0, 6)]).unwrap();
        let geom = VolumeGeom::isotropic([2, 1, 1], 1.0);
        let mut data = ChannelVolume::zeros(geom, table.len());
        data.set_voxel(0, &[2.0, 2.1, 1.0, 1.2, 0.8, 0.9, 1.1, 0.7]);
        data.set_voxel(1, &[0.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let vol = SignalVolume { geom, table, data, truth: None };
        let report = b0_normalize(&vol).unwrap();
        assert_eq!(report.volume.table.b0_indices().len(), 0);
        assert_eq!(report.volume.data.channels, 6);
        // Voxel 0 divided by its first b0 (2.0).
        assert!((report.volume.data.voxel(0)[0] - 0.5).abs() < 1e-15);
        // Voxel 1 flagged: first b0 is zero.
        assert_eq!(report.flagged_voxels, vec![1]);
        assert!(report.volume.data.voxel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn b0_normalize_csf_closed_form() {
        let table = GradientTable::synthetic(&[(0.0, 1), (1000.0, 6)]).unwrap();
        let config = FiberConfig::new(vec![], 0.0, 0.0, 1.0).unwrap();
        let signal = simulate_voxel(&config, &table, &TissueParams::default());
        let geom = VolumeGeom::isotropic([1, 1, 1], 1.0);
        let data = ChannelVolume::from_data(geom, table.len(), signal).unwrap();
        let vol = SignalVolume { geom, table, data, truth: None };
        let report = b0_normalize(&vol).unwrap();
        for &v in report.volume.data.voxel(0) {
            assert!((v - (-3.0_f64).exp()).abs() < 1e-12);
        }
    }
}
