//! Age-dependent tissue model and per-voxel fiber configurations.
//!
//! The parameters are synthetic modeling choices, not measured values. They
//! are tuned so that younger ages have lower WM anisotropy and a smaller
//! GM-to-WM diffusivity gap, which is what makes the age domain-shift
//! experiment produce a genuine gap between cohorts.

use serde::{Deserialize, Serialize};

use crate::sphere_sh::UnitDirection;
use crate::{Error, Result};

/// Default minimum pairwise fiber separation so ground-truth peak counts
/// stay well defined (degrees).
pub const MIN_FIBER_SEPARATION_DEG: f64 = 30.0;

/// Scalar tissue parameters at one age (all diffusivities in mm^2/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub wm_lambda_par: f64,
    pub wm_lambda_perp: f64,
    pub gm_diffusivity: f64,
    pub csf_diffusivity: f64,
}

impl TissueParams {
    /// Parameters at a post-menstrual age in weeks (valid range 26..=46).
    ///
    /// Anchors: at 40 weeks WM is (1.7, 0.2, 0.2)e-3, GM 0.9e-3, CSF 3.0e-3.
    /// WM lambda_par shrinks toward 1.2e-3 and lambda_perp grows toward
    /// 0.5e-3 at 30 weeks (linear in age); the GM diffusivity drifts toward
    /// the WM mean diffusivity as age decreases.
    pub fn at_age(weeks: f64) -> Result<Self> {
        if !(26.0..=46.0).contains(&weeks) {
            return Err(Error::InvalidArgument(format!(
                "age {weeks} weeks outside supported range 26..=46"
            )));
        }
        let wm_lambda_par = 1.7e-3 + (weeks - 40.0) * 0.05e-3;
        let wm_lambda_perp = 0.2e-3 - (weeks - 40.0) * 0.03e-3;
        let wm_mean = (wm_lambda_par + 2.0 * wm_lambda_perp) / 3.0;
        let gm_gap = 0.2e-3 * ((weeks - 28.0) / 12.0).max(0.0);
        Ok(Self {
            wm_lambda_par,
            wm_lambda_perp,
            gm_diffusivity: wm_mean + gm_gap,
            csf_diffusivity: 3.0e-3,
        })
    }

    pub fn wm_mean_diffusivity(&self) -> f64 {
        (self.wm_lambda_par + 2.0 * self.wm_lambda_perp) / 3.0
    }
}

impl Default for TissueParams {
    fn default() -> Self {
        Self::at_age(40.0).expect("40 weeks is in range")
    }
}

/// One fiber population: axis plus its within-WM volume fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub axis: UnitDirection,
    pub fraction: f64,
}

/// Ground-truth content of one voxel: fiber populations and tissue volume
/// fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiberConfigRaw", into = "FiberConfigRaw")]
pub struct FiberConfig {
    fibers: Vec<Fiber>,
    f_wm: f64,
    f_gm: f64,
    f_csf: f64,
}

#[derive(Serialize, Deserialize)]
struct FiberConfigRaw {
    fibers: Vec<Fiber>,
    f_wm: f64,
    f_gm: f64,
    f_csf: f64,
}

impl TryFrom<FiberConfigRaw> for FiberConfig {
    type Error = Error;

    fn try_from(r: FiberConfigRaw) -> Result<Self> {
        FiberConfig::new(r.fibers, r.f_wm, r.f_gm, r.f_csf)
    }
}

impl From<FiberConfig> for FiberConfigRaw {
    fn from(c: FiberConfig) -> Self {
        Self { fibers: c.fibers, f_wm: c.f_wm, f_gm: c.f_gm, f_csf: c.f_csf }
    }
}

impl FiberConfig {
    /// Validates: tissue fractions in [0,1] summing to 1; 1-3 fibers with
    /// fractions summing to 1 whenever `f_wm > 0` (none allowed otherwise);
    /// pairwise axis separation at least [`MIN_FIBER_SEPARATION_DEG`].
    pub fn new(fibers: Vec<Fiber>, f_wm: f64, f_gm: f64, f_csf: f64) -> Result<Self> {
        for (name, f) in [("wm", f_wm), ("gm", f_gm), ("csf", f_csf)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "tissue fraction {name} = {f} outside [0, 1]"
                )));
            }
        }
        if (f_wm + f_gm + f_csf - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "tissue fractions sum to {}, expected 1",
                f_wm + f_gm + f_csf
            )));
        }
        if f_wm > 0.0 {
            if fibers.is_empty() || fibers.len() > 3 {
                return Err(Error::InvalidArgument(format!(
                    "need 1-3 fibers for a WM voxel, got {}",
                    fibers.len()
                )));
            }
            let wsum: f64 = fibers.iter().map(|f| f.fraction).sum();
            if (wsum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "fiber fractions sum to {wsum}, expected 1"
                )));
            }
            if fibers.iter().any(|f| f.fraction <= 0.0) {
                return Err(Error::InvalidArgument("fiber fraction must be > 0".into()));
            }
            let min_sep = MIN_FIBER_SEPARATION_DEG.to_radians();
            for i in 0..fibers.len() {
                for j in (i + 1)..fibers.len() {
                    let sep = fibers[i].axis.axis_angle_to(&fibers[j].axis);
                    if sep < min_sep - 1e-9 {
                        return Err(Error::InvalidArgument(format!(
                            "fiber axes {i} and {j} separated by only {:.1} degrees",
                            sep.to_degrees()
                        )));
                    }
                }
            }
        } else if !fibers.is_empty() {
            return Err(Error::InvalidArgument(
                "fibers listed for a voxel with zero WM fraction".into(),
            ));
        }
        Ok(Self { fibers, f_wm, f_gm, f_csf })
    }

    /// Single coherent fiber, pure WM.
    pub fn single_fiber(axis: UnitDirection) -> Self {
        Self::new(vec![Fiber { axis, fraction: 1.0 }], 1.0, 0.0, 0.0).unwrap()
    }

    pub fn fibers(&self) -> &[Fiber] {
        &self.fibers
    }

    pub fn n_fibers(&self) -> usize {
        self.fibers.len()
    }

    pub fn f_wm(&self) -> f64 {
        self.f_wm
    }

    pub fn f_gm(&self) -> f64 {
        self.f_gm
    }

    pub fn f_csf(&self) -> f64 {
        self.f_csf
    }
}
