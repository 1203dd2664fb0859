//! Quantitative comparison of two FOD fields: fiber-count confusion
//! matrices, per-class agreement rate (Jaccard), angular error among
//! count-agreeing voxels, and the apparent-fiber-density percentage error.

use serde::{Deserialize, Serialize};

use crate::fod_analysis::PeakSet;
use crate::{Error, Result};

/// 3x3 fiber-count confusion between two peak fields, rows indexing side A
/// and columns side B (fiber counts 1..3). Entries are fractions of the
/// eligible population (both sides reporting 1-3 peaks) and sum to one;
/// voxels with zero peaks on either side are excluded and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberCountConfusion {
    pub matrix: [[f64; 3]; 3],
    pub eligible: usize,
    pub excluded_zero_peaks: usize,
}

/// Which side's marginal to take in [`multi_fiber_fraction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

/// Counts fiber-count agreement over masked voxels where both sides report
/// 1-3 peaks, normalized over that population.
pub fn confusion_matrix(
    peaks_a: &[PeakSet],
    peaks_b: &[PeakSet],
    mask: &[bool],
) -> Result<FiberCountConfusion> {
    check_dims(peaks_a, peaks_b, mask)?;
    let mut counts = [[0usize; 3]; 3];
    let mut eligible = 0usize;
    let mut excluded = 0usize;
    for v in 0..mask.len() {
        if !mask[v] {
            continue;
        }
        let (na, nb) = (peaks_a[v].len(), peaks_b[v].len());
        if na == 0 || nb == 0 {
            excluded += 1;
            continue;
        }
        debug_assert!(na <= 3 && nb <= 3);
        counts[na - 1][nb - 1] += 1;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::EmptyPopulation(
            "no masked voxel has 1-3 peaks on both sides".into(),
        ));
    }
    let mut matrix = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            matrix[i][j] = counts[i][j] as f64 / eligible as f64;
        }
    }
    Ok(FiberCountConfusion { matrix, eligible, excluded_zero_peaks: excluded })
}

/// Class-`k` agreement rate: the Jaccard index of class `k` between the two
/// sides, in percent. `None` when the class is absent on both sides.
pub fn agreement_rate(cm: &FiberCountConfusion, k: usize) -> Option<f64> {
    assert!((1..=3).contains(&k), "fiber count class must be 1..=3");
    let i = k - 1;
    let diag = cm.matrix[i][i];
    let row: f64 = cm.matrix[i].iter().sum();
    let col: f64 = (0..3).map(|r| cm.matrix[r][i]).sum();
    let denom = row + col - diag;
    if denom <= 0.0 {
        return None;
    }
    Some(100.0 * diag / denom)
}

/// Percentage of eligible voxels with more than one fiber on the given
/// side: `100 (1 - class-1 marginal)`.
pub fn multi_fiber_fraction(cm: &FiberCountConfusion, side: Side) -> f64 {
    let class1: f64 = match side {
        Side::A => cm.matrix[0].iter().sum(),
        Side::B => (0..3).map(|r| cm.matrix[r][0]).sum(),
    };
    100.0 * (1.0 - class1)
}

/// Mean angular error (degrees) per fiber-count class, over voxels where
/// both sides report the same count. Peaks are matched by the
/// minimum-total-angle assignment under the antipodal metric; matched
/// angles are pooled across voxels within each class.
pub fn angular_error(
    peaks_a: &[PeakSet],
    peaks_b: &[PeakSet],
    mask: &[bool],
) -> Result<[Option<f64>; 3]> {
    check_dims(peaks_a, peaks_b, mask)?;
    let mut sums = [0.0_f64; 3];
    let mut counts = [0usize; 3];
    for v in 0..mask.len() {
        if !mask[v] {
            continue;
        }
        let (a, b) = (&peaks_a[v], &peaks_b[v]);
        let k = a.len();
        if k == 0 || k != b.len() {
            continue;
        }
        for angle in match_peaks(a, b) {
            sums[k - 1] += angle.to_degrees();
            counts[k - 1] += 1;
        }
    }
    let mut out = [None; 3];
    for k in 0..3 {
        if counts[k] > 0 {
            out[k] = Some(sums[k] / counts[k] as f64);
        }
    }
    Ok(out)
}

/// Minimum-total-angle assignment between two equal-size peak sets
/// (exhaustive over permutations; at most 3! candidates).
fn match_peaks(a: &PeakSet, b: &PeakSet) -> Vec<f64> {
    let k = a.len();
    debug_assert_eq!(k, b.len());
    let angle = |i: usize, j: usize| a.peaks()[i].axis.axis_angle_to(&b.peaks()[j].axis);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..k).collect();
    permute(&mut order, 0, &mut |perm| {
        let angles: Vec<f64> = (0..k).map(|i| angle(i, perm[i])).collect();
        let total: f64 = angles.iter().sum();
        if best.as_ref().map(|(t, _)| total < *t).unwrap_or(true) {
            best = Some((total, angles));
        }
    });
    best.map(|(_, angles)| angles).unwrap_or_default()
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Mean absolute percentage error of AFD over masked voxels with a
/// positive reference; non-positive-reference voxels are excluded and
/// counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfdError {
    pub mape_percent: f64,
    pub used: usize,
    pub excluded_nonpositive_reference: usize,
}

pub fn afd_mape(afd_ref: &[f64], afd_test: &[f64], mask: &[bool]) -> Result<AfdError> {
    if afd_ref.len() != afd_test.len() || afd_ref.len() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: ref {}, test {}, mask {}",
            afd_ref.len(),
            afd_test.len(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for v in 0..mask.len() {
        if !mask[v] {
            continue;
        }
        if afd_ref[v] > 0.0 {
            sum += (afd_ref[v] - afd_test[v]).abs() / afd_ref[v];
            used += 1;
        } else {
            excluded += 1;
        }
    }
    if used == 0 {
        return Err(Error::EmptyPopulation(
            "no masked voxel has a positive reference AFD".into(),
        ));
    }
    Ok(AfdError {
        mape_percent: 100.0 * sum / used as f64,
        used,
        excluded_nonpositive_reference: excluded,
    })
}

/// Aggregated comparison of two FOD fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: FiberCountConfusion,
    /// Agreement rate (percent) per fiber-count class 1..3.
    pub agreement_rate: [Option<f64>; 3],
    /// Mean angular error (degrees) per class among count-agreeing voxels.
    pub angular_error_deg: [Option<f64>; 3],
    pub afd: AfdError,
    pub multi_fiber_fraction_a: f64,
    pub multi_fiber_fraction_b: f64,
}

/// One-call comparison layer: confusion, AR, AE, and AFD error.
pub fn compare_peak_fields(
    peaks_a: &[PeakSet],
    peaks_b: &[PeakSet],
    afd_a: &[f64],
    afd_b: &[f64],
    mask: &[bool],
) -> Result<MetricsReport> {
    let confusion = confusion_matrix(peaks_a, peaks_b, mask)?;
    let ar = [
        agreement_rate(&confusion, 1),
        agreement_rate(&confusion, 2),
        agreement_rate(&confusion, 3),
    ];
    let ae = angular_error(peaks_a, peaks_b, mask)?;
    let afd = afd_mape(afd_a, afd_b, mask)?;
    Ok(MetricsReport {
        multi_fiber_fraction_a: multi_fiber_fraction(&confusion, Side::A),
        multi_fiber_fraction_b: multi_fiber_fraction(&confusion, Side::B),
        confusion,
        agreement_rate: ar,
        angular_error_deg: ae,
        afd,
    })
}

fn check_dims(peaks_a: &[PeakSet], peaks_b: &[PeakSet], mask: &[bool]) -> Result<()> {
    if peaks_a.len() != peaks_b.len() || peaks_a.len() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: A {}, B {}, mask {}",
            peaks_a.len(),
            peaks_b.len(),
            mask.len()
        )));
    }
    Ok(())
}
