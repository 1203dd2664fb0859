//! Acquisition geometry: gradient directions and b-values.

use serde::{Deserialize, Serialize};

use super::UnitDirection;
use crate::{Error, Result};

/// b-values below this (s/mm^2) are treated as b=0 measurements.
pub const B0_THRESHOLD: f64 = 10.0;

/// One measurement: a diffusion-sensitizing direction and its b-value.
/// For b=0 entries the direction is a placeholder and never enters any
/// basis evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub direction: UnitDirection,
    pub bvalue: f64,
}

/// The full acquisition table, one entry per measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTable {
    entries: Vec<GradientEntry>,
}

impl GradientTable {
    pub fn new(entries: Vec<GradientEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("empty gradient table".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.bvalue.is_finite() && e.bvalue >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "entry {i}: b-value {} must be finite and >= 0",
                    e.bvalue
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Synthetic table: `shells` lists `(bvalue, count)`. Directions within a
    /// shell follow a spherical Fibonacci spiral, rotated per shell so the
    /// shells do not share directions. b=0 entries get +z placeholders.
    pub fn synthetic(shells: &[(f64, usize)]) -> Result<Self> {
        let mut entries = Vec::new();
        for (shell_idx, &(bvalue, count)) in shells.iter().enumerate() {
            if bvalue < B0_THRESHOLD {
                entries.extend((0..count).map(|_| GradientEntry {
                    direction: UnitDirection::z_axis(),
                    bvalue,
                }));
            } else {
                let offset = shell_idx as f64 * 0.61803398875;
                for dir in fibonacci_sphere(count, offset) {
                    entries.push(GradientEntry { direction: dir, bvalue });
                }
            }
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GradientEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &GradientEntry {
        &self.entries[i]
    }

    pub fn is_b0(&self, i: usize) -> bool {
        self.entries[i].bvalue < B0_THRESHOLD
    }

    /// Indices of b=0 measurements.
    pub fn b0_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_b0(i)).collect()
    }

    /// Indices of measurements whose b-value is within `tol` of `bvalue`.
    pub fn shell_indices(&self, bvalue: f64, tol: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| (self.entries[i].bvalue - bvalue).abs() <= tol)
            .collect()
    }

    /// Distinct shells `(representative bvalue, indices)` sorted by b-value.
    /// All b < 10 collapse into one b=0 shell; other shells group entries
    /// within 25 s/mm^2 of each other.
    pub fn shells(&self) -> Vec<(f64, Vec<usize>)> {
        let mut shells: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.entries[a]
                .bvalue
                .partial_cmp(&self.entries[b].bvalue)
                .unwrap()
        });
        for i in order {
            let b = if self.is_b0(i) { 0.0 } else { self.entries[i].bvalue };
            match shells.last_mut() {
                Some((rep, idxs))
                    if (b - *rep).abs() <= 25.0 || (*rep == 0.0 && self.is_b0(i)) =>
                {
                    idxs.push(i)
                }
                _ => shells.push((b, vec![i])),
            }
        }
        for (_, idxs) in &mut shells {
            idxs.sort_unstable();
        }
        shells
    }

    /// Number of distinct b-values, counting b=0 as one.
    pub fn n_distinct_bvalues(&self) -> usize {
        self.shells().len()
    }

    /// New table restricted to `indices` (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .map(|&i| {
                self.entries
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn directions(&self, indices: &[usize]) -> Vec<UnitDirection> {
        indices.iter().map(|&i| self.entries[i].direction).collect()
    }
}

/// Spherical Fibonacci spiral: `n` well-spread points on the sphere.
fn fibonacci_sphere(n: usize, offset: f64) -> Vec<UnitDirection> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = 2.0 * std::f64::consts::PI * ((i as f64 / golden + offset) % 1.0);
            UnitDirection::normalize(r * theta.cos(), r * theta.sin(), z)
                .expect("fibonacci point")
        })
        .collect()
}
