//! FSL-style gradient text files: `bvecs` holds three whitespace-separated
//! rows (x, y, z components) and `bvals` one row, with column `k`
//! describing measurement `k`. Directions of b=0 columns may be zero
//! vectors; they are replaced by a +z placeholder and never checked for
//! unit norm.

use std::path::Path;

use crate::error::FormatError;
use crate::sphere_sh::{GradientEntry, GradientTable, UnitDirection, B0_THRESHOLD};
use crate::Result;

/// A parsed table plus human-readable warnings (e.g. renormalized vectors).
#[derive(Debug, Clone)]
pub struct GradientsRead {
    pub table: GradientTable,
    pub warnings: Vec<String>,
}

fn parse_rows(text: &str, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_idx, token) in line.split_whitespace().enumerate() {
            let value: f64 = token.parse().map_err(|_| FormatError::Parse {
                line: line_idx + 1,
                column: col_idx + 1,
                message: format!("{what}: invalid number {token:?}"),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_gradients(
    bvals_path: impl AsRef<Path>,
    bvecs_path: impl AsRef<Path>,
) -> Result<GradientsRead> {
    let bvals_text = std::fs::read_to_string(bvals_path)?;
    let bvecs_text = std::fs::read_to_string(bvecs_path)?;
    let bvals_rows = parse_rows(&bvals_text, "bvals")?;
    let bvecs_rows = parse_rows(&bvecs_text, "bvecs")?;

    if bvals_rows.len() != 1 {
        return Err(FormatError::Parse {
            line: bvals_rows.len().max(1),
            column: 1,
            message: format!("bvals: expected one row, found {}", bvals_rows.len()),
        }
        .into());
    }
    if bvecs_rows.len() != 3 {
        return Err(FormatError::Parse {
            line: bvecs_rows.len().max(1),
            column: 1,
            message: format!("bvecs: expected three rows, found {}", bvecs_rows.len()),
        }
        .into());
    }
    let n = bvals_rows[0].len();
    for (i, row) in bvecs_rows.iter().enumerate() {
        if row.len() != n {
            return Err(FormatError::Parse {
                line: i + 1,
                column: row.len().max(1),
                message: format!(
                    "bvecs row {} has {} columns, bvals has {n}",
                    i + 1,
                    row.len()
                ),
            }
            .into());
        }
    }

    let mut warnings = Vec::new();
    let mut entries = Vec::with_capacity(n);
    for k in 0..n {
        let bvalue = bvals_rows[0][k];
        let (x, y, z) = (bvecs_rows[0][k], bvecs_rows[1][k], bvecs_rows[2][k]);
        let direction = if bvalue < B0_THRESHOLD {
            UnitDirection::z_axis()
        } else {
            let norm = (x * x + y * y + z * z).sqrt();
            if !(norm.is_finite() && norm > 1e-6) {
                return Err(FormatError::Parse {
                    line: 1,
                    column: k + 1,
                    message: format!("bvecs column {} is zero for b = {bvalue}", k + 1),
                }
                .into());
            }
            if (norm - 1.0).abs() > 1e-3 {
                warnings.push(format!(
                    "bvecs column {}: norm {norm:.6} renormalized",
                    k + 1
                ));
            }
            UnitDirection::normalize(x, y, z)?
        };
        entries.push(GradientEntry { direction, bvalue });
    }
    Ok(GradientsRead { table: GradientTable::new(entries)?, warnings })
}

pub fn write_gradients(
    bvals_path: impl AsRef<Path>,
    bvecs_path: impl AsRef<Path>,
    table: &GradientTable,
) -> Result<()> {
    let bvals: Vec<String> = table
        .entries()
        .iter()
        .map(|e| format!("{}", e.bvalue))
        .collect();
    std::fs::write(bvals_path, bvals.join(" ") + "\n")?;
    let mut rows = [String::new(), String::new(), String::new()];
    for (k, e) in table.entries().iter().enumerate() {
        let sep = if k == 0 { "" } else { " " };
        let d = if e.bvalue < B0_THRESHOLD {
            [0.0, 0.0, 0.0]
        } else {
            e.direction.as_array()
        };
        for (row, val) in rows.iter_mut().zip(d) {
            row.push_str(sep);
            row.push_str(&format!("{val}"));
        }
    }
    std::fs::write(bvecs_path, rows.join("\n") + "\n")?;
    Ok(())
}
