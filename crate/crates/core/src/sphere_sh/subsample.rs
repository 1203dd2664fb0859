//! Condition-number-driven gradient direction subsampling.
//!
//! Selecting `n` directions from a shell so that the SH design matrix stays
//! well conditioned. The objective is the design-matrix condition number;
//! the search is greedy farthest-point initialization plus pairwise exchange
//! passes, with seeded random restarts.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sh_basis_matrix, GradientTable, ShBasisSpec, UnitDirection};
use crate::{Error, Result};

const RANDOM_RESTARTS: usize = 10;
const MAX_EXCHANGE_SWEEPS: usize = 50;
/// Total condition-number evaluations allowed per search. Exchange passes
/// stop early once the budget is spent; results can only be as good as or
/// better than the unrefined starts.
const EVALUATION_BUDGET: usize = 4000;

/// Condition number (ratio of extreme singular values) of a design matrix.
/// Returns infinity for rank-deficient designs.
pub fn condition_number(design: &DMatrix<f64>) -> f64 {
    let svd = design.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = if svd.singular_values.len() < design.ncols() {
        0.0
    } else {
        svd.singular_values.min()
    };
    if smin <= smax * 1e-300 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

fn subset_condition(dirs: &[UnitDirection], subset: &[usize], basis: ShBasisSpec) -> f64 {
    let picked: Vec<UnitDirection> = subset.iter().map(|&i| dirs[i]).collect();
    condition_number(&sh_basis_matrix(&picked, basis))
}

/// Picks `n` measurement indices from the shell at `shell_bvalue` whose SH
/// design matrix is well conditioned. Deterministic for a fixed seed; the
/// result is never worse than the greedy starting point.
///
/// Returned indices are positions in the full `table`, sorted ascending.
pub fn subsample_directions(
    table: &GradientTable,
    shell_bvalue: f64,
    n: usize,
    basis: ShBasisSpec,
    seed: u64,
) -> Result<Vec<usize>> {
    let shell = table.shell_indices(shell_bvalue, 10.0);
    if shell.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no measurements at b = {shell_bvalue}"
        )));
    }
    if n > shell.len() {
        return Err(Error::Infeasible(format!(
            "requested {n} directions from a shell of {}",
            shell.len()
        )));
    }
    if n < basis.len() {
        return Err(Error::Infeasible(format!(
            "{n} directions cannot support {} coefficients (order {})",
            basis.len(),
            basis.order()
        )));
    }
    if n == shell.len() {
        return Ok(shell);
    }

    let dirs: Vec<UnitDirection> = shell.iter().map(|&i| table.entry(i).direction).collect();
    let mut budget = EVALUATION_BUDGET;

    // Greedy farthest-point start (axis metric), refined by exchanges.
    let greedy = farthest_point_subset(&dirs, n);
    let mut best = refine_by_exchange(&dirs, greedy, basis, &mut budget);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_RESTARTS {
        let mut pool: Vec<usize> = (0..dirs.len()).collect();
        pool.shuffle(&mut rng);
        let start: Vec<usize> = {
            let mut s = pool[..n].to_vec();
            s.sort_unstable();
            s
        };
        let candidate = refine_by_exchange(&dirs, start, basis, &mut budget);
        if candidate.0 < best.0 || (candidate.0 == best.0 && candidate.1 < best.1) {
            best = candidate;
        }
    }

    if !best.0.is_finite() {
        return Err(Error::Infeasible(format!(
            "no full-rank subset of size {n} found for order {}",
            basis.order()
        )));
    }

    let mut result: Vec<usize> = best.1.iter().map(|&i| shell[i]).collect();
    result.sort_unstable();
    Ok(result)
}

/// Greedy farthest-point selection under the antipodal angle metric,
/// starting from shell index 0.
fn farthest_point_subset(dirs: &[UnitDirection], n: usize) -> Vec<usize> {
    let mut selected = vec![0usize];
    let mut min_dist: Vec<f64> = dirs.iter().map(|d| d.axis_angle_to(&dirs[0])).collect();
    while selected.len() < n {
        let mut best_i = usize::MAX;
        let mut best_d = -1.0;
        for (i, &d) in min_dist.iter().enumerate() {
            if !selected.contains(&i) && d > best_d {
                best_d = d;
                best_i = i;
            }
        }
        selected.push(best_i);
        for (i, md) in min_dist.iter_mut().enumerate() {
            *md = md.min(dirs[i].axis_angle_to(&dirs[best_i]));
        }
    }
    selected.sort_unstable();
    selected
}

/// First-improvement exchange sweeps in fixed index order until no swap
/// lowers the condition number or the evaluation budget runs out.
fn refine_by_exchange(
    dirs: &[UnitDirection],
    mut subset: Vec<usize>,
    basis: ShBasisSpec,
    budget: &mut usize,
) -> (f64, Vec<usize>) {
    let mut cond = subset_condition(dirs, &subset, basis);
    let in_subset = |s: &[usize], i: usize| s.contains(&i);
    'sweeps: for _ in 0..MAX_EXCHANGE_SWEEPS {
        let mut improved = false;
        for slot in 0..subset.len() {
            let original = subset[slot];
            for candidate in 0..dirs.len() {
                if in_subset(&subset, candidate) {
                    continue;
                }
                if *budget == 0 {
                    subset[slot] = original;
                    break 'sweeps;
                }
                *budget -= 1;
                subset[slot] = candidate;
                let trial = subset_condition(dirs, &subset, basis);
                if trial < cond - cond * 1e-12 {
                    cond = trial;
                    improved = true;
                    break;
                }
                subset[slot] = original;
            }
        }
        if !improved {
            break;
        }
    }
    subset.sort_unstable();
    (cond, subset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn shell_table(n: usize) -> GradientTable {
        GradientTable::synthetic(&[(0.0, 2), (1000.0, n)]).unwrap()
    }

    #[test]
    fn full_shell_is_identity() {
        let t = shell_table(30);
        let basis = ShBasisSpec::new(4).unwrap();
        let idx = subsample_directions(&t, 1000.0, 30, basis, 1).unwrap();
        assert_eq!(idx, t.shell_indices(1000.0, 10.0));
    }

    #[test]
    fn too_few_directions_is_infeasible() {
        let t = shell_table(30);
        let basis = ShBasisSpec::new(4).unwrap();
        assert!(matches!(
            subsample_directions(&t, 1000.0, 10, basis, 1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let t = shell_table(40);
        let basis = ShBasisSpec::new(2).unwrap();
        let a = subsample_directions(&t, 1000.0, 8, basis, 42).unwrap();
        let b = subsample_directions(&t, 1000.0, 8, basis, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subset_has_full_column_rank() {
        let t = shell_table(88);
        let basis = ShBasisSpec::new(4).unwrap();
        let idx = subsample_directions(&t, 1000.0, 15, basis, 7).unwrap();
        assert_eq!(idx.len(), 15);
        let dirs = t.directions(&idx);
        let cond = condition_number(&sh_basis_matrix(&dirs, basis));
        assert!(cond.is_finite());
    }

    #[test]
    fn beats_median_of_random_subsets() {
        // Random-sampling oracle: the search should do at least as well as
        // the median random 6-subset at order 2 on an 88-direction shell.
        let t = shell_table(88);
        let basis = ShBasisSpec::new(2).unwrap();
        let shell = t.shell_indices(1000.0, 10.0);
        let dirs: Vec<UnitDirection> = shell.iter().map(|&i| t.entry(i).direction).collect();

        let chosen = subsample_directions(&t, 1000.0, 6, basis, 3).unwrap();
        let chosen_local: Vec<usize> = chosen
            .iter()
            .map(|g| shell.iter().position(|s| s == g).unwrap())
            .collect();
        let cond_chosen = subset_condition(&dirs, &chosen_local, basis);

        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut conds: Vec<f64> = (0..1000)
            .map(|_| {
                let mut subset: Vec<usize> = Vec::new();
                while subset.len() < 6 {
                    let i = rng.random_range(0..dirs.len());
                    if !subset.contains(&i) {
                        subset.push(i);
                    }
                }
                subset_condition(&dirs, &subset, basis)
            })
            .collect();
        conds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = conds[conds.len() / 2];
        assert!(
            cond_chosen <= median,
            "chosen cond {cond_chosen} vs median {median}"
        );
    }
}
