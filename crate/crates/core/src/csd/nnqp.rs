//! Inequality-constrained linear least squares:
//! minimize `|B x - s|^2` subject to `A x >= 0`.
//!
//! The problem is transformed to an equivalent non-negatively-constrained
//! one and solved by an active-set method. With the Cholesky factor
//! `B'B = R'R`, the dual of the QP is the non-negative least squares
//! problem `min_{mu >= 0} |E' mu + f|^2` over the constraint multipliers,
//! where `E = A R^{-1}` and `f = R^{-T} B' s`; the primal solution is
//! recovered as `x = (B'B)^{-1} (B' s + A' mu)`. The dual gradient equals
//! `-A x`, so the Lawson-Hanson active-set iteration drives exactly the
//! primal constraint violations to zero and terminates finitely, including
//! at the heavily degenerate `x = 0` vertex where every amplitude
//! constraint is active. Ties break toward the lowest constraint index so
//! runs are deterministic. Every returned solution carries a full KKT
//! certificate in its diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Problem data. `constraints` may have zero rows (unconstrained).
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub constraints: DMatrix<f64>,
}

impl QpProblem {
    pub fn new(design: DMatrix<f64>, target: DVector<f64>, constraints: DMatrix<f64>) -> Result<Self> {
        if design.nrows() == 0 {
            return Err(Error::InvalidArgument("design matrix has no rows".into()));
        }
        if design.nrows() != target.len() {
            return Err(Error::InvalidArgument(format!(
                "design has {} rows but target has {} entries",
                design.nrows(),
                target.len()
            )));
        }
        if constraints.nrows() > 0 && constraints.ncols() != design.ncols() {
            return Err(Error::InvalidArgument(format!(
                "constraints have {} columns but design has {}",
                constraints.ncols(),
                design.ncols()
            )));
        }
        Ok(Self { design, target, constraints })
    }
}

/// Solver knobs shared by all deconvolution front ends.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Subdivision level of the amplitude-constraint tessellation.
    pub constraint_subdivisions: usize,
    /// Tolerance on the (normalized) KKT residuals.
    pub kkt_tol: f64,
    /// Active-set iteration cap.
    pub max_iterations: usize,
    /// Outer-iteration cap of the SS3T alternation.
    pub ss3t_max_outer: usize,
    /// Relative coefficient-change tolerance ending the SS3T alternation.
    pub ss3t_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            constraint_subdivisions: 3,
            kkt_tol: 1e-8,
            max_iterations: 600,
            ss3t_max_outer: 20,
            ss3t_tol: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0 && self.ss3t_tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be > 0".into()));
        }
        if self.max_iterations == 0 || self.ss3t_max_outer == 0 {
            return Err(Error::InvalidArgument("iteration caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// KKT residuals and counters for one solve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `|B x - s|^2` against the original design.
    pub objective: f64,
    /// `max |B'(B x - s) - A' mu|`.
    pub stationarity: f64,
    /// `max(0, -min_i (A x)_i)`.
    pub primal_infeasibility: f64,
    /// `max(0, -min_i mu_i)`.
    pub dual_infeasibility: f64,
    /// `|mu' (A x)|`.
    pub complementarity: f64,
}

/// Solution with its multipliers (full length, zero off the active set).
#[derive(Debug, Clone)]
pub struct NnqpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub diagnostics: Diagnostics,
}

/// Least-norm least-squares solve via SVD.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { smax * 1e-13 } else { 1.0 };
    svd.solve(b, eps).expect("svd solve with u/v computed")
}

/// Cholesky of `B'B`, adding an escalating Tikhonov ridge when the Gram
/// matrix is numerically singular (rank-deficient designs). The factor is
/// accepted only when its pivots are healthy, since a floating-point
/// Cholesky of a singular matrix can "succeed" with garbage pivots.
fn gram_cholesky(design: &DMatrix<f64>) -> (nalgebra::Cholesky<f64, nalgebra::Dyn>, f64) {
    let gram = design.transpose() * design;
    let scale = gram.diagonal().mean().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    loop {
        let mut g = gram.clone();
        if ridge > 0.0 {
            for i in 0..g.nrows() {
                g[(i, i)] += ridge;
            }
        }
        if let Some(chol) = g.cholesky() {
            let diag = chol.l_dirty().diagonal();
            if diag.min() > diag.max() * 3e-7 {
                return (chol, ridge);
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 100.0 };
        assert!(
            ridge < scale,
            "Gram matrix defies regularization (scale {scale:.3e})"
        );
    }
}

/// Solves `min |B x - s|^2  s.t.  A x >= 0` by Lawson-Hanson iteration on
/// the dual. Returns a KKT-certified solution, or [`Error::NonConverged`]
/// with the best iterate if the iteration cap is hit.
pub fn nnqp_solve(problem: &QpProblem, cfg: &SolverConfig) -> Result<NnqpSolution> {
    nnqp_solve_warm(problem, cfg, &[])
}

/// [`nnqp_solve`] seeded with a candidate active set (constraint indices).
/// Useful inside alternating schemes where consecutive solves share most of
/// their active constraints; the result is identical to a cold start up to
/// the usual solver tolerances and is deterministic for fixed inputs.
pub fn nnqp_solve_warm(
    problem: &QpProblem,
    cfg: &SolverConfig,
    warm_start: &[usize],
) -> Result<NnqpSolution> {
    cfg.validate()?;
    let n_con = problem.constraints.nrows();
    let a = &problem.constraints;

    let (chol, _ridge) = gram_cholesky(&problem.design);
    let h = problem.design.transpose() * &problem.target;

    if n_con == 0 {
        let x = chol.solve(&h);
        let diag = certify(problem, &x, &DVector::zeros(0), 1);
        return Ok(NnqpSolution {
            x,
            multipliers: DVector::zeros(0),
            active: Vec::new(),
            diagnostics: diag,
        });
    }

    // Dual design: column i of `D = E' = L^{-1} A'` (G = L L').
    let l = chol.l();
    let et = l
        .solve_lower_triangular(&a.transpose())
        .expect("Cholesky factor is non-singular");
    let f = l
        .solve_lower_triangular(&h)
        .expect("Cholesky factor is non-singular");
    let y = -f;

    // Lawson-Hanson NNLS: min_{mu >= 0} |D mu - y|^2. The gradient vector
    // w = D'(y - D mu) equals -(A x), so primal feasibility is the stopping
    // criterion. The passive-set factorization is maintained incrementally.
    let mut mu = DVector::<f64>::zeros(n_con);
    let mut qr = super::incqr::IncrementalQr::new(et.nrows());
    // Candidates rejected for near-dependence or zero-progress entry since
    // the last successful passive-set solve (prevents re-entry cycling).
    let mut banned: Vec<usize> = Vec::new();
    let mut iterations = 0usize;

    // Feasibility tolerance in amplitude units of the unconstrained primal.
    let w0 = et.transpose() * &y;
    let feas_tol = (1e-10 * (1.0 + w0.amax())).max(1e-300);

    let nonconverged = |mu: &DVector<f64>, iterations: usize| {
        let x = primal_from_dual(&chol, &h, a, mu);
        let diag = certify(problem, &x, mu, iterations);
        Error::NonConverged {
            iterations,
            residual: diag
                .stationarity
                .max(diag.primal_infeasibility)
                .max(diag.dual_infeasibility),
            best: x.as_slice().to_vec(),
        }
    };

    for &i in warm_start {
        if i < n_con && !qr.labels().contains(&i) {
            qr.push(i, &et.column(i).into_owned());
        }
    }
    // Warm-started columns carry mu = 0 and get clamped by the first inner
    // phase before any gradient selection happens.
    let mut dirty = qr.len() > 0;

    loop {
        if iterations >= cfg.max_iterations {
            return Err(nonconverged(&mu, iterations));
        }
        iterations += 1;

        if !dirty {
            // w_i = -(A x)_i for the current mu.
            let resid = &y - &et * &mu;
            let w = et.transpose() * &resid;
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n_con {
                if qr.labels().contains(&i) || banned.contains(&i) {
                    continue;
                }
                if w[i] > feas_tol {
                    let better = match best {
                        None => true,
                        Some((_, bw)) => w[i] > bw,
                    };
                    if better {
                        best = Some((i, w[i]));
                    }
                }
            }
            let Some((enter, _)) = best else {
                // Primal feasible and complementary: polish and return.
                let x = primal_from_dual(&chol, &h, a, &mu);
                let active: Vec<usize> =
                    qr.labels().iter().copied().filter(|&i| mu[i] > 0.0).collect();
                return Ok(polish(problem, x, mu, active, iterations));
            };
            if !qr.push(enter, &et.column(enter).into_owned()) {
                // Numerically dependent on the passive set.
                banned.push(enter);
                continue;
            }
        }
        dirty = false;

        // Inner phase: solve on the passive set, interpolating back while
        // entries go non-positive.
        loop {
            if qr.len() == 0 {
                break;
            }
            let z = qr.solve(&y);
            if z.iter().all(|&v| v > 0.0) {
                mu.fill(0.0);
                for (k, &i) in qr.labels().iter().enumerate() {
                    mu[i] = z[k];
                }
                banned.clear();
                break;
            }
            if iterations >= cfg.max_iterations {
                return Err(nonconverged(&mu, iterations));
            }
            iterations += 1;

            // Largest feasible interpolation toward z.
            let mut alpha = 1.0_f64;
            for (k, &i) in qr.labels().iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = mu[i] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(mu[i] / denom);
                    }
                }
            }
            for (k, &i) in qr.labels().iter().enumerate() {
                mu[i] += alpha * (z[k] - mu[i]);
            }
            // Release exactly the coordinates that reached the boundary.
            let eps_drop = 1e-12 * mu.amax().max(f64::MIN_POSITIVE);
            let drop_positions: Vec<usize> = (0..qr.len())
                .filter(|&k| {
                    let i = qr.labels()[k];
                    z[k] <= 0.0 && mu[i] <= eps_drop
                })
                .rev()
                .collect();
            let no_progress = alpha == 0.0;
            for &k in &drop_positions {
                let i = qr.labels()[k];
                mu[i] = 0.0;
                if no_progress {
                    banned.push(i);
                }
                qr.remove(k);
            }
            if !no_progress {
                banned.clear();
            }
        }
    }
}

fn primal_from_dual(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    h: &DVector<f64>,
    a: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> DVector<f64> {
    let rhs = h + a.transpose() * mu;
    chol.solve(&rhs)
}

/// Refines the dual-derived iterate by re-solving the equality-constrained
/// problem on the detected active set against the original (unridged)
/// design. Keeps whichever point certifies better.
fn polish(
    problem: &QpProblem,
    x: DVector<f64>,
    mu: DVector<f64>,
    active: Vec<usize>,
    iterations: usize,
) -> NnqpSolution {
    let a = &problem.constraints;
    let x_polished = equality_constrained_ls(&problem.design, &problem.target, a, &active);
    let mut mu_polished = DVector::zeros(a.nrows());
    if !active.is_empty() {
        let aw = DMatrix::from_rows(&active.iter().map(|&i| a.row(i)).collect::<Vec<_>>());
        let g = problem.design.transpose() * (&problem.design * &x_polished - &problem.target);
        let m = lstsq(&aw.transpose(), &g);
        for (k, &i) in active.iter().enumerate() {
            mu_polished[i] = m[k];
        }
    }
    let diag_raw = certify(problem, &x, &mu, iterations);
    let diag_pol = certify(problem, &x_polished, &mu_polished, iterations);
    let score = |d: &Diagnostics| {
        d.stationarity
            .max(d.primal_infeasibility)
            .max(d.dual_infeasibility)
            .max(d.complementarity)
    };
    if score(&diag_pol) <= score(&diag_raw) {
        NnqpSolution { x: x_polished, multipliers: mu_polished, active, diagnostics: diag_pol }
    } else {
        NnqpSolution { x, multipliers: mu, active, diagnostics: diag_raw }
    }
}

/// Full KKT certificate against the original (unreduced) problem, with the
/// multipliers re-estimated from the support of `mu`.
fn certify(
    problem: &QpProblem,
    x: &DVector<f64>,
    mu: &DVector<f64>,
    iterations: usize,
) -> Diagnostics {
    let a = &problem.constraints;
    let residual = &problem.design * x - &problem.target;
    let objective = residual.norm_squared();
    let g = problem.design.transpose() * residual;

    let stationarity = if a.nrows() > 0 {
        (&g - a.transpose() * mu).amax()
    } else {
        g.amax()
    };

    let (primal, complementarity) = if a.nrows() > 0 {
        let ax = a * x;
        ((-ax.min()).max(0.0), mu.dot(&ax).abs())
    } else {
        (0.0, 0.0)
    };
    let dual = if mu.len() > 0 { (-mu.min()).max(0.0) } else { 0.0 };

    Diagnostics {
        iterations,
        objective,
        stationarity,
        primal_infeasibility: primal,
        dual_infeasibility: dual,
        complementarity,
    }
}

/// Orthonormal basis of the nullspace of the selected constraint rows,
/// used by the equality-constrained reference solver.
fn nullspace_basis(a: &DMatrix<f64>, working: &[usize], n: usize) -> DMatrix<f64> {
    let mut span: Vec<DVector<f64>> = Vec::with_capacity(working.len());
    for &i in working {
        let mut v: DVector<f64> = a.row(i).transpose();
        for q in &span {
            let p = q.dot(&v);
            v -= q * p;
        }
        for q in &span {
            let p = q.dot(&v);
            v -= q * p;
        }
        let norm = v.norm();
        if norm > 1e-12 {
            span.push(v / norm);
        }
    }
    let rank = span.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - rank);
    for j in 0..n {
        if basis.len() == n - rank {
            break;
        }
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for q in span.iter().chain(basis.iter()) {
            let p = q.dot(&v);
            v -= q * p;
        }
        for q in span.iter().chain(basis.iter()) {
            let p = q.dot(&v);
            v -= q * p;
        }
        let norm = v.norm();
        if norm > 1e-10 {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&basis)
}

/// Minimizer of `|B x - t|` subject to `A_W x = 0` (least-norm if flat).
/// Reference path for the exhaustive active-set oracle in the tests.
pub(crate) fn equality_constrained_ls(
    b: &DMatrix<f64>,
    t: &DVector<f64>,
    a: &DMatrix<f64>,
    working: &[usize],
) -> DVector<f64> {
    let n = b.ncols();
    if working.is_empty() {
        return lstsq(b, t);
    }
    let z = nullspace_basis(a, working, n);
    if z.ncols() == 0 {
        return DVector::zeros(n);
    }
    let bz = b * &z;
    let y = lstsq(&bz, t);
    z * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(design: DMatrix<f64>, target: DVector<f64>, constraints: DMatrix<f64>) -> NnqpSolution {
        let p = QpProblem::new(design, target, constraints).unwrap();
        nnqp_solve(&p, &SolverConfig::default()).unwrap()
    }

    /// Brute-force oracle: enumerate every subset of constraints as an
    /// equality set, solve the equality-constrained problem, and keep the
    /// feasible candidate with the smallest objective.
    pub(super) fn brute_force_objective(p: &QpProblem) -> f64 {
        let n_con = p.constraints.nrows();
        assert!(n_con <= 12, "oracle is exponential in constraints");
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n_con) {
            let working: Vec<usize> = (0..n_con).filter(|i| mask & (1 << i) != 0).collect();
            let x = equality_constrained_ls(&p.design, &p.target, &p.constraints, &working);
            let ax = &p.constraints * &x;
            if ax.len() == 0 || ax.min() >= -1e-9 {
                let obj = (&p.design * &x - &p.target).norm_squared();
                best = best.min(obj);
            }
        }
        best
    }

    fn random_problem(rng: &mut ChaCha8Rng, n_vars: usize, n_meas: usize, n_con: usize) -> QpProblem {
        let design = DMatrix::from_fn(n_meas, n_vars, |_, _| rng.random_range(-1.0..1.0));
        let target = DVector::from_fn(n_meas, |_, _| rng.random_range(-1.0..1.0));
        let constraints = DMatrix::from_fn(n_con, n_vars, |_, _| rng.random_range(-1.0..1.0));
        QpProblem::new(design, target, constraints).unwrap()
    }

    #[test]
    fn unconstrained_square_system() {
        let design = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let target = DVector::from_column_slice(&[3.0, 5.0]);
        let sol = solve(design.clone(), target.clone(), DMatrix::zeros(0, 2));
        let expected = design.lu().solve(&target).unwrap();
        assert!((sol.x - expected).amax() < 1e-10);
    }

    #[test]
    fn clamped_coordinates() {
        // B = I, s = (-1, 2), A = I: x = (0, 2).
        let sol = solve(
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&[-1.0, 2.0]),
            DMatrix::identity(2, 2),
        );
        assert!((sol.x[0] - 0.0).abs() < 1e-12);
        assert!((sol.x[1] - 2.0).abs() < 1e-12);
        assert!(sol.diagnostics.dual_infeasibility <= 1e-9);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..60 {
            let n_con = 1 + (trial % 12);
            let p = random_problem(&mut rng, 10, 14, n_con);
            let sol = nnqp_solve(&p, &SolverConfig::default()).unwrap();
            let oracle = brute_force_objective(&p);
            assert!(
                (sol.diagnostics.objective - oracle).abs() <= 1e-8 * (1.0 + oracle),
                "trial {trial}: {} vs oracle {}",
                sol.diagnostics.objective,
                oracle
            );
        }
    }

    #[test]
    fn kkt_certificates_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let p = random_problem(&mut rng, 8, 12, 10);
            let sol = nnqp_solve(&p, &SolverConfig::default()).unwrap();
            let d = &sol.diagnostics;
            assert!(d.stationarity <= 1e-6, "stationarity {}", d.stationarity);
            assert!(d.primal_infeasibility <= 1e-9);
            assert!(d.dual_infeasibility <= 1e-9);
            assert!(d.complementarity <= 1e-6);
        }
    }

    #[test]
    fn scaling_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_problem(&mut rng, 6, 9, 8);
        let sol1 = nnqp_solve(&p, &SolverConfig::default()).unwrap();
        let scaled = QpProblem::new(p.design.clone(), &p.target * 7.0, p.constraints.clone())
            .unwrap();
        let sol7 = nnqp_solve(&scaled, &SolverConfig::default()).unwrap();
        for i in 0..sol1.x.len() {
            assert!(
                (sol7.x[i] - 7.0 * sol1.x[i]).abs() <= 1e-9 * (1.0 + sol1.x.amax() * 7.0),
                "coordinate {i}"
            );
        }
    }

    #[test]
    fn rank_deficient_design_is_handled() {
        // Fewer measurements than variables; the ridge-regularized Gram
        // still yields a KKT-certified point.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 8, 5, 6);
        let sol = nnqp_solve(&p, &SolverConfig::default()).unwrap();
        assert!(sol.diagnostics.stationarity <= 1e-6);
        assert!(sol.diagnostics.primal_infeasibility <= 1e-9);
    }

    #[test]
    fn zero_target_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut p = random_problem(&mut rng, 6, 10, 6);
        p.target = DVector::zeros(10);
        let sol = nnqp_solve(&p, &SolverConfig::default()).unwrap();
        assert!(sol.x.amax() < 1e-12);
    }
}
