//! Single-tissue CSD, multi-shell multi-tissue CSD, and single-shell
//! three-tissue CSD, all sharing one QP engine.
//!
//! Signal model per measurement (b, g):
//!   WM contributes `sum_j c_j Y_j(g) r_l(j)(b) sqrt(4 pi / (2l+1))`,
//!   GM and CSF contribute their l = 0 amplitude times the isotropic
//!   response `r_0(b)`.
//! Non-negativity is enforced as hard inequality constraints: the WM FOD
//! amplitude on a dense tessellation, and the GM/CSF amplitudes directly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::nnqp::{nnqp_solve, nnqp_solve_warm, Diagnostics, QpProblem, SolverConfig};
use crate::forward_model::{b0_normalize, convolution_scales, ResponseSet, SignalVolume, ZonalResponse};
use crate::sphere_sh::{
    sh_basis_matrix, tessellate_sphere, GradientTable, ShBasisSpec, ShCoefficients, UnitDirection,
};
use crate::volume::ChannelVolume;
use crate::{Error, Result};

/// WM FOD coefficients plus scalar GM and CSF amplitudes for one voxel.
/// The scalars are l = 0 coefficients of the isotropic compartments.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueDecomposition {
    pub wm: ShCoefficients,
    pub gm: f64,
    pub csf: f64,
}

impl TissueDecomposition {
    /// Signal fractions at b=0: the sphere integral of each compartment
    /// (`2 sqrt(pi) * c_00`).
    pub fn fractions(&self) -> (f64, f64, f64) {
        let two_sqrt_pi = 2.0 * std::f64::consts::PI.sqrt();
        (
            self.wm.values()[0] * two_sqrt_pi,
            self.gm * two_sqrt_pi,
            self.csf * two_sqrt_pi,
        )
    }
}

fn constraint_matrix(basis: ShBasisSpec, cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    let mesh = tessellate_sphere(cfg.constraint_subdivisions)?;
    Ok(sh_basis_matrix(mesh.vertices(), basis))
}

/// Prebuilt single-shell single-tissue deconvolution operator.
pub struct SingleShellCsd {
    design: DMatrix<f64>,
    constraints: DMatrix<f64>,
    basis: ShBasisSpec,
    cfg: SolverConfig,
}

impl SingleShellCsd {
    pub fn new(
        dirs: &[UnitDirection],
        response: &ZonalResponse,
        basis: ShBasisSpec,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if response.coeffs[0] <= 0.0 {
            return Err(Error::InvalidModel("WM response must have r_0 > 0".into()));
        }
        if dirs.is_empty() {
            return Err(Error::InvalidArgument("no directions".into()));
        }
        let scales = convolution_scales(basis, response);
        let mut design = sh_basis_matrix(dirs, basis);
        for (j, s) in scales.iter().enumerate() {
            for i in 0..design.nrows() {
                design[(i, j)] *= s;
            }
        }
        Ok(Self {
            design,
            constraints: constraint_matrix(basis, cfg)?,
            basis,
            cfg: cfg.clone(),
        })
    }

    pub fn fit(&self, signal: &[f64]) -> Result<(ShCoefficients, Diagnostics)> {
        let (coeffs, diagnostics, _) = self.fit_with_active(signal)?;
        Ok((coeffs, diagnostics))
    }

    /// As [`Self::fit`], also returning the active constraint indices.
    pub fn fit_with_active(
        &self,
        signal: &[f64],
    ) -> Result<(ShCoefficients, Diagnostics, Vec<usize>)> {
        if signal.len() != self.design.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} samples for {} directions",
                signal.len(),
                self.design.nrows()
            )));
        }
        let problem = QpProblem::new(
            self.design.clone(),
            DVector::from_column_slice(signal),
            self.constraints.clone(),
        )?;
        let sol = nnqp_solve(&problem, &self.cfg)?;
        Ok((
            ShCoefficients::new(self.basis, sol.x.as_slice().to_vec())?,
            sol.diagnostics,
            sol.active,
        ))
    }
}

/// One-voxel single-tissue CSD of a b0-normalized single-shell signal.
pub fn csd_single(
    signal: &[f64],
    dirs: &[UnitDirection],
    response: &ZonalResponse,
    basis: ShBasisSpec,
    cfg: &SolverConfig,
) -> Result<(ShCoefficients, Diagnostics)> {
    SingleShellCsd::new(dirs, response, basis, cfg)?.fit(signal)
}

/// Prebuilt multi-shell multi-tissue operator (joint WM + GM + CSF fit).
pub struct MsmtCsd {
    design: DMatrix<f64>,
    constraints: DMatrix<f64>,
    basis: ShBasisSpec,
    cfg: SolverConfig,
}

impl MsmtCsd {
    pub fn new(
        table: &GradientTable,
        responses: &ResponseSet,
        basis: ShBasisSpec,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if table.n_distinct_bvalues() < 3 {
            return Err(Error::InvalidModel(format!(
                "MSMT-CSD needs at least 3 distinct b-values, table has {}",
                table.n_distinct_bvalues()
            )));
        }
        let r = basis.len();
        let n = table.len();
        let mut design = DMatrix::zeros(n, r + 2);
        let mut basis_row = vec![0.0; r];
        for i in 0..n {
            let entry = table.entry(i);
            let wm = responses.wm_at(entry.bvalue)?;
            let gm = responses.gm_at(entry.bvalue)?;
            let csf = responses.csf_at(entry.bvalue)?;
            let scales = convolution_scales(basis, wm);
            crate::sphere_sh::sh_eval_basis_at(&entry.direction, basis, &mut basis_row);
            for j in 0..r {
                design[(i, j)] = basis_row[j] * scales[j];
            }
            design[(i, r)] = gm.coeffs[0];
            design[(i, r + 1)] = csf.coeffs[0];
        }

        let amp = constraint_matrix(basis, cfg)?;
        let mut constraints = DMatrix::zeros(amp.nrows() + 2, r + 2);
        constraints.view_mut((0, 0), (amp.nrows(), r)).copy_from(&amp);
        constraints[(amp.nrows(), r)] = 1.0;
        constraints[(amp.nrows() + 1, r + 1)] = 1.0;

        Ok(Self { design, constraints, basis, cfg: cfg.clone() })
    }

    #[doc(hidden)]
    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn fit(&self, signal: &[f64]) -> Result<(TissueDecomposition, Diagnostics)> {
        if signal.len() != self.design.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} samples for {} measurements",
                signal.len(),
                self.design.nrows()
            )));
        }
        let problem = QpProblem::new(
            self.design.clone(),
            DVector::from_column_slice(signal),
            self.constraints.clone(),
        )?;
        let sol = nnqp_solve(&problem, &self.cfg)?;
        let r = self.basis.len();
        Ok((
            TissueDecomposition {
                wm: ShCoefficients::new(self.basis, sol.x.as_slice()[..r].to_vec())?,
                gm: sol.x[r],
                csf: sol.x[r + 1],
            },
            sol.diagnostics,
        ))
    }
}

/// One-voxel MSMT-CSD.
pub fn msmt_csd(
    signal: &[f64],
    table: &GradientTable,
    responses: &ResponseSet,
    basis: ShBasisSpec,
    cfg: &SolverConfig,
) -> Result<(TissueDecomposition, Diagnostics)> {
    MsmtCsd::new(table, responses, basis, cfg)?.fit(signal)
}

/// Convergence record of one SS3T alternation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Ss3tOutcome {
    pub outer_iterations: usize,
    /// Objective after the initial WM estimate, then after each outer
    /// iteration; non-increasing by construction.
    pub objective_trace: Vec<f64>,
    pub final_diagnostics: Diagnostics,
}

/// Prebuilt single-shell three-tissue operator.
///
/// Alternating two-step scheme: starting from a hard-constrained CSD
/// estimate of the WM FOD on the shell, step A fixes WM and fits the
/// non-negative GM and CSF amplitudes on all rows; step B fixes CSF and
/// refits WM and GM under the amplitude constraints. The steps repeat until
/// the largest relative coefficient change drops below `cfg.ss3t_tol` or
/// `cfg.ss3t_max_outer` is reached. Both steps are exact block
/// minimizations of the same objective, so the objective trace cannot
/// increase.
pub struct Ss3tCsd {
    design_wm: DMatrix<f64>,
    col_gm: DVector<f64>,
    col_csf: DVector<f64>,
    amp: DMatrix<f64>,
    init: SingleShellCsd,
    shell_rows: Vec<usize>,
    basis: ShBasisSpec,
    cfg: SolverConfig,
}

impl Ss3tCsd {
    pub fn new(
        table: &GradientTable,
        responses: &ResponseSet,
        basis: ShBasisSpec,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let shells = table.shells();
        if shells.len() != 2 || shells[0].0 != 0.0 {
            return Err(Error::InvalidModel(format!(
                "SS3T-CSD needs exactly one b=0 shell plus one diffusion shell, table has {} shells",
                shells.len()
            )));
        }
        let shell_b = shells[1].0;
        let shell_rows = shells[1].1.clone();

        let r = basis.len();
        let n = table.len();
        let mut design_wm = DMatrix::zeros(n, r);
        let mut col_gm = DVector::zeros(n);
        let mut col_csf = DVector::zeros(n);
        let mut basis_row = vec![0.0; r];
        for i in 0..n {
            let entry = table.entry(i);
            let wm = responses.wm_at(entry.bvalue)?;
            let scales = convolution_scales(basis, wm);
            crate::sphere_sh::sh_eval_basis_at(&entry.direction, basis, &mut basis_row);
            for j in 0..r {
                design_wm[(i, j)] = basis_row[j] * scales[j];
            }
            col_gm[i] = responses.gm_at(entry.bvalue)?.coeffs[0];
            col_csf[i] = responses.csf_at(entry.bvalue)?.coeffs[0];
        }

        let shell_dirs = table.directions(&shell_rows);
        let init = SingleShellCsd::new(&shell_dirs, responses.wm_at(shell_b)?, basis, cfg)?;

        Ok(Self {
            design_wm,
            col_gm,
            col_csf,
            amp: constraint_matrix(basis, cfg)?,
            init,
            shell_rows,
            basis,
            cfg: cfg.clone(),
        })
    }

    fn objective(&self, s: &DVector<f64>, w: &DVector<f64>, g: f64, c: f64) -> f64 {
        let model = &self.design_wm * w + &self.col_gm * g + &self.col_csf * c;
        (model - s).norm_squared()
    }

    pub fn fit(&self, signal: &[f64]) -> Result<(TissueDecomposition, Ss3tOutcome)> {
        let n = self.design_wm.nrows();
        if signal.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} samples for {} measurements",
                signal.len(),
                n
            )));
        }
        let s = DVector::from_column_slice(signal);
        let r = self.basis.len();

        // Initial WM estimate: hard-constrained CSD of the shell signal.
        let shell_signal: Vec<f64> = self.shell_rows.iter().map(|&i| signal[i]).collect();
        let (w_init, init_diag, init_active) = self.init.fit_with_active(&shell_signal)?;
        let mut w = DVector::from_column_slice(w_init.values());
        // Step B shares the amplitude-constraint indexing with the
        // initializer, so its active set seeds the first warm start.
        let mut warm: Vec<usize> = init_active;
        let mut g = 0.0;
        let mut c = 0.0;
        let mut trace = vec![self.objective(&s, &w, g, c)];
        let mut last_diag = init_diag;

        let mut converged = false;
        let mut outer = 0;
        while outer < self.cfg.ss3t_max_outer {
            outer += 1;
            let prev = stack(&w, g, c);

            // Step A: WM fixed, non-negative (gm, csf) on all rows.
            let residual_a = &s - &self.design_wm * &w;
            let mut design_a = DMatrix::zeros(n, 2);
            design_a.set_column(0, &self.col_gm);
            design_a.set_column(1, &self.col_csf);
            let sol_a = nnqp_solve(
                &QpProblem::new(design_a, residual_a, DMatrix::identity(2, 2))?,
                &self.cfg,
            )?;
            c = sol_a.x[1];

            // Step B: CSF fixed, (wm, gm) under amplitude constraints.
            let residual_b = &s - &self.col_csf * c;
            let mut design_b = DMatrix::zeros(n, r + 1);
            design_b.view_mut((0, 0), (n, r)).copy_from(&self.design_wm);
            design_b.set_column(r, &self.col_gm);
            let mut con_b = DMatrix::zeros(self.amp.nrows() + 1, r + 1);
            con_b
                .view_mut((0, 0), (self.amp.nrows(), r))
                .copy_from(&self.amp);
            con_b[(self.amp.nrows(), r)] = 1.0;
            let sol_b =
                nnqp_solve_warm(&QpProblem::new(design_b, residual_b, con_b)?, &self.cfg, &warm)?;
            w = DVector::from_column_slice(&sol_b.x.as_slice()[..r]);
            g = sol_b.x[r];
            warm = sol_b.active.clone();
            last_diag = sol_b.diagnostics;

            trace.push(self.objective(&s, &w, g, c));

            let curr = stack(&w, g, c);
            let delta = (&curr - &prev).amax();
            if delta <= self.cfg.ss3t_tol * prev.amax().max(1e-30) {
                converged = true;
                break;
            }
        }

        let decomposition = TissueDecomposition {
            wm: ShCoefficients::new(self.basis, w.as_slice().to_vec())?,
            gm: g,
            csf: c,
        };
        let outcome = Ss3tOutcome {
            outer_iterations: outer,
            objective_trace: trace.clone(),
            final_diagnostics: last_diag,
        };
        if !converged {
            let mut best = w.as_slice().to_vec();
            best.push(g);
            best.push(c);
            return Err(Error::Ss3tNonConverged {
                outer_iterations: outer,
                objective_trace: trace,
                best,
            });
        }
        Ok((decomposition, outcome))
    }
}

fn stack(w: &DVector<f64>, g: f64, c: f64) -> DVector<f64> {
    let mut v = DVector::zeros(w.len() + 2);
    v.rows_mut(0, w.len()).copy_from(w);
    v[w.len()] = g;
    v[w.len() + 1] = c;
    v
}

/// One-voxel SS3T-CSD.
pub fn ss3t_csd(
    signal: &[f64],
    table: &GradientTable,
    responses: &ResponseSet,
    basis: ShBasisSpec,
    cfg: &SolverConfig,
) -> Result<(TissueDecomposition, Ss3tOutcome)> {
    Ss3tCsd::new(table, responses, basis, cfg)?.fit(signal)
}

/// Which deconvolution to run over a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Csd,
    Msmt,
    Ss3t,
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMethod::Csd => write!(f, "csd"),
            FitMethod::Msmt => write!(f, "msmt"),
            FitMethod::Ss3t => write!(f, "ss3t"),
        }
    }
}

/// Volume-level fit results plus per-voxel failure notes and aggregate
/// solver health.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub fod: ChannelVolume,
    pub gm: ChannelVolume,
    pub csf: ChannelVolume,
    /// `(voxel index, error)` for voxels kept at their best iterate or
    /// zero-filled.
    pub failures: Vec<(usize, String)>,
    pub n_fitted: usize,
    pub n_converged: usize,
    pub mean_solver_iterations: f64,
    pub max_kkt_residual: f64,
}

enum VoxelFit {
    Ok { x: Vec<f64>, iterations: usize, kkt: f64 },
    Best { x: Vec<f64>, message: String },
    Failed { message: String },
}

/// Fits every masked voxel of `volume` with the chosen method. Unmasked
/// voxels are zero-filled; per-voxel failures are collected, not fatal.
/// Output is independent of the parallel execution order.
pub fn fit_volume(
    volume: &SignalVolume,
    method: FitMethod,
    responses: &ResponseSet,
    basis: ShBasisSpec,
    cfg: &SolverConfig,
    mask: Option<&[bool]>,
) -> Result<FitReport> {
    let n_vox = volume.n_voxels();
    if let Some(m) = mask {
        if m.len() != n_vox {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for {} voxels",
                m.len(),
                n_vox
            )));
        }
    }

    // Normalized working volume for the single-tissue path.
    let working;
    let (volume_ref, prenorm_failures): (&SignalVolume, Vec<(usize, String)>) = match method {
        FitMethod::Csd if !volume.table.b0_indices().is_empty() => {
            let report = b0_normalize(volume)?;
            working = report.volume;
            let flagged = report
                .flagged_voxels
                .into_iter()
                .map(|v| (v, "non-positive b0 reference".to_string()))
                .collect();
            (&working, flagged)
        }
        _ => (volume, Vec::new()),
    };

    let r = basis.len();
    let results: Vec<VoxelFit> = match method {
        FitMethod::Csd => {
            let shells = volume_ref.table.shells();
            if shells.len() != 1 || shells[0].0 == 0.0 {
                return Err(Error::InvalidModel(
                    "single-tissue CSD needs exactly one non-zero shell".into(),
                ));
            }
            let dirs = volume_ref.table.directions(&shells[0].1);
            let op = SingleShellCsd::new(&dirs, responses.wm_at(shells[0].0)?, basis, cfg)?;
            run_voxels(volume_ref, mask, &prenorm_failures, |signal| {
                op.fit(signal).map(|(c, d)| {
                    (c.into_values(), d.iterations, kkt_max(&d))
                })
            })
        }
        FitMethod::Msmt => {
            let op = MsmtCsd::new(&volume_ref.table, responses, basis, cfg)?;
            run_voxels(volume_ref, mask, &prenorm_failures, |signal| {
                op.fit(signal).map(|(t, d)| {
                    let mut x = t.wm.into_values();
                    x.push(t.gm);
                    x.push(t.csf);
                    (x, d.iterations, kkt_max(&d))
                })
            })
        }
        FitMethod::Ss3t => {
            let op = Ss3tCsd::new(&volume_ref.table, responses, basis, cfg)?;
            run_voxels(volume_ref, mask, &prenorm_failures, |signal| {
                op.fit(signal).map(|(t, o)| {
                    let mut x = t.wm.into_values();
                    x.push(t.gm);
                    x.push(t.csf);
                    (x, o.outer_iterations, kkt_max(&o.final_diagnostics))
                })
            })
        }
    };

    let mut fod = ChannelVolume::zeros(volume.geom, r);
    let mut gm = ChannelVolume::zeros(volume.geom, 1);
    let mut csf = ChannelVolume::zeros(volume.geom, 1);
    let mut failures = prenorm_failures;
    let mut n_fitted = 0usize;
    let mut n_converged = 0usize;
    let mut iter_sum = 0usize;
    let mut max_kkt = 0.0_f64;

    for (v, outcome) in results.into_iter().enumerate() {
        match outcome {
            VoxelFit::Ok { x, iterations, kkt } => {
                write_voxel(&mut fod, &mut gm, &mut csf, v, &x, r);
                n_fitted += 1;
                n_converged += 1;
                iter_sum += iterations;
                max_kkt = max_kkt.max(kkt);
            }
            VoxelFit::Best { x, message } => {
                write_voxel(&mut fod, &mut gm, &mut csf, v, &x, r);
                n_fitted += 1;
                failures.push((v, message));
            }
            VoxelFit::Failed { message } => {
                if !message.is_empty() {
                    failures.push((v, message));
                }
            }
        }
    }
    failures.sort_by_key(|(v, _)| *v);

    Ok(FitReport {
        fod,
        gm,
        csf,
        failures,
        n_fitted,
        n_converged,
        mean_solver_iterations: if n_converged > 0 {
            iter_sum as f64 / n_converged as f64
        } else {
            0.0
        },
        max_kkt_residual: max_kkt,
    })
}

fn kkt_max(d: &Diagnostics) -> f64 {
    d.stationarity
        .max(d.primal_infeasibility)
        .max(d.dual_infeasibility)
        .max(d.complementarity)
}

fn write_voxel(
    fod: &mut ChannelVolume,
    gm: &mut ChannelVolume,
    csf: &mut ChannelVolume,
    v: usize,
    x: &[f64],
    r: usize,
) {
    fod.voxel_mut(v).copy_from_slice(&x[..r]);
    if x.len() >= r + 2 {
        gm.voxel_mut(v)[0] = x[r];
        csf.voxel_mut(v)[0] = x[r + 1];
    }
}

fn run_voxels<F>(
    volume: &SignalVolume,
    mask: Option<&[bool]>,
    prenorm_failures: &[(usize, String)],
    fit: F,
) -> Vec<VoxelFit>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, usize, f64)> + Sync,
{
    let skip: std::collections::HashSet<usize> =
        prenorm_failures.iter().map(|(v, _)| *v).collect();
    (0..volume.n_voxels())
        .into_par_iter()
        .map(|v| {
            if mask.map(|m| !m[v]).unwrap_or(false) || skip.contains(&v) {
                return VoxelFit::Failed { message: String::new() };
            }
            match fit(volume.data.voxel(v)) {
                Ok((x, iterations, kkt)) => VoxelFit::Ok { x, iterations, kkt },
                Err(Error::NonConverged { best, iterations, residual }) => VoxelFit::Best {
                    x: best,
                    message: format!(
                        "did not converge in {iterations} iterations (residual {residual:.3e})"
                    ),
                },
                Err(Error::Ss3tNonConverged { best, outer_iterations, .. }) => VoxelFit::Best {
                    x: best,
                    message: format!("alternation hit the {outer_iterations}-iteration cap"),
                },
                Err(e) => VoxelFit::Failed { message: e.to_string() },
            }
        })
        .collect()
}
