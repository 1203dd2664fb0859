//! Experiment drivers on synthetic phantom cohorts: ground-truth
//! consistency between split halves of the acquisition, the
//! input-direction ablation of the learned regressor, and the age
//! domain-shift study. Every driver emits a [`ExperimentReport`] that
//! echoes its full configuration and is byte-reproducible from
//! `(config, seeds)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csd::{fit_volume, FitMethod, FitReport, SolverConfig};
use crate::fod_analysis::{afd_total, PeakConfig, PeakExtractor, PeakSet};
use crate::forward_model::{
    b0_normalize, dti_fit, fa, generate_phantom, AssignmentRule, PhantomSpec, ResponseSet,
    SignalVolume, TissueParams,
};
use crate::metrics::{compare_peak_fields, MetricsReport};
use crate::regressor::{
    fit_ridge, predict_volume, train, Model, ModelSpec, RegressionDataset, TrainConfig,
};
use crate::sphere_sh::{
    max_order_for, sh_fit, subsample_directions, tessellate_sphere, GradientTable, ShBasisSpec,
    ShCoefficients,
};
use crate::volume::ChannelVolume;
use crate::{Error, Result};

/// The full multi-shell acquisition layout used by every experiment:
/// 20 b=0, 64 b=400, 88 b=1000, and 128 b=2600 measurements.
pub const FULL_SHELLS: [(f64, usize); 4] = [(0.0, 20), (400.0, 64), (1000.0, 88), (2600.0, 128)];

/// Builds the default 300-measurement gradient table.
pub fn default_full_table() -> GradientTable {
    GradientTable::synthetic(&FULL_SHELLS).expect("default layout is valid")
}

/// A cohort of synthetic subjects with a train/val/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Per-subject phantom grid.
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    /// b0-referenced SNR; `None` is noiseless.
    pub snr: Option<f64>,
    /// Subject ages are drawn uniformly from this range (weeks).
    pub age_range: (f64, f64),
    pub seed: u64,
    #[serde(default)]
    pub assignment: AssignmentRule,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_subjects: 30,
            n_train: 20,
            n_val: 5,
            n_test: 5,
            dims: [20, 20, 10],
            voxel_size_mm: 1.5,
            snr: Some(20.0),
            age_range: (38.0, 42.0),
            seed: 0,
            assignment: AssignmentRule::default(),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::InvalidCohort("cohort has no subjects".into()));
        }
        if self.n_train + self.n_val + self.n_test > self.n_subjects {
            return Err(Error::InvalidCohort(format!(
                "splits {}+{}+{} exceed {} subjects",
                self.n_train, self.n_val, self.n_test, self.n_subjects
            )));
        }
        if !(self.age_range.0 <= self.age_range.1) {
            return Err(Error::InvalidCohort("age range is inverted".into()));
        }
        TissueParams::at_age(self.age_range.0)?;
        TissueParams::at_age(self.age_range.1)?;
        Ok(())
    }

    /// Deterministic per-subject age and phantom spec.
    pub fn subject_spec(&self, subject: usize) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1_000_003 + subject as u64);
        let (lo, hi) = self.age_range;
        let age = if hi > lo { rng.random_range(lo..hi) } else { lo };
        PhantomSpec {
            dims: self.dims,
            voxel_size_mm: self.voxel_size_mm,
            snr: self.snr,
            age_weeks: age,
            seed: self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (subject as u64 + 1),
            assignment: self.assignment.clone(),
        }
    }

    fn train_range(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    fn val_range(&self) -> std::ops::Range<usize> {
        self.n_train..self.n_train + self.n_val
    }

    fn test_range(&self) -> std::ops::Range<usize> {
        self.n_train + self.n_val..self.n_train + self.n_val + self.n_test
    }
}

/// Which learning path the ablation/age-shift drivers use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrainerConfig {
    /// Closed-form ridge regression over all masked training voxels.
    Ridge { lambda: f64 },
    /// Adam-trained model with early stopping.
    Adam { model: ModelSpec, train: TrainConfig },
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig::Ridge { lambda: 1e-6 }
    }
}

/// Solver/peak-extraction settings shared by the drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub basis_order: usize,
    pub solver: SolverConfig,
    pub peaks: PeakConfig,
    /// Laplace-Beltrami regularization of the input-signal SH fit.
    pub lb_lambda: f64,
    /// Peak-extraction and constraint mesh subdivision for analysis.
    pub peak_mesh_subdivisions: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            basis_order: 8,
            solver: SolverConfig::default(),
            peaks: PeakConfig::default(),
            lb_lambda: 0.006,
            peak_mesh_subdivisions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub cohort: CohortSpec,
    pub method: FitMethod,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// Seed of the direction-balanced split search.
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub cohort: CohortSpec,
    pub n_sig_list: Vec<usize>,
    pub gt_method: FitMethod,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeShiftConfig {
    pub early: CohortSpec,
    pub late: CohortSpec,
    pub gt_method: FitMethod,
    pub n_sig: usize,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub subsample_seed: u64,
}

/// Aggregated solver health over every per-voxel fit in a condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub n_fitted: usize,
    pub n_converged: usize,
    pub n_failures: usize,
    pub mean_solver_iterations: f64,
    pub max_kkt_residual: f64,
}

impl DiagnosticsSummary {
    fn absorb(&mut self, report: &FitReport) {
        let prev = self.n_converged as f64;
        let add = report.n_converged as f64;
        if prev + add > 0.0 {
            self.mean_solver_iterations = (self.mean_solver_iterations * prev
                + report.mean_solver_iterations * add)
                / (prev + add);
        }
        self.n_fitted += report.n_fitted;
        self.n_converged += report.n_converged;
        self.n_failures += report.failures.len();
        self.max_kkt_residual = self.max_kkt_residual.max(report.max_kkt_residual);
    }
}

/// One experimental condition: aggregated metrics plus per-subject detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub metrics: MetricsReport,
    pub per_subject: Vec<MetricsReport>,
    pub diagnostics: DiagnosticsSummary,
}

/// Full experiment output; `config` echoes the driver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub conditions: Vec<ConditionReport>,
}

impl ExperimentReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Flat CSV: one row per (condition, metric, class).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,condition,metric,class,value\n");
        for c in &self.conditions {
            let mut push = |metric: &str, class: &str, value: Option<f64>| {
                let v = value.map(|v| format!("{v}")).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.experiment, c.name, metric, class, v
                ));
            };
            for k in 1..=3 {
                push("agreement_rate", &k.to_string(), c.metrics.agreement_rate[k - 1]);
                push(
                    "angular_error_deg",
                    &k.to_string(),
                    c.metrics.angular_error_deg[k - 1],
                );
            }
            push("afd_mape", "", Some(c.metrics.afd.mape_percent));
            push(
                "multi_fiber_fraction_a",
                "",
                Some(c.metrics.multi_fiber_fraction_a),
            );
            push(
                "multi_fiber_fraction_b",
                "",
                Some(c.metrics.multi_fiber_fraction_b),
            );
        }
        out
    }
}

/// Unweighted mean of per-subject metrics (undefined classes skipped).
fn aggregate_metrics(per_subject: &[MetricsReport]) -> MetricsReport {
    assert!(!per_subject.is_empty());
    let n = per_subject.len() as f64;
    let mut confusion = [[0.0; 3]; 3];
    let mut eligible = 0usize;
    let mut excluded = 0usize;
    for m in per_subject {
        for i in 0..3 {
            for j in 0..3 {
                confusion[i][j] += m.confusion.matrix[i][j] / n;
            }
        }
        eligible += m.confusion.eligible;
        excluded += m.confusion.excluded_zero_peaks;
    }
    let mean_of = |get: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = per_subject.iter().filter_map(get).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let mut ar = [None; 3];
    let mut ae = [None; 3];
    for k in 0..3 {
        ar[k] = mean_of(&|m: &MetricsReport| m.agreement_rate[k]);
        ae[k] = mean_of(&|m: &MetricsReport| m.angular_error_deg[k]);
    }
    MetricsReport {
        confusion: crate::metrics::FiberCountConfusion {
            matrix: confusion,
            eligible,
            excluded_zero_peaks: excluded,
        },
        agreement_rate: ar,
        angular_error_deg: ae,
        afd: crate::metrics::AfdError {
            mape_percent: per_subject.iter().map(|m| m.afd.mape_percent).sum::<f64>() / n,
            used: per_subject.iter().map(|m| m.afd.used).sum(),
            excluded_nonpositive_reference: per_subject
                .iter()
                .map(|m| m.afd.excluded_nonpositive_reference)
                .sum(),
        },
        multi_fiber_fraction_a: per_subject.iter().map(|m| m.multi_fiber_fraction_a).sum::<f64>()
            / n,
        multi_fiber_fraction_b: per_subject.iter().map(|m| m.multi_fiber_fraction_b).sum::<f64>()
            / n,
    }
}

/// WM evaluation mask: ground-truth WM-dominant voxels plus any voxel with
/// a DTI fractional anisotropy above 0.25.
fn wm_mask(volume: &SignalVolume) -> Vec<bool> {
    let truth = volume.truth.as_ref();
    (0..volume.n_voxels())
        .map(|v| {
            let label = truth.map(|t| t[v].f_wm() >= 0.5).unwrap_or(false);
            if label {
                return true;
            }
            dti_fit(volume.data.voxel(v), &volume.table)
                .map(|t| fa(&t) > 0.25)
                .unwrap_or(false)
        })
        .collect()
}

/// Extracts peaks and total AFD for every masked voxel of an FOD volume.
fn peaks_and_afd(
    fod: &ChannelVolume,
    mask: &[bool],
    basis: ShBasisSpec,
    pipeline: &PipelineConfig,
) -> Result<(Vec<PeakSet>, Vec<f64>)> {
    let mesh = tessellate_sphere(pipeline.peak_mesh_subdivisions)?;
    let extractor = PeakExtractor::new(&mesh, basis);
    let mut peaks = vec![PeakSet::empty(); fod.geom.n_voxels()];
    let mut afd = vec![0.0; fod.geom.n_voxels()];
    for v in 0..fod.geom.n_voxels() {
        if !mask[v] {
            continue;
        }
        let coeffs = ShCoefficients::new(basis, fod.voxel(v).to_vec())?;
        peaks[v] = extractor.extract(&coeffs, &pipeline.peaks)?;
        afd[v] = afd_total(&coeffs);
    }
    Ok((peaks, afd))
}

/// The measurement subset a method uses for ground-truth generation:
/// everything for MSMT, the b=0 and b=1000 shells for SS3T.
fn gt_measurement_indices(table: &GradientTable, method: FitMethod) -> Result<Vec<usize>> {
    match method {
        FitMethod::Msmt => Ok((0..table.len()).collect()),
        FitMethod::Ss3t => {
            let mut idx = table.b0_indices();
            idx.extend(table.shell_indices(1000.0, 10.0));
            idx.sort_unstable();
            Ok(idx)
        }
        FitMethod::Csd => Err(Error::InvalidArgument(
            "ground truth generation uses msmt or ss3t".into(),
        )),
    }
}

/// Consistency split: per-shell half counts `(bvalue, n_half)`.
fn consistency_split_counts(method: FitMethod) -> Result<Vec<(f64, usize)>> {
    match method {
        FitMethod::Msmt => Ok(vec![(0.0, 10), (400.0, 32), (1000.0, 44), (2600.0, 64)]),
        FitMethod::Ss3t => Ok(vec![(0.0, 10), (1000.0, 44)]),
        FitMethod::Csd => Err(Error::InvalidArgument(
            "consistency experiment compares msmt or ss3t".into(),
        )),
    }
}

/// Builds the two disjoint measurement halves for the consistency
/// experiment; half A is direction-balanced per shell, half B is the
/// complement within each split shell.
pub fn consistency_halves(
    table: &GradientTable,
    method: FitMethod,
    basis_order: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let counts = consistency_split_counts(method)?;
    let mut half_a = Vec::new();
    let mut half_b = Vec::new();
    for (bvalue, n_half) in counts {
        let shell = table.shell_indices(bvalue, 10.0);
        if shell.len() != 2 * n_half {
            return Err(Error::InvalidCohort(format!(
                "shell b = {bvalue} has {} measurements, the split needs {}",
                shell.len(),
                2 * n_half
            )));
        }
        if bvalue == 0.0 {
            half_a.extend(&shell[..n_half]);
            half_b.extend(&shell[n_half..]);
        } else {
            let order = basis_order.min(max_order_for(n_half));
            let basis = ShBasisSpec::new(order)?;
            let picked = subsample_directions(table, bvalue, n_half, basis, seed)?;
            half_a.extend(&picked);
            half_b.extend(shell.iter().filter(|i| !picked.contains(i)));
        }
    }
    half_a.sort_unstable();
    half_b.sort_unstable();
    Ok((half_a, half_b))
}

/// Ground-truth consistency: fits FODs on two disjoint halves of each
/// subject's measurements and compares the halves.
pub fn run_consistency(cfg: &ConsistencyConfig) -> Result<ExperimentReport> {
    cfg.cohort.validate()?;
    let table = default_full_table();
    let basis = ShBasisSpec::new(cfg.pipeline.basis_order)?;
    let (half_a, half_b) = consistency_halves(
        &table,
        cfg.method,
        cfg.pipeline.basis_order,
        cfg.split_seed,
    )?;
    debug_assert!(half_a.iter().all(|i| !half_b.contains(i)));

    let mut per_subject = Vec::new();
    let mut diagnostics = DiagnosticsSummary::default();
    for s in 0..cfg.cohort.n_subjects {
        let spec = cfg.cohort.subject_spec(s);
        let phantom = generate_phantom(&spec, &table)?;
        let responses =
            ResponseSet::from_tissue_params(&TissueParams::at_age(spec.age_weeks)?, &table, basis.order())?;
        let mask = wm_mask(&phantom);

        let vol_a = phantom.subset_measurements(&half_a)?;
        let vol_b = phantom.subset_measurements(&half_b)?;
        let fit_a = fit_volume(&vol_a, cfg.method, &responses, basis, &cfg.pipeline.solver, Some(&mask))?;
        let fit_b = fit_volume(&vol_b, cfg.method, &responses, basis, &cfg.pipeline.solver, Some(&mask))?;
        diagnostics.absorb(&fit_a);
        diagnostics.absorb(&fit_b);

        let (peaks_a, afd_a) = peaks_and_afd(&fit_a.fod, &mask, basis, &cfg.pipeline)?;
        let (peaks_b, afd_b) = peaks_and_afd(&fit_b.fod, &mask, basis, &cfg.pipeline)?;
        per_subject.push(compare_peak_fields(&peaks_a, &peaks_b, &afd_a, &afd_b, &mask)?);
    }

    Ok(ExperimentReport {
        experiment: "consistency".into(),
        config: serde_json::to_value(cfg)?,
        conditions: vec![ConditionReport {
            name: format!("{}", cfg.method),
            metrics: aggregate_metrics(&per_subject),
            per_subject,
            diagnostics,
        }],
    })
}

/// Everything the learned pipeline needs about one subject: one input
/// volume per requested direction count, plus the shared ground truth.
struct SubjectData {
    /// Indexed like the driver's `n_sig` list.
    inputs: Vec<ChannelVolume>,
    gt_fod: ChannelVolume,
    mask: Vec<bool>,
}

/// Builds the regressor input for a subject: subsampled b=1000 directions,
/// normalized by the first b=0, projected onto SH of the matching order.
fn build_input(
    phantom: &SignalVolume,
    chosen_dirs: &[usize],
    order: usize,
    lb_lambda: f64,
) -> Result<ChannelVolume> {
    let first_b0 = *phantom
        .table
        .b0_indices()
        .first()
        .ok_or_else(|| Error::InvalidCohort("acquisition has no b=0".into()))?;
    let mut indices = vec![first_b0];
    indices.extend_from_slice(chosen_dirs);
    let sub = phantom.subset_measurements(&indices)?;
    let normalized = b0_normalize(&sub)?;
    let shell = normalized.volume;
    let dirs = shell.table.directions(&(0..shell.table.len()).collect::<Vec<_>>());
    let basis = ShBasisSpec::new(order)?;
    let mut input = ChannelVolume::zeros(shell.geom, basis.len());
    for v in 0..shell.n_voxels() {
        let coeffs = sh_fit(shell.data.voxel(v), &dirs, basis, lb_lambda)?;
        input.set_voxel(v, coeffs.values());
    }
    Ok(input)
}

fn fit_gt(
    phantom: &SignalVolume,
    method: FitMethod,
    responses: &ResponseSet,
    basis: ShBasisSpec,
    solver: &SolverConfig,
    mask: &[bool],
    diagnostics: &mut DiagnosticsSummary,
) -> Result<ChannelVolume> {
    let indices = gt_measurement_indices(&phantom.table, method)?;
    let gt_vol = phantom.subset_measurements(&indices)?;
    let report = fit_volume(&gt_vol, method, responses, basis, solver, Some(mask))?;
    diagnostics.absorb(&report);
    Ok(report.fod)
}

fn train_model(
    trainer: &TrainerConfig,
    train_sets: &[RegressionDataset],
    val_sets: &[RegressionDataset],
) -> Result<Model> {
    match trainer {
        TrainerConfig::Ridge { lambda } => fit_ridge(train_sets, *lambda, 0),
        TrainerConfig::Adam { model, train: tcfg } => {
            let (m, _history) = train(train_sets, val_sets, model, tcfg)?;
            Ok(m)
        }
    }
}

/// Shared evaluation: predict FODs for a test subject and compare against
/// its ground truth.
fn evaluate_subject(
    model: &Model,
    subject: &SubjectData,
    input_idx: usize,
    basis: ShBasisSpec,
    pipeline: &PipelineConfig,
    window: usize,
) -> Result<MetricsReport> {
    let predicted =
        predict_volume(model, &subject.inputs[input_idx], Some(&subject.mask), window)?;
    let (peaks_gt, afd_gt) = peaks_and_afd(&subject.gt_fod, &subject.mask, basis, pipeline)?;
    let (peaks_pred, afd_pred) = peaks_and_afd(&predicted, &subject.mask, basis, pipeline)?;
    compare_peak_fields(&peaks_gt, &peaks_pred, &afd_gt, &afd_pred, &subject.mask)
}

fn patch_size_of(trainer: &TrainerConfig) -> usize {
    match trainer {
        TrainerConfig::Ridge { .. } => 16,
        TrainerConfig::Adam { train, .. } => train.patch_size,
    }
}

/// Prepares one cohort end to end: phantoms, masks, ground-truth FODs
/// (fitted once per subject), and SH inputs for every requested direction
/// count.
fn prepare_cohort(
    cohort: &CohortSpec,
    table: &GradientTable,
    gt_method: FitMethod,
    n_sig_list: &[usize],
    pipeline: &PipelineConfig,
    subsample_seed: u64,
    diagnostics: &mut DiagnosticsSummary,
) -> Result<Vec<SubjectData>> {
    let basis = ShBasisSpec::new(pipeline.basis_order)?;
    let mut chosen = Vec::with_capacity(n_sig_list.len());
    let mut orders = Vec::with_capacity(n_sig_list.len());
    for &n_sig in n_sig_list {
        let order_in = max_order_for(n_sig).min(pipeline.basis_order);
        let input_basis = ShBasisSpec::new(order_in)?;
        chosen.push(subsample_directions(table, 1000.0, n_sig, input_basis, subsample_seed)?);
        orders.push(order_in);
    }

    let mut subjects = Vec::with_capacity(cohort.n_subjects);
    for s in 0..cohort.n_subjects {
        let spec = cohort.subject_spec(s);
        let phantom = generate_phantom(&spec, table)?;
        let responses = ResponseSet::from_tissue_params(
            &TissueParams::at_age(spec.age_weeks)?,
            table,
            basis.order(),
        )?;
        let mask = wm_mask(&phantom);
        let gt_fod = fit_gt(&phantom, gt_method, &responses, basis, &pipeline.solver, &mask, diagnostics)?;
        let inputs = chosen
            .iter()
            .zip(&orders)
            .map(|(dirs, &order)| build_input(&phantom, dirs, order, pipeline.lb_lambda))
            .collect::<Result<Vec<_>>>()?;
        subjects.push(SubjectData { inputs, gt_fod, mask });
    }
    Ok(subjects)
}

fn datasets_for(
    subjects: &[SubjectData],
    input_idx: usize,
    range: std::ops::Range<usize>,
    patch_size: usize,
) -> Result<Vec<RegressionDataset>> {
    range
        .map(|s| {
            RegressionDataset::new(
                subjects[s].inputs[input_idx].clone(),
                subjects[s].gt_fod.clone(),
                subjects[s].mask.clone(),
                patch_size,
            )
        })
        .collect()
}

/// Input-direction ablation: per `n_sig`, train an SH-to-FOD regressor
/// against the chosen ground truth and evaluate on the held-out subjects.
pub fn run_ablation(cfg: &AblationConfig) -> Result<ExperimentReport> {
    cfg.cohort.validate()?;
    if cfg.n_sig_list.is_empty() {
        return Err(Error::InvalidArgument("n_sig_list is empty".into()));
    }
    let table = default_full_table();
    let basis = ShBasisSpec::new(cfg.pipeline.basis_order)?;
    let patch = patch_size_of(&cfg.trainer);

    // Ground truth is fitted once per subject and shared by every n_sig
    // condition; the condition diagnostics therefore repeat the same
    // solver summary.
    let mut diagnostics = DiagnosticsSummary::default();
    let subjects = prepare_cohort(
        &cfg.cohort,
        &table,
        cfg.gt_method,
        &cfg.n_sig_list,
        &cfg.pipeline,
        cfg.subsample_seed,
        &mut diagnostics,
    )?;

    let mut conditions = Vec::new();
    for (idx, &n_sig) in cfg.n_sig_list.iter().enumerate() {
        let train_sets = datasets_for(&subjects, idx, cfg.cohort.train_range(), patch)?;
        let val_sets = datasets_for(&subjects, idx, cfg.cohort.val_range(), patch)?;
        let model = train_model(&cfg.trainer, &train_sets, &val_sets)?;

        let mut per_subject = Vec::new();
        for s in cfg.cohort.test_range() {
            per_subject
                .push(evaluate_subject(&model, &subjects[s], idx, basis, &cfg.pipeline, patch)?);
        }
        conditions.push(ConditionReport {
            name: format!("nsig={n_sig}"),
            metrics: aggregate_metrics(&per_subject),
            per_subject,
            diagnostics: diagnostics.clone(),
        });
    }
    Ok(ExperimentReport {
        experiment: "ablation".into(),
        config: serde_json::to_value(cfg)?,
        conditions,
    })
}

/// Age domain shift: trains one model per age cohort and evaluates each on
/// both test sets (self- and cross-age).
pub fn run_age_shift(cfg: &AgeShiftConfig) -> Result<ExperimentReport> {
    cfg.early.validate()?;
    cfg.late.validate()?;
    let table = default_full_table();
    let basis = ShBasisSpec::new(cfg.pipeline.basis_order)?;
    let patch = patch_size_of(&cfg.trainer);

    let n_sig_list = [cfg.n_sig];
    let mut diag_early = DiagnosticsSummary::default();
    let mut diag_late = DiagnosticsSummary::default();
    let early = prepare_cohort(
        &cfg.early,
        &table,
        cfg.gt_method,
        &n_sig_list,
        &cfg.pipeline,
        cfg.subsample_seed,
        &mut diag_early,
    )?;
    let late = prepare_cohort(
        &cfg.late,
        &table,
        cfg.gt_method,
        &n_sig_list,
        &cfg.pipeline,
        cfg.subsample_seed,
        &mut diag_late,
    )?;

    let model_early = train_model(
        &cfg.trainer,
        &datasets_for(&early, 0, cfg.early.train_range(), patch)?,
        &datasets_for(&early, 0, cfg.early.val_range(), patch)?,
    )?;
    let model_late = train_model(
        &cfg.trainer,
        &datasets_for(&late, 0, cfg.late.train_range(), patch)?,
        &datasets_for(&late, 0, cfg.late.val_range(), patch)?,
    )?;

    let mut conditions = Vec::new();
    let cells: [(&str, &Model, &[SubjectData], std::ops::Range<usize>, &DiagnosticsSummary); 4] = [
        ("early_model_on_early_test", &model_early, &early, cfg.early.test_range(), &diag_early),
        ("early_model_on_late_test", &model_early, &late, cfg.late.test_range(), &diag_late),
        ("late_model_on_early_test", &model_late, &early, cfg.early.test_range(), &diag_early),
        ("late_model_on_late_test", &model_late, &late, cfg.late.test_range(), &diag_late),
    ];
    for (name, model, subjects, range, diag) in cells {
        let mut per_subject = Vec::new();
        for s in range {
            per_subject
                .push(evaluate_subject(model, &subjects[s], 0, basis, &cfg.pipeline, patch)?);
        }
        conditions.push(ConditionReport {
            name: name.into(),
            metrics: aggregate_metrics(&per_subject),
            per_subject,
            diagnostics: diag.clone(),
        });
    }
    Ok(ExperimentReport {
        experiment: "age_shift".into(),
        config: serde_json::to_value(cfg)?,
        conditions,
    })
}
