//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use fodkit_core::csd::{fit_volume, FitMethod, SolverConfig};
use fodkit_core::experiments::{
    run_ablation, run_age_shift, run_consistency, AblationConfig, AgeShiftConfig,
    ConsistencyConfig, ExperimentReport,
};
use fodkit_core::fod_analysis::{afd_total, Peak, PeakConfig, PeakExtractor, PeakSet};
use fodkit_core::forward_model::{generate_phantom, PhantomSpec, ResponseSet, TissueParams};
use fodkit_core::io::{
    read_gradients, read_nifti, read_volume, write_gradients, write_nifti, write_volume,
    VolumeDtype,
};
use fodkit_core::metrics::compare_peak_fields;
use fodkit_core::regressor::{
    load_model, predict_volume, save_model, train, ModelSpec,
    RegressionDataset, TrainConfig,
};
use fodkit_core::sphere_sh::{
    max_order_for, subsample_directions, tessellate_sphere, GradientTable, ShBasisSpec,
    ShCoefficients, UnitDirection,
};
use fodkit_core::volume::ChannelVolume;
use fodkit_core::{Error, Result};

/// Reads a volume by extension: `.nii` uses the NIfTI subset, anything
/// else the native container.
fn load_volume(path: &Path) -> Result<ChannelVolume> {
    if path.extension().map(|e| e == "nii").unwrap_or(false) {
        Ok(read_nifti(path)?.volume)
    } else {
        Ok(read_volume(path)?.volume)
    }
}

fn store_volume(path: &Path, volume: &ChannelVolume) -> Result<()> {
    if path.extension().map(|e| e == "nii").unwrap_or(false) {
        write_nifti(path, volume, VolumeDtype::F64, None)
    } else {
        write_volume(path, volume, VolumeDtype::F64, None)
    }
}

fn load_mask(path: &Path, n_voxels: usize) -> Result<Vec<bool>> {
    let vol = load_volume(path)?;
    if vol.channels != 1 || vol.geom.n_voxels() != n_voxels {
        return Err(Error::InvalidArgument(format!(
            "mask {} must be single-channel with {n_voxels} voxels",
            path.display()
        )));
    }
    Ok(vol.data.iter().map(|&v| v > 0.5).collect())
}

fn env_seed() -> Option<u64> {
    std::env::var("FODKIT_SEED").ok().and_then(|s| s.parse().ok())
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------
// phantom

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomFileConfig {
    #[serde(default)]
    pub phantom: PhantomSpec,
    /// Acquisition shells as `(bvalue, count)` pairs.
    pub shells: Vec<(f64, usize)>,
}

#[derive(Args)]
pub struct PhantomArgs {
    /// JSON config with the phantom spec and acquisition shells.
    #[arg(long)]
    config: PathBuf,
    /// Output signal volume (.fodv or .nii).
    #[arg(long)]
    out: PathBuf,
    /// Optional FSL-style gradient outputs.
    #[arg(long)]
    bvals_out: Option<PathBuf>,
    #[arg(long)]
    bvecs_out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run_phantom(args: PhantomArgs) -> Result<()> {
    let mut cfg: PhantomFileConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed.or_else(env_seed) {
        cfg.phantom.seed = seed;
    }
    let table = GradientTable::synthetic(&cfg.shells)?;
    let volume = generate_phantom(&cfg.phantom, &table)?;
    store_volume(&args.out, &volume.data)?;
    if let (Some(bvals), Some(bvecs)) = (&args.bvals_out, &args.bvecs_out) {
        write_gradients(bvals, bvecs, &table)?;
    }
    println!(
        "phantom: {} voxels x {} measurements -> {}",
        volume.n_voxels(),
        table.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// subsample

#[derive(Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    bvals: PathBuf,
    #[arg(long)]
    bvecs: PathBuf,
    /// Shell b-value to subsample.
    #[arg(long)]
    shell: f64,
    /// Number of directions to keep.
    #[arg(long)]
    count: usize,
    /// SH order of the conditioning criterion (default: largest feasible).
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the selected measurement indices as JSON here (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run_subsample(args: SubsampleArgs) -> Result<()> {
    let read = read_gradients(&args.bvals, &args.bvecs)?;
    for w in &read.warnings {
        eprintln!("warning: {w}");
    }
    let order = args.order.unwrap_or_else(|| max_order_for(args.count).min(8));
    let basis = ShBasisSpec::new(order)?;
    let seed = env_seed().unwrap_or(args.seed);
    let indices = subsample_directions(&read.table, args.shell, args.count, basis, seed)?;
    let json = serde_json::to_string(&indices)?;
    match &args.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------
// fit

#[derive(Args)]
pub struct FitArgs {
    /// Deconvolution method: csd, msmt, or ss3t.
    #[arg(long)]
    method: String,
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    bvals: PathBuf,
    #[arg(long)]
    bvecs: PathBuf,
    /// WM FOD output volume.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gm_out: Option<PathBuf>,
    #[arg(long)]
    csf_out: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Age (weeks) of the tissue model used to derive responses.
    #[arg(long, default_value_t = 40.0)]
    age: f64,
    #[arg(long, default_value_t = 8)]
    order: usize,
    /// Optional solver config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run_fit(args: FitArgs) -> Result<()> {
    let method = match args.method.as_str() {
        "csd" => FitMethod::Csd,
        "msmt" => FitMethod::Msmt,
        "ss3t" => FitMethod::Ss3t,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected csd, msmt, or ss3t)"
            )))
        }
    };
    let solver: SolverConfig = match &args.config {
        Some(path) => read_config(path)?,
        None => SolverConfig::default(),
    };
    let read = read_gradients(&args.bvals, &args.bvecs)?;
    for w in &read.warnings {
        eprintln!("warning: {w}");
    }
    let data = load_volume(&args.volume)?;
    if data.channels != read.table.len() {
        return Err(Error::InvalidArgument(format!(
            "volume has {} channels but the gradient table lists {} measurements",
            data.channels,
            read.table.len()
        )));
    }
    let mask = match &args.mask {
        Some(path) => Some(load_mask(path, data.geom.n_voxels())?),
        None => None,
    };
    let volume = fodkit_core::forward_model::SignalVolume {
        geom: data.geom,
        table: read.table.clone(),
        data,
        truth: None,
    };
    let basis = ShBasisSpec::new(args.order)?;
    let responses =
        ResponseSet::from_tissue_params(&TissueParams::at_age(args.age)?, &read.table, args.order)?;
    let report = fit_volume(&volume, method, &responses, basis, &solver, mask.as_deref())?;
    store_volume(&args.out, &report.fod)?;
    if let Some(path) = &args.gm_out {
        store_volume(path, &report.gm)?;
    }
    if let Some(path) = &args.csf_out {
        store_volume(path, &report.csf)?;
    }
    println!(
        "fit {}: {} voxels, {} converged, {} flagged, max KKT residual {:.3e}",
        method,
        report.n_fitted,
        report.n_converged,
        report.failures.len(),
        report.max_kkt_residual
    );
    Ok(())
}

// ---------------------------------------------------------------------
// peaks

#[derive(Args)]
pub struct PeaksArgs {
    /// FOD volume (45 channels for order 8).
    #[arg(long)]
    fod: PathBuf,
    /// Peaks output: 12 channels, up to three (x, y, z, amplitude) runs.
    #[arg(long)]
    out: PathBuf,
    /// Optional AFD output volume (1 channel).
    #[arg(long)]
    afd_out: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 45.0)]
    min_sep: f64,
    #[arg(long, default_value_t = 0.5)]
    rel_thresh: f64,
    #[arg(long, default_value_t = 3)]
    max_peaks: usize,
    /// Peak-search mesh subdivision level.
    #[arg(long, default_value_t = 3)]
    subdiv: usize,
}

/// Packs up to three peaks into 12 channels, zero-padded.
pub fn pack_peaks(peaks: &PeakSet) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (i, p) in peaks.peaks().iter().take(3).enumerate() {
        let a = p.axis.as_array();
        out[4 * i] = a[0];
        out[4 * i + 1] = a[1];
        out[4 * i + 2] = a[2];
        out[4 * i + 3] = p.amplitude;
    }
    out
}

/// Reads a packed 12-channel voxel back into a peak set.
pub fn unpack_peaks(values: &[f64]) -> Result<PeakSet> {
    let mut peaks = Vec::new();
    for i in 0..3 {
        let amplitude = values[4 * i + 3];
        if amplitude > 0.0 {
            peaks.push(Peak {
                axis: UnitDirection::normalize(
                    values[4 * i],
                    values[4 * i + 1],
                    values[4 * i + 2],
                )?,
                amplitude,
            });
        }
    }
    Ok(PeakSet::from_peaks(peaks))
}

fn order_for_channels(channels: usize) -> Result<usize> {
    for order in (0..=16).step_by(2) {
        if (order + 1) * (order + 2) / 2 == channels {
            return Ok(order);
        }
    }
    Err(Error::InvalidArgument(format!(
        "{channels} channels is not a symmetric SH coefficient count"
    )))
}

pub fn run_peaks(args: PeaksArgs) -> Result<()> {
    let fod = load_volume(&args.fod)?;
    let order = order_for_channels(fod.channels)?;
    let basis = ShBasisSpec::new(order)?;
    let mask = match &args.mask {
        Some(path) => Some(load_mask(path, fod.geom.n_voxels())?),
        None => None,
    };
    let mesh = tessellate_sphere(args.subdiv)?;
    let extractor = PeakExtractor::new(&mesh, basis);
    let cfg = PeakConfig {
        min_separation_deg: args.min_sep,
        relative_threshold: args.rel_thresh,
        max_peaks: args.max_peaks,
        ..PeakConfig::default()
    };
    let mut packed = ChannelVolume::zeros(fod.geom, 12);
    let mut afd = ChannelVolume::zeros(fod.geom, 1);
    for v in 0..fod.geom.n_voxels() {
        if mask.as_ref().map(|m| !m[v]).unwrap_or(false) {
            continue;
        }
        let coeffs = ShCoefficients::new(basis, fod.voxel(v).to_vec())?;
        let peaks = extractor.extract(&coeffs, &cfg)?;
        packed.set_voxel(v, &pack_peaks(&peaks));
        afd.voxel_mut(v)[0] = afd_total(&coeffs);
    }
    store_volume(&args.out, &packed)?;
    if let Some(path) = &args.afd_out {
        store_volume(path, &afd)?;
    }
    println!("peaks: {} voxels -> {}", fod.geom.n_voxels(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// metrics

#[derive(Args)]
pub struct MetricsArgs {
    #[arg(long)]
    peaks_a: PathBuf,
    #[arg(long)]
    peaks_b: PathBuf,
    #[arg(long)]
    afd_a: PathBuf,
    #[arg(long)]
    afd_b: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn run_metrics(args: MetricsArgs) -> Result<()> {
    let pa = load_volume(&args.peaks_a)?;
    let pb = load_volume(&args.peaks_b)?;
    if pa.channels != 12 || pb.channels != 12 {
        return Err(Error::InvalidArgument("peaks volumes must have 12 channels".into()));
    }
    let n = pa.geom.n_voxels();
    let mask = match &args.mask {
        Some(path) => load_mask(path, n)?,
        None => vec![true; n],
    };
    let unpack_all = |vol: &ChannelVolume| -> Result<Vec<PeakSet>> {
        (0..n).map(|v| unpack_peaks(vol.voxel(v))).collect()
    };
    let peaks_a = unpack_all(&pa)?;
    let peaks_b = unpack_all(&pb)?;
    let afd_a = load_volume(&args.afd_a)?;
    let afd_b = load_volume(&args.afd_b)?;
    if afd_a.channels != 1 || afd_b.channels != 1 {
        return Err(Error::InvalidArgument("AFD volumes must have one channel".into()));
    }
    let report = compare_peak_fields(&peaks_a, &peaks_b, &afd_a.data, &afd_b.data, &mask)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(path) = &args.csv {
        let mut csv = String::from("metric,class,value\n");
        for k in 1..=3 {
            if let Some(v) = report.agreement_rate[k - 1] {
                csv.push_str(&format!("agreement_rate,{k},{v}\n"));
            }
            if let Some(v) = report.angular_error_deg[k - 1] {
                csv.push_str(&format!("angular_error_deg,{k},{v}\n"));
            }
        }
        csv.push_str(&format!("afd_mape,,{}\n", report.afd.mape_percent));
        std::fs::write(path, csv)?;
    }
    println!("metrics -> {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// train / predict

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectPaths {
    pub input: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub train_subjects: Vec<SubjectPaths>,
    pub val_subjects: Vec<SubjectPaths>,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Model checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Write the loss history JSON here.
    #[arg(long)]
    history_out: Option<PathBuf>,
}

fn load_dataset(paths: &SubjectPaths, patch_size: usize) -> Result<RegressionDataset> {
    let input = load_volume(&paths.input)?;
    let target = load_volume(&paths.target)?;
    let mask = match &paths.mask {
        Some(p) => load_mask(p, input.geom.n_voxels())?,
        None => vec![true; input.geom.n_voxels()],
    };
    RegressionDataset::new(input, target, mask, patch_size)
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainFileConfig = read_config(&args.config)?;
    if let Some(seed) = env_seed() {
        cfg.train.seed = seed;
        cfg.model.seed = seed;
    }
    let train_sets: Vec<RegressionDataset> = cfg
        .train_subjects
        .iter()
        .map(|p| load_dataset(p, cfg.train.patch_size))
        .collect::<Result<_>>()?;
    let val_sets: Vec<RegressionDataset> = cfg
        .val_subjects
        .iter()
        .map(|p| load_dataset(p, cfg.train.patch_size))
        .collect::<Result<_>>()?;
    let (model, history) = train(&train_sets, &val_sets, &cfg.model, &cfg.train)?;
    save_model(&args.out, &model)?;
    if let Some(path) = &args.history_out {
        std::fs::write(path, serde_json::to_string_pretty(&history)?)?;
    }
    println!(
        "train: stopped at epoch {}, best validation loss {:.3e} -> {}",
        history.stopped_epoch,
        history.val_loss[history.best_epoch],
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    window: usize,
}

pub fn run_predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let input = load_volume(&args.input)?;
    let mask = match &args.mask {
        Some(p) => Some(load_mask(p, input.geom.n_voxels())?),
        None => None,
    };
    let out = predict_volume(&model, &input, mask.as_deref(), args.window)?;
    store_volume(&args.out, &out)?;
    println!("predict -> {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// experiments

pub enum ExpKind {
    Consistency,
    Ablation,
    AgeShift,
}

#[derive(Args)]
pub struct ExpArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving report.json and metrics.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run_exp(args: ExpArgs, kind: ExpKind) -> Result<()> {
    let seed_override = args.seed.or_else(env_seed);
    let report: ExperimentReport = match kind {
        ExpKind::Consistency => {
            let mut cfg: ConsistencyConfig = read_config(&args.config)?;
            if let Some(seed) = seed_override {
                cfg.cohort.seed = seed;
                cfg.split_seed = seed;
            }
            run_consistency(&cfg)?
        }
        ExpKind::Ablation => {
            let mut cfg: AblationConfig = read_config(&args.config)?;
            if let Some(seed) = seed_override {
                cfg.cohort.seed = seed;
                cfg.subsample_seed = seed;
            }
            run_ablation(&cfg)?
        }
        ExpKind::AgeShift => {
            let mut cfg: AgeShiftConfig = read_config(&args.config)?;
            if let Some(seed) = seed_override {
                cfg.early.seed = seed;
                cfg.late.seed = seed.wrapping_add(1);
                cfg.subsample_seed = seed;
            }
            run_age_shift(&cfg)?
        }
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    std::fs::write(args.out_dir.join("metrics.csv"), report.to_csv())?;
    println!(
        "{}: {} conditions -> {}",
        report.experiment,
        report.conditions.len(),
        report_path.display()
    );
    Ok(())
}
