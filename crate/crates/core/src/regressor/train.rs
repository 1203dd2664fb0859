//! Training loops (Adam with early stopping, closed-form ridge) and
//! sliding-window volume inference.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::model::{l2_loss, Model, ModelSpec};
use super::patches::{sample_patches, RegressionDataset};
use crate::volume::ChannelVolume;
use crate::{Error, Result};

/// Training schedule. One gradient step is taken per sampled patch (batch
/// size one patch); `patches_per_subject` patches are drawn per training
/// subject per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub patches_per_subject: usize,
    pub patch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            patches_per_subject: 128,
            patch_size: 16,
            patience: 10,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 || self.patches_per_subject == 0 {
            return Err(Error::InvalidArgument(
                "epochs and patches per subject must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch losses and stopping bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

fn gather_columns(volume: &ChannelVolume, voxels: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(volume.channels, voxels.len());
    for (c, &v) in voxels.iter().enumerate() {
        for r in 0..volume.channels {
            m[(r, c)] = volume.voxel(v)[r];
        }
    }
    m
}

fn masked_loss(model: &Model, datasets: &[RegressionDataset]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ds in datasets {
        let voxels: Vec<usize> = (0..ds.mask.len()).filter(|&v| ds.mask[v]).collect();
        if voxels.is_empty() {
            continue;
        }
        let x = gather_columns(&ds.input, &voxels);
        let y = gather_columns(&ds.target, &voxels);
        let pred = model.forward(&x)?;
        let n = voxels.len() * ds.target.channels;
        total += l2_loss(&pred, &y) * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyDataset("no masked voxels across datasets".into()));
    }
    Ok(total / count as f64)
}

/// Trains with Adam: per epoch, `patches_per_subject` random patches per
/// training subject, one gradient step per patch; early stopping on the
/// validation loss with best-weight restoration. Serial and fully
/// reproducible per seed.
pub fn train(
    train_sets: &[RegressionDataset],
    val_sets: &[RegressionDataset],
    model_spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train_sets.is_empty() || val_sets.is_empty() {
        return Err(Error::EmptyDataset(
            "training and validation sets must both be non-empty".into(),
        ));
    }
    let input_dim = train_sets[0].input.channels;
    let output_dim = train_sets[0].target.channels;
    for ds in train_sets.iter().chain(val_sets) {
        if ds.input.channels != input_dim || ds.target.channels != output_dim {
            return Err(Error::InvalidArgument(
                "datasets disagree on input/target channel counts".into(),
            ));
        }
    }

    let mut model = Model::new(model_spec.clone(), input_dim, output_dim)?;
    let mut adam = AdamState::new(&model);
    let params = AdamParams { learning_rate: cfg.learning_rate, ..AdamParams::default() };
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d0d0);

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
    };
    let mut best: Option<(f64, Model)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for (si, ds) in train_sets.iter().enumerate() {
            let patch_seed = cfg
                .seed
                .wrapping_add(epoch as u64)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(si as u64);
            let origins = sample_patches(ds, cfg.patches_per_subject, patch_seed)?;
            for origin in origins {
                let voxels = ds.patch_voxels(origin);
                if voxels.is_empty() {
                    continue;
                }
                let x = gather_columns(&ds.input, &voxels);
                let y = gather_columns(&ds.target, &voxels);
                let trace = model.forward_train(&x, &mut dropout_rng)?;
                let loss = l2_loss(trace.activations.last().unwrap(), &y);
                if !loss.is_finite() {
                    return Err(Error::AbortedTraining(format!(
                        "non-finite loss at epoch {epoch}"
                    )));
                }
                let grads = model.backward(&trace, &y);
                adam_step(&mut model, &grads, &mut adam, &params);
                epoch_loss += loss;
                epoch_steps += 1;
            }
        }
        history
            .train_loss
            .push(epoch_loss / epoch_steps.max(1) as f64);

        let val = masked_loss(&model, val_sets)?;
        if !val.is_finite() {
            return Err(Error::AbortedTraining(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        history.val_loss.push(val);

        let improved = best.as_ref().map(|(b, _)| val < *b).unwrap_or(true);
        if improved {
            best = Some((val, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_epoch = epoch;
                let (_, best_model) = best.take().expect("an epoch has completed");
                return Ok((best_model, history));
            }
        }
        history.stopped_epoch = epoch;
    }
    let (_, best_model) = best.take().expect("at least one epoch ran");
    Ok((best_model, history))
}

/// Closed-form ridge regression over all masked training voxels:
/// `W = Y X' (X X' + lambda I)^{-1}` with an appended bias feature. Returns
/// a linear model; far cheaper than iterative training for the volume-scale
/// experiments.
pub fn fit_ridge(
    train_sets: &[RegressionDataset],
    lambda: f64,
    seed: u64,
) -> Result<Model> {
    if train_sets.is_empty() {
        return Err(Error::EmptyDataset("no training datasets".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("ridge lambda must be >= 0".into()));
    }
    let d_in = train_sets[0].input.channels;
    let d_out = train_sets[0].target.channels;
    let da = d_in + 1; // bias feature
    let mut gram = DMatrix::<f64>::zeros(da, da);
    let mut cross = DMatrix::<f64>::zeros(d_out, da);
    let mut count = 0usize;
    let mut xa = DVector::<f64>::zeros(da);
    for ds in train_sets {
        if ds.input.channels != d_in || ds.target.channels != d_out {
            return Err(Error::InvalidArgument(
                "datasets disagree on channel counts".into(),
            ));
        }
        for v in 0..ds.mask.len() {
            if !ds.mask[v] {
                continue;
            }
            let x = ds.input.voxel(v);
            for r in 0..d_in {
                xa[r] = x[r];
            }
            xa[d_in] = 1.0;
            let y = ds.target.voxel(v);
            gram.syger(1.0, &xa, &xa, 1.0);
            for r in 0..d_out {
                for c in 0..da {
                    cross[(r, c)] += y[r] * xa[c];
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset("no masked voxels across datasets".into()));
    }
    // syger touches the lower triangle only; mirror it.
    for r in 0..da {
        for c in (r + 1)..da {
            gram[(r, c)] = gram[(c, r)];
        }
    }
    let effective_lambda = if lambda == 0.0 { 1e-10 * count as f64 } else { lambda };
    for i in 0..da {
        gram[(i, i)] += effective_lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::IllConditioned { cond: f64::INFINITY })?;
    // Solve (X X' + l I) W' = X Y' column-block by block.
    let wt = chol.solve(&cross.transpose());
    let mut model = Model::new(ModelSpec::linear(seed), d_in, d_out)?;
    let w = wt.transpose();
    model.layers[0].weights = w.view((0, 0), (d_out, d_in)).into_owned();
    model.layers[0].bias = w.column(d_in).into_owned();
    Ok(model)
}

/// Sliding-window inference: windows tile the volume (edge windows clamped
/// to fit), voxel-wise predictions are averaged uniformly over overlapping
/// windows, and every masked voxel receives exactly one value set.
pub fn predict_volume(
    model: &Model,
    input: &ChannelVolume,
    mask: Option<&[bool]>,
    window: usize,
) -> Result<ChannelVolume> {
    if input.channels != model.input_dim {
        return Err(Error::InvalidArgument(format!(
            "input volume has {} channels, model expects {}",
            input.channels, model.input_dim
        )));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let dims = input.geom.dims;
    let extent = [
        window.min(dims[0]),
        window.min(dims[1]),
        window.min(dims[2]),
    ];
    let mut sums = ChannelVolume::zeros(input.geom, model.output_dim);
    let mut hits = vec![0u32; input.geom.n_voxels()];

    let starts = |dim: usize, e: usize| -> Vec<usize> {
        let mut s: Vec<usize> = (0..dim.saturating_sub(e - 1)).step_by(e).collect();
        let last = dim - e;
        if *s.last().unwrap_or(&0) != last {
            s.push(last);
        }
        s
    };

    for &z0 in &starts(dims[2], extent[2]) {
        for &y0 in &starts(dims[1], extent[1]) {
            for &x0 in &starts(dims[0], extent[0]) {
                let mut voxels = Vec::new();
                for z in z0..z0 + extent[2] {
                    for y in y0..y0 + extent[1] {
                        for x in x0..x0 + extent[0] {
                            let idx = input.geom.linear_index(x, y, z);
                            if mask.map(|m| m[idx]).unwrap_or(true) {
                                voxels.push(idx);
                            }
                        }
                    }
                }
                if voxels.is_empty() {
                    continue;
                }
                let x = gather_columns(input, &voxels);
                let pred = model.forward(&x)?;
                for (c, &v) in voxels.iter().enumerate() {
                    let dst = sums.voxel_mut(v);
                    for r in 0..model.output_dim {
                        dst[r] += pred[(r, c)];
                    }
                    hits[v] += 1;
                }
            }
        }
    }
    for v in 0..input.geom.n_voxels() {
        if hits[v] > 1 {
            let inv = 1.0 / hits[v] as f64;
            for val in sums.voxel_mut(v) {
                *val *= inv;
            }
        }
    }
    Ok(sums)
}
