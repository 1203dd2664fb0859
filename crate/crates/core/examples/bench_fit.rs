use fodkit_core::csd::{fit_volume, FitMethod, SolverConfig};
use fodkit_core::forward_model::{generate_phantom, PhantomSpec, ResponseSet, TissueParams};
use fodkit_core::sphere_sh::{GradientTable, ShBasisSpec};
use std::time::Instant;

fn main() {
    let full = GradientTable::synthetic(&[(0.0, 20), (400.0, 64), (1000.0, 88), (2600.0, 128)])
        .unwrap();
    let ss3t_idx: Vec<usize> = full
        .b0_indices()
        .into_iter()
        .chain(full.shell_indices(1000.0, 10.0))
        .collect();
    let spec = PhantomSpec { dims: [8, 8, 4], snr: Some(20.0), seed: 7, ..PhantomSpec::default() };
    let phantom = generate_phantom(&spec, &full).unwrap();
    let params = TissueParams::default();
    let responses = ResponseSet::from_tissue_params(&params, &full, 8).unwrap();
    let basis = ShBasisSpec::new(8).unwrap();
    let cfg = SolverConfig::default();

    let t0 = Instant::now();
    let r = fit_volume(&phantom, FitMethod::Msmt, &responses, basis, &cfg, None).unwrap();
    println!(
        "msmt: {} voxels in {:?} ({:.1} ms/voxel), mean iters {:.1}, failures {}",
        r.n_fitted,
        t0.elapsed(),
        t0.elapsed().as_secs_f64() * 1000.0 / r.n_fitted as f64,
        r.mean_solver_iterations,
        r.failures.len()
    );

    let ss3t_vol = phantom.subset_measurements(&ss3t_idx).unwrap();
    let t0 = Instant::now();
    let r = fit_volume(&ss3t_vol, FitMethod::Ss3t, &responses, basis, &cfg, None).unwrap();
    println!(
        "ss3t: {} voxels in {:?} ({:.1} ms/voxel), mean outer iters {:.1}, failures {}",
        r.n_fitted,
        t0.elapsed(),
        t0.elapsed().as_secs_f64() * 1000.0 / r.n_fitted as f64,
        r.mean_solver_iterations,
        r.failures.len()
    );
}
