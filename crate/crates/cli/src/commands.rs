use std::io::Write;

use chisigma_core::eval::{evaluate as score, write_eval_csv};
use chisigma_core::identify::{estimate_volume, SearchConfig, VolumeEstimate};
use chisigma_core::io::{
    read_nifti, read_report, write_mask, write_nifti, write_report, write_slice_csv, Axis,
    EstimateReport, MaskVolume,
};
use chisigma_core::model::Estimator;
use chisigma_core::specfun::ProbLevel;
use chisigma_core::synth::{
    read_truth, simulate as run_simulation, write_truth, Geometry, NoiseProfile, PhantomSpec,
};

use crate::{
    AxisArg, EstimateArgs, EstimatorArg, EvaluateArgs, Failure, GeometryArg, ProfileArg,
    SimulateArgs,
};

pub const THREADS_ENV: &str = "CHI_SIGMA_THREADS";

/// 0 means one worker per core.
fn parse_threads(raw: &str) -> Result<usize, Failure> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(0);
    }
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Failure::Usage(format!(
            "threads must be a positive integer or 'auto', got '{raw}'"
        ))),
    }
}

fn resolve_threads(flag: Option<&str>) -> Result<usize, Failure> {
    match flag {
        Some(raw) => parse_threads(raw),
        None => match std::env::var(THREADS_ENV) {
            Ok(raw) => parse_threads(&raw),
            Err(_) => Ok(0),
        },
    }
}

fn search_config(args: &EstimateArgs) -> Result<SearchConfig, Failure> {
    let p = ProbLevel::new(args.p).map_err(|e| Failure::Usage(format!("--p: {e}")))?;
    let config = SearchConfig {
        p,
        grid_size: args.grid,
        n_min: args.nmin,
        n_max: args.nmax,
        estimator: match args.estimator {
            EstimatorArg::Moments => Estimator::Moments,
            EstimatorArg::Mle => Estimator::Mle,
        },
        fixed_n: args.fixed_n,
        slice_axis: match args.axis {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        },
        ..SearchConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn print_table(estimate: &VolumeEstimate) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:>5}  {:>12}  {:>8}  {:>10}  {:>5}  status",
        "slice", "sigma_g", "N", "identified", "iters"
    );
    for s in &estimate.slices {
        let status = if s.is_failed() {
            "failed"
        } else if s.converged {
            "ok"
        } else {
            "unconverged"
        };
        let _ = writeln!(
            out,
            "{:>5}  {:>12.4}  {:>8.4}  {:>10}  {:>5}  {status}",
            s.slice_index, s.sigma_g, s.n_dof, s.n_identified, s.outer_iters
        );
    }
    let good: Vec<_> = estimate.slices.iter().filter(|s| !s.is_failed()).collect();
    if let (Some(ms), Some(mn)) = (
        median(good.iter().map(|s| s.sigma_g).collect()),
        median(good.iter().map(|s| s.n_dof).collect()),
    ) {
        let _ = writeln!(
            out,
            "median sigma_g = {ms:.4}, median N = {mn:.4} over {} slices",
            good.len()
        );
    }
}

pub fn estimate(args: EstimateArgs) -> Result<(), Failure> {
    let config = search_config(&args)?;
    let threads = resolve_threads(args.threads.as_deref())?;
    let read = read_nifti(&args.input)?;
    if read.clamped_negative > 0 || read.non_finite > 0 {
        eprintln!(
            "warning: {} negative and {} non-finite voxels were set to 0",
            read.clamped_negative, read.non_finite
        );
    }
    let data = read.volume;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {threads} threads: {e}")))?;
    let estimate = pool.install(|| estimate_volume(&data, &config))?;

    print_table(&estimate);
    let failed: Vec<_> = estimate.failed_slices().collect();
    if !failed.is_empty() {
        eprintln!(
            "warning: {} of {} slices failed:",
            failed.len(),
            estimate.slices.len()
        );
        for s in &failed {
            eprintln!(
                "  slice {}: {}",
                s.slice_index,
                s.failure.as_deref().unwrap_or("unknown")
            );
        }
    }

    let report = EstimateReport::new(&config, &data, &estimate);
    if let Some(path) = &args.out_report {
        write_report(&report, path)?;
    }
    if let Some(path) = &args.out_csv {
        write_slice_csv(&report, path)?;
    }
    if let Some(path) = &args.out_mask {
        let masks: Vec<_> = estimate.slices.iter().map(|s| s.mask.clone()).collect();
        let mask = MaskVolume::from_slices(
            data.spatial_dims(),
            data.spacing(),
            config.slice_axis,
            &masks,
        )?;
        write_mask(&mask, path)?;
    }
    if failed.len() == estimate.slices.len() {
        return Err(Failure::AllSlicesFailed);
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    if !args.ncoils.is_finite() || args.ncoils < 1.0 || args.ncoils.fract() != 0.0 {
        return Err(Failure::Usage(format!(
            "--ncoils must be a positive integer for generation, got {}",
            args.ncoils
        )));
    }
    let spec = PhantomSpec {
        dims: args.dims,
        n_volumes: args.volumes,
        geometry: match args.geometry {
            GeometryArg::Spheres => Geometry::ConcentricSpheres,
            GeometryArg::Ball => Geometry::UniformObject,
        },
        snr: args.snr,
        n_true: args.ncoils,
        profile: match args.profile {
            ProfileArg::Uniform => NoiseProfile::Uniform,
            ProfileArg::Sphere => NoiseProfile::SphereRamp,
        },
        tau_max: args.tau_max,
        seed: args.seed,
        ..PhantomSpec::default()
    };
    let sim = run_simulation(&spec)?;
    write_nifti(&sim.noisy, &args.out)?;
    if let Some(path) = &args.truth {
        write_truth(&sim.truth, path)?;
    }
    println!(
        "wrote {} ({}x{}x{}x{}), sigma_g = {:.4}, N = {}, seed = {}",
        args.out.display(),
        spec.dims[0],
        spec.dims[1],
        spec.dims[2],
        spec.n_volumes,
        sim.truth.sigma_g,
        spec.n_true,
        spec.seed
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let report = read_report(&args.report)?;
    let truth = read_truth(&args.truth)?;
    let eval = score(&report, &truth)?;
    if let Some(path) = &args.out {
        write_eval_csv(&eval, path)?;
    }
    let s = &eval.summary;
    println!(
        "sigma_g percentage error: mean {:.4} ± {:.4} over {} slices",
        s.mean, s.std, s.n_slices
    );
    if let Some(n) = median(eval.records.iter().map(|r| r.n_est).collect()) {
        println!("median N = {n:.4} (true {})", truth.n_true);
    }
    if !s.failed.is_empty() {
        eprintln!("warning: failed slices left out: {:?}", s.failed);
    }
    Ok(())
}
