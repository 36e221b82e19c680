//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints a single PASS/FAIL line; exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chisigma_core::eval::evaluate;
use chisigma_core::identify::{
    count_in_bounds, estimate_volume, RejectionBounds, SearchConfig, VolumeEstimate,
};
use chisigma_core::io::{read_report, EstimateReport, SliceData, Volume4D};
use chisigma_core::model::{estimate_n_mle, estimate_n_moments, estimate_sigma, NoiseSampleSet};
use chisigma_core::specfun::{
    digamma, gamma_p, inv_digamma, inv_gamma_p, ln_gamma, trigamma, ProbLevel,
};
use chisigma_core::synth::{object_mask, simulate, NoiseProfile, PhantomSpec, Simulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn chisigma(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_chisigma"))
        .args(args)
        .env_remove("CHI_SIGMA_THREADS")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "chisigma {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn phantom(n: f64, profile: NoiseProfile, seed: u64) -> Simulation {
    simulate(&PhantomSpec {
        n_true: n,
        profile,
        seed,
        ..PhantomSpec::default()
    })
    .expect("phantom")
}

fn chi_draws(rng: &mut ChaCha8Rng, count: usize, sigma: f64, n: f64) -> Vec<f64> {
    let chi2 = ChiSquared::new(2.0 * n).unwrap();
    (0..count)
        .map(|_| sigma * chi2.sample(rng).sqrt())
        .collect()
}

fn uniform_noise_recovery() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [1u32, 4, 8, 12] {
        let p = |name: &str| dir.path().join(format!("{name}{n}"));
        let (nii, truth, report, eval) = (
            p("data.nii"),
            p("truth.json"),
            p("report.json"),
            p("eval.csv"),
        );
        let s = |path: &Path| path.to_str().unwrap().to_string();
        let n_arg = n.to_string();
        let seed = (100 + n).to_string();
        chisigma(&[
            "simulate",
            "--ncoils",
            &n_arg,
            "--profile",
            "uniform",
            "--seed",
            &seed,
            "--out",
            &s(&nii),
            "--truth",
            &s(&truth),
        ]);
        chisigma(&["estimate", &s(&nii), "--out-report", &s(&report)]);
        chisigma(&[
            "evaluate",
            "--report",
            &s(&report),
            "--truth",
            &s(&truth),
            "--out",
            &s(&eval),
        ]);

        let text = std::fs::read_to_string(&eval).unwrap();
        let rows: Vec<Vec<&str>> = text
            .lines()
            .skip(2)
            .map(|l| l.split(',').collect())
            .collect();
        let pct: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
        let mean = pct.iter().sum::<f64>() / pct.len() as f64;
        let wrong_n = rows
            .iter()
            .filter(|r| r[4].parse::<f64>().unwrap().round() != n as f64)
            .count();
        let converged = rows.iter().filter(|r| r[6] == "true").count();
        let slices = read_report(&report).unwrap().slices.len();
        ok &= mean.abs() < 2.0 && wrong_n == 0 && rows.len() == slices;
        lines.push(format!(
            "N={n}: mean {mean:+.2}%, round(N) wrong on {wrong_n}/{} slices ({converged} converged)",
            rows.len()
        ));
    }
    check(
        ok,
        format!(
            "{} [{:.1} s]",
            lines.join("; "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn spatially_varying_noise() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [1.0, 4.0, 8.0, 12.0] {
        let sim = phantom(n, NoiseProfile::SphereRamp, 200 + n as u64);
        let config = SearchConfig::default();
        let est = estimate_volume(&sim.noisy, &config).unwrap();
        let eval = evaluate(&EstimateReport::new(&config, &sim.noisy, &est), &sim.truth).unwrap();
        let wrong_n = eval.records.iter().filter(|r| r.n_est.round() != n).count();
        ok &= eval.summary.mean.abs() <= 12.0 && wrong_n == 0 && eval.summary.failed.is_empty();
        lines.push(format!(
            "N={n}: mean {:+.2}%, round(N) wrong on {wrong_n}",
            eval.summary.mean
        ));
    }
    check(ok, lines.join("; "))
}

fn estimator_accuracy() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (sigma, n) in [
        (171.0, 1.0),
        (171.0, 4.0),
        (20.0, 8.0),
        (3.5, 12.0),
        (50.0, 2.5),
    ] {
        let set = NoiseSampleSet::new(chi_draws(&mut rng, 100_000, sigma, n)).unwrap();
        let s = estimate_sigma(&set).unwrap();
        let nm = estimate_n_moments(&set, s).unwrap();
        let nl = estimate_n_mle(&set, s).unwrap().n;
        worst.0 = worst.0.max((s / sigma - 1.0).abs());
        worst.1 = worst.1.max((nm / n - 1.0).abs()).max((nl / n - 1.0).abs());
        worst.2 = worst.2.max((nm - nl).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 < 0.01 && worst.1 < 0.02 && worst.2 <= 0.2 && secs < 5.0,
        format!(
            "worst sigma error {:.3}%, worst N error {:.3}%, worst |N_mom - N_mle| {:.4} [{secs:.2} s]",
            100.0 * worst.0,
            100.0 * worst.1,
            worst.2
        ),
    )
}

fn special_functions() -> Outcome {
    let start = Instant::now();
    let text = include_str!("../../core/tests/data/specfun_reference.csv");
    let mut worst = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (a, x, want): (f64, f64, f64) = (
            f[1].parse().unwrap(),
            f[2].parse().unwrap(),
            f[3].parse().unwrap(),
        );
        let (i, err) = match f[0] {
            "ln_gamma" => (0, ((ln_gamma(a).unwrap() - want) / want).abs()),
            "digamma" => (1, ((digamma(a).unwrap() - want) / want).abs()),
            "trigamma" => (2, ((trigamma(a).unwrap() - want) / want).abs()),
            "gamma_p" => (3, (gamma_p(a, x).unwrap() - want).abs()),
            other => panic!("unknown function {other}"),
        };
        worst[i] = worst[i].max(err);
        counts[i] += 1;
    }

    let mut inv_p = 0.0f64;
    for i in 0..40 {
        let a = 10f64.powf(-1.0 + 5.0 * i as f64 / 39.0);
        for j in 0..25 {
            let p = 1e-8 + (1.0 - 2e-8) * j as f64 / 24.0;
            let x = inv_gamma_p(a, ProbLevel::new(p).unwrap()).unwrap();
            inv_p = inv_p.max((gamma_p(a, x).unwrap() - p).abs());
        }
    }
    let mut inv_psi = 0.0f64;
    for i in 0..1000 {
        let y = -20.0 + 40.0 * i as f64 / 999.0;
        inv_psi = inv_psi.max((digamma(inv_digamma(y).unwrap()).unwrap() - y).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let limits = [1e-12, 1e-10, 1e-8, 1e-12];
    let ok = worst.iter().zip(limits).all(|(w, l)| *w <= l)
        && counts.iter().all(|&c| c >= 1000)
        && inv_p <= 1e-10
        && inv_psi <= 1e-10
        && secs < 5.0;
    check(
        ok,
        format!(
            "ln_gamma {:.1e}, digamma {:.1e}, trigamma {:.1e}, gamma_p {:.1e}, P(P^-1) {:.1e}, psi(psi^-1) {:.1e} [{secs:.2} s]",
            worst[0], worst[1], worst[2], worst[3], inv_p, inv_psi
        ),
    )
}

fn unsimplified_sigma_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..5000);
        let n = rng.gen_range(0.5..20.0);
        let sigma = 10f64.powf(rng.gen_range(-2.0..3.0));
        let m = chi_draws(&mut rng, k, sigma, n);
        let kf = k as f64;
        let s2: f64 = m.iter().map(|v| v * v).sum();
        let s4: f64 = m.iter().map(|v| v.powi(4)).sum();
        let oracle = ((kf * s4 - s2 * s2) / s2).sqrt() / (2.0 * kf).sqrt();
        let got = estimate_sigma(&NoiseSampleSet::new(m).unwrap()).unwrap();
        worst = worst.max((got / oracle - 1.0).abs());
    }
    check(
        worst <= 1e-10,
        format!("worst relative difference {worst:.2e} over 1000 sample sets"),
    )
}

fn rejection_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fractions = Vec::new();
    for (n, v) in [(1.0, 1usize), (1.0, 10), (4.0, 30), (12.0, 65)] {
        let sigma = 2.0;
        let draws = chi_draws(&mut rng, 100 * 100 * v, sigma, n);
        let slice = SliceData::new(100, 100, v, draws).unwrap();
        let shape = v as f64 * n;
        let bounds =
            RejectionBounds::for_shapes(shape, shape, ProbLevel::new(0.05).unwrap()).unwrap();
        let (count, _) = count_in_bounds(&slice, sigma, &bounds);
        fractions.push(count as f64 / 1e4);
    }
    let mut inside_worst = 0.0f64;
    for (n, profile) in [
        (1.0, NoiseProfile::Uniform),
        (12.0, NoiseProfile::Uniform),
        (4.0, NoiseProfile::SphereRamp),
    ] {
        let sim = phantom(n, profile, 600 + n as u64);
        let est = estimate_volume(&sim.noisy, &SearchConfig::default()).unwrap();
        let object = object_mask(sim.truth.spec.dims);
        let plane = sim.truth.spec.dims[0] * sim.truth.spec.dims[1];
        let (mut inside, mut total) = (0usize, 0usize);
        for s in &est.slices {
            for (k, &b) in s.mask.bits.iter().enumerate() {
                if b {
                    total += 1;
                    inside += object[s.slice_index * plane + k] as usize;
                }
            }
        }
        inside_worst = inside_worst.max(inside as f64 / total as f64);
    }
    let ok = fractions.iter().all(|f| (f - 0.95).abs() <= 0.02) && inside_worst < 0.01;
    check(
        ok,
        format!(
            "pure-noise fractions {}; worst share of kept voxels inside the object {:.3}%",
            fractions
                .iter()
                .map(|f| format!("{f:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            100.0 * inside_worst
        ),
    )
}

fn same_estimates(
    a: &VolumeEstimate,
    b: &VolumeEstimate,
    sigma_factor: f64,
    tol: f64,
) -> (bool, usize) {
    let mut mask_diff = 0;
    let mut ok = a.slices.len() == b.slices.len();
    for (x, y) in a.slices.iter().zip(&b.slices) {
        ok &= (y.sigma_g / (sigma_factor * x.sigma_g) - 1.0).abs() <= tol;
        ok &= (y.n_dof - x.n_dof).abs() <= tol * x.n_dof;
        mask_diff += x
            .mask
            .bits
            .iter()
            .zip(&y.mask.bits)
            .filter(|(p, q)| p != q)
            .count();
    }
    (ok, mask_diff)
}

fn pipeline_invariances() -> Outcome {
    let spec = PhantomSpec {
        dims: [64, 64, 20],
        n_volumes: 30,
        n_true: 4.0,
        seed: 7,
        ..PhantomSpec::default()
    };
    let sim = simulate(&spec).unwrap();
    let config = SearchConfig::default();
    let base = estimate_volume(&sim.noisy, &config).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    let exact = estimate_volume(&sim.noisy.scaled(4.0).unwrap(), &config).unwrap();
    let (same, diff) = same_estimates(&base, &exact, 4.0, 1e-12);
    ok &= same && diff == 0;
    notes.push(format!("x4 scale: {} mask changes", diff));

    let odd = estimate_volume(&sim.noisy.scaled(0.37).unwrap(), &config).unwrap();
    let (same, diff) = same_estimates(&base, &odd, 0.37, 1e-4);
    let total = base.slices.len() * 64 * 64;
    ok &= same && (diff as f64) < 1e-3 * total as f64;
    notes.push(format!("x0.37 scale: {} mask changes", diff));

    let mut order: Vec<usize> = (0..spec.n_volumes).collect();
    order.reverse();
    order.swap(3, 17);
    let permuted = estimate_volume(&sim.noisy.permute_volumes(&order).unwrap(), &config).unwrap();
    let (same, diff) = same_estimates(&base, &permuted, 1.0, 1e-9);
    ok &= same && diff == 0;
    notes.push(format!("volume permutation: {} mask changes", diff));

    let again = simulate(&spec).unwrap();
    let other = simulate(&PhantomSpec {
        seed: 8,
        ..spec.clone()
    })
    .unwrap();
    let deterministic = again.noisy == sim.noisy && other.noisy != sim.noisy;
    ok &= deterministic;
    notes.push(format!("seed determinism: {deterministic}"));

    let mut threads_equal = true;
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        threads_equal &= pool.install(|| estimate_volume(&sim.noisy, &config).unwrap()) == base;
    }
    let dir = tempfile::tempdir().unwrap();
    let nii = dir.path().join("t.nii");
    chisigma_core::io::write_nifti(&sim.noisy, &nii).unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "auto"] {
        let report = dir.path().join(format!("r{threads}.json"));
        chisigma(&[
            "estimate",
            nii.to_str().unwrap(),
            "--threads",
            threads,
            "--out-report",
            report.to_str().unwrap(),
        ]);
        reports.push(std::fs::read(report).unwrap());
    }
    threads_equal &= reports[0] == reports[1];
    ok &= threads_equal;
    notes.push(format!("thread independence: {threads_equal}"));
    check(ok, notes.join("; "))
}

fn performance() -> Outcome {
    let spec = PhantomSpec {
        dims: [96, 96, 60],
        n_volumes: 83,
        n_true: 4.0,
        seed: 8,
        ..PhantomSpec::default()
    };
    let sim = simulate(&spec).unwrap();
    let data: &Volume4D = &sim.noisy;
    let start = Instant::now();
    let est = estimate_volume(data, &SearchConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed = est.failed_slices().count();
    check(
        secs < 20.0 && failed == 0,
        format!(
            "96x96x60x83 estimated in {secs:.2} s on {} thread(s), {failed} failed slices",
            rayon::current_num_threads()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("uniform-noise recovery", uniform_noise_recovery),
        ("spatially varying noise", spatially_varying_noise),
        ("estimator accuracy", estimator_accuracy),
        ("special functions", special_functions),
        ("unsimplified sigma form", unsimplified_sigma_form),
        ("rejection-bound calibration", rejection_calibration),
        ("pipeline invariances", pipeline_invariances),
        ("performance", performance),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
