//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use noisylmi::conset::*;
use noisylmi::linalg::{lambda_max, lambda_min, sigma_max, spectral_radius};
use noisylmi::matfact::{check_inclusion, construct_factor, InclusionInstance, DEFAULT_INCLUSION_TOL, DEFAULT_RANK_TOL};
use noisylmi::rng::rng_from_seed;
use noisylmi::sdp::{SolveStatus, SolverSettings};
use noisylmi::simkit::*;
use noisylmi::synth::*;
use noisylmi_cli::commands;
use noisylmi_cli::config::{RunConfig, SweepSpec};
use noisylmi_cli::sweep::{run_sweep, CSV_HEADER};
use rand::Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- oracles

/// Infinite-horizon LQR gain (`u = K x`) by Riccati iteration.
fn lqr(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut p = DMatrix::<f64>::identity(n, n);
    for _ in 0..20000 {
        let r = DMatrix::<f64>::identity(m, m) + b.transpose() * &p * b;
        let gain = r.try_inverse().unwrap() * b.transpose() * &p * a;
        let next = DMatrix::<f64>::identity(n, n) + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let done = (&next - &p).abs().max() < 1e-13 * next.abs().max();
        p = (&next + next.transpose()) * 0.5;
        if done {
            break;
        }
    }
    let r = DMatrix::<f64>::identity(m, m) + b.transpose() * &p * b;
    -(r.try_inverse().unwrap() * b.transpose() * &p * a)
}

/// Solves `F P Fᵀ − P = −Q` through the Kronecker form.
fn dlyap(f: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - f.kronecker(f);
    let x = lhs.lu().solve(&DVector::from_column_slice(q.as_slice())).unwrap();
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    (&p + p.transpose()) * 0.5
}

fn closed_loop(z: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    z.columns(0, n) + z.columns(n, z.ncols() - n) * k
}

/// `[I −Z]`.
fn error_map(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut w = DMatrix::zeros(n, n + z.ncols());
    w.view_mut((0, 0), (n, n)).fill_with_identity();
    w.view_mut((0, n), (n, z.ncols())).copy_from(&(-z));
    w
}

/// Energy-set membership straight from the data equation:
/// `(X₁ − ZR)(X₁ − ZR)ᵀ ⪯ [I −Z] Θ [I −Z]ᵀ`. Returns the scaled excess.
fn energy_excess(data: &DataMatrices, theta: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let r = data.regressor();
    let res = &data.x1m - z * &r;
    let w = error_map(z);
    let gap = &res * res.transpose() - &w * theta * w.transpose();
    let scale = 1.0 + data.x1m.norm_squared() + z.norm_squared() * r.norm_squared();
    lambda_max(&((&gap + gap.transpose()) * 0.5)) / scale
}

/// Largest `r(k)ᵀ (I + ZZᵀ)⁻¹ r(k) / θ` over the data, the squared norm of
/// the smallest stacked error explaining each step, relative to `θ`.
fn inst_ratio(data: &DataMatrices, theta: f64, z: &DMatrix<f64>) -> f64 {
    let n = z.nrows();
    let g = DMatrix::<f64>::identity(n, n) + z * z.transpose();
    let ginv = g.try_inverse().unwrap();
    let r = data.regressor();
    (0..data.horizon())
        .map(|k| {
            let res = data.x1m.column(k) - z * r.column(k);
            (res.transpose() * &ginv * &res)[(0, 0)] / theta
        })
        .fold(0.0, f64::max)
}

fn noisy_data(seed: u64, n: usize, m: usize, t: usize, ebar: f64, rho: f64) -> (PlantModel, DataMatrices, NoiseModel) {
    let plant = PlantModel::random(n, m, rho, seed);
    let noise = NoiseModel::new(ebar, ebar, NoiseDistribution::UniformBall).unwrap();
    let traj = simulate_experiment(&plant, &DVector::zeros(n), 1.0, t, &noise, seed.wrapping_mul(31)).unwrap();
    (plant, assemble(&traj), noise)
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- criteria

fn factorization_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = rng_from_seed(2024);
    let (mut holds_count, mut inside_count) = (0, 0);
    for i in 0..1000 {
        let n1 = rng.random_range(1..=6);
        let n2 = rng.random_range(1..=6);
        let n3 = rng.random_range(1..=6);
        let rank_g = rng.random_range(0..=n3);
        let rank_f = rng.random_range(1..=n1.min(n3));
        let kind = i % 3;
        let h = gaussian_matrix(&mut rng, n3, rank_g);
        let g = &h * h.transpose();
        let f = gaussian_matrix(&mut rng, n1, rank_f) * gaussian_matrix(&mut rng, rank_f, n3);
        let e = match kind {
            // E = F H C with ‖C‖ = 0.8 satisfies E Eᵀ ⪯ F G Fᵀ by construction
            0 | 1 => {
                let c = gaussian_matrix(&mut rng, rank_g, n2);
                let s = sigma_max(&c);
                let c = if s > 0.0 { c * ((if kind == 0 { 0.8 } else { 1.3 }) / s) } else { c };
                &f * &h * c
            }
            _ => gaussian_matrix(&mut rng, n1, n2),
        };
        let inst = InclusionInstance::new(e.clone(), f.clone(), g.clone()).map_err(|e| e.to_string())?;
        let holds = check_inclusion(&inst, DEFAULT_INCLUSION_TOL);
        if kind == 0 {
            inside_count += 1;
            ensure!(holds, "instance {i}: inclusion holds by construction but was rejected");
        }
        holds_count += holds as usize;
        match construct_factor(&inst, DEFAULT_RANK_TOL) {
            Ok(res) => {
                ensure!(holds, "instance {i}: factor constructed although the inclusion fails");
                let d = &res.d;
                let fit = (&f * d - &e).norm();
                ensure!(fit <= 1e-8 * (1.0 + e.norm()), "instance {i}: |FD - E| = {fit:e}");
                let slack = lambda_max(&(d * d.transpose() - &g));
                let gmax = if g.nrows() > 0 { lambda_max(&g) } else { 0.0 };
                ensure!(slack <= 1e-8 * (1.0 + gmax), "instance {i}: lambda_max(DD' - G) = {slack:e}");
            }
            Err(err) => ensure!(!holds, "instance {i}: inclusion holds but construction failed: {err}"),
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "runtime {elapsed:?} exceeds 10 s");
    Ok(format!(
        "1000 instances ({holds_count} with inclusion, {inside_count} by construction), {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn set_correctness() -> Check {
    let mut rng = rng_from_seed(77);
    let dists = [NoiseDistribution::UniformBall, NoiseDistribution::UniformSphere, NoiseDistribution::TruncatedGaussian];
    let (mut ball_samples, mut inst_members, mut redrawn) = (0usize, 0usize, 0usize);
    let mut worst_q = f64::INFINITY;
    let mut draw = 0u64;
    for e in 0..50u64 {
        // experiments whose data fail the signal-to-noise condition have no
        // ellipsoid; they are redrawn and counted
        let (plant, data, theta, eb, set, n, m) = loop {
            draw += 1;
            let n = rng.random_range(1..=5);
            let m = rng.random_range(1..=3);
            let t = rng.random_range((3 * (n + m)).max(20)..=100);
            let ebar = 10f64.powf(rng.random_range(-6.0..-3.0));
            let rho = rng.random_range(0.5..1.1);
            let plant = PlantModel::random(n, m, rho, 500 + draw);
            let noise = NoiseModel::new(ebar, ebar, dists[draw as usize % 3]).unwrap();
            let traj = simulate_experiment(&plant, &DVector::zeros(n), 1.0, t, &noise, 900 + draw).map_err(|e| e.to_string())?;
            let data = assemble(&traj);
            let theta = noise.stacked_bound();
            let eb = InstantaneousBound::new(theta).unwrap().to_energy(t, n, m);
            match build_energy_set(&data, &eb, DEFAULT_ASSUMPTION_TOL) {
                Ok(set) => break (plant, data, theta, eb, set, n, m),
                Err(noisylmi::Error::AssumptionViolated { .. }) => redrawn += 1,
                Err(err) => return Err(format!("experiment {e} (n={n}, m={m}, T={t}): {err}")),
            }
        };
        let ib = InstantaneousBound::new(theta).unwrap();
        let z = plant.stacked();
        ensure!(membership_energy(&set, &z, DEFAULT_MEMBERSHIP_TOL), "experiment {e}: true plant outside the energy set");
        ensure!(membership_inst(&data, &ib, &z, DEFAULT_MEMBERSHIP_TOL), "experiment {e}: true plant outside the instantaneous set");
        ensure!(energy_excess(&data, eb.theta(), &z) <= 1e-8, "experiment {e}: oracle rejects the true plant");
        let qmin = lambda_min(&set.qscr);
        worst_q = worst_q.min(qmin);
        ensure!(qmin >= -1e-8, "experiment {e}: lambda_min(Q) = {qmin:e}");

        for s in 0..200 {
            let mode = if s % 2 == 0 { SampleMode::Boundary } else { SampleMode::Interior };
            let zs = sample_energy(&set, mode, &mut rng);
            ensure!(membership_energy(&set, &zs, DEFAULT_MEMBERSHIP_TOL), "experiment {e}: sample {s} rejected");
            let excess = energy_excess(&data, eb.theta(), &zs);
            ensure!(excess <= 1e-8, "experiment {e}: oracle excess {excess:e} for sample {s}");
            ball_samples += 1;
        }

        // instantaneous members found by perturbing the true plant
        let mut found = 0;
        for attempt in 0..4000 {
            if found == 2 || inst_members >= 100 {
                break;
            }
            let dir = gaussian_matrix(&mut rng, n, n + m);
            let radius = set.radius_bound() * 0.5f64.powi(attempt % 24) * rng.random::<f64>();
            let cand = &z + &dir * (radius / sigma_max(&dir).max(1e-300));
            if inst_ratio(&data, theta, &cand) < 1.0 - 1e-9 {
                found += 1;
                inst_members += 1;
                let excess = energy_excess(&data, eb.theta(), &cand);
                ensure!(excess <= 1e-8, "experiment {e}: instantaneous member outside the energy set ({excess:e})");
                ensure!(membership_energy(&set, &cand, DEFAULT_MEMBERSHIP_TOL), "experiment {e}: library rejects an instantaneous member");
            }
        }
    }
    ensure!(inst_members >= 100, "only {inst_members} instantaneous members found");
    Ok(format!(
        "50 experiments ({redrawn} redrawn for the signal-to-noise condition), {ball_samples} unit-ball samples, \
         {inst_members} instantaneous members, min lambda(Q) = {worst_q:.2e}"
    ))
}

fn energy_round_trip() -> Check {
    let settings = SolverSettings { feas_tol: 1e-8, margin: 1e-6, ..SolverSettings::default() };
    let (mut feasible, mut failures) = (0, 0);
    for s in 0..20u64 {
        let (n, m) = (2 + (s % 2) as usize, 1 + (s % 3 == 0) as usize);
        let (plant, data, noise) = noisy_data(1000 + s, n, m, 50, 5e-5, 1.05);
        let bound = inst_to_energy(noise.e_x_bound, noise.e_u_bound, 50, n, m);
        let set = build_energy_set(&data, &bound, DEFAULT_ASSUMPTION_TOL).map_err(|e| format!("instance {s}: {e}"))?;
        let out = synthesize_energy(&set, &settings).map_err(|e| e.to_string())?;
        if out.status == SolveStatus::NumericalFailure {
            failures += 1;
        }
        let Some(cert) = out.certificate else { continue };
        feasible += 1;
        let rho = spectral_radius(&closed_loop(&plant.stacked(), &cert.k));
        ensure!(rho < 1.0, "instance {s}: true closed loop has rho = {rho}");
        ensure!(verify_energy_certificate(&set, &cert.k, &cert.p, DEFAULT_VERIFY_TOL), "instance {s}: multiplier search failed");
        let rep = verify_by_sampling(SampleSource::Energy(&set), &cert.k, &cert.p, 500, s).map_err(|e| e.to_string())?;
        ensure!(rep.checked == 500 && rep.passed(), "instance {s}: sampling {rep:?}");
    }
    ensure!(feasible >= 10, "only {feasible} of 20 instances feasible");

    // model-based certificates on the singleton set
    for s in 0..10u64 {
        let (n, m) = (2 + (s % 3) as usize, 1 + (s % 2) as usize);
        let plant = PlantModel::random(n, m, 1.2, 1100 + s);
        let traj = simulate_experiment(&plant, &DVector::zeros(n), 1.0, 20, &NoiseModel::noise_free(), s).map_err(|e| e.to_string())?;
        let data = assemble(&traj);
        let d = 2 * n + m;
        let set = build_energy_set(&data, &EnergyBound::new(DMatrix::zeros(d, d), n, m).unwrap(), 1e-10).map_err(|e| e.to_string())?;
        let k = lqr(&plant.a, &plant.b);
        let acl = closed_loop(&plant.stacked(), &k);
        ensure!(spectral_radius(&acl) < 1.0, "plant {s}: LQR oracle failed");
        let p = dlyap(&acl, &DMatrix::identity(n, n));
        ensure!(verify_energy_certificate(&set, &k, &p, DEFAULT_VERIFY_TOL), "plant {s}: model-based certificate rejected");
        let out = synthesize_energy(&set, &settings).map_err(|e| e.to_string())?;
        ensure!(out.is_feasible(), "plant {s}: program infeasible on the singleton set: {}", out.diagnostics.message);
    }
    Ok(format!("{feasible}/20 feasible, all verified; {failures} numerical failures; 10/10 singleton sets feasible"))
}

fn instantaneous_soundness() -> Check {
    let settings = SolverSettings::default();
    let (mut feasible, mut failures) = (0, 0);
    for s in 0..20u64 {
        let (n, m) = (2 + (s % 2) as usize, 1 + (s % 3 == 0) as usize);
        let (plant, data, noise) = noisy_data(2000 + s, n, m, 30, 1e-4, 1.05);
        let bound = InstantaneousBound::new(noise.stacked_bound()).unwrap();
        let out = synthesize_inst(&data, &bound, &settings).map_err(|e| e.to_string())?;
        if out.status == SolveStatus::NumericalFailure {
            failures += 1;
        }
        let Some(cert) = out.certificate else { continue };
        feasible += 1;
        let (rho, dec) = closed_loop_check(&plant.stacked(), &cert.k, &cert.p);
        ensure!(rho < 1.0 && dec < 0.0, "instance {s}: true plant rho = {rho}, decrease = {dec:e}");
        let taus = cert.taus.as_ref().unwrap();
        ensure!(verify_inst_necessary(taus, &data, &bound, DEFAULT_VERIFY_TOL), "instance {s}: necessary condition fails");
        let rep = verify_by_sampling(SampleSource::Instantaneous(&data, &bound), &cert.k, &cert.p, 100, s).map_err(|e| e.to_string())?;
        ensure!(rep.checked > 0 && rep.passed(), "instance {s}: sampling {rep:?}");
    }
    ensure!(feasible >= 10, "only {feasible} of 20 instances feasible");

    let grid: Vec<f64> = (0..10).map(|i| 1e-6 * 10f64.powf(i as f64 / 2.0)).collect();
    let mut flips = Vec::new();
    for s in 0..6u64 {
        let (_, data, _) = noisy_data(2100 + s, 2, 1, 30, 1e-4, 1.05);
        let mut pattern = Vec::new();
        for &theta in &grid {
            let out = synthesize_inst(&data, &InstantaneousBound::new(theta).unwrap(), &settings).map_err(|e| e.to_string())?;
            ensure!(out.status != SolveStatus::NumericalFailure, "data {s}, theta {theta:e}: numerical failure");
            pattern.push(out.is_feasible());
        }
        let first_fail = pattern.iter().position(|f| !f).unwrap_or(pattern.len());
        ensure!(pattern[first_fail..].iter().all(|f| !f), "data {s}: feasibility not monotone {pattern:?}");
        flips.push(first_fail);
    }
    Ok(format!(
        "{feasible}/20 feasible, all sound; {failures} numerical failures; monotone on 6 data sets (first infeasible grid index {flips:?})"
    ))
}

fn surrogate_sweep() -> Check {
    let path = repo_root().join("configs/surrogate.toml");
    let mut cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    if let Some(s) = &mut cfg.sweep {
        s.trials = 5;
        s.t_grid = SweepSpec::default_t_grid();
        s.theta_grid = SweepSpec::default_theta_grid();
    }
    let spec = SweepSpec::from_config(&cfg).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let table = run_sweep(&spec).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let cells = table.cells.len();
    let dominated = table.cells.iter().filter(|c| c.n_feas_inst >= c.n_feas_energy).count();
    let errors: usize = table.cells.iter().map(|c| c.n_error).sum();
    let tol = 1.0 / spec.trials as f64 + 1e-12;
    let mut violations = Vec::new();
    for (ti, t) in table.t_grid.iter().enumerate() {
        for (name, energy) in [("energy", true), ("inst", false)] {
            let r = &table.ratios(energy)[ti];
            for i in 0..r.len() {
                for j in i + 1..r.len() {
                    if r[j] > r[i] + tol {
                        violations.push(format!("{name} T={t} theta {:e} -> {:e}", table.theta_grid[i], table.theta_grid[j]));
                    }
                }
            }
        }
    }
    println!("    sweep ratios (energy/inst), rows T, columns theta ascending:");
    for (ti, t) in table.t_grid.iter().enumerate() {
        let row: Vec<String> = (0..table.theta_grid.len())
            .map(|thi| {
                let c = table.cell(ti, thi);
                format!("{}/{}", c.n_feas_energy, c.n_feas_inst)
            })
            .collect();
        println!("    T={t:>3}  {}", row.join("  "));
    }
    ensure!(dominated * 10 >= cells * 9, "dominance in {dominated}/{cells} cells");
    ensure!(violations.is_empty(), "ratios increase with theta: {violations:?}");
    ensure!(elapsed < Duration::from_secs(15 * 60), "runtime {elapsed:?}");
    Ok(format!(
        "dominance in {dominated}/{cells} cells, monotone within one trial, {errors} errored trials, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn noise_free_degeneration() -> Check {
    let mut worst_z: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    for s in 0..6u64 {
        let (n, m) = (2 + (s % 3) as usize, 1 + (s % 2) as usize);
        let plant = PlantModel::random(n, m, 1.2, 3000 + s);
        let traj = simulate_experiment(&plant, &DVector::zeros(n), 1.0, 25, &NoiseModel::noise_free(), s).map_err(|e| e.to_string())?;
        let data = assemble(&traj);
        let d = 2 * n + m;
        let set = build_energy_set(&data, &EnergyBound::new(DMatrix::zeros(d, d), n, m).unwrap(), 1e-10).map_err(|e| e.to_string())?;
        let z = plant.stacked();
        let zerr = (&set.zscr - &z).norm() / z.norm();
        let qmax = set.qscr.abs().max();
        worst_z = worst_z.max(zerr);
        worst_q = worst_q.max(qmax);
        ensure!(zerr <= 1e-8, "plant {s}: center error {zerr:e}");
        ensure!(qmax <= 1e-10, "plant {s}: |Q| = {qmax:e}");
        let out = synthesize_energy(&set, &SolverSettings::default()).map_err(|e| e.to_string())?;
        let cert = out.certificate.ok_or_else(|| format!("plant {s}: energy program {}", out.status))?;
        let rho_data = spectral_radius(&closed_loop(&z, &cert.k));
        let rho_model = spectral_radius(&closed_loop(&z, &lqr(&plant.a, &plant.b)));
        ensure!(rho_data < 1.0 && rho_model < 1.0, "plant {s}: rho data {rho_data}, model {rho_model}");
    }
    Ok(format!("6 plants, max center error {worst_z:.1e}, max |Q| {worst_q:.1e}, both designs stabilize"))
}

fn run_bin(args: &[&str], threads: &str) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_noisylmi"))
        .args(args)
        .env("NOISYLMI_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())
}

fn determinism_and_formats() -> Check {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let surrogate = repo_root().join("configs/surrogate.toml");
    let base = std::fs::read_to_string(&surrogate).map_err(|e| e.to_string())?;
    let small = base
        .replace("t_grid = [20, 40, 60, 80, 100, 120, 140, 160, 180, 200]", "t_grid = [40, 100]")
        .replace("trials = 20", "trials = 2");
    let cfg_path = dir.join("small.toml");
    std::fs::write(&cfg_path, small).map_err(|e| e.to_string())?;
    let cfg = cfg_path.to_str().unwrap();

    let mut records = Vec::new();
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let out = dir.join(format!("run{i}"));
        let o = run_bin(&["synth", "--config", cfg, "--out", out.to_str().unwrap()], threads)?;
        ensure!(o.status.code() == Some(0), "synth exit {:?}", o.status.code());
        // the output directory is echoed, so compare runs written to the same place
        records.push(std::fs::read(out.join(commands::RECORD_FILE)).map_err(|e| e.to_string())?);
        let o = run_bin(&["sweep", "--config", cfg, "--out", dir.join("sweep").to_str().unwrap()], threads)?;
        ensure!(o.status.code() == Some(0), "sweep exit {:?}", o.status.code());
        csvs.push(std::fs::read_to_string(dir.join("sweep").join(commands::SWEEP_FILE)).map_err(|e| e.to_string())?);
    }
    let strip = |r: &[u8], i: usize| String::from_utf8_lossy(r).replace(&format!("run{i}"), "run");
    ensure!(strip(&records[0], 0) == strip(&records[1], 1), "run records differ between runs");
    ensure!(csvs[0] == csvs[1], "sweep CSVs differ between runs");

    // same directory, same bytes
    let again = dir.join("run0");
    let o = run_bin(&["synth", "--config", cfg, "--out", again.to_str().unwrap()], "2")?;
    ensure!(o.status.code() == Some(0), "synth exit {:?}", o.status.code());
    ensure!(std::fs::read(again.join(commands::RECORD_FILE)).map_err(|e| e.to_string())? == records[0], "record not byte-identical");

    // golden header and row format
    const GOLDEN: &str = "T,theta,trials,n_feas_energy,n_feas_inst,ratio_energy,ratio_inst,n_error";
    ensure!(CSV_HEADER == GOLDEN, "header constant changed");
    let mut lines = csvs[0].lines();
    ensure!(lines.next() == Some(GOLDEN), "CSV header mismatch");
    let rows: Vec<&str> = lines.collect();
    ensure!(rows.len() == 14, "expected 14 rows, found {}", rows.len());
    for row in &rows {
        let f: Vec<&str> = row.split(',').collect();
        ensure!(f.len() == 8, "row '{row}'");
        ensure!(f[1].contains('e') && f[1].parse::<f64>().is_ok(), "theta not in scientific notation: '{row}'");
        for r in [f[5], f[6]] {
            ensure!(r.len() == 5 && r.as_bytes()[1] == b'.', "ratio not in 0.000 form: '{row}'");
        }
    }
    ensure!(rows[0].starts_with("40,1e-6,2,"), "first row '{}'", rows[0]);
    Ok("records and sweep CSV byte-identical across runs and thread counts; golden header and row format".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("1 factorization equivalence", factorization_equivalence),
        ("2 consistency-set correctness", set_correctness),
        ("3 energy-bound round trip", energy_round_trip),
        ("4 instantaneous-bound soundness and monotonicity", instantaneous_soundness),
        ("5 surrogate sweep dominance and trends", surrogate_sweep),
        ("6 noise-free degeneration", noise_free_degeneration),
        ("7 determinism and formats", determinism_and_formats),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why}) [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
