use nalgebra::{DMatrix, DVector};
use noisylmi::conset::*;
use noisylmi::linalg::{lambda_min, spectral_radius};
use noisylmi::sdp::{SolveStatus, SolverSettings};
use noisylmi::simkit::*;
use noisylmi::synth::*;

/// Infinite-horizon LQR gain (`u = K x`) by Riccati iteration.
fn lqr(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut p = DMatrix::<f64>::identity(n, n);
    for _ in 0..5000 {
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
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = lhs.lu().solve(&rhs).unwrap();
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    (&p + p.transpose()) * 0.5
}

fn closed_loop(z: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    z.columns(0, n) + z.columns(n, z.ncols() - n) * k
}

fn noisy_data(seed: u64, n: usize, m: usize, t: usize, ebar: f64) -> (PlantModel, DataMatrices, NoiseModel) {
    let plant = PlantModel::random(n, m, 1.05, seed);
    let noise = NoiseModel::new(ebar, ebar, NoiseDistribution::UniformBall).unwrap();
    let traj = simulate_experiment(&plant, &DVector::zeros(n), 1.0, t, &noise, seed.wrapping_mul(31)).unwrap();
    (plant, assemble(&traj), noise)
}

#[test]
fn model_based_certificates_verify_on_the_noise_free_set() {
    for seed in 0..5 {
        let plant = PlantModel::random(3, 2, 1.3, 100 + seed);
        let traj = simulate_experiment(&plant, &DVector::zeros(3), 1.0, 15, &NoiseModel::noise_free(), seed).unwrap();
        let data = assemble(&traj);
        let set = build_energy_set(&data, &EnergyBound::new(DMatrix::zeros(8, 8), 3, 2).unwrap(), 1e-10).unwrap();
        let k = lqr(&plant.a, &plant.b);
        let acl = closed_loop(&plant.stacked(), &k);
        assert!(spectral_radius(&acl) < 1.0);
        let p = dlyap(&acl, &DMatrix::identity(3, 3));
        assert!(verify_energy_certificate(&set, &k, &p, DEFAULT_VERIFY_TOL), "seed {seed}");
        let out = synthesize_energy(&set, &SolverSettings::default()).unwrap();
        assert!(out.is_feasible(), "seed {seed}: {:?}", out.diagnostics);
        let cert = out.certificate.unwrap();
        assert!(spectral_radius(&closed_loop(&plant.stacked(), &cert.k)) < 1.0);
    }
}

#[test]
fn energy_verifier_and_program_agree_on_noisy_instances() {
    let settings = SolverSettings::default();
    let mut external_hits = 0;
    let mut feasible = 0;
    for seed in 0..20 {
        let (plant, data, noise) = noisy_data(200 + seed, 2, 1, 40, 2e-4);
        let bound = inst_to_energy(noise.e_x_bound, noise.e_u_bound, 40, 2, 1);
        let Ok(set) = build_energy_set(&data, &bound, DEFAULT_ASSUMPTION_TOL) else {
            continue;
        };
        // an externally designed certificate for the center of the set
        let center = &set.zscr;
        let k = lqr(&center.columns(0, 2).into_owned(), &center.columns(2, 1).into_owned());
        let acl = closed_loop(center, &k);
        let p = dlyap(&acl, &DMatrix::identity(2, 2));
        let out = synthesize_energy(&set, &settings).unwrap();
        assert_ne!(out.status, SolveStatus::NumericalFailure, "seed {seed}: {:?}", out.diagnostics);
        if verify_energy_certificate(&set, &k, &p, DEFAULT_VERIFY_TOL) {
            external_hits += 1;
            assert!(out.is_feasible(), "seed {seed}: verified certificate exists but program infeasible");
        }
        if let Some(cert) = out.certificate {
            feasible += 1;
            assert!(verify_energy_certificate(&set, &cert.k, &cert.p, DEFAULT_VERIFY_TOL), "seed {seed}");
            assert!(spectral_radius(&closed_loop(&plant.stacked(), &cert.k)) < 1.0);
            let rep = verify_by_sampling(SampleSource::Energy(&set), &cert.k, &cert.p, 100, seed).unwrap();
            assert!(rep.passed(), "seed {seed}: {rep:?}");
        }
    }
    assert!(external_hits >= 5, "{external_hits}");
    assert!(feasible >= 10, "{feasible}");
}

#[test]
fn energy_program_rejects_a_set_containing_an_unactuated_unstable_member() {
    let plant = PlantModel::new(DMatrix::from_element(1, 1, 1.5), DMatrix::from_element(1, 1, 0.05)).unwrap();
    let noise = NoiseModel::new(1e-4, 1e-4, NoiseDistribution::UniformBall).unwrap();
    let traj = simulate_experiment(&plant, &DVector::zeros(1), 1.0, 8, &noise, 3).unwrap();
    let data = assemble(&traj);
    let r = data.regressor();
    let theta22 = 0.5 * lambda_min(&(&r * r.transpose()));
    // a loose bound on the successor errors inflates the set without touching the regressor block
    let theta11 = 10.0 * data.x1m.norm_squared();
    let theta = DMatrix::from_diagonal(&DVector::from_column_slice(&[theta11, theta22, theta22]));
    let set = build_energy_set(&data, &EnergyBound::new(theta, 1, 1).unwrap(), 1e-10).unwrap();
    // oracle: the member of the ellipse with b = 0 closest to the center
    let (a11, a12) = (set.ascr[(0, 0)], set.ascr[(0, 1)]);
    let (ahat, bhat) = (set.zscr[(0, 0)], set.zscr[(0, 1)]);
    let unactuated = DMatrix::from_row_slice(1, 2, &[ahat + a12 * bhat / a11, 0.0]);
    assert!(unactuated[(0, 0)].abs() > 1.0);
    assert!(membership_energy(&set, &unactuated, DEFAULT_MEMBERSHIP_TOL));
    let out = synthesize_energy(&set, &SolverSettings::default()).unwrap();
    assert_eq!(out.status, SolveStatus::Infeasible, "{:?}", out.diagnostics);
}

#[test]
fn corrupted_gain_fails_both_verifiers() {
    let (_, data, noise) = noisy_data(7, 2, 1, 40, 1e-4);
    let bound = inst_to_energy(noise.e_x_bound, noise.e_u_bound, 40, 2, 1);
    let set = build_energy_set(&data, &bound, DEFAULT_ASSUMPTION_TOL).unwrap();
    let cert = synthesize_energy(&set, &SolverSettings::default())
        .unwrap()
        .certificate
        .expect("feasible instance");
    let mut bad = cert.k.clone();
    let mut scale = 1.0;
    while spectral_radius(&closed_loop(&set.zscr, &bad)) < 1.0 {
        scale *= 1.5;
        bad = &cert.k * scale;
    }
    assert!(!verify_energy_certificate(&set, &bad, &cert.p, 0.0));
    let rep = verify_by_sampling(SampleSource::Energy(&set), &bad, &cert.p, 200, 1).unwrap();
    assert!(!rep.passed());
}

#[test]
fn instantaneous_program_is_sound() {
    let settings = SolverSettings::default();
    let mut feasible = 0;
    for seed in 0..20 {
        let (n, m) = (2 + (seed % 2) as usize, 1 + (seed % 3 == 0) as usize);
        let (plant, data, noise) = noisy_data(300 + seed, n, m, 30, 1e-4);
        let bound = InstantaneousBound::new(noise.stacked_bound()).unwrap();
        let out = synthesize_inst(&data, &bound, &settings).unwrap();
        assert_ne!(out.status, SolveStatus::NumericalFailure, "seed {seed}: {:?}", out.diagnostics);
        if let Some(cert) = out.certificate {
            feasible += 1;
            let (rho, dec) = closed_loop_check(&plant.stacked(), &cert.k, &cert.p);
            assert!(rho < 1.0 && dec < 0.0, "seed {seed}");
            let taus = cert.taus.as_ref().unwrap();
            assert!(taus.iter().all(|&t| t >= 0.0));
            assert!(verify_inst_necessary(taus, &data, &bound, DEFAULT_VERIFY_TOL), "seed {seed}");
            let rep = verify_by_sampling(SampleSource::Instantaneous(&data, &bound), &cert.k, &cert.p, 50, seed).unwrap();
            assert!(rep.checked > 0 && rep.passed(), "seed {seed}: {rep:?}");
        }
    }
    assert!(feasible >= 10, "{feasible}");
}

#[test]
fn instantaneous_feasibility_is_monotone_in_theta() {
    for seed in 0..4 {
        let (_, data, _) = noisy_data(400 + seed, 2, 1, 30, 1e-4);
        let pattern: Vec<bool> = (0..10)
            .map(|i| {
                let theta = 1e-6 * 10f64.powf(i as f64 / 2.0);
                let out = synthesize_inst(&data, &InstantaneousBound::new(theta).unwrap(), &SolverSettings::default())
                    .unwrap();
                assert_ne!(out.status, SolveStatus::NumericalFailure);
                out.is_feasible()
            })
            .collect();
        let first_fail = pattern.iter().position(|f| !f).unwrap_or(pattern.len());
        assert!(pattern[first_fail..].iter().all(|f| !f), "seed {seed}: {pattern:?}");
        assert!(first_fail > 0, "seed {seed}: {pattern:?}");
    }
}
