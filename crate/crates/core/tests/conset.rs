use nalgebra::{DMatrix, DVector};
use noisylmi::conset::*;
use noisylmi::linalg::lambda_min;
use noisylmi::rng::rng_from_seed;
use noisylmi::simkit::*;

fn experiment(seed: u64, n: usize, m: usize, t: usize, ebar: f64) -> (PlantModel, MeasuredTrajectory, NoiseModel) {
    let plant = PlantModel::random(n, m, 0.95, seed);
    let noise = NoiseModel::new(ebar, ebar, NoiseDistribution::UniformSphere).unwrap();
    let traj = simulate_experiment(&plant, &DVector::zeros(n), 1.0, t, &noise, seed + 1).unwrap();
    (plant, traj, noise)
}

#[test]
fn both_forms_of_energy_membership_agree() {
    let (_, traj, noise) = experiment(3, 3, 2, 60, 1e-3);
    let data = assemble(&traj);
    let bound = inst_to_energy(noise.e_x_bound, noise.e_u_bound, 60, 3, 2);
    let set = build_energy_set(&data, &bound, DEFAULT_ASSUMPTION_TOL).unwrap();
    let mut rng = rng_from_seed(9);
    let mut inside = 0;
    for i in 0..400 {
        // radii straddling the boundary
        let ups = sample_upsilon(&mut rng, 3, 5, SampleMode::Boundary) * (0.5 + i as f64 / 400.0);
        let z = member_from_upsilon(&set, &ups);
        let a = membership_energy(&set, &z, 1e-9);
        let b = membership_energy_raw(&set, &z, 1e-9);
        assert_eq!(a, b, "radius {}", 0.5 + i as f64 / 400.0);
        inside += a as usize;
    }
    assert!(inside > 100 && inside < 300, "{inside}");
}

#[test]
fn instantaneous_members_lie_in_the_enclosing_energy_set() {
    let (plant, traj, noise) = experiment(5, 2, 1, 30, 1e-3);
    let data = assemble(&traj);
    let ib = InstantaneousBound::new(noise.stacked_bound()).unwrap();
    let set = build_energy_set(&data, &ib.to_energy(30, 2, 1), DEFAULT_ASSUMPTION_TOL).unwrap();
    assert!(membership_inst(&data, &ib, &plant.stacked(), DEFAULT_MEMBERSHIP_TOL));
    let mut rng = rng_from_seed(2);
    let mut found = 0;
    for _ in 0..20000 {
        let z = sample_energy(&set, SampleMode::Interior, &mut rng);
        if membership_inst(&data, &ib, &z, DEFAULT_MEMBERSHIP_TOL) {
            found += 1;
            assert!(membership_energy(&set, &z, DEFAULT_MEMBERSHIP_TOL));
        }
    }
    assert!(found > 0);
}

#[test]
fn shrinking_theta_shrinks_the_instantaneous_set() {
    let (plant, traj, noise) = experiment(8, 2, 2, 25, 1e-3);
    let data = assemble(&traj);
    let z = plant.stacked();
    let exact = noise.stacked_bound();
    assert!(membership_inst(&data, &InstantaneousBound::new(exact).unwrap(), &z, DEFAULT_MEMBERSHIP_TOL));
    assert!(membership_inst(&data, &InstantaneousBound::new(2.0 * exact).unwrap(), &z, DEFAULT_MEMBERSHIP_TOL));
    // uniform-sphere noise saturates the bound, so halving it excludes the true plant
    assert!(!membership_inst(&data, &InstantaneousBound::new(0.25 * exact).unwrap(), &z, DEFAULT_MEMBERSHIP_TOL));
}

#[test]
fn noise_free_set_collapses_to_the_plant() {
    let plant = PlantModel::random(3, 2, 1.2, 17);
    let traj = simulate_experiment(&plant, &DVector::zeros(3), 1.0, 20, &NoiseModel::noise_free(), 4).unwrap();
    let data = assemble(&traj);
    let set = build_energy_set(&data, &EnergyBound::new(DMatrix::zeros(8, 8), 3, 2).unwrap(), 1e-10).unwrap();
    let z = plant.stacked();
    assert!((&set.zscr - &z).norm() <= 1e-8 * z.norm());
    assert!(set.qscr.abs().max() <= 1e-10);
    assert!(lambda_min(&set.qscr) >= -1e-8);
}
