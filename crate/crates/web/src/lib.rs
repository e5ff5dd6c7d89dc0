//! Browser bindings. Every export takes plain numbers and returns a JSON
//! string; the functions without the `js_` prefix are the native versions.

use nalgebra::{DMatrix, DVector};
use noisylmi::conset::{
    assemble, build_energy_set, membership_inst, DataMatrices, InstantaneousBound, DEFAULT_ASSUMPTION_TOL,
    DEFAULT_MEMBERSHIP_TOL,
};
use noisylmi::linalg::spectral_radius;
use noisylmi::rng::mix_seed;
use noisylmi::sdp::{SolveStatus, SolverSettings};
use noisylmi::simkit::{simulate_closed_loop, simulate_experiment, NoiseDistribution, NoiseModel, PlantModel};
use noisylmi::synth::{
    synthesize_energy, synthesize_inst, verify_by_sampling, verify_energy_certificate, verify_inst_necessary,
    SampleSource, DEFAULT_VERIFY_TOL,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize)]
pub struct Ellipse {
    pub horizon: usize,
    pub theta: f64,
    pub truth: [f64; 2],
    pub center: [f64; 2],
    /// Boundary of the energy set in the `(a, b)` plane.
    pub boundary: Vec<[f64; 2]>,
    /// Centers of grid cells inside the instantaneous set.
    pub inst_cells: Vec<[f64; 2]>,
    pub cell: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub mode: &'static str,
    pub status: String,
    pub message: String,
    pub gain: Option<Vec<Vec<f64>>>,
    pub verified: bool,
    pub true_rho: Option<f64>,
    /// Closed-loop states of the true plant, one row per step.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub open_loop_rho: f64,
    pub open_loop: Vec<Vec<f64>>,
    pub modes: Vec<ModeReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub trials: usize,
    pub n_feas_energy: usize,
    pub n_feas_inst: usize,
    pub n_error: usize,
}

fn plant_from(a: &[f64], b: &[f64], n: usize, m: usize) -> Result<PlantModel, String> {
    if a.len() != n * n || b.len() != n * m {
        return Err(format!("A needs {} entries and B needs {}", n * n, n * m));
    }
    PlantModel::new(DMatrix::from_row_slice(n, n, a), DMatrix::from_row_slice(n, m, b)).map_err(|e| e.to_string())
}

fn experiment(plant: &PlantModel, amplitude: f64, horizon: usize, ebar: f64, seed: u64) -> Result<(DataMatrices, NoiseModel), String> {
    let noise = NoiseModel::new(ebar, ebar, NoiseDistribution::UniformBall).map_err(|e| e.to_string())?;
    let traj = simulate_experiment(plant, &DVector::zeros(plant.n()), amplitude, horizon, &noise, seed)
        .map_err(|e| e.to_string())?;
    Ok((assemble(&traj), noise))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn states(xs: &[DVector<f64>]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| x.iter().copied().collect()).collect()
}

/// Consistency sets of the scalar plant `x⁺ = a x + b u` drawn in the `(a, b)` plane.
pub fn ellipse(a: f64, b: f64, amplitude: f64, horizon: usize, ebar: f64, seed: u64, grid: usize) -> Result<Ellipse, String> {
    let plant = plant_from(&[a], &[b], 1, 1)?;
    let (data, noise) = experiment(&plant, amplitude, horizon, ebar, seed)?;
    let theta = noise.stacked_bound();
    let ib = InstantaneousBound::new(theta).map_err(|e| e.to_string())?;
    let set = build_energy_set(&data, &ib.to_energy(horizon, 1, 1), DEFAULT_ASSUMPTION_TOL).map_err(|e| e.to_string())?;
    let q = set.qscr[(0, 0)].max(0.0).sqrt();
    let boundary: Vec<[f64; 2]> = (0..=180)
        .map(|i| {
            let phi = i as f64 / 180.0 * std::f64::consts::TAU;
            let ups = DMatrix::from_row_slice(1, 2, &[phi.cos(), phi.sin()]);
            let z = &set.zscr + &ups * &set.ainvhalf * q;
            [z[(0, 0)], z[(0, 1)]]
        })
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &boundary {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let grid = grid.clamp(2, 400);
    let cell = [(hi[0] - lo[0]) / grid as f64, (hi[1] - lo[1]) / grid as f64];
    let mut inst_cells = Vec::new();
    for i in 0..grid {
        for j in 0..grid {
            let p = [lo[0] + (i as f64 + 0.5) * cell[0], lo[1] + (j as f64 + 0.5) * cell[1]];
            if membership_inst(&data, &ib, &DMatrix::from_row_slice(1, 2, &p), DEFAULT_MEMBERSHIP_TOL) {
                inst_cells.push(p);
            }
        }
    }
    Ok(Ellipse {
        horizon,
        theta,
        truth: [a, b],
        center: [set.zscr[(0, 0)], set.zscr[(0, 1)]],
        boundary,
        inst_cells,
        cell,
    })
}

/// Solves both programs on one simulated experiment and simulates the
/// closed loop of the true plant under each certified gain.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    a: &[f64],
    b: &[f64],
    n: usize,
    m: usize,
    amplitude: f64,
    horizon: usize,
    ebar: f64,
    seed: u64,
    steps: usize,
) -> Result<SynthReport, String> {
    let plant = plant_from(a, b, n, m)?;
    let (data, noise) = experiment(&plant, amplitude, horizon, ebar, seed)?;
    let x0 = DVector::from_element(n, 1.0);
    let open = simulate_closed_loop(&plant, &DMatrix::zeros(m, n), &x0, steps).map_err(|e| e.to_string())?;
    let settings = SolverSettings::default();
    let ib = InstantaneousBound::new(noise.stacked_bound()).map_err(|e| e.to_string())?;
    let mut modes = Vec::new();

    let energy = build_energy_set(&data, &ib.to_energy(horizon, n, m), DEFAULT_ASSUMPTION_TOL)
        .and_then(|set| synthesize_energy(&set, &settings).map(|out| (set, out)));
    modes.push(match energy {
        Ok((set, out)) => {
            let verified = out
                .certificate
                .as_ref()
                .is_some_and(|c| verify_energy_certificate(&set, &c.k, &c.p, DEFAULT_VERIFY_TOL));
            report("energy", out.status, out.diagnostics.message, out.certificate.map(|c| c.k), verified, &plant, &x0, steps)?
        }
        Err(e) => report("energy", SolveStatus::Infeasible, e.to_string(), None, false, &plant, &x0, steps)?,
    });

    let out = synthesize_inst(&data, &ib, &settings).map_err(|e| e.to_string())?;
    let verified = match &out.certificate {
        Some(c) => {
            let taus = c.taus.as_deref().unwrap_or_default();
            let sampled = verify_by_sampling(SampleSource::Instantaneous(&data, &ib), &c.k, &c.p, 100, seed)
                .map_err(|e| e.to_string())?;
            verify_inst_necessary(taus, &data, &ib, DEFAULT_VERIFY_TOL) && sampled.passed()
        }
        None => false,
    };
    modes.push(report("instantaneous", out.status, out.diagnostics.message, out.certificate.map(|c| c.k), verified, &plant, &x0, steps)?);

    Ok(SynthReport {
        open_loop_rho: spectral_radius(&plant.a),
        open_loop: states(&open),
        modes,
    })
}

#[allow(clippy::too_many_arguments)]
fn report(
    mode: &'static str,
    status: SolveStatus,
    message: String,
    gain: Option<DMatrix<f64>>,
    verified: bool,
    plant: &PlantModel,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<ModeReport, String> {
    let trajectory = match &gain {
        Some(k) => Some(states(&simulate_closed_loop(plant, k, x0, steps).map_err(|e| e.to_string())?)),
        None => None,
    };
    Ok(ModeReport {
        mode,
        status: status.to_string(),
        message,
        true_rho: gain.as_ref().map(|k| spectral_radius(&(&plant.a + &plant.b * k))),
        gain: gain.as_ref().map(rows),
        verified,
        trajectory,
    })
}

/// Feasibility counts of both programs over noise levels at a fixed
/// experiment length, with `ē_x = ē_u = θ/3` and `Θ = TθI`.
#[allow(clippy::too_many_arguments)]
pub fn theta_sweep(
    a: &[f64],
    b: &[f64],
    n: usize,
    m: usize,
    amplitude: f64,
    horizon: usize,
    thetas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>, String> {
    let plant = plant_from(a, b, n, m)?;
    let settings = SolverSettings::default();
    let mut out = Vec::with_capacity(thetas.len());
    for (idx, &theta) in thetas.iter().enumerate() {
        let mut pt = SweepPoint { theta, trials, n_feas_energy: 0, n_feas_inst: 0, n_error: 0 };
        for trial in 0..trials {
            let s = mix_seed(&[seed, horizon as u64, idx as u64, trial as u64]);
            let ebar = theta / 3.0;
            let Ok((data, _)) = experiment(&plant, amplitude, horizon, ebar, s) else {
                pt.n_error += 1;
                continue;
            };
            let ib = InstantaneousBound::new(theta).map_err(|e| e.to_string())?;
            let energy = match build_energy_set(&data, &ib.to_energy(horizon, n, m), DEFAULT_ASSUMPTION_TOL) {
                Ok(set) => synthesize_energy(&set, &settings).map(|o| o.status).ok(),
                Err(noisylmi::Error::AssumptionViolated { .. }) => Some(SolveStatus::Infeasible),
                Err(_) => None,
            };
            let inst = synthesize_inst(&data, &ib, &settings).map(|o| o.status).ok();
            match (energy, inst) {
                (Some(e), Some(i)) if e != SolveStatus::NumericalFailure && i != SolveStatus::NumericalFailure => {
                    pt.n_feas_energy += (e == SolveStatus::Feasible) as usize;
                    pt.n_feas_inst += (i == SolveStatus::Feasible) as usize;
                }
                _ => pt.n_error += 1,
            }
        }
        out.push(pt);
    }
    Ok(out)
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen(start)]
pub fn start() {
    console_error_panic_hook::set_once();
}

#[wasm_bindgen]
pub fn js_ellipse(a: f64, b: f64, amplitude: f64, horizon: usize, ebar: f64, seed: u32, grid: usize) -> String {
    to_json(ellipse(a, b, amplitude, horizon, ebar, seed as u64, grid))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn js_synthesize(a: &[f64], b: &[f64], n: usize, m: usize, amplitude: f64, horizon: usize, ebar: f64, seed: u32, steps: usize) -> String {
    to_json(synthesize(a, b, n, m, amplitude, horizon, ebar, seed as u64, steps))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn js_theta_sweep(a: &[f64], b: &[f64], n: usize, m: usize, amplitude: f64, horizon: usize, thetas: &[f64], trials: usize, seed: u32) -> String {
    to_json(theta_sweep(a, b, n, m, amplitude, horizon, thetas, trials, seed as u64))
}
