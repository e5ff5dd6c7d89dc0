//! Feasibility sweeps over experiment length and noise level.

use std::fmt::Write as _;

use noisylmi::conset::{assemble, build_energy_set, inst_to_energy, InstantaneousBound, DEFAULT_ASSUMPTION_TOL};
use noisylmi::rng::mix_seed;
use noisylmi::sdp::{SolveStatus, SolverSettings};
use noisylmi::simkit::{simulate_experiment, NoiseModel, PlantModel};
use noisylmi::synth::{synthesize_energy, synthesize_inst};
use noisylmi::Error;
use rayon::prelude::*;

use crate::config::SweepSpec;
use crate::error::{CliError, CliResult};

pub const CSV_HEADER: &str = "T,theta,trials,n_feas_energy,n_feas_inst,ratio_energy,ratio_inst,n_error";

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "NOISYLMI_THREADS";

/// Feasibility of both programs on one seeded experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub energy: bool,
    pub inst: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub horizon: usize,
    pub theta: f64,
    pub trials: usize,
    pub n_feas_energy: usize,
    pub n_feas_inst: usize,
    pub n_error: usize,
}

impl SweepCell {
    pub fn ratio_energy(&self) -> f64 {
        self.n_feas_energy as f64 / self.trials as f64
    }

    pub fn ratio_inst(&self) -> f64 {
        self.n_feas_inst as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub t_grid: Vec<usize>,
    pub theta_grid: Vec<f64>,
    /// Row-major over `(T, θ)`.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, ti: usize, thi: usize) -> &SweepCell {
        &self.cells[ti * self.theta_grid.len() + thi]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{},{:.3},{:.3},{}",
                c.horizon,
                c.theta,
                c.trials,
                c.n_feas_energy,
                c.n_feas_inst,
                c.ratio_energy(),
                c.ratio_inst(),
                c.n_error
            );
        }
        out
    }

    /// `ratios[ti][thi]` for the chosen program.
    pub fn ratios(&self, energy: bool) -> Vec<Vec<f64>> {
        (0..self.t_grid.len())
            .map(|ti| {
                (0..self.theta_grid.len())
                    .map(|thi| {
                        let c = self.cell(ti, thi);
                        if energy {
                            c.ratio_energy()
                        } else {
                            c.ratio_inst()
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Seed of trial `trial` in cell `(T, θ-index)`.
pub fn trial_seed(base: u64, horizon: usize, theta_index: usize, trial: usize) -> u64 {
    mix_seed(&[base, horizon as u64, theta_index as u64, trial as u64])
}

/// Simulates one experiment with `ē_x = ē_u = θ/3` and solves both programs.
///
/// A failed signal-to-noise condition makes the energy program infeasible.
/// Solver failures and diverging experiments are errors.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    plant: &PlantModel,
    x0: &nalgebra::DVector<f64>,
    amplitude: f64,
    horizon: usize,
    theta: f64,
    noise: &NoiseModel,
    settings: &SolverSettings,
    seed: u64,
) -> Result<TrialOutcome, Error> {
    let (n, m) = (plant.n(), plant.m());
    let ebar = theta / 3.0;
    let noise = NoiseModel::new(ebar, ebar, noise.distribution)?;
    let traj = simulate_experiment(plant, x0, amplitude, horizon, &noise, seed)?;
    let data = assemble(&traj);
    let energy = match build_energy_set(&data, &inst_to_energy(ebar, ebar, horizon, n, m), DEFAULT_ASSUMPTION_TOL) {
        Ok(set) => match synthesize_energy(&set, settings)?.status {
            SolveStatus::Feasible => true,
            SolveStatus::Infeasible => false,
            SolveStatus::NumericalFailure => return Err(Error::Solver("energy program".into())),
        },
        Err(Error::AssumptionViolated { .. }) => false,
        Err(e) => return Err(e),
    };
    let inst = match synthesize_inst(&data, &InstantaneousBound::new(theta)?, settings)?.status {
        SolveStatus::Feasible => true,
        SolveStatus::Infeasible => false,
        SolveStatus::NumericalFailure => return Err(Error::Solver("instantaneous program".into())),
    };
    Ok(TrialOutcome { energy, inst })
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(e.to_string()))
}

/// Runs every cell and trial; the result does not depend on the thread count.
pub fn run_sweep(spec: &SweepSpec) -> CliResult<SweepTable> {
    let cfg = &spec.base;
    let plant_spec = cfg
        .plant
        .as_ref()
        .ok_or_else(|| CliError::Config("a sweep needs a [plant]".into()))?;
    let fixed = plant_spec.build()?;
    let x0 = cfg.experiment_x0(fixed.n());
    let noise = cfg.noise_model()?;
    let settings = cfg.solver_settings();
    let nth = spec.theta_grid.len();
    let jobs: Vec<(usize, usize, usize)> = (0..spec.t_grid.len())
        .flat_map(|ti| (0..nth).flat_map(move |thi| (0..spec.trials).map(move |k| (ti, thi, k))))
        .collect();
    let run = |&(ti, thi, k): &(usize, usize, usize)| -> CliResult<Option<TrialOutcome>> {
        let horizon = spec.t_grid[ti];
        let seed = trial_seed(spec.seed, horizon, thi, k);
        let redrawn;
        let plant = if spec.redraw_plant {
            redrawn = plant_spec.reseeded(mix_seed(&[seed, 1])).build()?;
            &redrawn
        } else {
            &fixed
        };
        Ok(run_trial(plant, &x0, cfg.experiment.amplitude, horizon, spec.theta_grid[thi], &noise, &settings, seed).ok())
    };
    let outcomes: Vec<Option<TrialOutcome>> =
        thread_pool()?.install(|| jobs.par_iter().map(run).collect::<CliResult<Vec<_>>>())?;
    let mut cells = Vec::with_capacity(spec.t_grid.len() * nth);
    for (ti, &horizon) in spec.t_grid.iter().enumerate() {
        for (thi, &theta) in spec.theta_grid.iter().enumerate() {
            let start = (ti * nth + thi) * spec.trials;
            let slice = &outcomes[start..start + spec.trials];
            let ok = slice.iter().flatten();
            cells.push(SweepCell {
                horizon,
                theta,
                trials: spec.trials,
                n_feas_energy: ok.clone().filter(|o| o.energy).count(),
                n_feas_inst: ok.filter(|o| o.inst).count(),
                n_error: slice.iter().filter(|o| o.is_none()).count(),
            });
        }
    }
    Ok(SweepTable {
        t_grid: spec.t_grid.clone(),
        theta_grid: spec.theta_grid.clone(),
        cells,
    })
}
