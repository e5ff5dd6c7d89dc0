//! The four workflows. Each returns what it wrote plus a process exit code.

use std::path::{Path, PathBuf};

use noisylmi::conset::{assemble, build_energy_set, DataMatrices, DEFAULT_ASSUMPTION_TOL};
use noisylmi::sdp::SolveStatus;
use noisylmi::simkit::{simulate_closed_loop, simulate_experiment, MeasuredTrajectory, PlantModel};
use noisylmi::synth::{synthesize_energy, synthesize_inst, SynthesisOutcome};
use noisylmi::Error;

use crate::config::{RunConfig, SweepSpec};
use crate::error::{write_file, CliError, CliResult};
use crate::record::{
    self, BoundSection, CertificateSection, DataSection, Mode, ModeResult, PlantSection, RunRecord,
};
use crate::sweep::{run_sweep, SweepTable};
use crate::{svg, trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const RECORD_FILE: &str = "run_record.toml";
pub const VERIFY_FILE: &str = "verify_report.toml";
pub const SWEEP_FILE: &str = "sweep.csv";

/// The measured trajectory and, for simulated data, the plant behind it.
pub fn experiment(cfg: &RunConfig) -> CliResult<(MeasuredTrajectory, Option<PlantModel>)> {
    let plant = cfg.plant()?;
    if let Some(path) = &cfg.experiment.trajectory {
        let traj = trajectory::load_csv(path)?;
        if let Some(p) = &plant {
            if (p.n(), p.m()) != (traj.n(), traj.m()) {
                return Err(CliError::Config(format!(
                    "trajectory has n = {}, m = {} but the plant has n = {}, m = {}",
                    traj.n(),
                    traj.m(),
                    p.n(),
                    p.m()
                )));
            }
        }
        return Ok((traj, plant));
    }
    let p = plant.ok_or_else(|| CliError::Config("no plant to simulate".into()))?;
    let traj = simulate_experiment(
        &p,
        &cfg.experiment_x0(p.n()),
        cfg.experiment.amplitude,
        cfg.experiment.horizon,
        &cfg.noise_model()?,
        cfg.experiment.seed,
    )?;
    Ok((traj, Some(p)))
}

pub fn simulate(cfg: &RunConfig) -> CliResult<PathBuf> {
    let (traj, _) = experiment(cfg)?;
    let path = cfg.output.dir.join(TRAJECTORY_FILE);
    write_file(&path, &trajectory::write_csv(&traj))?;
    Ok(path)
}

fn status_name(e: &Error) -> &'static str {
    match e {
        Error::AssumptionViolated { .. } => "assumption-violated",
        Error::EmptySet { .. } => "empty-set",
        Error::Singular(_) => "singular-certificate",
        _ => "error",
    }
}

fn error_result(mode: Mode, e: &Error) -> ModeResult {
    ModeResult {
        mode,
        status: status_name(e).into(),
        message: e.to_string(),
        iterations: 0,
        warnings: Vec::new(),
        certificate: None,
        verification: None,
    }
}

fn solve(mode: Mode, data: &DataMatrices, bounds: &BoundSection, cfg: &RunConfig) -> Result<SynthesisOutcome, Error> {
    let settings = cfg.solver_settings();
    match mode {
        Mode::Energy => {
            let eb = bounds.energy(data.n(), data.m()).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let set = build_energy_set(data, &eb, DEFAULT_ASSUMPTION_TOL)?;
            synthesize_energy(&set, &settings)
        }
        Mode::Instantaneous => {
            let b = bounds.instantaneous().map_err(|e| Error::InvalidInput(e.to_string()))?;
            synthesize_inst(data, &b, &settings)
        }
    }
}

/// `0` when some mode has a verified certificate, else `1` when some mode
/// failed (assumption, solver or verification), else `2`.
pub fn exit_code(results: &[ModeResult]) -> i32 {
    let verified = |r: &ModeResult| r.verification.as_ref().is_some_and(|v| v.passed);
    if results.iter().any(verified) {
        return EXIT_OK;
    }
    let failed = |r: &ModeResult| r.status != "infeasible" || r.verification.is_some();
    if results.iter().any(failed) {
        EXIT_ERROR
    } else {
        EXIT_INFEASIBLE
    }
}

fn summary(results: &[ModeResult]) -> String {
    results
        .iter()
        .map(|r| {
            let v = match &r.verification {
                Some(v) if v.passed => " (verified)",
                Some(_) => " (verification failed)",
                None => "",
            };
            format!("{}: {}{v}", r.mode, r.status)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Builds the run record for a configuration without touching the disk.
pub fn run_synthesis(cfg: &RunConfig) -> CliResult<RunRecord> {
    let (traj, plant) = experiment(cfg)?;
    let data = assemble(&traj);
    let bounds = BoundSection::new(cfg.noise.e_x_bound, cfg.noise.e_u_bound, data.horizon(), data.n(), data.m());
    let mut modes = Vec::new();
    if cfg.bound.mode.energy() {
        modes.push(Mode::Energy);
    }
    if cfg.bound.mode.instantaneous() {
        modes.push(Mode::Instantaneous);
    }
    let mut results = Vec::new();
    for mode in modes {
        let out = match solve(mode, &data, &bounds, cfg) {
            Ok(o) => o,
            Err(e) => {
                results.push(error_result(mode, &e));
                continue;
            }
        };
        let certificate = out.certificate.as_ref().map(CertificateSection::new);
        let verification = match (&certificate, out.status) {
            (Some(c), SolveStatus::Feasible) => Some(record::verify(
                mode,
                &data,
                &bounds,
                c,
                cfg.verify.samples,
                cfg.verify.seed,
                plant.as_ref(),
            )?),
            _ => None,
        };
        results.push(ModeResult {
            mode,
            status: out.status.to_string(),
            message: out.diagnostics.message.clone(),
            iterations: out.diagnostics.iterations,
            warnings: out.warnings.clone(),
            certificate,
            verification,
        });
    }
    Ok(RunRecord {
        format: record::FORMAT.into(),
        exit_code: exit_code(&results),
        summary: summary(&results),
        config: cfg.clone(),
        data: DataSection::new(&data),
        bounds,
        true_plant: plant.as_ref().map(PlantSection::new),
        results,
    })
}

/// Writes the run record and, when the plant is known, one closed-loop plot
/// per certified mode.
pub fn synth(cfg: &RunConfig) -> CliResult<(RunRecord, Vec<PathBuf>)> {
    let rec = run_synthesis(cfg)?;
    let dir = &cfg.output.dir;
    let path = dir.join(RECORD_FILE);
    write_file(&path, &rec.to_toml())?;
    let mut written = vec![path];
    if let Some(plant) = rec.true_plant_model()? {
        for r in &rec.results {
            let Some(c) = &r.certificate else { continue };
            let (k, _) = c.gain_and_lyapunov(plant.n(), plant.m())?;
            let xs = simulate_closed_loop(&plant, &k, &cfg.closed_loop_x0(plant.n()), cfg.closed_loop.steps)?;
            let p = dir.join(format!("closed_loop_{}.svg", r.mode));
            write_file(&p, &svg::trajectory(&format!("Closed loop, {} bound", r.mode), &xs))?;
            written.push(p);
        }
    }
    Ok((rec, written))
}

/// Re-runs both verifiers on every stored certificate.
///
/// Returns the record with fresh verification sections. Exit code `0` when
/// every certificate passes, `1` when any fails, `2` when there is none.
pub fn verify_record(rec: &RunRecord, samples: Option<usize>, seed: Option<u64>) -> CliResult<(RunRecord, i32)> {
    let data = rec.data.matrices()?;
    let plant = rec.true_plant_model()?;
    let samples = samples.unwrap_or(rec.config.verify.samples);
    let seed = seed.unwrap_or(rec.config.verify.seed);
    let mut out = rec.clone();
    let (mut any, mut all) = (false, true);
    for r in &mut out.results {
        let Some(c) = &r.certificate else {
            r.verification = None;
            continue;
        };
        let v = record::verify(r.mode, &data, &rec.bounds, c, samples, seed, plant.as_ref())?;
        any = true;
        all &= v.passed;
        r.verification = Some(v);
    }
    let code = match (any, all) {
        (false, _) => EXIT_INFEASIBLE,
        (true, true) => EXIT_OK,
        (true, false) => EXIT_ERROR,
    };
    out.exit_code = code;
    out.summary = summary(&out.results);
    Ok((out, code))
}

pub fn verify(record_path: &Path, samples: Option<usize>, seed: Option<u64>, out_dir: Option<&Path>) -> CliResult<(RunRecord, PathBuf)> {
    let text = crate::error::read_file(record_path)?;
    let rec = RunRecord::parse(&text, record_path)?;
    let (report, _) = verify_record(&rec, samples, seed)?;
    let dir = out_dir.map_or_else(|| rec.config.output.dir.clone(), Path::to_path_buf);
    let path = dir.join(VERIFY_FILE);
    write_file(&path, &report.to_toml())?;
    Ok((report, path))
}

/// Writes the sweep CSV and one heatmap per program.
pub fn sweep(spec: &SweepSpec) -> CliResult<(SweepTable, Vec<PathBuf>)> {
    let table = run_sweep(spec)?;
    let dir = &spec.base.output.dir;
    let csv = dir.join(SWEEP_FILE);
    write_file(&csv, &table.to_csv())?;
    let mut written = vec![csv];
    for (energy, name, title) in [
        (true, "heatmap_energy.svg", "Feasible ratio, energy bound"),
        (false, "heatmap_inst.svg", "Feasible ratio, instantaneous bound"),
    ] {
        let p = dir.join(name);
        write_file(&p, &svg::heatmap(title, &table.t_grid, &table.theta_grid, &table.ratios(energy)))?;
        written.push(p);
    }
    Ok((table, written))
}
