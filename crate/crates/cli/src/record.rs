//! The run record: config echo, data, bounds, certificates and verifier reports.
//!
//! Matrices are stored in full precision so that `verify` can rebuild every
//! object without the original solve. No wall-clock fields are written, so
//! identical configurations produce identical files.

use nalgebra::DMatrix;
use noisylmi::conset::{build_energy_set, DataMatrices, EnergyBound, InstantaneousBound, DEFAULT_ASSUMPTION_TOL};
use noisylmi::linalg::{lambda_max, lambda_min, sigma_max, spectral_radius, sym};
use noisylmi::sdp::{LmiProblem, Sense};
use noisylmi::simkit::PlantModel;
use noisylmi::synth::{
    build_energy_lmi, build_inst_lmi, closed_loop_check, energy_multiplier_search, inst_snr_matrix,
    verify_by_sampling, verify_inst_necessary, SampleSource, SynthesisCertificate, DEFAULT_VERIFY_TOL,
};
use serde::{Deserialize, Serialize};

use crate::config::{matrix_to_rows, RunConfig};
use crate::error::{CliError, CliResult};

pub const FORMAT: &str = "noisylmi-run-record/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Energy,
    Instantaneous,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Energy => "energy",
            Self::Instantaneous => "instantaneous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    /// FNV-1a over the bit patterns of `X₁ᵐ`, `X₀ᵐ`, `U₀ᵐ` (column-major).
    pub digest: String,
    pub x1m: Vec<Vec<f64>>,
    pub x0m: Vec<Vec<f64>>,
    pub u0m: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSection {
    pub e_x_bound: f64,
    pub e_u_bound: f64,
    /// Instantaneous bound `θ = 2ē_x + ē_u`.
    pub theta: f64,
    /// Energy bound `Θ = TθI`.
    pub energy_theta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSection {
    pub margin: f64,
    pub k: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSection {
    pub passed: bool,
    pub worst_rho: f64,
    pub worst_decrease: f64,
    pub checked: usize,
    pub requested: usize,
    pub attempts: usize,
    pub seed: u64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSection {
    pub passed: bool,
    /// Energy: the multiplier search succeeded. Instantaneous: the stored
    /// point satisfies the program and the multiplier-weighted
    /// signal-to-noise matrix is positive definite.
    pub exact: bool,
    pub lambda: Option<f64>,
    pub lambda_max: Option<f64>,
    pub snr_lambda_min: Option<f64>,
    /// Smallest constraint margin of the stored `(P, Y, τ)` in the program.
    pub lmi_margin: f64,
    pub true_plant_rho: Option<f64>,
    pub true_plant_decrease: Option<f64>,
    pub sampling: SamplingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    /// `feasible`, `infeasible`, `numerical-failure` or `assumption-violated`.
    pub status: String,
    pub message: String,
    pub iterations: usize,
    pub warnings: Vec<String>,
    pub certificate: Option<CertificateSection>,
    pub verification: Option<VerificationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: String,
    pub exit_code: i32,
    pub summary: String,
    pub config: RunConfig,
    pub data: DataSection,
    pub bounds: BoundSection,
    pub true_plant: Option<PlantSection>,
    pub results: Vec<ModeResult>,
}

pub fn rows_to_matrix(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> CliResult<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(CliError::Config(format!(
            "record field {name} must be {}x{}",
            shape.0, shape.1
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

pub fn digest(data: &DataMatrices) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in [&data.x1m, &data.x0m, &data.u0m] {
        for v in m.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

impl DataSection {
    pub fn new(data: &DataMatrices) -> Self {
        Self {
            horizon: data.horizon(),
            n: data.n(),
            m: data.m(),
            digest: digest(data),
            x1m: matrix_to_rows(&data.x1m),
            x0m: matrix_to_rows(&data.x0m),
            u0m: matrix_to_rows(&data.u0m),
        }
    }

    pub fn matrices(&self) -> CliResult<DataMatrices> {
        let (t, n, m) = (self.horizon, self.n, self.m);
        let data = DataMatrices::new(
            rows_to_matrix("data.x1m", &self.x1m, (n, t))?,
            rows_to_matrix("data.x0m", &self.x0m, (n, t))?,
            rows_to_matrix("data.u0m", &self.u0m, (m, t))?,
        )?;
        if digest(&data) != self.digest {
            return Err(CliError::Config("data digest does not match the stored matrices".into()));
        }
        Ok(data)
    }
}

impl BoundSection {
    pub fn new(e_x_bound: f64, e_u_bound: f64, horizon: usize, n: usize, m: usize) -> Self {
        let eb = noisylmi::conset::inst_to_energy(e_x_bound, e_u_bound, horizon, n, m);
        Self {
            e_x_bound,
            e_u_bound,
            theta: 2.0 * e_x_bound + e_u_bound,
            energy_theta: matrix_to_rows(eb.theta()),
        }
    }

    pub fn instantaneous(&self) -> CliResult<InstantaneousBound> {
        Ok(InstantaneousBound::new(self.theta)?)
    }

    pub fn energy(&self, n: usize, m: usize) -> CliResult<EnergyBound> {
        let d = 2 * n + m;
        Ok(EnergyBound::new(rows_to_matrix("bounds.energy_theta", &self.energy_theta, (d, d))?, n, m)?)
    }
}

impl PlantSection {
    pub fn new(p: &PlantModel) -> Self {
        Self {
            a: matrix_to_rows(&p.a),
            b: matrix_to_rows(&p.b),
        }
    }

    pub fn model(&self, n: usize, m: usize) -> CliResult<PlantModel> {
        Ok(PlantModel::new(
            rows_to_matrix("true_plant.a", &self.a, (n, n))?,
            rows_to_matrix("true_plant.b", &self.b, (n, m))?,
        )?)
    }
}

impl CertificateSection {
    pub fn new(c: &SynthesisCertificate) -> Self {
        Self {
            margin: c.margin,
            k: matrix_to_rows(&c.k),
            p: matrix_to_rows(&c.p),
            y: matrix_to_rows(&c.y),
            taus: c.taus.clone(),
        }
    }

    pub fn gain_and_lyapunov(&self, n: usize, m: usize) -> CliResult<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            rows_to_matrix("certificate.k", &self.k, (m, n))?,
            rows_to_matrix("certificate.p", &self.p, (n, n))?,
        ))
    }
}

/// Smallest distance of any matrix constraint from its boundary at `x`,
/// ignoring scalar lower bounds.
fn lmi_margin(problem: &LmiProblem, x: &[f64]) -> f64 {
    problem
        .constraints()
        .iter()
        .zip(problem.compiled())
        .map(|(c, comp)| {
            let f = comp.evaluate(x);
            match c.sense {
                Sense::Nsd => -lambda_max(&f),
                Sense::Psd => lambda_min(&f),
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Runs the exact and the sampling verifier on a certificate.
pub fn verify(
    mode: Mode,
    data: &DataMatrices,
    bounds: &BoundSection,
    cert: &CertificateSection,
    samples: usize,
    seed: u64,
    true_plant: Option<&PlantModel>,
) -> CliResult<VerificationSection> {
    let (n, m) = (data.n(), data.m());
    let (k, p) = cert.gain_and_lyapunov(n, m)?;
    let (true_plant_rho, true_plant_decrease) = match true_plant {
        Some(pl) => {
            let (rho, dec) = closed_loop_check(&pl.stacked(), &k, &p);
            (Some(rho), Some(dec))
        }
        None => (None, None),
    };
    let p_ok = lambda_min(&sym(&p)) > 0.0;
    let y = rows_to_matrix("certificate.y", &cert.y, (m, n))?;
    let (exact, lambda, lambda_max, snr, lmi_margin, report) = match mode {
        Mode::Energy => {
            let set = build_energy_set(data, &bounds.energy(n, m)?, DEFAULT_ASSUMPTION_TOL)?;
            let search = energy_multiplier_search(&set, &k, &p);
            let exact = p_ok && search.lambda_max < -DEFAULT_VERIFY_TOL * sigma_max(&p);
            let lmi = build_energy_lmi(&set);
            let mut x = vec![0.0; lmi.problem.n_scalars()];
            lmi.problem.set_matrix(&mut x, lmi.p, &p);
            lmi.problem.set_matrix(&mut x, lmi.y, &y);
            let lmi_margin = lmi_margin(&lmi.problem, &x);
            let report = verify_by_sampling(SampleSource::Energy(&set), &k, &p, samples, seed)?;
            (exact, Some(search.lambda), Some(search.lambda_max), None, lmi_margin, report)
        }
        Mode::Instantaneous => {
            let bound = bounds.instantaneous()?;
            let taus = cert
                .taus
                .as_ref()
                .ok_or_else(|| CliError::Config("instantaneous certificate without multipliers".into()))?;
            if taus.len() != data.horizon() {
                return Err(CliError::Config(format!(
                    "certificate has {} multipliers, data has T = {}",
                    taus.len(),
                    data.horizon()
                )));
            }
            let lmi = build_inst_lmi(data, &bound);
            let mut x = vec![0.0; lmi.problem.n_scalars()];
            lmi.problem.set_matrix(&mut x, lmi.p, &p);
            lmi.problem.set_matrix(&mut x, lmi.y, &y);
            for (&v, &t) in lmi.taus.iter().zip(taus) {
                lmi.problem.set_scalar(&mut x, v, t);
            }
            let lmi_margin = lmi_margin(&lmi.problem, &x);
            let necessary = verify_inst_necessary(taus, data, &bound, DEFAULT_VERIFY_TOL);
            let snr = lambda_min(&inst_snr_matrix(taus, data, &bound));
            let report = verify_by_sampling(SampleSource::Instantaneous(data, &bound), &k, &p, samples, seed)?;
            (p_ok && necessary && lmi_margin > 0.0 && taus.iter().all(|&t| t >= 0.0), None, None, Some(snr), lmi_margin, report)
        }
    };
    let sampling = SamplingSection {
        passed: report.passed(),
        worst_rho: report.worst_rho,
        worst_decrease: report.worst_decrease,
        checked: report.checked,
        requested: report.requested,
        attempts: report.attempts,
        seed,
        warning: report.warning.clone(),
    };
    let plant_ok = true_plant_rho.is_none_or(|r| r < 1.0);
    Ok(VerificationSection {
        passed: exact && sampling.passed && plant_ok,
        exact,
        lambda,
        lambda_max,
        snr_lambda_min: snr,
        lmi_margin,
        true_plant_rho,
        true_plant_decrease,
        sampling,
    })
}

impl RunRecord {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }

    pub fn parse(text: &str, path: &std::path::Path) -> CliResult<Self> {
        let rec: Self = toml::from_str(text).map_err(|e| crate::error::toml_error(path, text, e))?;
        if rec.format != FORMAT {
            return Err(CliError::Config(format!("unsupported record format '{}'", rec.format)));
        }
        Ok(rec)
    }

    pub fn true_plant_model(&self) -> CliResult<Option<PlantModel>> {
        self.true_plant
            .as_ref()
            .map(|p| p.model(self.data.n, self.data.m))
            .transpose()
    }
}

/// Spectral radius of the true closed loop, when the plant is known.
pub fn true_rho(plant: Option<&PlantModel>, k: &DMatrix<f64>) -> Option<f64> {
    plant.map(|p| spectral_radius(&(&p.a + &p.b * k)))
}
