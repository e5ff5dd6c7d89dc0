//! Run and sweep configuration, read from TOML.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use noisylmi::sdp::SolverSettings;
use noisylmi::simkit::{NoiseDistribution, NoiseModel, PlantModel};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, toml_error, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantSpec {
    /// Row-major matrices.
    Explicit { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    Random {
        n: usize,
        m: usize,
        spectral_radius: f64,
        seed: u64,
    },
    /// `A` with the given real spectrum in a random well-conditioned basis.
    Eigenvalues { eigenvalues: Vec<f64>, m: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub horizon: usize,
    pub x0: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    /// Measured trajectory CSV used instead of a simulation.
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub e_x_bound: f64,
    pub e_u_bound: f64,
    #[serde(default = "default_distribution")]
    pub distribution: String,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            e_x_bound: 0.0,
            e_u_bound: 0.0,
            distribution: default_distribution(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    Energy,
    Instantaneous,
    #[default]
    Both,
}

impl BoundMode {
    pub fn energy(self) -> bool {
        matches!(self, Self::Energy | Self::Both)
    }

    pub fn instantaneous(self) -> bool {
        matches!(self, Self::Instantaneous | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    #[serde(default)]
    pub mode: BoundMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_feas_tol")]
    pub feas_tol: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            feas_tol: default_feas_tol(),
            margin: default_margin(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedLoopSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to all ones.
    pub x0: Option<Vec<f64>>,
}

impl Default for ClosedLoopSpec {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t_grid: Vec<usize>,
    pub theta_grid: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Draw a fresh random plant per trial (random plant specs only).
    #[serde(default)]
    pub redraw_plant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: Option<PlantSpec>,
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub closed_loop: ClosedLoopSpec,
    #[serde(default)]
    pub output: OutputSpec,
    pub sweep: Option<SweepSection>,
}

fn one() -> f64 {
    1.0
}
fn default_distribution() -> String {
    NoiseDistribution::UniformBall.to_string()
}
fn default_feas_tol() -> f64 {
    SolverSettings::default().feas_tol
}
fn default_margin() -> f64 {
    SolverSettings::default().margin
}
fn default_max_iter() -> usize {
    SolverSettings::default().max_iter
}
fn default_samples() -> usize {
    500
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_steps() -> usize {
    60
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Config(format!("{name} must be a nonempty rectangular list of rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl PlantSpec {
    pub fn build(&self) -> CliResult<PlantModel> {
        match self {
            Self::Explicit { a, b } => Ok(PlantModel::new(matrix_from_rows("plant.a", a)?, matrix_from_rows("plant.b", b)?)?),
            Self::Random {
                n,
                m,
                spectral_radius,
                seed,
            } => {
                if *n == 0 || *m == 0 || !(*spectral_radius >= 0.0) {
                    return Err(CliError::Config("random plant needs n, m >= 1 and a nonnegative spectral radius".into()));
                }
                Ok(PlantModel::random(*n, *m, *spectral_radius, *seed))
            }
            Self::Eigenvalues { eigenvalues, m, seed } => {
                if eigenvalues.is_empty() || *m == 0 {
                    return Err(CliError::Config("eigenvalue plant needs a spectrum and m >= 1".into()));
                }
                Ok(PlantModel::with_eigenvalues(eigenvalues, *m, *seed))
            }
        }
    }

    /// Same spec with its seed replaced, for per-trial redraws.
    pub fn reseeded(&self, new_seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            Self::Explicit { .. } => {}
            Self::Random { seed, .. } | Self::Eigenvalues { seed, .. } => *seed = new_seed,
        }
        s
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_file(path)?;
        let mut cfg = Self::parse(&text, path)?;
        // relative trajectory paths are resolved against the config file
        if let Some(t) = &cfg.experiment.trajectory {
            if t.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.experiment.trajectory = Some(dir.join(t));
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.experiment.seed = seed;
            if let Some(s) = &mut self.sweep {
                s.seed = seed;
            }
        }
        if let Some(m) = o.margin {
            self.solver.margin = m;
        }
        if let Some(n) = o.samples {
            self.verify.samples = n;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.plant.is_none() && self.experiment.trajectory.is_none() {
            return bad("either [plant] or experiment.trajectory is required");
        }
        if self.experiment.horizon == 0 && self.experiment.trajectory.is_none() {
            return bad("experiment.horizon must be at least 1");
        }
        if !(self.experiment.amplitude > 0.0) {
            return bad("experiment.amplitude must be positive");
        }
        if !(self.noise.e_x_bound >= 0.0 && self.noise.e_u_bound >= 0.0) {
            return bad("noise bounds must be nonnegative");
        }
        self.noise
            .distribution
            .parse::<NoiseDistribution>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.solver.feas_tol > 0.0 && self.solver.margin > 0.0) || self.solver.max_iter == 0 {
            return bad("solver tolerances must be positive");
        }
        if self.verify.samples == 0 {
            return bad("verify.samples must be at least 1");
        }
        if let Some(p) = &self.plant {
            let plant = p.build()?;
            for (name, v) in [("experiment.x0", &self.experiment.x0), ("closed_loop.x0", &self.closed_loop.x0)] {
                if let Some(x) = v {
                    if x.len() != plant.n() {
                        return Err(CliError::Config(format!("{name} has {} entries, plant has n = {}", x.len(), plant.n())));
                    }
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.t_grid.is_empty() || s.theta_grid.is_empty() {
                return bad("sweep grids must be nonempty");
            }
            if s.trials == 0 {
                return bad("sweep.trials must be at least 1");
            }
            if s.t_grid.contains(&0) || s.theta_grid.iter().any(|t| !(*t >= 0.0)) {
                return bad("sweep grids need T >= 1 and theta >= 0");
            }
            if self.plant.is_none() {
                return bad("a sweep needs a [plant]");
            }
        }
        Ok(())
    }

    pub fn plant(&self) -> CliResult<Option<PlantModel>> {
        self.plant.as_ref().map(PlantSpec::build).transpose()
    }

    pub fn noise_model(&self) -> CliResult<NoiseModel> {
        let dist = self
            .noise
            .distribution
            .parse()
            .map_err(|e: noisylmi::Error| CliError::Config(e.to_string()))?;
        Ok(NoiseModel::new(self.noise.e_x_bound, self.noise.e_u_bound, dist)?)
    }

    pub fn experiment_x0(&self, n: usize) -> DVector<f64> {
        self.experiment
            .x0
            .as_ref()
            .map_or_else(|| DVector::zeros(n), |v| DVector::from_column_slice(v))
    }

    pub fn closed_loop_x0(&self, n: usize) -> DVector<f64> {
        self.closed_loop
            .x0
            .as_ref()
            .map_or_else(|| DVector::from_element(n, 1.0), |v| DVector::from_column_slice(v))
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            feas_tol: self.solver.feas_tol,
            margin: self.solver.margin,
            max_iter: self.solver.max_iter,
            seed: self.experiment.seed,
            ..SolverSettings::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// A validated sweep: grids, trial count and the run configuration it varies.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub t_grid: Vec<usize>,
    pub theta_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub redraw_plant: bool,
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn from_config(cfg: &RunConfig) -> CliResult<Self> {
        let s = cfg
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("the configuration has no [sweep] section".into()))?;
        cfg.validate()?;
        Ok(Self {
            t_grid: s.t_grid.clone(),
            theta_grid: s.theta_grid.clone(),
            trials: s.trials,
            seed: s.seed,
            redraw_plant: s.redraw_plant,
            base: cfg.clone(),
        })
    }

    /// `T ∈ {20, 40, …, 200}`.
    pub fn default_t_grid() -> Vec<usize> {
        (1..=10).map(|i| 20 * i).collect()
    }

    /// `θ ∈ {10⁻⁶, √10·10⁻⁶, …, 10⁻³}`.
    pub fn default_theta_grid() -> Vec<f64> {
        (0..7).map(|i| 1e-6 * 10f64.powf(i as f64 / 2.0)).collect()
    }
}
