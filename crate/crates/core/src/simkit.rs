//! Ground-truth plants, the data-collection experiment and closed-loop evaluation.
//!
//! The experiment commands `uᵐ(k)`, the plant receives `u(k) = uᵐ(k) − e_u(k)`,
//! and the sensor reports `xᵐ(k) = x(k) + e_x(k)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{hcat, sigma_max, spectral_radius, vcat};
use crate::rng::rng_from_seed;

/// Overflow guard for open-loop experiments.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "B has {} rows, A has {}",
                b.nrows(),
                a.nrows()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `[A B]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        hcat(&self.a, &self.b)
    }

    /// Rank of `[B, AB, …, A^{n-1}B]`.
    pub fn controllability_rank(&self) -> usize {
        let n = self.n();
        let mut blocks = self.b.clone();
        let mut power = self.b.clone();
        for _ in 1..n {
            power = &self.a * power;
            blocks = hcat(&blocks, &power);
        }
        if blocks.is_empty() {
            return 0;
        }
        let sv = blocks.singular_values();
        let top = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count()
    }

    pub fn is_controllable(&self) -> bool {
        self.controllability_rank() == self.n()
    }

    /// Gaussian `A` rescaled to the requested spectral radius, Gaussian `B / √n`.
    pub fn random(n: usize, m: usize, spectral_radius_target: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut a = gaussian_matrix(&mut rng, n, n);
        let rho = spectral_radius(&a);
        if rho > 0.0 {
            a *= spectral_radius_target / rho;
        }
        let b = gaussian_matrix(&mut rng, n, m) / (n as f64).sqrt();
        Self { a, b }
    }

    /// `A = Q diag(eigs) Q⁻¹` with a random `Q` of condition number at most 2.
    pub fn with_eigenvalues(eigenvalues: &[f64], m: usize, seed: u64) -> Self {
        let n = eigenvalues.len();
        let mut rng = rng_from_seed(seed);
        let u = random_orthogonal(&mut rng, n);
        let v = random_orthogonal(&mut rng, n);
        let s = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(1.0..2.0)));
        let q = &u * s * v.transpose();
        let q_inv = q.clone().try_inverse().expect("well-conditioned by construction");
        let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
        let a = &q * lambda * q_inv;
        let b = gaussian_matrix(&mut rng, n, m) / (n as f64).sqrt();
        Self { a, b }
    }
}

/// Surrogate for the seven-state distillation benchmark: same spectrum, random basis.
pub const DISTILLATION_EIGENVALUES: [f64; 7] = [0.0, 0.0, 0.8607, 0.8607, 0.9024, 0.9024, 0.9217];

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the distribution is Haar.
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDistribution {
    /// Uniform in the ball of radius `√bound`.
    #[default]
    UniformBall,
    /// Uniform on the sphere of radius `√bound` (worst case magnitude).
    UniformSphere,
    /// Isotropic Gaussian truncated to the ball.
    TruncatedGaussian,
}

impl std::str::FromStr for NoiseDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-ball" => Ok(Self::UniformBall),
            "uniform-sphere" => Ok(Self::UniformSphere),
            "truncated-gaussian" => Ok(Self::TruncatedGaussian),
            other => Err(Error::InvalidInput(format!("unknown noise distribution '{other}'"))),
        }
    }
}

impl std::fmt::Display for NoiseDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UniformBall => "uniform-ball",
            Self::UniformSphere => "uniform-sphere",
            Self::TruncatedGaussian => "truncated-gaussian",
        })
    }
}

/// Bounds `|e_x|² ≤ ē_x`, `|e_u|² ≤ ē_u` and the law used to draw errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub e_x_bound: f64,
    pub e_u_bound: f64,
    pub distribution: NoiseDistribution,
}

impl NoiseModel {
    pub fn new(e_x_bound: f64, e_u_bound: f64, distribution: NoiseDistribution) -> Result<Self> {
        if !(e_x_bound >= 0.0 && e_u_bound >= 0.0) {
            return Err(Error::InvalidInput("noise bounds must be nonnegative".into()));
        }
        Ok(Self {
            e_x_bound,
            e_u_bound,
            distribution,
        })
    }

    pub fn noise_free() -> Self {
        Self {
            e_x_bound: 0.0,
            e_u_bound: 0.0,
            distribution: NoiseDistribution::UniformBall,
        }
    }

    /// Bound on `|ε(k)|²` implied by the per-signal bounds: `2ē_x + ē_u`.
    pub fn stacked_bound(&self) -> f64 {
        2.0 * self.e_x_bound + self.e_u_bound
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize, bound: f64) -> DVector<f64> {
        let radius = bound.sqrt();
        if dim == 0 || radius == 0.0 {
            return DVector::zeros(dim);
        }
        match self.distribution {
            NoiseDistribution::UniformBall | NoiseDistribution::UniformSphere => {
                let dir = unit_vector(rng, dim);
                let r = if self.distribution == NoiseDistribution::UniformSphere {
                    radius
                } else {
                    let u: f64 = rng.random();
                    radius * u.powf(1.0 / dim as f64)
                };
                // Rounding must not push the sample past the bound.
                let v = dir * r;
                clamp_norm(v, radius)
            }
            NoiseDistribution::TruncatedGaussian => {
                let sigma = radius / (dim as f64).sqrt();
                loop {
                    let v: DVector<f64> = DVector::from_fn(dim, |_, _| {
                        let z: f64 = StandardNormal.sample(rng);
                        sigma * z
                    });
                    if v.norm_squared() <= bound {
                        return v;
                    }
                }
            }
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn clamp_norm(v: DVector<f64>, radius: f64) -> DVector<f64> {
    if v.norm_squared() > radius * radius {
        let s = radius / v.norm() * (1.0 - 1e-15);
        v * s
    } else {
        v
    }
}

/// True signals and errors, available only for simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSignals {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub e_x: Vec<DVector<f64>>,
    pub e_u: Vec<DVector<f64>>,
}

/// `T` measured inputs and `T + 1` measured states.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredTrajectory {
    pub u_m: Vec<DVector<f64>>,
    pub x_m: Vec<DVector<f64>>,
    pub hidden: Option<HiddenSignals>,
}

impl MeasuredTrajectory {
    /// Measured data without ground truth.
    pub fn from_measurements(u_m: Vec<DVector<f64>>, x_m: Vec<DVector<f64>>) -> Result<Self> {
        if u_m.is_empty() || x_m.len() != u_m.len() + 1 {
            return Err(Error::Dimension(format!(
                "need T >= 1 inputs and T + 1 states, got {} and {}",
                u_m.len(),
                x_m.len()
            )));
        }
        let (n, m) = (x_m[0].len(), u_m[0].len());
        if x_m.iter().any(|x| x.len() != n) || u_m.iter().any(|u| u.len() != m) {
            return Err(Error::Dimension("ragged trajectory".into()));
        }
        Ok(Self {
            u_m,
            x_m,
            hidden: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.u_m.len()
    }

    pub fn n(&self) -> usize {
        self.x_m[0].len()
    }

    pub fn m(&self) -> usize {
        self.u_m[0].len()
    }

    /// `ε(k) = [e_x(k+1); e_x(k); e_u(k)]` for `k = 0..T`.
    pub fn stacked_errors(&self) -> Option<Vec<DVector<f64>>> {
        let h = self.hidden.as_ref()?;
        Some(
            (0..self.horizon())
                .map(|k| {
                    let top = vcat_vec(&h.e_x[k + 1], &h.e_x[k]);
                    vcat_vec(&top, &h.e_u[k])
                })
                .collect(),
        )
    }

    /// `S₀ = [X₀; U₀]` built from the true signals.
    pub fn true_stacked_data(&self) -> Option<DMatrix<f64>> {
        let h = self.hidden.as_ref()?;
        let t = self.horizon();
        let x0 = DMatrix::from_fn(self.n(), t, |r, c| h.x[c][r]);
        let u0 = DMatrix::from_fn(self.m(), t, |r, c| h.u[c][r]);
        Some(vcat(&x0, &u0))
    }
}

fn vcat_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Runs the data-collection experiment.
pub fn simulate_experiment(
    plant: &PlantModel,
    x0: &DVector<f64>,
    input_amplitude: f64,
    horizon: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<MeasuredTrajectory> {
    let (n, m) = (plant.n(), plant.m());
    if horizon < 1 {
        return Err(Error::InvalidInput("experiment length T must be at least 1".into()));
    }
    if !(input_amplitude > 0.0) {
        return Err(Error::InvalidInput("input amplitude must be positive".into()));
    }
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, plant has n = {n}", x0.len())));
    }
    let mut rng = rng_from_seed(seed);
    let mut x = Vec::with_capacity(horizon + 1);
    let mut u = Vec::with_capacity(horizon);
    let mut e_x = Vec::with_capacity(horizon + 1);
    let mut e_u = Vec::with_capacity(horizon);
    let mut u_m = Vec::with_capacity(horizon);
    let mut x_m = Vec::with_capacity(horizon + 1);

    x.push(x0.clone());
    for k in 0..horizon {
        let cmd = DVector::from_fn(m, |_, _| rng.random_range(-input_amplitude..=input_amplitude));
        let eu = noise.draw(&mut rng, m, noise.e_u_bound);
        let ex = noise.draw(&mut rng, n, noise.e_x_bound);
        let actual = &cmd - &eu;
        x_m.push(&x[k] + &ex);
        let next = &plant.a * &x[k] + &plant.b * &actual;
        let norm = next.norm();
        if !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(Error::UnstableExperiment { step: k + 1, norm });
        }
        x.push(next);
        u.push(actual);
        u_m.push(cmd);
        e_u.push(eu);
        e_x.push(ex);
    }
    let ex = noise.draw(&mut rng, n, noise.e_x_bound);
    x_m.push(&x[horizon] + &ex);
    e_x.push(ex);

    Ok(MeasuredTrajectory {
        u_m,
        x_m,
        hidden: Some(HiddenSignals { x, u, e_x, e_u }),
    })
}

/// `σ_min(S₀S₀ᵀ) / σ_max(Θ₂₂)` and whether it exceeds 4.
pub fn snr_sufficient(traj: &MeasuredTrajectory, theta22: &DMatrix<f64>) -> Result<(f64, bool)> {
    let s0 = traj
        .true_stacked_data()
        .ok_or_else(|| Error::InvalidInput("true data are only available for simulated runs".into()))?;
    let k = s0.nrows();
    if theta22.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "Θ₂₂ must be {k}x{k}, got {}x{}",
            theta22.nrows(),
            theta22.ncols()
        )));
    }
    let noise = sigma_max(theta22);
    if noise == 0.0 {
        return Ok((f64::INFINITY, true));
    }
    let gram = &s0 * s0.transpose();
    let ratio = crate::linalg::sigma_min(&gram) / noise;
    Ok((ratio, ratio > 4.0))
}

/// Iterates `x⁺ = (A + B K) x`; returns `steps + 1` states starting at `x0`.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    if k.shape() != (plant.m(), plant.n()) || x0.len() != plant.n() {
        return Err(Error::Dimension("gain or initial state does not match the plant".into()));
    }
    let closed = &plant.a + &plant.b * k;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for i in 0..steps {
        let next = &closed * &out[i];
        out.push(next);
    }
    Ok(out)
}
