//! Data matrices and the sets of plant parameters consistent with them.
//!
//! Energy bound: `E₁₀E₁₀ᵀ ⪯ Θ` gives the matrix ellipsoid
//! `𝒞ₑ = {Z : (Z − 𝒵)𝒜(Z − 𝒵)ᵀ ⪯ 𝒬}`.
//! Instantaneous bound: `|ε(k)|² ≤ θ` for every `k` gives `𝒞ᵢ`, the
//! intersection of one set per data point.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{hcat, lambda_max, lambda_min, max_abs, pd_inv_sqrt, psd_clip, psd_sqrt, sigma_max, sym, vcat};
use crate::simkit::MeasuredTrajectory;

/// Default relative tolerance for set membership.
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-8;
/// Default relative tolerance for the signal-to-noise assumption.
pub const DEFAULT_ASSUMPTION_TOL: f64 = 1e-10;

/// `X₁ᵐ`, `X₀ᵐ`, `U₀ᵐ`, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub x1m: DMatrix<f64>,
    pub x0m: DMatrix<f64>,
    pub u0m: DMatrix<f64>,
}

impl DataMatrices {
    pub fn new(x1m: DMatrix<f64>, x0m: DMatrix<f64>, u0m: DMatrix<f64>) -> Result<Self> {
        let t = x1m.ncols();
        if t == 0 || x0m.ncols() != t || u0m.ncols() != t {
            return Err(Error::Dimension("data matrices need the same nonzero column count".into()));
        }
        if x0m.nrows() != x1m.nrows() {
            return Err(Error::Dimension("X₀ and X₁ must have the same row count".into()));
        }
        Ok(Self { x1m, x0m, u0m })
    }

    pub fn horizon(&self) -> usize {
        self.x1m.ncols()
    }

    pub fn n(&self) -> usize {
        self.x1m.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0m.nrows()
    }

    /// `[X₀ᵐ; U₀ᵐ]`.
    pub fn regressor(&self) -> DMatrix<f64> {
        vcat(&self.x0m, &self.u0m)
    }

    /// Residual `X₁ᵐ − Z [X₀ᵐ; U₀ᵐ]`.
    pub fn residual(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.x1m - z * self.regressor()
    }

    /// Least-squares fit of `[A B]`, if the regressor has full row rank.
    pub fn least_squares(&self) -> Option<DMatrix<f64>> {
        let reg = self.regressor();
        let gram = &reg * reg.transpose();
        let rhs = &reg * self.x1m.transpose();
        Some(gram.cholesky()?.solve(&rhs).transpose())
    }
}

/// Builds the data matrices from a measured trajectory.
pub fn assemble(traj: &MeasuredTrajectory) -> DataMatrices {
    let t = traj.horizon();
    let (n, m) = (traj.n(), traj.m());
    DataMatrices {
        x1m: DMatrix::from_fn(n, t, |r, c| traj.x_m[c + 1][r]),
        x0m: DMatrix::from_fn(n, t, |r, c| traj.x_m[c][r]),
        u0m: DMatrix::from_fn(m, t, |r, c| traj.u_m[c][r]),
    }
}

/// Energy bound `Θ` over `ℝ^{2n+m}`, partitioned as `[Θ₁₁ Θ₁₂; Θ₁₂ᵀ Θ₂₂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBound {
    theta: DMatrix<f64>,
    n: usize,
}

impl EnergyBound {
    pub fn new(theta: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        let d = 2 * n + m;
        if theta.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "Θ must be {d}x{d} for n = {n}, m = {m}; got {}x{}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        let scale = max_abs(&theta);
        if max_abs(&(&theta - theta.transpose())) > 1e-10 * (1.0 + scale) {
            return Err(Error::InvalidInput("Θ is not symmetric".into()));
        }
        let theta = sym(&theta);
        let lmin = lambda_min(&theta);
        if lmin < -1e-9 * (1.0 + scale) {
            return Err(Error::InvalidInput(format!("Θ is not PSD (lambda_min = {lmin:.3e})")));
        }
        Ok(Self { theta, n })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn theta11(&self) -> DMatrix<f64> {
        self.theta.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn theta12(&self) -> DMatrix<f64> {
        let k = self.theta.ncols() - self.n;
        self.theta.view((0, self.n), (self.n, k)).into_owned()
    }

    pub fn theta22(&self) -> DMatrix<f64> {
        let k = self.theta.ncols() - self.n;
        self.theta.view((self.n, self.n), (k, k)).into_owned()
    }
}

/// `Θ = T(2ē_x + ē_u) I`, the energy bound implied by per-sample bounds.
pub fn inst_to_energy(e_x_bound: f64, e_u_bound: f64, horizon: usize, n: usize, m: usize) -> EnergyBound {
    assert!(e_x_bound >= 0.0 && e_u_bound >= 0.0 && horizon >= 1);
    let level = horizon as f64 * (2.0 * e_x_bound + e_u_bound);
    let d = 2 * n + m;
    EnergyBound {
        theta: DMatrix::identity(d, d) * level,
        n,
    }
}

/// Per-sample bound `|ε(k)|² ≤ θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantaneousBound {
    theta: f64,
}

impl InstantaneousBound {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::InvalidInput(format!("θ must be finite and nonnegative, got {theta}")));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The enclosing energy bound `Θ = Tθ I`.
    pub fn to_energy(&self, horizon: usize, n: usize, m: usize) -> EnergyBound {
        let d = 2 * n + m;
        EnergyBound {
            theta: DMatrix::identity(d, d) * (horizon as f64 * self.theta),
            n,
        }
    }
}

/// The ellipsoid `𝒞ₑ` with its center `𝒵` and shape matrices.
#[derive(Debug, Clone)]
pub struct EnergyConsistencySet {
    pub ascr: DMatrix<f64>,
    pub bscr: DMatrix<f64>,
    pub cscr: DMatrix<f64>,
    pub zscr: DMatrix<f64>,
    pub qscr: DMatrix<f64>,
    pub qhalf: DMatrix<f64>,
    pub ainvhalf: DMatrix<f64>,
    /// `λ_min(𝒬)` before clipping.
    pub q_lambda_min: f64,
}

impl EnergyConsistencySet {
    pub fn n(&self) -> usize {
        self.bscr.nrows()
    }

    pub fn m(&self) -> usize {
        self.bscr.ncols() - self.bscr.nrows()
    }

    /// `𝒜⁻¹`.
    pub fn ascr_inv(&self) -> DMatrix<f64> {
        &self.ainvhalf * &self.ainvhalf
    }

    /// `Z𝒜Zᵀ + Zℬᵀ + ℬZᵀ + 𝒞`.
    pub fn raw_form(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let zb = z * self.bscr.transpose();
        z * &self.ascr * z.transpose() + &zb + zb.transpose() + &self.cscr
    }

    /// `‖𝒬^{1/2}‖₂ · ‖𝒜^{-1/2}‖₂`, a bound on `‖Z − 𝒵‖₂` over the set.
    pub fn radius_bound(&self) -> f64 {
        sigma_max(&self.qhalf) * sigma_max(&self.ainvhalf)
    }
}

/// Builds `𝒞ₑ`; fails unless `[X₀ᵐ; U₀ᵐ][X₀ᵐ; U₀ᵐ]ᵀ − Θ₂₂ ≻ 0`.
///
/// `tol` is relative to the largest eigenvalue of the data Gram matrix.
pub fn build_energy_set(data: &DataMatrices, bound: &EnergyBound, tol: f64) -> Result<EnergyConsistencySet> {
    let (n, m) = (data.n(), data.m());
    if bound.theta.nrows() != 2 * n + m || bound.n != n {
        return Err(Error::Dimension(format!(
            "Θ is {}x{}, data need {}",
            bound.theta.nrows(),
            bound.theta.ncols(),
            2 * n + m
        )));
    }
    let reg = data.regressor();
    let gram = &reg * reg.transpose();
    let ascr = sym(&(&gram - bound.theta22()));
    let bscr = -&data.x1m * reg.transpose() + bound.theta12();
    let cscr = sym(&(&data.x1m * data.x1m.transpose() - bound.theta11()));

    let a_min = lambda_min(&ascr);
    let scale = 1.0 + lambda_max(&gram).max(0.0);
    if !(a_min > tol * scale) {
        return Err(Error::AssumptionViolated { lambda_min: a_min });
    }
    let ainvhalf = pd_inv_sqrt(&ascr).ok_or(Error::AssumptionViolated { lambda_min: a_min })?;
    let ainv = &ainvhalf * &ainvhalf;
    let zscr = -&bscr * &ainv;
    // ℬ𝒜⁻¹ℬᵀ − 𝒞 rewritten through the residual at the center, which avoids
    // subtracting two Gram matrices of the size of X₁X₁ᵀ
    let w = error_map(&zscr);
    let res = &data.x1m - &zscr * &reg;
    let qraw = sym(&(&w * bound.theta() * w.transpose() - &res * res.transpose()));
    let q_lambda_min = lambda_min(&qraw);
    // Qscr is a difference of two matrices of size ~ max(|ℬ𝒜⁻¹ℬᵀ|, |𝒞|); judge its sign relative to that.
    let q_scale = 1.0 + max_abs(&cscr).max(lambda_max(&(&bscr * &ainv * bscr.transpose())));
    if q_lambda_min < -1e-8 * q_scale.max(1.0) {
        return Err(Error::EmptySet {
            lambda_min: q_lambda_min,
        });
    }
    let qscr = if q_lambda_min < 0.0 { psd_clip(&qraw) } else { qraw };
    let qhalf = psd_sqrt(&qscr);
    Ok(EnergyConsistencySet {
        ascr,
        bscr,
        cscr,
        zscr,
        qscr,
        qhalf,
        ainvhalf,
        q_lambda_min,
    })
}

/// `(Z − 𝒵)𝒜(Z − 𝒵)ᵀ ⪯ 𝒬` up to `tol·(1 + λ_max(𝒬))`.
pub fn membership_energy(set: &EnergyConsistencySet, z: &DMatrix<f64>, tol: f64) -> bool {
    if z.shape() != set.zscr.shape() {
        return false;
    }
    let dz = z - &set.zscr;
    let gap = &set.qscr - &dz * &set.ascr * dz.transpose();
    lambda_min(&gap) >= -tol * (1.0 + lambda_max(&set.qscr).max(0.0))
}

/// Membership through the unreduced quadratic form `Z𝒜Zᵀ + Zℬᵀ + ℬZᵀ + 𝒞 ⪯ 0`.
pub fn membership_energy_raw(set: &EnergyConsistencySet, z: &DMatrix<f64>, tol: f64) -> bool {
    lambda_max(&set.raw_form(z)) <= tol * (1.0 + lambda_max(&set.qscr).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// `Υ = r Γ / σ_max(Γ)` with `r ~ U[0, 1]`.
    Interior,
    /// `σ_max(Υ) = 1`.
    Boundary,
}

/// Draws `Υ` with `‖Υ‖₂ ≤ 1` according to `mode`.
pub fn sample_upsilon<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, mode: SampleMode) -> DMatrix<f64> {
    let gamma = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    let s = sigma_max(&gamma);
    let r: f64 = match mode {
        SampleMode::Interior => rng.random(),
        SampleMode::Boundary => 1.0,
    };
    if s == 0.0 {
        return DMatrix::zeros(n, k);
    }
    gamma * (r / s)
}

/// `𝒵 + 𝒬^{1/2} Υ 𝒜^{-1/2}`.
pub fn member_from_upsilon(set: &EnergyConsistencySet, upsilon: &DMatrix<f64>) -> DMatrix<f64> {
    &set.zscr + &set.qhalf * upsilon * &set.ainvhalf
}

/// One random member of `𝒞ₑ`.
pub fn sample_energy<R: Rng + ?Sized>(set: &EnergyConsistencySet, mode: SampleMode, rng: &mut R) -> DMatrix<f64> {
    let ups = sample_upsilon(rng, set.n(), set.n() + set.m(), mode);
    member_from_upsilon(set, &ups)
}

/// `Z = [A B] ∈ 𝒞ᵢ`: for every `k`, `r(k)r(k)ᵀ ⪯ θ(I + AAᵀ + BBᵀ)` with
/// `r(k) = xᵐ(k+1) − A xᵐ(k) − B uᵐ(k)`.
///
/// The rank-one test is evaluated as `r(k)ᵀ M⁻¹ r(k) ≤ 1` with
/// `M = θ(I + ZZᵀ) + tol·(1 + θ λ_max(I + ZZᵀ)) I`.
pub fn membership_inst(data: &DataMatrices, bound: &InstantaneousBound, z: &DMatrix<f64>, tol: f64) -> bool {
    let n = data.n();
    if z.shape() != (n, n + data.m()) {
        return false;
    }
    let spread = DMatrix::identity(n, n) + z * z.transpose();
    let top = lambda_max(&spread);
    let m = &spread * bound.theta + DMatrix::identity(n, n) * (tol * (1.0 + bound.theta * top));
    let Some(chol) = m.cholesky() else {
        return false;
    };
    let res = data.residual(z);
    (0..res.ncols()).all(|k| {
        let r: DVector<f64> = res.column(k).into_owned();
        let w = chol.solve(&r);
        r.dot(&w) <= 1.0
    })
}

/// Index of the first data point whose consistency test fails, if any.
pub fn first_inst_violation(data: &DataMatrices, bound: &InstantaneousBound, z: &DMatrix<f64>, tol: f64) -> Option<usize> {
    (0..data.horizon()).find(|&k| {
        let single = DataMatrices {
            x1m: data.x1m.columns(k, 1).into_owned(),
            x0m: data.x0m.columns(k, 1).into_owned(),
            u0m: data.u0m.columns(k, 1).into_owned(),
        };
        !membership_inst(&single, bound, z, tol)
    })
}

/// `[I −A −B]`.
pub fn error_map(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    hcat(&DMatrix::identity(n, n), &(-z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::simkit::{simulate_experiment, NoiseDistribution, NoiseModel, PlantModel};

    fn plant() -> PlantModel {
        PlantModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.4, -0.1, 1.05]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    fn noisy(t: usize, ex: f64, eu: f64, seed: u64) -> MeasuredTrajectory {
        let noise = NoiseModel::new(ex, eu, NoiseDistribution::UniformBall).unwrap();
        simulate_experiment(&plant(), &DVector::zeros(2), 1.0, t, &noise, seed).unwrap()
    }

    #[test]
    fn assemble_single_step() {
        let traj = noisy(1, 0.0, 0.0, 1);
        let d = assemble(&traj);
        assert_eq!(d.x1m.shape(), (2, 1));
        assert_eq!(d.u0m.shape(), (1, 1));
    }

    #[test]
    fn assemble_noise_free_is_exact() {
        let traj = noisy(12, 0.0, 0.0, 2);
        let d = assemble(&traj);
        let p = plant();
        assert!((&d.x1m - &p.a * &d.x0m - &p.b * &d.u0m).norm() < 1e-12);
    }

    #[test]
    fn residual_columns_follow_stacked_errors() {
        let traj = noisy(25, 1e-3, 2e-3, 3);
        let d = assemble(&traj);
        let p = plant();
        let eps = traj.stacked_errors().unwrap();
        let map = error_map(&p.stacked());
        let res = d.residual(&p.stacked());
        for (k, e) in eps.iter().enumerate() {
            let expected = &map * e;
            assert!((res.column(k) - expected).norm() < 1e-13);
        }
    }

    #[test]
    fn remark_two_conversion() {
        let b = inst_to_energy(5e-5, 5e-5, 200, 7, 3);
        assert_eq!(b.theta().shape(), (17, 17));
        assert!((b.theta()[(0, 0)] - 0.03).abs() < 1e-15);
        assert!((b.theta() - DMatrix::identity(17, 17) * 0.03).norm() < 1e-14);
        assert_eq!(inst_to_energy(0.0, 0.0, 5, 2, 1).theta(), &DMatrix::zeros(5, 5));
        assert_eq!(inst_to_energy(1.0, 0.0, 2, 1, 1).theta(), &(DMatrix::identity(3, 3) * 4.0));
        let t = b.theta();
        let back = crate::linalg::sym_blocks(
            &[7, 10],
            &[(0, 0, b.theta11()), (0, 1, b.theta12()), (1, 1, b.theta22())],
        );
        assert_eq!(&back, t);
    }

    #[test]
    fn noise_free_set_is_the_true_plant() {
        let traj = noisy(20, 0.0, 0.0, 4);
        let d = assemble(&traj);
        let set = build_energy_set(&d, &inst_to_energy(0.0, 0.0, 20, 2, 1), DEFAULT_ASSUMPTION_TOL).unwrap();
        let truth = plant().stacked();
        assert!((&set.zscr - &truth).norm() / truth.norm() < 1e-8);
        assert!(max_abs(&set.qscr) < 1e-10);
        let ls = d.least_squares().unwrap();
        assert!((&set.zscr - ls).norm() < 1e-10);
    }

    #[test]
    fn short_data_violates_assumption() {
        let traj = noisy(2, 0.0, 0.0, 5);
        let d = assemble(&traj);
        let err = build_energy_set(&d, &inst_to_energy(0.0, 0.0, 2, 2, 1), DEFAULT_ASSUMPTION_TOL).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated { .. }));
        let bad = EnergyBound::new(DMatrix::zeros(4, 4), 1, 2).unwrap();
        assert!(matches!(build_energy_set(&d, &bad, 1e-10), Err(Error::Dimension(_))));
    }

    #[test]
    fn true_plant_and_center_are_members() {
        let traj = noisy(40, 1e-3, 1e-3, 6);
        let d = assemble(&traj);
        let set = build_energy_set(&d, &inst_to_energy(1e-3, 1e-3, 40, 2, 1), DEFAULT_ASSUMPTION_TOL).unwrap();
        assert!(set.q_lambda_min >= -1e-8);
        assert!(membership_energy(&set, &set.zscr, DEFAULT_MEMBERSHIP_TOL));
        assert!(membership_energy(&set, &plant().stacked(), DEFAULT_MEMBERSHIP_TOL));
        let bound = InstantaneousBound::new(3e-3).unwrap();
        assert!(membership_inst(&d, &bound, &plant().stacked(), DEFAULT_MEMBERSHIP_TOL));
    }

    #[test]
    fn just_outside_the_ellipsoid() {
        let traj = noisy(40, 1e-3, 1e-3, 7);
        let d = assemble(&traj);
        let set = build_energy_set(&d, &inst_to_energy(1e-3, 1e-3, 40, 2, 1), DEFAULT_ASSUMPTION_TOL).unwrap();
        assert!(lambda_min(&set.qscr) > 0.0);
        // Υ with orthonormal rows sits on the boundary; scaling by 1.01 leaves the set.
        let ups = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let on = member_from_upsilon(&set, &ups);
        let out = member_from_upsilon(&set, &(ups * 1.01));
        assert!(membership_energy(&set, &on, 1e-8));
        assert!(!membership_energy(&set, &out, 1e-8));
        // oracle: the quadratic form along the first row direction
        let dz = &out - &set.zscr;
        let form = &dz * &set.ascr * dz.transpose() - &set.qscr;
        assert!(lambda_max(&form) > 0.0);
    }

    #[test]
    fn samples_stay_inside() {
        let traj = noisy(30, 1e-3, 1e-3, 8);
        let d = assemble(&traj);
        let set = build_energy_set(&d, &inst_to_energy(1e-3, 1e-3, 30, 2, 1), DEFAULT_ASSUMPTION_TOL).unwrap();
        let mut rng = rng_from_seed(0);
        for mode in [SampleMode::Interior, SampleMode::Boundary] {
            for _ in 0..200 {
                let z = sample_energy(&set, mode, &mut rng);
                assert!(membership_energy(&set, &z, DEFAULT_MEMBERSHIP_TOL));
                assert!((&z - &set.zscr).norm() <= set.radius_bound() * 3f64.sqrt() + 1e-12);
            }
        }
        assert_eq!(member_from_upsilon(&set, &DMatrix::zeros(2, 3)), set.zscr);
    }

    #[test]
    fn single_bad_step_is_detected() {
        let traj = noisy(15, 0.0, 0.0, 9);
        let mut d = assemble(&traj);
        let truth = plant().stacked();
        let bound = InstantaneousBound::new(0.0).unwrap();
        assert!(membership_inst(&d, &bound, &truth, 1e-10));
        d.x1m[(1, 6)] += 0.05;
        assert_eq!(first_inst_violation(&d, &bound, &truth, 1e-10), Some(6));
        assert!(!membership_inst(&d, &bound, &truth, 1e-10));
        // oracle: per-step scalar test rᵀ(I + ZZᵀ)⁻¹r ≤ θ at two levels around the violation
        let r: DVector<f64> = d.residual(&truth).column(6).into_owned();
        let spread_inv = (DMatrix::identity(2, 2) + &truth * truth.transpose()).try_inverse().unwrap();
        let level = r.dot(&(&spread_inv * &r));
        let below = InstantaneousBound::new(level * 0.99).unwrap();
        let above = InstantaneousBound::new(level * 1.01).unwrap();
        assert!(!membership_inst(&d, &below, &truth, 1e-10));
        assert!(membership_inst(&d, &above, &truth, 1e-10));
    }

    #[test]
    fn bounds_validate() {
        assert!(InstantaneousBound::new(-1.0).is_err());
        assert!(InstantaneousBound::new(f64::NAN).is_err());
        assert!(EnergyBound::new(-DMatrix::identity(3, 3), 1, 1).is_err());
        assert!(EnergyBound::new(DMatrix::identity(4, 4), 1, 1).is_err());
    }
}
