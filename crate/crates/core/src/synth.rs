//! Controller synthesis from data: the energy-bound and instantaneous-bound
//! LMI programs, gain recovery, and certificate verification.

use nalgebra::{DMatrix, DVector};

use crate::conset::{
    build_energy_set, member_from_upsilon, membership_inst, sample_energy, sample_upsilon, DataMatrices,
    EnergyConsistencySet, InstantaneousBound, SampleMode, DEFAULT_ASSUMPTION_TOL, DEFAULT_MEMBERSHIP_TOL,
};
use crate::linalg::{lambda_max, lambda_min, sigma_max, spectral_radius, sym};
use crate::rng::substream;
use crate::sdp::{
    solve_feasibility, LmiConstraint, LmiProblem, MatVar, ScalarVar, Sense, SolveDiagnostics, SolveStatus,
    SolverSettings, Strictness,
};
use crate::{Error, Result};

/// Relative tolerance used by the verifiers when none is given.
pub const DEFAULT_VERIFY_TOL: f64 = 1e-12;
/// Column norms of the data spanning more than this ratio trigger a warning.
pub const TAU_SPREAD_WARNING: f64 = 1e6;
/// Rejection yield below which instantaneous-set sampling reports starvation.
pub const MIN_REJECTION_YIELD: f64 = 0.01;
const ATTEMPTS_PER_SAMPLE: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisCertificate {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Multipliers of the instantaneous program.
    pub taus: Option<Vec<f64>>,
    /// Smallest distance of any constraint from its boundary, in absolute units.
    pub margin: f64,
}

impl SynthesisCertificate {
    /// Builds a certificate from `(K, P)` with `Y = K P`.
    pub fn from_gain(k: DMatrix<f64>, p: DMatrix<f64>) -> Self {
        let y = &k * &p;
        Self {
            k,
            p,
            y,
            taus: None,
            margin: f64::NAN,
        }
    }
}

/// The energy-bound program with handles to its variables.
#[derive(Debug, Clone)]
pub struct EnergyLmi {
    pub problem: LmiProblem,
    pub p: MatVar,
    pub y: MatVar,
}

/// The instantaneous-bound program with handles to its variables.
#[derive(Debug, Clone)]
pub struct InstLmi {
    pub problem: LmiProblem,
    pub p: MatVar,
    pub y: MatVar,
    pub taus: Vec<ScalarVar>,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub status: SolveStatus,
    pub certificate: Option<SynthesisCertificate>,
    pub diagnostics: SolveDiagnostics,
    pub warnings: Vec<String>,
}

impl SynthesisOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// `[Iₙ 0]` of size `n × (n + m)`.
fn select_first(n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n + m, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// `[0 Iₘ]` of size `m × (n + m)`.
fn select_last(n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n + m, |i, j| if j == n + i { 1.0 } else { 0.0 })
}

fn positivity(n: usize, p: MatVar) -> LmiConstraint {
    LmiConstraint::new("P > 0", &[n], Sense::Psd, Strictness::Strict).var(0, 0, eye(n), p, eye(n))
}

/// Quadratic stabilization of every member of `𝒞ₑ`:
///
/// ```text
/// [ −P − 𝒞    0        ℬ     ]
/// [  0       −P     [P  Yᵀ]  ]  ≺ 0,   P ≻ 0
/// [  ℬᵀ    [P; Y]     −𝒜     ]
/// ```
pub fn build_energy_lmi(set: &EnergyConsistencySet) -> EnergyLmi {
    let (n, m) = (set.n(), set.m());
    let mut problem = LmiProblem::new();
    let p = problem.matrix_var("P", n, n, true);
    let y = problem.matrix_var("Y", m, n, false);
    problem
        .add_constraint(positivity(n, p))
        .expect("positivity block is well formed");
    let block = LmiConstraint::new("robust decrease", &[n, n, n + m], Sense::Nsd, Strictness::Strict)
        .var(0, 0, -eye(n), p, eye(n))
        .constant(0, 0, -&set.cscr)
        .constant(0, 2, set.bscr.clone())
        .var(1, 1, -eye(n), p, eye(n))
        .var(1, 2, eye(n), p, select_first(n, m))
        .var_t(1, 2, eye(n), y, select_last(n, m))
        .constant(2, 2, -&set.ascr);
    problem.add_constraint(block).expect("energy block is well formed");
    EnergyLmi { problem, p, y }
}

/// Sufficient condition for quadratic stabilization of every member of `𝒞ᵢ`:
///
/// ```text
/// [−P 0 0 0; 0 P Yᵀ 0; 0 Y 0 Y; 0 0 Yᵀ −P] − Σₖ τₖ (vₖvₖᵀ − diag(θI, θI, θI, 0)) ≺ 0
/// ```
///
/// with `vₖ = [xᵐ(k+1); −xᵐ(k); −uᵐ(k); 0]`, `τₖ ≥ 0` and `P ≻ 0`.
pub fn build_inst_lmi(data: &DataMatrices, bound: &InstantaneousBound) -> InstLmi {
    let (n, m, t) = (data.n(), data.m(), data.horizon());
    let theta = bound.theta();
    let mut problem = LmiProblem::new();
    let p = problem.matrix_var("P", n, n, true);
    let y = problem.matrix_var("Y", m, n, false);
    let taus: Vec<ScalarVar> = (0..t).map(|k| problem.scalar_var(format!("tau{k}"), Some(0.0))).collect();
    problem
        .add_constraint(positivity(n, p))
        .expect("positivity block is well formed");

    let mut block = LmiConstraint::new("robust decrease", &[n, n, m, n], Sense::Nsd, Strictness::Strict)
        .var(0, 0, -eye(n), p, eye(n))
        .var(1, 1, eye(n), p, eye(n))
        .var_t(1, 2, eye(n), y, eye(m))
        .var(2, 3, eye(m), y, eye(n))
        .var(3, 3, -eye(n), p, eye(n));
    for (k, &tau) in taus.iter().enumerate() {
        let parts: [DVector<f64>; 3] = [
            data.x1m.column(k).into_owned(),
            -data.x0m.column(k).into_owned(),
            -data.u0m.column(k).into_owned(),
        ];
        for i in 0..3 {
            for j in i..3 {
                let mut coeff = -(&parts[i] * parts[j].transpose());
                if i == j {
                    coeff += DMatrix::identity(parts[i].len(), parts[i].len()) * theta;
                }
                block = block.scalar(i, j, tau, coeff);
            }
        }
    }
    problem.add_constraint(block).expect("instantaneous block is well formed");
    InstLmi { problem, p, y, taus }
}

/// `K = Y P⁻¹` through a Cholesky solve of `P Kᵀ = Yᵀ`.
pub fn recover_gain(p: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !p.is_square() || y.ncols() != p.nrows() {
        return Err(Error::Dimension(format!(
            "P is {}x{}, Y is {}x{}",
            p.nrows(),
            p.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let chol = sym(p)
        .cholesky()
        .ok_or_else(|| Error::Singular("P is not numerically positive definite".into()))?;
    let kt = chol.solve(&y.transpose());
    if kt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("P is numerically singular".into()));
    }
    Ok(kt.transpose())
}

/// Warns when the data column norms span more than six orders of magnitude.
pub fn tau_scale_warning(data: &DataMatrices) -> Option<String> {
    let norms: Vec<f64> = (0..data.horizon())
        .map(|k| {
            (data.x1m.column(k).norm_squared() + data.x0m.column(k).norm_squared() + data.u0m.column(k).norm_squared())
                .sqrt()
        })
        .collect();
    let hi = norms.iter().copied().fold(0.0, f64::max);
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    if hi > 0.0 && (lo == 0.0 || hi / lo > TAU_SPREAD_WARNING) {
        Some(format!(
            "data column norms range from {lo:.3e} to {hi:.3e}; multipliers may be badly scaled"
        ))
    } else {
        None
    }
}

fn certificate_margin(problem: &LmiProblem, values: &[f64]) -> f64 {
    -problem.violation(values, 0.0)
}

/// Solves the energy-bound program.
pub fn synthesize_energy(set: &EnergyConsistencySet, settings: &SolverSettings) -> Result<SynthesisOutcome> {
    let lmi = build_energy_lmi(set);
    let out = solve_feasibility(&lmi.problem, settings);
    let certificate = match &out.assignment {
        Some(asg) => {
            let p = asg.matrix(&lmi.problem, lmi.p);
            let y = asg.matrix(&lmi.problem, lmi.y);
            let k = recover_gain(&p, &y)?;
            Some(SynthesisCertificate {
                k,
                p,
                y,
                taus: None,
                margin: certificate_margin(&lmi.problem, &asg.values),
            })
        }
        None => None,
    };
    Ok(SynthesisOutcome {
        status: out.status,
        certificate,
        diagnostics: out.diagnostics,
        warnings: Vec::new(),
    })
}

/// Solves the instantaneous-bound program.
pub fn synthesize_inst(
    data: &DataMatrices,
    bound: &InstantaneousBound,
    settings: &SolverSettings,
) -> Result<SynthesisOutcome> {
    let lmi = build_inst_lmi(data, bound);
    let out = solve_feasibility(&lmi.problem, settings);
    let certificate = match &out.assignment {
        Some(asg) => {
            let p = asg.matrix(&lmi.problem, lmi.p);
            let y = asg.matrix(&lmi.problem, lmi.y);
            let k = recover_gain(&p, &y)?;
            let taus = lmi.taus.iter().map(|&t| asg.scalar(&lmi.problem, t)).collect();
            Some(SynthesisCertificate {
                k,
                p,
                y,
                taus: Some(taus),
                margin: certificate_margin(&lmi.problem, &asg.values),
            })
        }
        None => None,
    };
    Ok(SynthesisOutcome {
        status: out.status,
        certificate,
        diagnostics: out.diagnostics,
        warnings: tau_scale_warning(data).into_iter().collect(),
    })
}

/// Result of the multiplier search behind [`verify_energy_certificate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierSearch {
    pub lambda: f64,
    /// `λ_max` of the multiplier inequality at `lambda`; negative certifies.
    pub lambda_max: f64,
}

/// Minimizes over `λ > 0` the largest eigenvalue of
///
/// ```text
/// [ −P + 𝒬/λ          −𝒵 [P; Y]          ]
/// [     ⋆       −P + λ [P; Y]ᵀ 𝒜⁻¹ [P; Y] ]
/// ```
///
/// with `Y = K P`. The objective is convex in `log λ`, so a log-spaced scan
/// over sixteen decades followed by golden-section refinement finds the minimum.
pub fn energy_multiplier_search(set: &EnergyConsistencySet, k: &DMatrix<f64>, p: &DMatrix<f64>) -> MultiplierSearch {
    let n = set.n();
    let s = crate::linalg::vcat(p, &(k * p));
    let zs = &set.zscr * &s;
    let shat = sym(&(s.transpose() * set.ascr_inv() * &s));
    let q = &set.qscr;
    let eval = |log_l: f64| -> f64 {
        let l = log_l.exp();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(q / l - p));
        m.view_mut((n, n), (n, n)).copy_from(&(&shat * l - p));
        m.view_mut((0, n), (n, n)).copy_from(&(-&zs));
        m.view_mut((n, 0), (n, n)).copy_from(&(-zs.transpose()));
        lambda_max(&sym(&m))
    };
    let (qn, sn, pn) = (sigma_max(q), sigma_max(&shat), sigma_max(p).max(f64::MIN_POSITIVE));
    let center = if qn > 0.0 && sn > 0.0 {
        (qn / sn).sqrt()
    } else if sn > 0.0 {
        pn / sn
    } else {
        1.0
    };
    let (lo, hi) = (center.ln() - 8.0 * std::f64::consts::LN_10, center.ln() + 8.0 * std::f64::consts::LN_10);
    let steps = 64;
    let h = (hi - lo) / steps as f64;
    let grid: Vec<(f64, f64)> = (0..=steps).map(|i| lo + h * i as f64).map(|s| (s, eval(s))).collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (mut a, mut b) = (grid[best.saturating_sub(1)].0, grid[(best + 1).min(steps)].0);
    let (mut best_s, mut best_v) = grid[best];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d);
        }
    }
    for (s, v) in [(c, fc), (d, fd)] {
        if v < best_v {
            best_s = s;
            best_v = v;
        }
    }
    MultiplierSearch {
        lambda: best_s.exp(),
        lambda_max: best_v,
    }
}

/// True iff some `λ > 0` makes the multiplier inequality negative definite,
/// i.e. `(A+BK)P(A+BK)ᵀ − P ≺ 0` for every `[A B] ∈ 𝒞ₑ`.
///
/// `tol` is relative to `‖P‖₂`.
pub fn verify_energy_certificate(set: &EnergyConsistencySet, k: &DMatrix<f64>, p: &DMatrix<f64>, tol: f64) -> bool {
    if p.shape() != (set.n(), set.n()) || k.shape() != (set.m(), set.n()) {
        return false;
    }
    if !(lambda_min(&sym(p)) > 0.0) {
        return false;
    }
    let res = energy_multiplier_search(set, k, p);
    res.lambda_max < -tol * sigma_max(p)
}

/// `Σₖ τₖ ([xᵐ(k); uᵐ(k)][xᵐ(k); uᵐ(k)]ᵀ − θI)`.
pub fn inst_snr_matrix(taus: &[f64], data: &DataMatrices, bound: &InstantaneousBound) -> DMatrix<f64> {
    let r = data.regressor();
    let d = r.nrows();
    let mut s = DMatrix::zeros(d, d);
    for (k, &tau) in taus.iter().enumerate().take(r.ncols()) {
        let col = r.column(k);
        s += (col * col.transpose() - DMatrix::identity(d, d) * bound.theta()) * tau;
    }
    sym(&s)
}

/// True iff the multiplier-weighted signal-to-noise matrix is positive definite
/// with `λ_min > tol · ‖S‖₂`.
pub fn verify_inst_necessary(taus: &[f64], data: &DataMatrices, bound: &InstantaneousBound, tol: f64) -> bool {
    if taus.len() != data.horizon() {
        return false;
    }
    let s = inst_snr_matrix(taus, data, bound);
    let lmin = lambda_min(&s);
    let scale = lambda_max(&s).abs().max(lmin.abs());
    lmin > tol * scale
}

/// Where [`verify_by_sampling`] draws members from.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    Energy(&'a EnergyConsistencySet),
    Instantaneous(&'a DataMatrices, &'a InstantaneousBound),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingReport {
    pub worst_rho: f64,
    pub worst_decrease: f64,
    pub checked: usize,
    pub requested: usize,
    pub attempts: usize,
    pub warning: Option<String>,
}

impl SamplingReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst_rho < 1.0 && self.worst_decrease < 0.0
    }
}

/// `(ρ(A + BK), λ_max((A+BK)P(A+BK)ᵀ − P))` for `z = [A B]`.
pub fn closed_loop_check(z: &DMatrix<f64>, k: &DMatrix<f64>, p: &DMatrix<f64>) -> (f64, f64) {
    let n = p.nrows();
    let a = z.columns(0, n);
    let b = z.columns(n, z.ncols() - n);
    let acl = a + b * k;
    let dec = sym(&(&acl * p * acl.transpose() - p));
    (spectral_radius(&acl), lambda_max(&dec))
}

enum Draw {
    Member(DMatrix<f64>, usize),
    Starved(usize),
}

fn draw_member(source: &SampleSource<'_>, enclosing: Option<&EnergyConsistencySet>, seed: u64, index: usize) -> Draw {
    let mut rng = substream(seed, index as u64);
    match source {
        SampleSource::Energy(set) => Draw::Member(sample_energy(set, SampleMode::Boundary, &mut rng), 1),
        SampleSource::Instantaneous(data, bound) => {
            let set = enclosing.expect("enclosing set is built for instantaneous sampling");
            for attempt in 0..ATTEMPTS_PER_SAMPLE {
                // Shrinking radii keep some draws near the center of the enclosing set.
                let shrink = 0.5_f64.powi((attempt % 12) as i32);
                let ups = sample_upsilon(&mut rng, set.n(), set.n() + set.m(), SampleMode::Interior) * shrink;
                let z = member_from_upsilon(set, &ups);
                if membership_inst(data, bound, &z, DEFAULT_MEMBERSHIP_TOL) {
                    return Draw::Member(z, attempt + 1);
                }
            }
            Draw::Starved(ATTEMPTS_PER_SAMPLE)
        }
    }
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Checks the closed loop on `n_samples` random members of a consistency set.
///
/// Energy sets are sampled on their boundary. Instantaneous sets are sampled
/// by rejection from the enclosing energy set with `Θ = TθI`; a yield below
/// one percent produces a warning and a partial report. Sample `i` uses
/// substream `i` of `seed`, so results do not depend on the thread count.
pub fn verify_by_sampling(
    source: SampleSource<'_>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<SamplingReport> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("at least one sample is required".into()));
    }
    let enclosing = match source {
        SampleSource::Energy(_) => None,
        SampleSource::Instantaneous(data, bound) => {
            let eb = bound.to_energy(data.horizon(), data.n(), data.m());
            Some(build_energy_set(data, &eb, DEFAULT_ASSUMPTION_TOL)?)
        }
    };
    let draws = map_indices(n_samples, |i| match draw_member(&source, enclosing.as_ref(), seed, i) {
        Draw::Member(z, tries) => (Some(closed_loop_check(&z, k, p)), tries),
        Draw::Starved(tries) => (None, tries),
    });
    let mut report = SamplingReport {
        worst_rho: f64::NEG_INFINITY,
        worst_decrease: f64::NEG_INFINITY,
        checked: 0,
        requested: n_samples,
        attempts: 0,
        warning: None,
    };
    for (res, tries) in draws {
        report.attempts += tries;
        if let Some((rho, dec)) = res {
            report.checked += 1;
            report.worst_rho = report.worst_rho.max(rho);
            report.worst_decrease = report.worst_decrease.max(dec);
        }
    }
    let rate = report.checked as f64 / report.attempts as f64;
    if report.checked < n_samples && rate < MIN_REJECTION_YIELD {
        report.warning = Some(format!(
            "sampling starved: {} of {} members found in {} attempts",
            report.checked, n_samples, report.attempts
        ));
    }
    Ok(report)
}
