//! Infeasible-start primal-dual path-following method (HKM direction with a
//! Mehrotra predictor-corrector) for the block-diagonal conic program
//!
//! ```text
//!   maximize  t
//!   s.t.      Z = C − Σᵢ yᵢ Aᵢ ⪰ 0,   y = (x, t)
//! ```
//!
//! Each strict `⪯ 0` constraint `F(x)` enters as `F(x) + t·w·I ⪯ 0`, so the
//! optimal `t` is the best achievable margin. The problem is feasible once
//! some iterate satisfies every constraint with its margin, which is checked
//! on the original data after each iteration.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};

use super::problem::{LmiProblem, MatVar, ScalarVar, Sense, SymSparse};
use crate::linalg::{lambda_min, sym};

/// Wall clock that reads zero where the platform has no clock.
struct Stopwatch(#[cfg(not(target_family = "wasm"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Self(#[cfg(not(target_family = "wasm"))] std::time::Instant::now())
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_family = "wasm"))]
        return self.0.elapsed();
        #[cfg(target_family = "wasm")]
        Duration::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Slack allowed on the final replay check, relative to the problem scale.
    pub feas_tol: f64,
    /// Default strictness margin, relative to the problem scale.
    pub margin: f64,
    pub max_iter: usize,
    /// Recorded for reproducibility; the interior-point backend is deterministic.
    pub seed: u64,
    /// Box `|xᵢ| ≤ box_bound · scale` that keeps the search bounded.
    pub box_bound: f64,
    /// Relative gap and dual residual tolerance of the interior-point iteration.
    pub ipm_tol: f64,
    /// Relative primal residual tolerance; rounding keeps it above `ipm_tol`
    /// on degenerate problems.
    pub primal_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            margin: 1e-6,
            max_iter: 120,
            seed: 0,
            box_bound: 1e4,
            ipm_tol: 1e-9,
            primal_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Feasible => "feasible",
            Self::Infeasible => "infeasible",
            Self::NumericalFailure => "numerical-failure",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    /// Worst margin-adjusted violation at the returned point (≤ 0 means satisfied).
    pub max_violation: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Best margin `t` reached, in absolute units.
    pub best_margin: f64,
    pub problem_scale: f64,
    pub message: String,
}

/// Values of the flat scalar vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub values: Vec<f64>,
}

impl Assignment {
    pub fn matrix(&self, problem: &LmiProblem, var: MatVar) -> DMatrix<f64> {
        problem.matrix_value(&self.values, var)
    }

    pub fn scalar(&self, problem: &LmiProblem, var: ScalarVar) -> f64 {
        problem.scalar_value(&self.values, var)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Present iff `status` is `Feasible`.
    pub assignment: Option<Assignment>,
    pub diagnostics: SolveDiagnostics,
}

impl SolveOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }
}

struct Block {
    dim: usize,
    c: DMatrix<f64>,
    /// `(y index, Aᵢ)`.
    vars: Vec<(usize, SymSparse)>,
}

struct LpRow {
    c: f64,
    coeffs: Vec<(usize, f64)>,
}

struct Canonical {
    ny: usize,
    t_index: usize,
    blocks: Vec<Block>,
    lp: Vec<LpRow>,
}

impl Canonical {
    fn build(problem: &LmiProblem, settings: &SolverSettings) -> (Self, f64, f64) {
        let n = problem.n_scalars();
        let scale = problem.scale();
        let margins = problem.margins(settings.margin);
        let eps_max = margins.iter().copied().fold(0.0, f64::max);
        let t_index = n;
        let mut blocks = Vec::new();
        for ((c, comp), eps) in problem.constraints().iter().zip(problem.compiled()).zip(&margins) {
            let weight = if eps_max > 0.0 { eps / eps_max } else { 1.0 };
            let constant = &comp.constant / scale;
            let norm = comp
                .coeffs
                .iter()
                .map(|(_, a)| a.frobenius())
                .fold(constant.norm(), f64::max)
                .max(1e-300);
            let sign = match c.sense {
                Sense::Nsd => 1.0,
                Sense::Psd => -1.0,
            };
            let mut vars: Vec<(usize, SymSparse)> = comp
                .coeffs
                .iter()
                .map(|(i, a)| {
                    let entries = a.entries.iter().map(|&(r, q, v)| (r, q, sign * v / norm)).collect();
                    (*i, SymSparse { entries })
                })
                .collect();
            if weight > 0.0 {
                let entries = (0..comp.dim).map(|r| (r, r, weight / norm)).collect();
                vars.push((t_index, SymSparse { entries }));
            }
            blocks.push(Block {
                dim: comp.dim,
                c: constant * (-sign / norm),
                vars,
            });
        }
        let mut lp = Vec::new();
        for (i, lb) in problem.lower_bounds() {
            lp.push(LpRow {
                c: -lb / scale,
                coeffs: vec![(i, -1.0)],
            });
        }
        let inv_box = 1.0 / settings.box_bound;
        for i in 0..n {
            lp.push(LpRow {
                c: 1.0,
                coeffs: vec![(i, inv_box)],
            });
            lp.push(LpRow {
                c: 1.0,
                coeffs: vec![(i, -inv_box)],
            });
        }
        // t ≤ 1 in scaled units
        lp.push(LpRow {
            c: 1.0,
            coeffs: vec![(t_index, 1.0)],
        });
        let threshold = eps_max / scale;
        (
            Self {
                ny: n + 1,
                t_index,
                blocks,
                lp,
            },
            scale,
            threshold,
        )
    }

    /// `𝒜(X)`.
    fn apply(&self, xs: &[DMatrix<f64>], xl: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ny);
        for (blk, x) in self.blocks.iter().zip(xs) {
            for (i, a) in &blk.vars {
                out[*i] += a.trace_with(x);
            }
        }
        for (row, x) in self.lp.iter().zip(xl) {
            for &(i, a) in &row.coeffs {
                out[i] += a * x;
            }
        }
        out
    }

    /// `𝒜ᵀ(y)`.
    fn apply_t(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let blocks = self
            .blocks
            .iter()
            .map(|blk| {
                let mut m = DMatrix::zeros(blk.dim, blk.dim);
                for (i, a) in &blk.vars {
                    if y[*i] != 0.0 {
                        a.add_to(&mut m, y[*i]);
                    }
                }
                m
            })
            .collect();
        let lp = self
            .lp
            .iter()
            .map(|row| row.coeffs.iter().map(|&(i, a)| a * y[i]).sum())
            .collect();
        (blocks, lp)
    }
}

/// `S · X` for sparse symmetric `S` and dense `X`, returned as `(X S)` via symmetry.
fn dense_times_sparse(x: &DMatrix<f64>, s: &SymSparse) -> DMatrix<f64> {
    let d = x.nrows();
    let mut out = DMatrix::zeros(d, d);
    for &(r, c, v) in &s.entries {
        // (X S)[:, c] += X[:, r] v  and, off the diagonal, (X S)[:, r] += X[:, c] v
        for k in 0..d {
            out[(k, c)] += x[(k, r)] * v;
        }
        if r != c {
            for k in 0..d {
                out[(k, r)] += x[(k, c)] * v;
            }
        }
    }
    out
}

/// Largest `α` with `X + α ΔX ⪰ 0` (infinite when `ΔX ⪰ 0`).
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let a = l.solve_lower_triangular(dx)?;
    let s = l.solve_lower_triangular(&a.transpose())?;
    let lmin = lambda_min(&s);
    Some(if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY })
}

fn max_step_lp(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| p * q).sum()
}

struct Direction {
    dy: DVector<f64>,
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dxl: Vec<f64>,
    dzl: Vec<f64>,
}

/// Solves the feasibility problem.
///
/// Strict constraints are enforced with margin `ε = margin · scale` (or their
/// explicit margin), where `scale` is the largest constant entry of the problem
/// (at least 1). A feasible outcome always satisfies every constraint within
/// `feas_tol · scale` of its margin on an independent eigenvalue replay.
pub fn solve_feasibility(problem: &LmiProblem, settings: &SolverSettings) -> SolveOutcome {
    let start = Stopwatch::start();
    let (canon, scale, threshold) = Canonical::build(problem, settings);
    let n = problem.n_scalars();
    let ny = canon.ny;
    let nl = canon.lp.len();
    let nu: f64 = canon.blocks.iter().map(|b| b.dim as f64).sum::<f64>() + nl as f64;

    let mut b: DVector<f64> = DVector::zeros(ny);
    b[canon.t_index] = 1.0;

    // Starting point in the spirit of SDPT3: scaled identities.
    let mut a_norms = vec![0.0_f64; ny];
    for blk in &canon.blocks {
        for (i, a) in &blk.vars {
            a_norms[*i] += a.frobenius().powi(2);
        }
    }
    for row in &canon.lp {
        for &(i, a) in &row.coeffs {
            a_norms[i] += a * a;
        }
    }
    let a_norms: Vec<f64> = a_norms.into_iter().map(f64::sqrt).collect();
    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for blk in &canon.blocks {
        let d = blk.dim as f64;
        let xi = (0..ny)
            .map(|i| d * (1.0 + b[i].abs()) / (1.0 + a_norms[i]))
            .fold(10f64.max(d.sqrt()), f64::max);
        let eta = blk
            .vars
            .iter()
            .map(|(_, a)| a.frobenius())
            .fold(blk.c.norm(), f64::max)
            .max(10f64.max(d.sqrt()));
        xs.push(DMatrix::identity(blk.dim, blk.dim) * xi);
        zs.push(DMatrix::identity(blk.dim, blk.dim) * eta);
    }
    let mut xl = vec![10.0; nl];
    let mut zl = vec![10.0; nl];
    let mut y = DVector::zeros(ny);

    let c_norm = (canon.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>()
        + canon.lp.iter().map(|r| r.c * r.c).sum::<f64>())
    .sqrt();
    let y_bound = n as f64 * settings.box_bound + 1.0 + threshold.abs();

    let mut best_margin = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut message = String::new();
    let mut converged = false;
    let mut certified_infeasible = false;
    let mut last_dobj = f64::NEG_INFINITY;
    let mut stalls = 0;
    let mut mu0 = f64::NAN;

    let finish = |status: SolveStatus, values: Option<Vec<f64>>, iterations: usize, best: f64, msg: String| {
        let max_violation = values
            .as_ref()
            .map(|v| problem.violation(v, settings.margin))
            .unwrap_or(f64::NAN);
        SolveOutcome {
            status,
            assignment: values.map(|values| Assignment { values }),
            diagnostics: SolveDiagnostics {
                max_violation,
                iterations,
                wall_time: start.elapsed(),
                best_margin: best * scale,
                problem_scale: scale,
                message: msg,
            },
        }
    };

    for iter in 0..settings.max_iter {
        iterations = iter;
        let (aty, aty_l) = canon.apply_t(&y);
        let rd: Vec<DMatrix<f64>> = canon
            .blocks
            .iter()
            .zip(&zs)
            .zip(&aty)
            .map(|((blk, z), a)| &blk.c - z - a)
            .collect();
        let rd_l: Vec<f64> = (0..nl).map(|k| canon.lp[k].c - zl[k] - aty_l[k]).collect();
        let rp = &b - canon.apply(&xs, &xl);
        let pobj: f64 = canon.blocks.iter().zip(&xs).map(|(blk, x)| inner(&blk.c, x)).sum::<f64>()
            + canon.lp.iter().zip(&xl).map(|(r, x)| r.c * x).sum::<f64>();
        let dobj = y[canon.t_index];
        let mu = (xs.iter().zip(&zs).map(|(x, z)| inner(x, z)).sum::<f64>()
            + xl.iter().zip(&zl).map(|(a, b)| a * b).sum::<f64>())
            / nu;
        if iter == 0 {
            mu0 = mu;
        }

        // Replay the current dual point on the original problem.
        let x_orig: Vec<f64> = (0..n).map(|i| y[i] * scale).collect();
        let violation = problem.violation(&x_orig, settings.margin);
        best_margin = best_margin.max(dobj);
        if violation <= 0.0 {
            return finish(
                SolveStatus::Feasible,
                Some(x_orig),
                iter,
                best_margin,
                "margin reached".into(),
            );
        }

        let pinf = rp.norm() / (1.0 + b.norm());
        let dinf = (rd.iter().map(|m| m.norm_squared()).sum::<f64>() + rd_l.iter().map(|v| v * v).sum::<f64>())
            .sqrt()
            / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if pinf < settings.primal_tol && dinf < settings.ipm_tol && gap < settings.ipm_tol {
            converged = true;
            message = format!("converged: t* = {:.3e} (threshold {:.3e})", dobj * scale, threshold * scale);
            break;
        }
        // Weak duality: every dual-feasible point in the box has t ≤ ⟨C, X⟩ + ‖rp‖∞ ‖y‖₁.
        let rp_inf = rp.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if pobj + rp_inf * y_bound < threshold && pinf < 1e-6 {
            certified_infeasible = true;
            message = format!("margin bound {:.3e} below threshold {:.3e}", pobj * scale, threshold * scale);
            break;
        }
        // Near the optimum the current dual point stands in for the optimal one.
        let near_bound = pobj + rp.norm() * y.norm().max(1.0);
        if gap < 1e-6 && dinf < 1e-7 && near_bound < threshold {
            certified_infeasible = true;
            message = format!(
                "optimal margin {:.3e} below threshold {:.3e}",
                near_bound * scale,
                threshold * scale
            );
            break;
        }
        if mu < 1e-14 * mu0 {
            message = format!("complementarity exhausted at iteration {iter}");
            break;
        }

        // Schur complement M_ij = ⟨Aᵢ, X Aⱼ Z⁻¹⟩.
        let mut zinv = Vec::with_capacity(zs.len());
        let mut ok = true;
        for z in &zs {
            match z.clone().cholesky() {
                Some(ch) => zinv.push(sym(&ch.inverse())),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            message = format!("dual slack lost definiteness at iteration {iter}");
            break;
        }
        let mut m = DMatrix::zeros(ny, ny);
        for ((blk, x), zi) in canon.blocks.iter().zip(&xs).zip(&zinv) {
            for (j, aj) in &blk.vars {
                let g = dense_times_sparse(x, aj) * zi;
                for (i, ai) in &blk.vars {
                    m[(*i, *j)] += ai.trace_with(&g);
                }
            }
        }
        for (k, row) in canon.lp.iter().enumerate() {
            let w = xl[k] / zl[k];
            for &(i, a) in &row.coeffs {
                for &(j, c) in &row.coeffs {
                    m[(i, j)] += a * c * w;
                }
            }
        }
        let m = sym(&m);
        let chol = match m.clone().cholesky() {
            Some(c) => c,
            None => {
                let reg = 1e-12 * m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
                match (m + DMatrix::identity(ny, ny) * reg).cholesky() {
                    Some(c) => c,
                    None => {
                        message = format!("Schur complement singular at iteration {iter}");
                        break;
                    }
                }
            }
        };

        let solve_dir = |rc: &[DMatrix<f64>], rc_l: &[f64]| -> Direction {
            // h = rp − 𝒜(Rc − X Rd Z⁻¹)
            let w: Vec<DMatrix<f64>> = (0..xs.len()).map(|j| &rc[j] - &xs[j] * &rd[j] * &zinv[j]).collect();
            let w_l: Vec<f64> = (0..nl).map(|k| rc_l[k] - xl[k] * rd_l[k] / zl[k]).collect();
            let h = &rp - canon.apply(&w, &w_l);
            let dy = chol.solve(&h);
            let (ady, ady_l) = canon.apply_t(&dy);
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&ady).map(|(r, a)| r - a).collect();
            let dx: Vec<DMatrix<f64>> = (0..xs.len())
                .map(|j| sym(&(&rc[j] - &xs[j] * &dz[j] * &zinv[j])))
                .collect();
            let dzl: Vec<f64> = (0..nl).map(|k| rd_l[k] - ady_l[k]).collect();
            let dxl: Vec<f64> = (0..nl).map(|k| rc_l[k] - xl[k] * dzl[k] / zl[k]).collect();
            Direction { dy, dx, dz, dxl, dzl }
        };
        let steps = |d: &Direction| -> Option<(f64, f64)> {
            let mut ap = max_step_lp(&xl, &d.dxl);
            let mut ad = max_step_lp(&zl, &d.dzl);
            for j in 0..xs.len() {
                ap = ap.min(max_step_psd(&xs[j], &d.dx[j])?);
                ad = ad.min(max_step_psd(&zs[j], &d.dz[j])?);
            }
            Some((ap, ad))
        };

        // Predictor.
        let rc: Vec<DMatrix<f64>> = xs.iter().map(|x| -x).collect();
        let rc_l: Vec<f64> = xl.iter().map(|x| -x).collect();
        let pred = solve_dir(&rc, &rc_l);
        let Some((ap, ad)) = steps(&pred) else {
            message = format!("iterate lost definiteness at iteration {iter}");
            break;
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = (0..xs.len())
            .map(|j| inner(&(&xs[j] + &pred.dx[j] * ap), &(&zs[j] + &pred.dz[j] * ad)))
            .sum::<f64>()
            + (0..nl)
                .map(|k| (xl[k] + ap * pred.dxl[k]) * (zl[k] + ad * pred.dzl[k]))
                .sum::<f64>();
        let sigma = ((mu_aff / nu) / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc: Vec<DMatrix<f64>> = (0..xs.len())
            .map(|j| &zinv[j] * (sigma * mu) - &xs[j] - &pred.dx[j] * &pred.dz[j] * &zinv[j])
            .collect();
        let rc_l: Vec<f64> = (0..nl)
            .map(|k| sigma * mu / zl[k] - xl[k] - pred.dxl[k] * pred.dzl[k] / zl[k])
            .collect();
        let dir = solve_dir(&rc, &rc_l);
        let Some((ap2, ad2)) = steps(&dir) else {
            message = format!("iterate lost definiteness at iteration {iter}");
            break;
        };
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * ap2).min(1.0);
        let ad = (gamma * ad2).min(1.0);

        for j in 0..xs.len() {
            xs[j] = sym(&(&xs[j] + &dir.dx[j] * ap));
            zs[j] = sym(&(&zs[j] + &dir.dz[j] * ad));
        }
        for k in 0..nl {
            xl[k] += ap * dir.dxl[k];
            zl[k] += ad * dir.dzl[k];
        }
        y += &dir.dy * ad;

        if ap.max(ad) < 1e-8 || (y[canon.t_index] - last_dobj).abs() < 1e-14 && ap.max(ad) < 1e-3 {
            stalls += 1;
            if stalls >= 5 {
                message = format!("stalled at iteration {iter}");
                break;
            }
        } else {
            stalls = 0;
        }
        last_dobj = y[canon.t_index];
        iterations = iter + 1;
    }

    let dobj = y[canon.t_index];
    let x_orig: Vec<f64> = (0..n).map(|i| y[i] * scale).collect();
    if certified_infeasible {
        return finish(SolveStatus::Infeasible, None, iterations, best_margin, message);
    }
    if converged {
        if dobj >= threshold {
            let violation = problem.violation(&x_orig, settings.margin);
            if violation <= settings.feas_tol * scale {
                return finish(SolveStatus::Feasible, Some(x_orig), iterations, best_margin, message);
            }
            message.push_str(&format!("; replay violation {violation:.3e}"));
            return finish(SolveStatus::NumericalFailure, None, iterations, best_margin, message);
        }
        return finish(SolveStatus::Infeasible, None, iterations, best_margin, message);
    }
    if message.is_empty() {
        message = format!("no convergence within {} iterations", settings.max_iter);
    }
    finish(SolveStatus::NumericalFailure, None, iterations, best_margin, message)
}
