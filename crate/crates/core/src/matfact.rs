//! Matrix elimination: `E Eᵀ ⪯ F G Fᵀ` holds exactly when some `D` satisfies
//! `E = F D` and `D Dᵀ ⪯ G`.
//!
//! [`construct_factor`] builds such a `D` constructively:
//!
//! 1. eigendecompose `G = U₁ Λ₁ U₁ᵀ`, keeping the eigenvalues above a relative cut;
//! 2. row-reduce `F U₁` with a nonsingular `V` so that `V F U₁ = [F̂₁; 0]`, `F̂₁` full row rank;
//! 3. split `V E = [Ê₁; Ê₂]` and check `Ê₂ = 0`, `Ê₁ Ê₁ᵀ ⪯ F̂₁ Λ₁ F̂₁ᵀ`;
//! 4. take the weighted right inverse `F̂₁ᴿ = Λ₁ F̂₁ᵀ (F̂₁ Λ₁ F̂₁ᵀ)⁻¹`, `D₁ = F̂₁ᴿ Ê₁`, `D = U₁ D₁`.
//!
//! `W = Λ₁^{-1/2} F̂₁ᴿ F̂₁ Λ₁^{1/2}` is an orthogonal projection, which is what
//! bounds `D₁ D₁ᵀ ⪯ Λ₁`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min, max_abs, sigma_max, sym_eig};

/// Tolerance used by [`construct_factor`] for its internal inclusion test.
pub const DEFAULT_INCLUSION_TOL: f64 = 1e-9;
/// Relative eigenvalue cut for the retained part of `G`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Relative pivot threshold of the row reduction.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-12;

/// The triple `(E, F, G)` with `G` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct InclusionInstance {
    e: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl InclusionInstance {
    pub fn new(e: DMatrix<f64>, f: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        if e.nrows() != f.nrows() {
            return Err(Error::Dimension(format!(
                "E has {} rows but F has {}",
                e.nrows(),
                f.nrows()
            )));
        }
        if !g.is_square() || g.nrows() != f.ncols() {
            return Err(Error::Dimension(format!(
                "G is {}x{} but F has {} columns",
                g.nrows(),
                g.ncols(),
                f.ncols()
            )));
        }
        let scale = max_abs(&g);
        if max_abs(&(&g - g.transpose())) > 1e-10 * (1.0 + scale) {
            return Err(Error::InvalidInput("G is not symmetric".into()));
        }
        let g = crate::linalg::sym(&g);
        if g.nrows() > 0 {
            let lmin = lambda_min(&g);
            let lmax = lambda_max(&g);
            if lmin < -1e-9 * (1.0 + lmax.max(0.0)) {
                return Err(Error::InvalidInput(format!(
                    "G is not positive semidefinite (lambda_min = {lmin:.3e})"
                )));
            }
        }
        Ok(Self { e, f, g })
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
}

/// Decides `E Eᵀ ⪯ F G Fᵀ`: true iff `λ_min(FGFᵀ − EEᵀ) ≥ −tol·(1 + λ_max(FGFᵀ))`.
pub fn check_inclusion(inst: &InclusionInstance, tol: f64) -> bool {
    assert!(tol > 0.0, "tolerance must be positive");
    let fgf = &inst.f * &inst.g * inst.f.transpose();
    if fgf.nrows() == 0 {
        return true;
    }
    let gap = &fgf - &inst.e * inst.e.transpose();
    lambda_min(&gap) >= -tol * (1.0 + lambda_max(&fgf).max(0.0))
}

#[derive(Debug, Clone, Copy)]
pub struct FactorOptions {
    pub rank_tol: f64,
    pub pivot_tol: f64,
    pub inclusion_tol: f64,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            pivot_tol: DEFAULT_PIVOT_TOL,
            inclusion_tol: DEFAULT_INCLUSION_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FactorDiagnostics {
    /// Frobenius norm of `F D − E`.
    pub residual: f64,
    /// `λ_max(D Dᵀ − G)`; nonpositive when `D Dᵀ ⪯ G`.
    pub excess: f64,
}

/// Intermediate quantities of the construction, kept for inspection.
#[derive(Debug, Clone)]
pub struct FactorInternals {
    pub u1: DMatrix<f64>,
    pub lambda1: DVector<f64>,
    pub v: DMatrix<f64>,
    pub f1_hat: DMatrix<f64>,
    pub e1_hat: DMatrix<f64>,
    pub e2_hat: DMatrix<f64>,
    pub f1_right: DMatrix<f64>,
    pub d1: DMatrix<f64>,
}

impl FactorInternals {
    /// `W = Λ₁^{-1/2} F̂₁ᴿ F̂₁ Λ₁^{1/2}`.
    pub fn projection(&self) -> DMatrix<f64> {
        let r = self.lambda1.len();
        let lhs = DMatrix::from_fn(r, r, |i, j| {
            if i == j {
                1.0 / self.lambda1[i].sqrt()
            } else {
                0.0
            }
        });
        let rhs = DMatrix::from_fn(r, r, |i, j| {
            if i == j {
                self.lambda1[i].sqrt()
            } else {
                0.0
            }
        });
        lhs * &self.f1_right * &self.f1_hat * rhs
    }
}

#[derive(Debug, Clone)]
pub struct FactorResult {
    pub d: DMatrix<f64>,
    pub rank_g: usize,
    pub diagnostics: FactorDiagnostics,
    /// `None` when the construction short-circuits (`G = 0` or `F U₁ = 0`).
    pub internals: Option<FactorInternals>,
}

impl FactorResult {
    /// Both postconditions at relative tolerance `tol`.
    pub fn satisfies(&self, inst: &InclusionInstance, tol: f64) -> bool {
        let gmax = if inst.g.nrows() == 0 {
            0.0
        } else {
            lambda_max(&inst.g).max(0.0)
        };
        self.diagnostics.residual <= tol * (1.0 + inst.e.norm())
            && self.diagnostics.excess <= tol * (1.0 + gmax)
    }
}

/// Builds `D` with `F D = E`, `D Dᵀ ⪯ G` using default options and the given rank cut.
pub fn construct_factor(inst: &InclusionInstance, rank_tol: f64) -> Result<FactorResult> {
    construct_factor_with(
        inst,
        &FactorOptions {
            rank_tol,
            ..FactorOptions::default()
        },
    )
}

pub fn construct_factor_with(inst: &InclusionInstance, opts: &FactorOptions) -> Result<FactorResult> {
    let (n1, n2) = inst.e.shape();
    let n3 = inst.g.nrows();
    let zero_result = |inst: &InclusionInstance, rank_g: usize| -> Result<FactorResult> {
        // Here F G Fᵀ vanishes (up to the rank cut), so E must vanish too.
        let e_sq = if n1 == 0 || n2 == 0 {
            0.0
        } else {
            sigma_max(&inst.e).powi(2)
        };
        let fgf_max = if n1 == 0 {
            0.0
        } else {
            lambda_max(&(&inst.f * &inst.g * inst.f.transpose())).max(0.0)
        };
        if e_sq > opts.inclusion_tol * (1.0 + fgf_max) {
            return Err(Error::InclusionViolated {
                what: "E must vanish when F G Fᵀ = 0",
                residual: e_sq.sqrt(),
            });
        }
        let d = DMatrix::zeros(n3, n2);
        Ok(FactorResult {
            diagnostics: diagnostics(inst, &d),
            d,
            rank_g,
            internals: None,
        })
    };

    if n3 == 0 {
        return zero_result(inst, 0);
    }

    // G = U₁ Λ₁ U₁ᵀ with Λ₁ ≻ 0.
    let (vals, vecs) = sym_eig(&inst.g);
    let gmax = vals[n3 - 1].max(0.0);
    if gmax <= 0.0 {
        return zero_result(inst, 0);
    }
    let keep: Vec<usize> = (0..n3).filter(|&i| vals[i] > opts.rank_tol * gmax).collect();
    let rank_g = keep.len();
    let mut u1 = DMatrix::zeros(n3, rank_g);
    for (c, &i) in keep.iter().enumerate() {
        u1.set_column(c, &vecs.column(i));
    }
    let lambda1 = DVector::from_iterator(rank_g, keep.iter().map(|&i| vals[i]));

    let fu1 = &inst.f * &u1;
    let f_scale = max_abs(&inst.f);
    if n1 == 0 || max_abs(&fu1) <= opts.pivot_tol * f_scale {
        return zero_result(inst, rank_g);
    }

    // V F U₁ = [F̂₁; 0].
    let (reduced, v, rank) = row_reduce(&fu1, opts.pivot_tol);
    if rank == 0 {
        return zero_result(inst, rank_g);
    }
    let f1_hat = reduced.rows(0, rank).into_owned();
    let e_hat = &v * &inst.e;
    let e1_hat = e_hat.rows(0, rank).into_owned();
    let e2_hat = e_hat.rows(rank, n1 - rank).into_owned();

    let weighted = &f1_hat * DMatrix::from_diagonal(&lambda1) * f1_hat.transpose();
    let wmax = lambda_max(&weighted);
    let v1_scale = sigma_max(&v.rows(0, rank).into_owned()).powi(2);
    let v2_scale = if rank < n1 {
        sigma_max(&v.rows(rank, n1 - rank).into_owned()).powi(2)
    } else {
        0.0
    };
    let fgf_scale = lambda_max(&(&inst.f * &inst.g * inst.f.transpose())).max(0.0);

    if rank < n1 && n2 > 0 {
        let e2_sq = sigma_max(&e2_hat).powi(2);
        if e2_sq > opts.inclusion_tol * (1.0 + fgf_scale) * v2_scale {
            return Err(Error::InclusionViolated {
                what: "E has a component outside the range of F G Fᵀ",
                residual: e2_sq.sqrt(),
            });
        }
    }
    let slack = lambda_min(&(&weighted - &e1_hat * e1_hat.transpose()));
    if slack < -opts.inclusion_tol * (1.0 + fgf_scale) * v1_scale {
        return Err(Error::InclusionViolated {
            what: "Ê₁ Ê₁ᵀ exceeds F̂₁ Λ₁ F̂₁ᵀ",
            residual: -slack,
        });
    }

    let wmin = lambda_min(&weighted);
    if wmin <= 1e-14 * wmax {
        return Err(Error::NumericalRank(format!(
            "F̂₁ Λ₁ F̂₁ᵀ is numerically singular (eigenvalues in [{wmin:.3e}, {wmax:.3e}])"
        )));
    }
    let chol = weighted.clone().cholesky().ok_or_else(|| {
        Error::NumericalRank("Cholesky factorization of F̂₁ Λ₁ F̂₁ᵀ failed".into())
    })?;
    // F̂₁ᴿ = Λ₁ F̂₁ᵀ (F̂₁ Λ₁ F̂₁ᵀ)⁻¹, computed as the transpose of a solve.
    let lf = DMatrix::from_diagonal(&lambda1) * f1_hat.transpose();
    let f1_right = chol.solve(&lf.transpose()).transpose();
    let d1 = &f1_right * &e1_hat;
    let d = &u1 * &d1;

    Ok(FactorResult {
        diagnostics: diagnostics(inst, &d),
        d,
        rank_g,
        internals: Some(FactorInternals {
            u1,
            lambda1,
            v,
            f1_hat,
            e1_hat,
            e2_hat,
            f1_right,
            d1,
        }),
    })
}

fn diagnostics(inst: &InclusionInstance, d: &DMatrix<f64>) -> FactorDiagnostics {
    let residual = (&inst.f * d - &inst.e).norm();
    let excess = if inst.g.nrows() == 0 {
        0.0
    } else {
        lambda_max(&(d * d.transpose() - &inst.g))
    };
    FactorDiagnostics { residual, excess }
}

/// Gauss-Jordan reduction with partial pivoting.
///
/// Returns the reduced matrix, the accumulated nonsingular `V` with
/// `V · a = reduced`, and the number of pivots. Rows past the rank are zeroed.
pub fn row_reduce(a: &DMatrix<f64>, pivot_tol: f64) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let (rows, cols) = a.shape();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(rows, rows);
    let global = max_abs(a);
    // Columns negligible against the whole matrix count as zero columns.
    let col_scale: Vec<f64> = (0..cols)
        .map(|c| a.column(c).iter().fold(0.0_f64, |acc, x| acc.max(x.abs())))
        .map(|s| if s <= pivot_tol * global { 0.0 } else { s })
        .collect();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let threshold = pivot_tol * col_scale[col];
        let (p, pval) = (row..rows)
            .map(|i| (i, m[(i, col)].abs()))
            .fold((row, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if col_scale[col] == 0.0 || pval <= threshold {
            for i in row..rows {
                m[(i, col)] = 0.0;
            }
            continue;
        }
        m.swap_rows(p, row);
        v.swap_rows(p, row);
        let pivot = m[(row, col)];
        m.row_mut(row).scale_mut(1.0 / pivot);
        v.row_mut(row).scale_mut(1.0 / pivot);
        m[(row, col)] = 1.0;
        for i in 0..rows {
            if i == row {
                continue;
            }
            let factor = m[(i, col)];
            if factor != 0.0 {
                for c in 0..cols {
                    m[(i, c)] -= factor * m[(row, c)];
                }
                for c in 0..rows {
                    v[(i, c)] -= factor * v[(row, c)];
                }
                m[(i, col)] = 0.0;
            }
        }
        row += 1;
    }
    for i in row..rows {
        m.row_mut(i).fill(0.0);
    }
    (m, v, row)
}
