use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min, max_abs};

/// Handle to a declared matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatVar(pub(crate) usize);

/// Handle to a declared scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarVar(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct MatrixVarDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    pub(crate) offset: usize,
}

impl MatrixVarDecl {
    /// Number of free scalars: the upper triangle for symmetric variables.
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` of the `k`-th free scalar.
    fn position(&self, k: usize) -> (usize, usize) {
        if self.symmetric {
            let mut k = k;
            for r in 0..self.rows {
                let width = self.rows - r;
                if k < width {
                    return (r, r + k);
                }
                k -= width;
            }
            unreachable!("index out of range")
        } else {
            (k / self.cols, k % self.cols)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalarVarDecl {
    pub name: String,
    pub lower: Option<f64>,
    pub(crate) offset: usize,
}

/// Sign requirement on a constraint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F(x) ⪰ 0`
    Psd,
    /// `F(x) ⪯ 0`
    Nsd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strictness {
    NonStrict,
    /// Strict, encoded with the solver's default margin.
    Strict,
    /// Strict with an explicit absolute margin.
    Margin(f64),
}

#[derive(Debug, Clone)]
enum Term {
    /// `left · V · right` (or `left · Vᵀ · right`).
    Matrix {
        var: MatVar,
        transpose: bool,
        left: DMatrix<f64>,
        right: DMatrix<f64>,
    },
    /// `s · coeff`.
    Scalar { var: ScalarVar, coeff: DMatrix<f64> },
}

#[derive(Debug, Clone)]
struct BlockEntry {
    row: usize,
    col: usize,
    constant: Option<DMatrix<f64>>,
    terms: Vec<Term>,
}

/// A symmetric block matrix whose blocks are affine in the problem variables.
///
/// Only upper-triangular blocks `(i, j)`, `i ≤ j`, are specified; the lower
/// part is mirrored. Terms placed on a diagonal block are symmetrized.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub sizes: Vec<usize>,
    pub sense: Sense,
    pub strictness: Strictness,
    entries: Vec<BlockEntry>,
}

impl LmiConstraint {
    pub fn new(name: impl Into<String>, sizes: &[usize], sense: Sense, strictness: Strictness) -> Self {
        Self {
            name: name.into(),
            sizes: sizes.to_vec(),
            sense,
            strictness,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn entry(&mut self, row: usize, col: usize) -> &mut BlockEntry {
        assert!(row <= col, "only upper-triangular blocks are specified");
        assert!(col < self.sizes.len(), "block index out of range");
        if let Some(i) = self.entries.iter().position(|e| e.row == row && e.col == col) {
            return &mut self.entries[i];
        }
        self.entries.push(BlockEntry {
            row,
            col,
            constant: None,
            terms: Vec::new(),
        });
        self.entries.last_mut().unwrap()
    }

    /// Adds a constant to block `(row, col)`.
    pub fn constant(mut self, row: usize, col: usize, value: DMatrix<f64>) -> Self {
        let e = self.entry(row, col);
        e.constant = Some(match e.constant.take() {
            Some(c) => c + value,
            None => value,
        });
        self
    }

    /// Adds `left · V · right` to block `(row, col)`.
    pub fn var(mut self, row: usize, col: usize, left: DMatrix<f64>, var: MatVar, right: DMatrix<f64>) -> Self {
        self.entry(row, col).terms.push(Term::Matrix {
            var,
            transpose: false,
            left,
            right,
        });
        self
    }

    /// Adds `left · Vᵀ · right` to block `(row, col)`.
    pub fn var_t(mut self, row: usize, col: usize, left: DMatrix<f64>, var: MatVar, right: DMatrix<f64>) -> Self {
        self.entry(row, col).terms.push(Term::Matrix {
            var,
            transpose: true,
            left,
            right,
        });
        self
    }

    /// Adds `s · coeff` to block `(row, col)`.
    pub fn scalar(mut self, row: usize, col: usize, var: ScalarVar, coeff: DMatrix<f64>) -> Self {
        self.entry(row, col).terms.push(Term::Scalar { var, coeff });
        self
    }
}

/// Sparse symmetric coefficient: upper-triangular `(row, col, value)` triplets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymSparse {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..=c {
                let v = m[(r, c)];
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Self { entries }
    }

    /// `tr(S · W)` for any square `W`.
    pub fn trace_with(&self, w: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * w[(r, r)] } else { v * (w[(r, c)] + w[(c, r)]) })
            .sum()
    }

    pub fn add_to(&self, target: &mut DMatrix<f64>, scale: f64) {
        for &(r, c, v) in &self.entries {
            target[(r, c)] += scale * v;
            if r != c {
                target[(c, r)] += scale * v;
            }
        }
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        self.add_to(&mut m, 1.0);
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A constraint reduced to `F₀ + Σᵢ xᵢ Fᵢ` over the flat scalar vector.
#[derive(Debug, Clone)]
pub struct CompiledConstraint {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    /// `(scalar index, coefficient)` for every scalar that appears.
    pub coeffs: Vec<(usize, SymSparse)>,
}

impl CompiledConstraint {
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (i, c) in &self.coeffs {
            if x[*i] != 0.0 {
                c.add_to(&mut out, x[*i]);
            }
        }
        out
    }

    /// Whether `F₀ = 0` (the constraint is linear, not affine).
    pub fn is_homogeneous(&self) -> bool {
        max_abs(&self.constant) == 0.0
    }
}

/// A semidefinite feasibility problem over matrix and scalar variables.
#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    matrix_vars: Vec<MatrixVarDecl>,
    scalar_vars: Vec<ScalarVarDecl>,
    constraints: Vec<LmiConstraint>,
    compiled: Vec<CompiledConstraint>,
    n_scalars: usize,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix_var(&mut self, name: impl Into<String>, rows: usize, cols: usize, symmetric: bool) -> MatVar {
        assert!(!symmetric || rows == cols, "symmetric variables must be square");
        assert!(self.scalar_vars.is_empty(), "declare matrix variables before scalar ones");
        let decl = MatrixVarDecl {
            name: name.into(),
            rows,
            cols,
            symmetric,
            offset: self.n_scalars,
        };
        self.n_scalars += decl.len();
        self.matrix_vars.push(decl);
        MatVar(self.matrix_vars.len() - 1)
    }

    pub fn scalar_var(&mut self, name: impl Into<String>, lower: Option<f64>) -> ScalarVar {
        self.scalar_vars.push(ScalarVarDecl {
            name: name.into(),
            lower,
            offset: self.n_scalars,
        });
        self.n_scalars += 1;
        ScalarVar(self.scalar_vars.len() - 1)
    }

    pub fn matrix_vars(&self) -> &[MatrixVarDecl] {
        &self.matrix_vars
    }

    pub fn scalar_vars(&self) -> &[ScalarVarDecl] {
        &self.scalar_vars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn compiled(&self) -> &[CompiledConstraint] {
        &self.compiled
    }

    /// Length of the flat scalar vector.
    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    /// Lower bounds by flat index.
    pub fn lower_bounds(&self) -> Vec<(usize, f64)> {
        self.scalar_vars
            .iter()
            .filter_map(|s| s.lower.map(|lb| (s.offset, lb)))
            .collect()
    }

    /// Validates and compiles the constraint.
    pub fn add_constraint(&mut self, c: LmiConstraint) -> Result<()> {
        let compiled = self.compile(&c)?;
        self.constraints.push(c);
        self.compiled.push(compiled);
        Ok(())
    }

    fn compile(&self, c: &LmiConstraint) -> Result<CompiledConstraint> {
        let dim = c.dim();
        let offsets: Vec<usize> = c
            .sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut constant = DMatrix::zeros(dim, dim);
        let mut dense: Vec<Option<DMatrix<f64>>> = vec![None; self.n_scalars];
        let bad = |msg: String| Error::InvalidInput(format!("constraint '{}': {msg}", c.name));

        for e in &c.entries {
            let (h, w) = (c.sizes[e.row], c.sizes[e.col]);
            let (ro, co) = (offsets[e.row], offsets[e.col]);
            let diag = e.row == e.col;
            let place = |target: &mut DMatrix<f64>, blk: &DMatrix<f64>| {
                let blk = if diag { (blk + blk.transpose()) * 0.5 } else { blk.clone() };
                let mut view = target.view_mut((ro, co), (h, w));
                view += &blk;
                if !diag {
                    let mut view = target.view_mut((co, ro), (w, h));
                    view += blk.transpose();
                }
            };
            if let Some(k) = &e.constant {
                if k.shape() != (h, w) {
                    return Err(bad(format!("constant in block ({}, {}) has wrong shape", e.row, e.col)));
                }
                place(&mut constant, k);
            }
            for t in &e.terms {
                match t {
                    Term::Matrix {
                        var,
                        transpose,
                        left,
                        right,
                    } => {
                        let decl = self
                            .matrix_vars
                            .get(var.0)
                            .ok_or_else(|| bad("undeclared matrix variable".into()))?;
                        let (vr, vc) = if *transpose {
                            (decl.cols, decl.rows)
                        } else {
                            (decl.rows, decl.cols)
                        };
                        if left.shape() != (h, vr) || right.shape() != (vc, w) {
                            return Err(bad(format!(
                                "term on '{}' in block ({}, {}) does not conform",
                                decl.name, e.row, e.col
                            )));
                        }
                        for k in 0..decl.len() {
                            let (a, b) = decl.position(k);
                            // basis element of V (or Vᵀ) at (a, b), plus the mirror for symmetric variables
                            let mut basis = vec![if *transpose { (b, a) } else { (a, b) }];
                            if decl.symmetric && a != b {
                                basis.push(if *transpose { (a, b) } else { (b, a) });
                            }
                            let mut blk = DMatrix::zeros(h, w);
                            for (p, q) in basis {
                                blk += left.column(p) * right.row(q);
                            }
                            let slot = dense[decl.offset + k].get_or_insert_with(|| DMatrix::zeros(dim, dim));
                            place(slot, &blk);
                        }
                    }
                    Term::Scalar { var, coeff } => {
                        let decl = self
                            .scalar_vars
                            .get(var.0)
                            .ok_or_else(|| bad("undeclared scalar variable".into()))?;
                        if coeff.shape() != (h, w) {
                            return Err(bad(format!("coefficient of '{}' has wrong shape", decl.name)));
                        }
                        let slot = dense[decl.offset].get_or_insert_with(|| DMatrix::zeros(dim, dim));
                        place(slot, coeff);
                    }
                }
            }
        }
        let coeffs = dense
            .into_iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (i, SymSparse::from_dense(&m))))
            .filter(|(_, s)| !s.is_empty())
            .collect();
        Ok(CompiledConstraint { dim, constant, coeffs })
    }

    /// Largest absolute entry over all constant blocks, floored at 1.
    pub fn scale(&self) -> f64 {
        self.compiled
            .iter()
            .map(|c| max_abs(&c.constant))
            .fold(1.0, f64::max)
    }

    /// Absolute margin each constraint must clear; zero for non-strict ones.
    pub fn margins(&self, default_rel: f64) -> Vec<f64> {
        let scale = self.scale();
        self.constraints
            .iter()
            .map(|c| match c.strictness {
                Strictness::NonStrict => 0.0,
                Strictness::Strict => default_rel * scale,
                Strictness::Margin(e) => e,
            })
            .collect()
    }

    /// Worst signed violation of every constraint at `x`, in absolute units.
    ///
    /// For a `⪯ 0` block with margin `ε` this is `λ_max(F(x)) + ε`; for `⪰ 0`
    /// it is `ε − λ_min(F(x))`; lower bounds contribute `lb − xᵢ`.
    pub fn violation(&self, x: &[f64], default_margin_rel: f64) -> f64 {
        let margins = self.margins(default_margin_rel);
        let mut worst = f64::NEG_INFINITY;
        for ((c, comp), eps) in self.constraints.iter().zip(&self.compiled).zip(margins) {
            let f = comp.evaluate(x);
            let v = match c.sense {
                Sense::Nsd => lambda_max(&f) + eps,
                Sense::Psd => eps - lambda_min(&f),
            };
            worst = worst.max(v);
        }
        for (i, lb) in self.lower_bounds() {
            worst = worst.max(lb - x[i]);
        }
        worst
    }

    /// Flat values for a full assignment given by closure.
    pub fn matrix_value(&self, x: &[f64], var: MatVar) -> DMatrix<f64> {
        let decl = &self.matrix_vars[var.0];
        let mut m = DMatrix::zeros(decl.rows, decl.cols);
        for k in 0..decl.len() {
            let (a, b) = decl.position(k);
            m[(a, b)] = x[decl.offset + k];
            if decl.symmetric {
                m[(b, a)] = x[decl.offset + k];
            }
        }
        m
    }

    pub fn scalar_value(&self, x: &[f64], var: ScalarVar) -> f64 {
        x[self.scalar_vars[var.0].offset]
    }

    pub fn find_matrix(&self, name: &str) -> Option<MatVar> {
        self.matrix_vars.iter().position(|d| d.name == name).map(MatVar)
    }

    pub fn find_scalar(&self, name: &str) -> Option<ScalarVar> {
        self.scalar_vars.iter().position(|d| d.name == name).map(ScalarVar)
    }

    /// Writes `value` into the flat vector `x` (symmetric values are read from the upper triangle).
    pub fn set_matrix(&self, x: &mut [f64], var: MatVar, value: &DMatrix<f64>) {
        let decl = &self.matrix_vars[var.0];
        assert_eq!(value.shape(), (decl.rows, decl.cols));
        for k in 0..decl.len() {
            let (a, b) = decl.position(k);
            x[decl.offset + k] = value[(a, b)];
        }
    }

    pub fn set_scalar(&self, x: &mut [f64], var: ScalarVar, value: f64) {
        x[self.scalar_vars[var.0].offset] = value;
    }
}

impl fmt::Display for LmiProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LMI problem: {} scalars (", self.n_scalars)?;
        for (i, v) in self.matrix_vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{} {}x{}{}", v.name, v.rows, v.cols, if v.symmetric { " sym" } else { "" })?;
        }
        if !self.scalar_vars.is_empty() {
            write!(f, ", {} scalar vars", self.scalar_vars.len())?;
        }
        write!(f, "), {} constraints", self.constraints.len())
    }
}
