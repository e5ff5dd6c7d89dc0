//! Plain-text dump of a compiled problem, for inspection with external solvers.

use std::fmt::Write as _;

use super::problem::{LmiProblem, Sense, Strictness};

fn write_matrix(out: &mut String, m: &nalgebra::DMatrix<f64>) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.17e}", m[(r, c)])).collect();
        let _ = writeln!(out, "  {}", row.join(" "));
    }
}

/// Renders every constraint as `F0 + Σ xᵢ Fᵢ` with dense coefficient matrices.
pub fn write_dump(problem: &LmiProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# scalars {}", problem.n_scalars());
    for v in problem.matrix_vars() {
        let _ = writeln!(
            out,
            "# matrix {} {}x{} {} offset {}",
            v.name,
            v.rows,
            v.cols,
            if v.symmetric { "symmetric" } else { "full" },
            v.offset
        );
    }
    for s in problem.scalar_vars() {
        let lower = s.lower.map_or("none".to_string(), |l| format!("{l:e}"));
        let _ = writeln!(out, "# scalar {} lower {} offset {}", s.name, lower, s.offset);
    }
    for (c, comp) in problem.constraints().iter().zip(problem.compiled()) {
        let sense = match c.sense {
            Sense::Psd => ">=",
            Sense::Nsd => "<=",
        };
        let strict = match c.strictness {
            Strictness::NonStrict => "non-strict".to_string(),
            Strictness::Strict => "strict".to_string(),
            Strictness::Margin(e) => format!("margin {e:e}"),
        };
        let _ = writeln!(out, "constraint {} dim {} {} 0 {}", c.name, comp.dim, sense, strict);
        let _ = writeln!(out, " F0");
        write_matrix(&mut out, &comp.constant);
        for (i, a) in &comp.coeffs {
            let _ = writeln!(out, " F{}", i + 1);
            write_matrix(&mut out, &a.to_dense(comp.dim));
        }
    }
    out
}
