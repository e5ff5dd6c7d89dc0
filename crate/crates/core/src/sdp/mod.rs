//! Linear matrix inequality feasibility problems and a primal-dual
//! interior-point backend.

mod dump;
mod ipm;
mod problem;

pub use dump::write_dump;
pub use ipm::{solve_feasibility, Assignment, SolveDiagnostics, SolveOutcome, SolveStatus, SolverSettings};
pub use problem::{
    CompiledConstraint, LmiConstraint, LmiProblem, MatVar, MatrixVarDecl, ScalarVar, ScalarVarDecl, Sense,
    Strictness, SymSparse,
};
