//! A small mixed-integer linear programming core: model, bounded-variable
//! simplex, branch-and-bound, a feasibility checker and LP-format export.

mod bnb;
mod check;
mod lp_format;
mod model;
mod propagate;
mod simplex;

pub use bnb::{solve, BranchingRule, MilpSolution, MilpStatus, NodeSelection, SolveConfig};
pub use check::{check, Violation};
pub use lp_format::{format_g17, write_lp};
pub use model::{Constraint, LinExpr, MilpModel, ObjSense, RowSense, VarId, Variable};
pub use propagate::{propagate, Propagation};
pub use simplex::{solve_lp, solve_relaxation, LpSolution, LpStatus, LpTolerances};
