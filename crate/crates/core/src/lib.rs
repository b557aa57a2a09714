//! Learned value-function surrogates for bilevel mixed-integer programs.
//!
//! The pipeline: generate benchmark instances ([`problems`]), label sampled
//! leader decisions with an exact follower oracle ([`oracle`], [`dataset`]),
//! fit a permutation-invariant regressor ([`mlp`]), compile it into a
//! single-level MILP ([`embed`], [`surrogate`]) solved by the embedded
//! branch-and-bound ([`milp`]), and repair the result into a bilevel-feasible
//! solution. [`harness`] drives experiments and the guarantee checks.

pub mod dataset;
pub mod embed;
pub mod error;
pub mod harness;
pub mod milp;
pub mod mlp;
pub mod oracle;
pub mod problems;
pub mod surrogate;

pub use error::{Error, Result};

pub use oracle::{BilevelSolution, FollowerSolution, SolutionStatus};
pub use problems::{FollowerDecision, Instance, LeaderDecision, ProblemKind, SizeParams};
