use serde::{Deserialize, Serialize};

use super::model::MilpModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Bound { var: usize, magnitude: f64 },
    Integrality { var: usize, magnitude: f64 },
    Constraint { row: usize, magnitude: f64 },
}

impl Violation {
    pub fn magnitude(&self) -> f64 {
        match *self {
            Violation::Bound { magnitude, .. }
            | Violation::Integrality { magnitude, .. }
            | Violation::Constraint { magnitude, .. } => magnitude,
        }
    }
}

/// Lists every bound, integrality and row violation of `values` beyond the tolerances.
/// An empty report means the assignment is feasible.
pub fn check(model: &MilpModel, values: &[f64], feas_tol: f64, int_tol: f64) -> Vec<Violation> {
    assert_eq!(values.len(), model.vars.len(), "assignment must cover every variable");
    let mut out = Vec::new();
    for (j, var) in model.vars.iter().enumerate() {
        let v = values[j];
        let over = (var.lower - v).max(v - var.upper).max(0.0);
        if over > feas_tol {
            out.push(Violation::Bound { var: j, magnitude: over });
        }
        if var.integer {
            let off = (v - v.round()).abs();
            if off > int_tol {
                out.push(Violation::Integrality { var: j, magnitude: off });
            }
        }
    }
    for (i, row) in model.constraints.iter().enumerate() {
        let viol = row.violation(values);
        if viol > feas_tol {
            out.push(Violation::Constraint { row: i, magnitude: viol });
        }
    }
    out
}
