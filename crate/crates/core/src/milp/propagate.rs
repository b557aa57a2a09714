//! Activity-based bound tightening, run at every branch-and-bound node.

use super::model::{MilpModel, RowSense};

/// Outcome of [`propagate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Propagation {
    /// Bounds are consistent; the flag reports whether any bound moved.
    Consistent(bool),
    Infeasible,
}

const MAX_PASSES: usize = 25;

/// Tightens `lower`/`upper` in place using every row `Σ a·x (≤|=|≥) rhs`.
///
/// Integer bounds are rounded inward; continuous bounds only move when the
/// domain shrinks noticeably, which bounds the number of passes.
pub fn propagate(model: &MilpModel, lower: &mut [f64], upper: &mut [f64], feas_tol: f64) -> Propagation {
    let mut changed_any = false;
    for _ in 0..MAX_PASSES {
        let mut changed = false;
        for row in &model.constraints {
            let sides: &[(f64, f64)] = match row.sense {
                RowSense::Le => &[(1.0, row.rhs)],
                RowSense::Ge => &[(-1.0, -row.rhs)],
                RowSense::Eq => &[(1.0, row.rhs), (-1.0, -row.rhs)],
            };
            for &(sign, rhs) in sides {
                // sign·Σ a x ≤ rhs
                let mut min_act = 0.0;
                for &(v, a) in &row.terms {
                    let a = sign * a;
                    min_act += if a > 0.0 { a * lower[v.0] } else { a * upper[v.0] };
                }
                let scale = 1.0 + rhs.abs();
                if min_act > rhs + feas_tol * scale {
                    return Propagation::Infeasible;
                }
                for &(v, a) in &row.terms {
                    let a = sign * a;
                    if a == 0.0 {
                        continue;
                    }
                    let j = v.0;
                    let (lo, hi) = (lower[j], upper[j]);
                    if lo == hi {
                        continue;
                    }
                    let own = if a > 0.0 { a * lo } else { a * hi };
                    let residual = rhs - (min_act - own);
                    let bound = residual / a;
                    let integer = model.vars[j].integer;
                    let slack_tol = feas_tol * (1.0 + bound.abs());
                    if a > 0.0 {
                        // x_j ≤ bound
                        let new_hi = if integer { (bound + slack_tol).floor() } else { bound + slack_tol };
                        if new_hi < hi && (integer || hi - new_hi > 1e-6 + 1e-3 * (hi - lo)) {
                            if new_hi < lo - slack_tol {
                                return Propagation::Infeasible;
                            }
                            upper[j] = new_hi.max(lo);
                            changed = true;
                        }
                    } else {
                        // x_j ≥ bound
                        let new_lo = if integer { (bound - slack_tol).ceil() } else { bound - slack_tol };
                        if new_lo > lo && (integer || new_lo - lo > 1e-6 + 1e-3 * (hi - lo)) {
                            if new_lo > hi + slack_tol {
                                return Propagation::Infeasible;
                            }
                            lower[j] = new_lo.min(hi);
                            changed = true;
                        }
                    }
                }
            }
        }
        changed_any |= changed;
        if !changed {
            break;
        }
    }
    Propagation::Consistent(changed_any)
}
