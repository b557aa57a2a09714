//! Best-bound branch-and-bound with a depth-first plunge.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::MilpModel;
use super::propagate::{propagate, Propagation};
use super::simplex::{solve_relaxation, LpStatus, LpTolerances};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchingRule {
    /// Fractional part closest to 1/2, ties to the lowest index.
    MostFractional,
    /// Most-fractional among the variables of the highest priority class.
    PriorityMostFractional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeSelection {
    /// Best bound, diving into the floor child after every branching.
    BestBoundPlunge,
    /// Pure best bound, no plunging.
    BestBound,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveConfig {
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    /// Absolute optimality gap.
    pub gap_tol: f64,
    pub node_limit: usize,
    pub time_limit_s: Option<f64>,
    pub branching: BranchingRule,
    pub node_selection: NodeSelection,
    /// Activity-based bound tightening before each node LP.
    pub propagate: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-6,
            integrality_tol: 1e-6,
            gap_tol: 1e-9,
            node_limit: 1_000_000,
            time_limit_s: None,
            branching: BranchingRule::MostFractional,
            node_selection: NodeSelection::BestBoundPlunge,
            propagate: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
    /// The LP engine gave up on some node; the incumbent (if any) is not proven.
    Numerical,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Incumbent assignment; `None` when no integer-feasible point was found.
    pub values: Option<Vec<f64>>,
    pub objective: f64,
    /// Best proven bound on the optimum.
    pub bound: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time_s: f64,
    pub precision_warning: bool,
}

impl MilpSolution {
    pub fn has_solution(&self) -> bool {
        self.values.is_some()
    }

    pub fn value(&self, v: super::VarId) -> Option<f64> {
        self.values.as_ref().map(|vals| vals[v.0])
    }
}

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Parent LP value in minimisation form.
    bound: f64,
    id: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn pick_branch(
    model: &MilpModel,
    values: &[f64],
    cfg: &SolveConfig,
) -> Option<usize> {
    let mut best: Option<(usize, i32, f64)> = None;
    for (j, var) in model.vars.iter().enumerate() {
        if !var.integer {
            continue;
        }
        let v = values[j];
        let frac = v - v.floor();
        let dist = frac.min(1.0 - frac);
        if dist <= cfg.integrality_tol {
            continue;
        }
        let prio = match cfg.branching {
            BranchingRule::MostFractional => 0,
            BranchingRule::PriorityMostFractional => var.priority,
        };
        let better = match best {
            None => true,
            Some((_, p, d)) => prio > p || (prio == p && dist > d + 1e-12),
        };
        if better {
            best = Some((j, prio, dist));
        }
    }
    best.map(|(j, _, _)| j)
}

/// Solves `model` to optimality (within `cfg.gap_tol`) or until a limit triggers.
pub fn solve(model: &MilpModel, cfg: &SolveConfig) -> MilpSolution {
    let start = Instant::now();
    let sign = model.sense.sign();
    let lp_tol = LpTolerances::default();
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let root = Node {
        lower: model.vars.iter().map(|v| v.lower).collect(),
        upper: model.vars.iter().map(|v| v.upper).collect(),
        bound: f64::NEG_INFINITY,
        id: next_id,
    };
    next_id += 1;

    let mut incumbent: Option<Vec<f64>> = None;
    // Incumbent value in minimisation form.
    let mut best = f64::INFINITY;
    let mut nodes = 0usize;
    let mut lp_iterations = 0usize;
    let mut precision_warning = false;
    let mut status = MilpStatus::Optimal;
    let mut dive: Option<Node> = Some(root);

    loop {
        let node = match dive.take() {
            Some(n) => n,
            None => match heap.pop() {
                Some(n) => n,
                None => break,
            },
        };
        if node.bound >= best - cfg.gap_tol {
            continue;
        }
        if nodes >= cfg.node_limit {
            heap.push(node);
            status = MilpStatus::NodeLimit;
            break;
        }
        if let Some(limit) = cfg.time_limit_s {
            if start.elapsed().as_secs_f64() > limit {
                heap.push(node);
                status = MilpStatus::TimeLimit;
                break;
            }
        }
        nodes += 1;
        let mut node = node;
        if cfg.propagate
            && propagate(model, &mut node.lower, &mut node.upper, cfg.feasibility_tol) == Propagation::Infeasible
        {
            continue;
        }
        let lp = solve_relaxation(model, &node.lower, &node.upper, &lp_tol);
        lp_iterations += lp.iterations;
        precision_warning |= lp.precision_warning;
        match lp.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded | LpStatus::IterationLimit => {
                status = MilpStatus::Numerical;
                continue;
            }
        }
        let value = sign * lp.objective;
        if value >= best - cfg.gap_tol {
            continue;
        }
        match pick_branch(model, &lp.values, cfg) {
            None => {
                let mut vals = lp.values;
                for (j, var) in model.vars.iter().enumerate() {
                    if var.integer {
                        vals[j] = vals[j].round();
                    }
                }
                best = sign * model.objective_value(&vals);
                incumbent = Some(vals);
            }
            Some(j) => {
                let v = lp.values[j];
                let mut down = Node {
                    lower: node.lower.clone(),
                    upper: node.upper.clone(),
                    bound: value,
                    id: next_id,
                };
                down.upper[j] = v.floor();
                let mut up = Node {
                    lower: node.lower,
                    upper: node.upper,
                    bound: value,
                    id: next_id + 1,
                };
                up.lower[j] = v.ceil();
                next_id += 2;
                match cfg.node_selection {
                    NodeSelection::BestBoundPlunge => {
                        heap.push(up);
                        dive = Some(down);
                    }
                    NodeSelection::BestBound => {
                        heap.push(down);
                        heap.push(up);
                    }
                }
            }
        }
    }

    let open_bound = heap
        .iter()
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);
    let bound_min = if status == MilpStatus::Optimal {
        best
    } else {
        open_bound.min(best)
    };
    if incumbent.is_none() && status == MilpStatus::Optimal {
        status = MilpStatus::Infeasible;
    }
    MilpSolution {
        status,
        objective: if incumbent.is_some() { sign * best } else { f64::NAN },
        values: incumbent,
        bound: sign * bound_min,
        nodes,
        lp_iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        precision_warning,
    }
}

