//! Exact follower oracles, the greedy knapsack heuristic, the bilevel
//! feasibility repair, and a brute-force bilevel solver for small instances.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{self, LinExpr, MilpModel, MilpStatus, ObjSense, RowSense, SolveConfig, VarId};
use crate::problems::{CnpInstance, FollowerDecision, Instance, KipInstance, LeaderDecision, ProblemKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowerSolution {
    pub y: FollowerDecision,
    pub value: f64,
    pub optimal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionStatus {
    Optimal,
    /// Optimal over the enumeration grid of a continuous leader.
    GridOptimal,
    Heuristic,
    Infeasible,
    /// The surrogate solver stopped at a limit without an incumbent.
    NoSolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilevelSolution {
    pub x: LeaderDecision,
    pub y: FollowerDecision,
    #[serde(with = "nan_as_null")]
    pub leader_value: f64,
    #[serde(with = "nan_as_null")]
    pub follower_value: f64,
    pub status: SolutionStatus,
    pub wall_time_s: f64,
}

impl BilevelSolution {
    pub fn is_feasible(&self) -> bool {
        !matches!(self.status, SolutionStatus::Infeasible | SolutionStatus::NoSolution)
    }

    pub(crate) fn infeasible(x: LeaderDecision, status: SolutionStatus, wall_time_s: f64) -> Self {
        let n = x.len();
        Self {
            x,
            y: FollowerDecision::zeros(n),
            leader_value: f64::NAN,
            follower_value: f64::NAN,
            status,
            wall_time_s,
        }
    }
}

pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// 0/1 knapsack by dynamic programming over integer capacities.
///
/// Items with `allowed[i] == false` are skipped. Returns the optimal value and
/// the chosen items; ties keep the earlier (lower-index) choice.
pub fn knapsack_dp(values: &[f64], weights: &[i64], capacity: i64, allowed: &[bool]) -> (f64, Vec<bool>) {
    let n = values.len();
    let cap = capacity.max(0) as usize;
    let mut best = vec![0.0f64; cap + 1];
    let mut keep = vec![false; n * (cap + 1)];
    for i in 0..n {
        let w = weights[i];
        if !allowed[i] || values[i] <= 0.0 || w < 0 || w as usize > cap {
            continue;
        }
        let w = w as usize;
        let row = &mut keep[i * (cap + 1)..(i + 1) * (cap + 1)];
        for c in (w..=cap).rev() {
            let cand = best[c - w] + values[i];
            if cand > best[c] {
                best[c] = cand;
                row[c] = true;
            }
        }
    }
    let mut chosen = vec![false; n];
    let mut c = cap;
    for i in (0..n).rev() {
        if keep[i * (cap + 1) + c] {
            chosen[i] = true;
            c -= weights[i] as usize;
        }
    }
    (best[cap], chosen)
}

fn bits_to_y(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Per-node attack gains `p^a[(1+γ)(1−x) + (1−η)x]` of the CNP follower.
pub fn cnp_attack_gains(inst: &CnpInstance, x: &[f64]) -> Vec<f64> {
    (0..inst.n)
        .map(|i| inst.attacker_profit[i] * ((1.0 + inst.gamma) * (1.0 - x[i]) + (1.0 - inst.eta) * x[i]))
        .collect()
}

/// Follower problem for a fixed leader decision as a MILP, with the follower
/// and leader objectives as affine expressions in the follower variables.
pub(crate) struct FollowerModel {
    pub model: MilpModel,
    pub y: Vec<VarId>,
    pub y0: Option<VarId>,
    pub follower_expr: LinExpr,
    pub leader_expr: LinExpr,
}

pub(crate) fn follower_model(inst: &Instance, x: &[f64]) -> Result<FollowerModel> {
    let n = inst.n();
    let mut model = MilpModel::new(format!("follower-{}", inst.kind()));
    let y: Vec<VarId> = (0..n).map(|i| model.add_binary(format!("y{i}"))).collect();
    let mut y0 = None;
    let mut f = LinExpr::new();
    let mut lead = LinExpr::new();
    match inst {
        Instance::Kip(k) => {
            let mut cap = LinExpr::new();
            for i in 0..n {
                cap.add_term(y[i], k.weights[i] as f64);
                f.add_term(y[i], k.profits[i] as f64);
                if x[i] > 0.5 {
                    model.fix(y[i], 0.0);
                }
            }
            model.add_constraint("capacity", &cap, RowSense::Le, k.capacity as f64)?;
            lead = f.clone();
        }
        Instance::Cnp(c) => {
            let mut cap = LinExpr::new();
            for i in 0..n {
                cap.add_term(y[i], c.attacker_cost[i] as f64);
                let (xi, pa, pd) = (x[i], c.attacker_profit[i], c.defender_profit[i]);
                f.add_constant(-c.gamma * pa * (1.0 - xi));
                f.add_term(y[i], pa * (c.gamma * (1.0 - xi) + (1.0 - xi) + (1.0 - c.eta) * xi));
                lead.add_constant(pd * ((1.0 - xi) + c.epsilon * xi));
                lead.add_term(
                    y[i],
                    pd * (-(1.0 - xi) + c.eta * xi - c.epsilon * xi + c.delta * (1.0 - xi)),
                );
            }
            model.add_constraint("attack-budget", &cap, RowSense::Le, c.attacker_budget as f64)?;
        }
        Instance::Drp(d) => {
            let ext = model.add_continuous("y0", 0.0, 1.0)?;
            y0 = Some(ext);
            let mut cap = LinExpr::term(ext, d.external_cost);
            for i in 0..n {
                cap.add_term(y[i], d.cost[i] * (1.0 - x[i]));
                f.add_term(y[i], d.recipient_profit[i]);
                lead.add_term(y[i], d.donor_profit[i]);
            }
            f.add_term(ext, d.external_profit);
            model.add_constraint("recipient-budget", &cap, RowSense::Le, d.recipient_budget)?;
        }
        Instance::Toy(t) => {
            model.add_constraint(
                "toy",
                &LinExpr::var(y[0]),
                RowSense::Le,
                t.capacity - t.weight * x[0],
            )?;
            f.add_term(y[0], 1.0);
            lead.add_term(y[0], 1.0);
        }
    }
    Ok(FollowerModel {
        model,
        y,
        y0,
        follower_expr: f,
        leader_expr: lead,
    })
}

fn extract_follower(fm: &FollowerModel, values: &[f64]) -> FollowerDecision {
    FollowerDecision {
        y: fm.y.iter().map(|v| values[v.0].round()).collect(),
        y0: fm.y0.map(|v| values[v.0].clamp(0.0, 1.0)).unwrap_or(0.0),
    }
}

/// Optimal follower response and value `Φ(x)`.
pub fn solve_follower(inst: &Instance, x: &LeaderDecision) -> Result<FollowerSolution> {
    if !inst.leader_feasible(x)? {
        return Err(Error::Oracle("leader decision violates the leader constraints".into()));
    }
    let n = inst.n();
    let y = match inst {
        Instance::Kip(k) => {
            let allowed: Vec<bool> = x.0.iter().map(|&v| v < 0.5).collect();
            let profits: Vec<f64> = k.profits.iter().map(|&p| p as f64).collect();
            let (_, chosen) = knapsack_dp(&profits, &k.weights, k.capacity, &allowed);
            FollowerDecision { y: bits_to_y(&chosen), y0: 0.0 }
        }
        Instance::Cnp(c) => {
            let gains = cnp_attack_gains(c, &x.0);
            let (_, chosen) = knapsack_dp(&gains, &c.attacker_cost, c.attacker_budget, &vec![true; n]);
            FollowerDecision { y: bits_to_y(&chosen), y0: 0.0 }
        }
        Instance::Drp(_) => {
            let fm = follower_model(inst, &x.0)?;
            let mut model = fm.model.clone();
            model.set_objective(ObjSense::Maximize, fm.follower_expr.clone());
            let sol = milp::solve(&model, &SolveConfig::default());
            if sol.status != MilpStatus::Optimal {
                return Err(Error::Oracle(format!("follower MILP ended with {:?}", sol.status)));
            }
            extract_follower(&fm, sol.values.as_ref().expect("optimal has values"))
        }
        Instance::Toy(t) => {
            let slack = t.capacity - t.weight * x.0[0];
            if slack < -1e-9 {
                return Err(Error::FollowerInfeasible);
            }
            FollowerDecision { y: vec![if slack >= 1.0 - 1e-9 { 1.0 } else { 0.0 }], y0: 0.0 }
        }
    };
    let value = inst.follower_objective(x, &y)?;
    Ok(FollowerSolution { y, value, optimal: true })
}

/// Items sorted by decreasing profit/weight ratio, ties to the lower index.
pub fn greedy_order(inst: &KipInstance) -> Vec<usize> {
    let mut order: Vec<usize> = (0..inst.n).collect();
    order.sort_by(|&i, &j| {
        // p_i/a_i > p_j/a_j  <=>  p_i·a_j > p_j·a_i (weights are positive).
        let lhs = inst.profits[i] as i128 * inst.weights[j] as i128;
        let rhs = inst.profits[j] as i128 * inst.weights[i] as i128;
        rhs.cmp(&lhs).then(i.cmp(&j))
    });
    order
}

/// Ratio-greedy follower: take each non-interdicted item in ratio order while it fits.
pub fn greedy_knapsack(inst: &KipInstance, x: &LeaderDecision) -> FollowerSolution {
    let mut y = vec![0.0; inst.n];
    let mut remaining = inst.capacity;
    let mut value = 0.0;
    for i in greedy_order(inst) {
        if x.0[i] < 0.5 && remaining >= inst.weights[i] {
            y[i] = 1.0;
            remaining -= inst.weights[i];
            value += inst.profits[i] as f64;
        }
    }
    FollowerSolution {
        y: FollowerDecision { y, y0: 0.0 },
        value,
        optimal: false,
    }
}

/// Turns a leader decision into a bilevel-feasible solution: compute `Φ(x)`,
/// then the optimistic follower response among the follower optima.
pub fn repair(inst: &Instance, x: &LeaderDecision) -> Result<BilevelSolution> {
    let start = Instant::now();
    if !inst.leader_feasible(x)? {
        return Ok(BilevelSolution::infeasible(
            x.clone(),
            SolutionStatus::Infeasible,
            start.elapsed().as_secs_f64(),
        ));
    }
    let step1 = match solve_follower(inst, x) {
        Ok(s) => s,
        Err(Error::FollowerInfeasible) => {
            return Ok(BilevelSolution::infeasible(
                x.clone(),
                SolutionStatus::Infeasible,
                start.elapsed().as_secs_f64(),
            ))
        }
        Err(e) => return Err(e),
    };
    let phi = step1.value;
    let y = match inst.kind() {
        // Leader and follower share the objective: any follower optimum is optimistic.
        ProblemKind::Kip | ProblemKind::Toy => step1.y,
        ProblemKind::Cnp | ProblemKind::Drp => {
            let fm = follower_model(inst, &x.0)?;
            let mut model = fm.model.clone();
            let tol = 1e-7 * (1.0 + phi.abs());
            model.add_constraint("value-function", &fm.follower_expr, RowSense::Ge, phi - tol)?;
            model.set_objective(inst.kind().leader_sense(), fm.leader_expr.clone());
            let sol = milp::solve(&model, &SolveConfig::default());
            match sol.values.as_ref() {
                Some(vals) if sol.status == MilpStatus::Optimal => {
                    let cand = extract_follower(&fm, vals);
                    let f = inst.follower_objective(x, &cand)?;
                    let better = inst.kind().leader_sense().better(
                        inst.leader_objective(x, &cand)?,
                        inst.leader_objective(x, &step1.y)?,
                        0.0,
                    );
                    if f >= phi - 1e-6 * (1.0 + phi.abs())
                        && inst.follower_feasible(x, &cand)?
                        && better
                    {
                        cand
                    } else {
                        step1.y
                    }
                }
                _ => step1.y,
            }
        }
    };
    let leader_value = inst.leader_objective(x, &y)?;
    let follower_value = inst.follower_objective(x, &y)?;
    Ok(BilevelSolution {
        x: x.clone(),
        y,
        leader_value,
        follower_value,
        status: SolutionStatus::Heuristic,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Grid used for continuous (DRP) leaders.
pub const DRP_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Number of decisions [`enumerate_leader`] would produce (DRP: raw grid size).
pub fn count_leader_decisions(inst: &Instance) -> u128 {
    let n = inst.n() as u64;
    match inst {
        Instance::Kip(k) => (0..=k.budget as u64).map(|j| binomial(n, j)).sum(),
        Instance::Cnp(c) => {
            // Subsets with total defender cost within budget, counted by DP.
            let cap = c.defender_budget.max(0) as usize;
            let mut ways = vec![0u128; cap + 1];
            ways[0] = 1;
            for &d in &c.defender_cost {
                let d = d as usize;
                for w in (d..=cap).rev() {
                    ways[w] += ways[w - d];
                }
            }
            ways.iter().sum()
        }
        Instance::Drp(_) => (DRP_GRID.len() as u128).saturating_pow(n as u32),
        Instance::Toy(_) => 2,
    }
}

/// Every leader-feasible decision (DRP: budget-feasible grid points) in a
/// fixed order, refusing when there are more than `cap`.
pub fn enumerate_leader(inst: &Instance, cap: u128) -> Result<Vec<LeaderDecision>> {
    let count = count_leader_decisions(inst);
    if count > cap {
        return Err(Error::Size { count, cap });
    }
    let n = inst.n();
    let mut out = Vec::with_capacity(count as usize);
    match inst {
        Instance::Kip(k) => {
            // Subsets by increasing size, each size in lexicographic index order.
            for size in 0..=k.budget {
                let mut idx: Vec<usize> = (0..size).collect();
                loop {
                    let mut x = vec![0.0; n];
                    for &i in &idx {
                        x[i] = 1.0;
                    }
                    out.push(LeaderDecision(x));
                    let mut pos = size;
                    while pos > 0 && idx[pos - 1] == n - size + pos - 1 {
                        pos -= 1;
                    }
                    if pos == 0 {
                        break;
                    }
                    idx[pos - 1] += 1;
                    for p in pos..size {
                        idx[p] = idx[p - 1] + 1;
                    }
                }
            }
        }
        Instance::Cnp(_) | Instance::Toy(_) => {
            for mask in 0u64..(1u64 << n) {
                let x = LeaderDecision((0..n).map(|i| ((mask >> i) & 1) as f64).collect());
                if inst.leader_feasible(&x)? {
                    out.push(x);
                }
            }
        }
        Instance::Drp(_) => {
            let mut digits = vec![0usize; n];
            loop {
                let x = LeaderDecision(digits.iter().map(|&d| DRP_GRID[d]).collect());
                if inst.leader_feasible(&x)? {
                    out.push(x);
                }
                let mut pos = 0;
                while pos < n && digits[pos] == DRP_GRID.len() - 1 {
                    digits[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
                digits[pos] += 1;
            }
        }
    }
    Ok(out)
}

/// Exact bilevel optimum by enumerating all leader decisions and repairing each.
pub fn solve_bruteforce(inst: &Instance, cap: u128) -> Result<BilevelSolution> {
    let start = Instant::now();
    let decisions = enumerate_leader(inst, cap)?;
    let solutions: Vec<BilevelSolution> = decisions
        .par_iter()
        .map(|x| repair(inst, x))
        .collect::<Result<_>>()?;
    let sense = inst.kind().leader_sense();
    let mut best: Option<BilevelSolution> = None;
    for sol in solutions.into_iter().filter(BilevelSolution::is_feasible) {
        let replace = match &best {
            None => true,
            Some(b) => sense.better(sol.leader_value, b.leader_value, 0.0),
        };
        if replace {
            best = Some(sol);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(match best {
        Some(mut b) => {
            b.status = if inst.kind() == ProblemKind::Drp {
                SolutionStatus::GridOptimal
            } else {
                SolutionStatus::Optimal
            };
            b.wall_time_s = elapsed;
            b
        }
        None => BilevelSolution::infeasible(LeaderDecision::zeros(inst.n()), SolutionStatus::Infeasible, elapsed),
    })
}

/// Follower value `Φ(x)` for every enumerated leader decision.
pub fn value_table(inst: &Instance, cap: u128) -> Result<Vec<(LeaderDecision, f64)>> {
    let decisions = enumerate_leader(inst, cap)?;
    decisions
        .into_par_iter()
        .map(|x| {
            let v = solve_follower(inst, &x)?.value;
            Ok((x, v))
        })
        .collect()
}

/// Deterministic ordering helper for leader values under a sense.
pub fn compare_leader(sense: ObjSense, a: f64, b: f64) -> Ordering {
    match sense {
        ObjSense::Minimize => a.total_cmp(&b),
        ObjSense::Maximize => b.total_cmp(&a),
    }
}
