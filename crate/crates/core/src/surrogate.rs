//! Single-level surrogates of the bilevel problem: the upper-level value
//! approximation, the lower-level value-function reformulation with slack,
//! and the greedy value-function baseline. Solutions are repaired through the
//! exact follower oracle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embed::{encode_greedy, encode_relu_network, linearize_product, EncodeStats, EncodingMode};
use crate::error::{Error, Result};
use crate::milp::{self, BranchingRule, LinExpr, MilpModel, MilpStatus, ObjSense, RowSense, SolveConfig, VarId};
use crate::mlp::{SetNetwork, Target};
use crate::oracle::{self, BilevelSolution, SolutionStatus};
use crate::problems::{Instance, LeaderDecision, ProblemKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    Upper,
    Lower,
    Gvfa,
}

impl std::str::FromStr for ApproxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(ApproxKind::Upper),
            "lower" => Ok(ApproxKind::Lower),
            "gvfa" => Ok(ApproxKind::Gvfa),
            other => Err(Error::param(format!("unknown approximation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlackMode {
    /// `f(x, y) ≥ NN(x) − s` with penalised `s ≥ 0`.
    Slack,
    /// `f(x, y) ≥ NN(x)`.
    None,
    /// `f(x, y) ≥ NN(x) − d` with the dampening constant `d`.
    Dampened,
}

impl std::str::FromStr for SlackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slack" => Ok(SlackMode::Slack),
            "none" => Ok(SlackMode::None),
            "dampened" => Ok(SlackMode::Dampened),
            other => Err(Error::param(format!("unknown slack mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub approx: ApproxKind,
    pub lambda: f64,
    pub slack: SlackMode,
    /// Required in dampened mode; defaults to the approximator's recorded
    /// maximum validation error when absent.
    pub dampening: Option<f64>,
    pub encoding: EncodingMode,
    pub solve: SolveConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            approx: ApproxKind::Lower,
            lambda: 1.0,
            slack: SlackMode::Slack,
            dampening: None,
            encoding: EncodingMode::Auto,
            solve: SolveConfig {
                branching: BranchingRule::PriorityMostFractional,
                ..SolveConfig::default()
            },
        }
    }
}

impl SurrogateConfig {
    pub fn lower(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn with_approx(approx: ApproxKind) -> Self {
        Self {
            approx,
            slack: if approx == ApproxKind::Gvfa { SlackMode::None } else { SlackMode::Slack },
            ..Self::default()
        }
    }
}

/// Something that predicts a value function and can write itself into a MILP.
pub trait ValueApproximator: Sync {
    fn predict(&self, inst: &Instance, x: &LeaderDecision) -> Result<f64>;

    /// Adds the encoding to `model` and returns the prediction expression.
    fn encode(&self, model: &mut MilpModel, inst: &Instance, x: &[VarId], mode: EncodingMode) -> Result<(LinExpr, EncodeStats)>;

    /// Which value function this approximates, when known.
    fn target(&self) -> Option<Target> {
        None
    }

    /// Largest validation absolute error, used for dampening.
    fn max_val_abs_error(&self) -> Option<f64> {
        None
    }
}

impl ValueApproximator for SetNetwork {
    fn predict(&self, inst: &Instance, x: &LeaderDecision) -> Result<f64> {
        SetNetwork::predict(self, inst, x)
    }

    fn encode(&self, model: &mut MilpModel, inst: &Instance, x: &[VarId], mode: EncodingMode) -> Result<(LinExpr, EncodeStats)> {
        let enc = encode_relu_network(model, self, inst, x, mode)?;
        Ok((enc.output, enc.stats))
    }

    fn target(&self) -> Option<Target> {
        Some(self.target)
    }

    fn max_val_abs_error(&self) -> Option<f64> {
        Some(self.val_max_abs_error)
    }
}

/// Predictor given by an explicit table over binary leader decisions,
/// encoded as a one-hot selection of a table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TablePredictor {
    pub entries: Vec<(LeaderDecision, f64)>,
}

impl TablePredictor {
    pub fn new(entries: Vec<(LeaderDecision, f64)>) -> Self {
        Self { entries }
    }

    /// `value(x, Φ(x))` over every enumerated leader decision.
    pub fn from_oracle(inst: &Instance, cap: u128, value: impl Fn(&LeaderDecision, f64) -> f64) -> Result<Self> {
        let table = oracle::value_table(inst, cap)?;
        Ok(Self::new(table.into_iter().map(|(x, phi)| {
            let v = value(&x, phi);
            (x, v)
        }).collect()))
    }

    /// Stub of the two-point toy: `NN(0) = 2`, `NN(1) = 0`.
    pub fn toy_stub() -> Self {
        Self::new(vec![(LeaderDecision(vec![0.0]), 2.0), (LeaderDecision(vec![1.0]), 0.0)])
    }
}

fn same_bits(a: &LeaderDecision, b: &LeaderDecision) -> bool {
    a.len() == b.len() && a.0.iter().zip(&b.0).all(|(u, v)| (u > &0.5) == (v > &0.5))
}

impl ValueApproximator for TablePredictor {
    fn predict(&self, _inst: &Instance, x: &LeaderDecision) -> Result<f64> {
        self.entries
            .iter()
            .find(|(e, _)| same_bits(e, x))
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::Model(format!("decision {:?} is not in the table", x.0)))
    }

    fn encode(&self, model: &mut MilpModel, inst: &Instance, x: &[VarId], _mode: EncodingMode) -> Result<(LinExpr, EncodeStats)> {
        if !inst.kind().binary_leader() {
            return Err(Error::Model("table predictors need binary leader decisions".into()));
        }
        let w: Vec<VarId> = (0..self.entries.len()).map(|e| model.add_binary(format!("w{e}"))).collect();
        let mut one = LinExpr::new();
        let mut out = LinExpr::new();
        for (e, (_, v)) in self.entries.iter().enumerate() {
            one.add_term(w[e], 1.0);
            out.add_term(w[e], *v);
        }
        model.add_constraint("table_pick", &one, RowSense::Eq, 1.0)?;
        for (j, &xj) in x.iter().enumerate() {
            let mut row = LinExpr::var(xj);
            for (e, (xe, _)) in self.entries.iter().enumerate() {
                if xe.0[j] > 0.5 {
                    row.add_term(w[e], -1.0);
                }
            }
            model.add_constraint(format!("table_x{j}"), &row, RowSense::Eq, 0.0)?;
        }
        let stats = EncodeStats {
            binaries: w.len(),
            ..EncodeStats::default()
        };
        Ok((out, stats))
    }
}

/// A built surrogate with handles to its main variables.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    pub model: MilpModel,
    pub x: Vec<VarId>,
    pub y: Vec<VarId>,
    pub y0: Option<VarId>,
    pub slack: Option<VarId>,
    /// Encoded prediction (or greedy value for G-VFA), in label units.
    pub prediction: LinExpr,
    pub follower_expr: LinExpr,
    pub leader_expr: LinExpr,
    pub stats: EncodeStats,
}

impl SurrogateModel {
    /// Leader decision read from a solution vector.
    pub fn extract_x(&self, inst: &Instance, values: &[f64]) -> LeaderDecision {
        let mut x: Vec<f64> = self.x.iter().map(|v| values[v.0]).collect();
        match inst {
            Instance::Drp(d) => {
                for v in x.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                let spend: f64 = x.iter().zip(&d.cost).map(|(a, c)| a * c).sum();
                if spend > d.donor_budget {
                    let f = d.donor_budget / spend;
                    x.iter_mut().for_each(|v| *v *= f);
                }
            }
            _ => x.iter_mut().for_each(|v| *v = v.round()),
        }
        LeaderDecision(x)
    }
}

const LEADER_PRIORITY: i32 = 1;

fn leader_vars(model: &mut MilpModel, inst: &Instance) -> Result<Vec<VarId>> {
    let n = inst.n();
    let x: Vec<VarId> = if inst.kind().binary_leader() {
        (0..n).map(|i| model.add_binary(format!("x{i}"))).collect()
    } else {
        (0..n)
            .map(|i| model.add_continuous(format!("x{i}"), 0.0, 1.0))
            .collect::<Result<_>>()?
    };
    // Leader variables are branched on first.
    for &v in &x {
        model.set_priority(v, LEADER_PRIORITY);
    }
    let budget = match inst {
        Instance::Kip(k) => Some((vec![1.0; n], k.budget as f64)),
        Instance::Cnp(c) => Some((c.defender_cost.iter().map(|&d| d as f64).collect(), c.defender_budget as f64)),
        Instance::Drp(d) => Some((d.cost.clone(), d.donor_budget)),
        Instance::Toy(_) => None,
    };
    if let Some((w, rhs)) = budget {
        let mut row = LinExpr::new();
        for (i, &v) in x.iter().enumerate() {
            row.add_term(v, w[i]);
        }
        model.add_constraint("leader_budget", &row, RowSense::Le, rhs)?;
    }
    Ok(x)
}

struct Follower {
    y: Vec<VarId>,
    y0: Option<VarId>,
    f: LinExpr,
    big_f: LinExpr,
}

/// Follower variables and rows `g(x, y) ≥ 0` with both objectives linearized.
fn follower_block(model: &mut MilpModel, inst: &Instance, x: &[VarId]) -> Result<Follower> {
    let n = inst.n();
    let y: Vec<VarId> = (0..n).map(|i| model.add_binary(format!("y{i}"))).collect();
    let mut f = LinExpr::new();
    let mut big_f = LinExpr::new();
    let mut y0 = None;
    match inst {
        Instance::Kip(k) => {
            let mut cap = LinExpr::new();
            for i in 0..n {
                cap.add_term(y[i], k.weights[i] as f64);
                let mut row = LinExpr::var(y[i]);
                row.add_term(x[i], 1.0);
                model.add_constraint(format!("interdict{i}"), &row, RowSense::Le, 1.0)?;
                f.add_term(y[i], k.profits[i] as f64);
            }
            model.add_constraint("capacity", &cap, RowSense::Le, k.capacity as f64)?;
            big_f = f.clone();
        }
        Instance::Cnp(c) => {
            let mut cap = LinExpr::new();
            for i in 0..n {
                cap.add_term(y[i], c.attacker_cost[i] as f64);
                let z = linearize_product(model, x[i], y[i])?;
                let (pa, pd) = (c.attacker_profit[i], c.defender_profit[i]);
                f.add_constant(-c.gamma * pa);
                f.add_term(x[i], c.gamma * pa)
                    .add_term(y[i], (1.0 + c.gamma) * pa)
                    .add_term(z, -(c.gamma + c.eta) * pa);
                big_f.add_constant(pd);
                big_f
                    .add_term(x[i], (c.epsilon - 1.0) * pd)
                    .add_term(y[i], (c.delta - 1.0) * pd)
                    .add_term(z, (1.0 + c.eta - c.epsilon - c.delta) * pd);
            }
            model.add_constraint("attack_budget", &cap, RowSense::Le, c.attacker_budget as f64)?;
        }
        Instance::Drp(d) => {
            let ext = model.add_continuous("y0", 0.0, 1.0)?;
            y0 = Some(ext);
            let mut cap = LinExpr::term(ext, d.external_cost);
            for i in 0..n {
                let z = linearize_product(model, x[i], y[i])?;
                cap.add_term(y[i], d.cost[i]).add_term(z, -d.cost[i]);
                f.add_term(y[i], d.recipient_profit[i]);
                big_f.add_term(y[i], d.donor_profit[i]);
            }
            f.add_term(ext, d.external_profit);
            model.add_constraint("recipient_budget", &cap, RowSense::Le, d.recipient_budget)?;
        }
        Instance::Toy(t) => {
            let mut row = LinExpr::var(y[0]);
            row.add_term(x[0], t.weight);
            model.add_constraint("toy", &row, RowSense::Le, t.capacity)?;
            f.add_term(y[0], 1.0);
            big_f.add_term(y[0], 1.0);
        }
    }
    Ok(Follower {
        y,
        y0,
        f: f.normalized(),
        big_f: big_f.normalized(),
    })
}

fn check_target(approx: &dyn ValueApproximator, inst: &Instance, wanted: Target) -> Result<()> {
    match approx.target() {
        Some(t) if t != wanted && inst.kind() != ProblemKind::Kip => Err(Error::Config(format!(
            "approximator targets the {t:?} value function, surrogate needs {wanted:?}"
        ))),
        _ => Ok(()),
    }
}

/// `opt NN^u(x)` over the leader constraints only.
pub fn build_upper(inst: &Instance, approx: &dyn ValueApproximator, cfg: &SurrogateConfig) -> Result<SurrogateModel> {
    check_target(approx, inst, Target::Upper)?;
    let mut model = MilpModel::new(format!("upper-{}", inst.kind()));
    let x = leader_vars(&mut model, inst)?;
    let (prediction, stats) = approx.encode(&mut model, inst, &x, cfg.encoding)?;
    model.set_objective(inst.kind().leader_sense(), prediction.clone());
    model.tag("approx", "upper");
    Ok(SurrogateModel {
        model,
        x,
        y: Vec::new(),
        y0: None,
        slack: None,
        prediction: prediction.clone(),
        follower_expr: LinExpr::new(),
        leader_expr: prediction,
        stats,
    })
}

fn value_function_model(
    inst: &Instance,
    name: &str,
    cfg: &SurrogateConfig,
    bound: impl FnOnce(&mut MilpModel, &[VarId]) -> Result<(LinExpr, EncodeStats)>,
    dampening: Option<f64>,
) -> Result<SurrogateModel> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Config(format!("slack penalty must be non-negative, got {}", cfg.lambda)));
    }
    let mut model = MilpModel::new(format!("{name}-{}", inst.kind()));
    let x = leader_vars(&mut model, inst)?;
    let fol = follower_block(&mut model, inst, &x)?;
    let (prediction, stats) = bound(&mut model, &x)?;
    let sense = inst.kind().leader_sense();
    let mut objective = fol.big_f.clone();
    let mut slack = None;
    // f(x, y) − NN(x) (+ s) ≥ −d
    let mut row = fol.f.clone();
    row.add_scaled(&prediction, -1.0);
    let rhs = match cfg.slack {
        SlackMode::Slack => {
            let (_, nn_hi) = prediction.range(&model);
            let (f_lo, _) = fol.f.range(&model);
            let s_max = (nn_hi - f_lo).max(0.0) + 1.0;
            let s = model.add_continuous("s", 0.0, s_max)?;
            row.add_term(s, 1.0);
            let penalty = match sense {
                ObjSense::Minimize => cfg.lambda,
                ObjSense::Maximize => -cfg.lambda,
            };
            objective.add_term(s, penalty);
            slack = Some(s);
            0.0
        }
        SlackMode::None => 0.0,
        SlackMode::Dampened => -dampening.ok_or_else(|| Error::Config("dampened mode needs a dampening constant".into()))?,
    };
    model.add_constraint("value_function", &row, RowSense::Ge, rhs)?;
    model.set_objective(sense, objective);
    model.tag("approx", name);
    model.tag("lambda", cfg.lambda);
    Ok(SurrogateModel {
        model,
        x,
        y: fol.y,
        y0: fol.y0,
        slack,
        prediction,
        follower_expr: fol.f,
        leader_expr: fol.big_f,
        stats,
    })
}

/// Lower-level value-function reformulation with the learned `Φ` and slack.
pub fn build_lower(inst: &Instance, approx: &dyn ValueApproximator, cfg: &SurrogateConfig) -> Result<SurrogateModel> {
    check_target(approx, inst, Target::Lower)?;
    let dampening = match cfg.slack {
        SlackMode::Dampened => Some(
            cfg.dampening
                .or_else(|| approx.max_val_abs_error())
                .ok_or_else(|| Error::Config("dampened mode needs a dampening constant".into()))?,
        ),
        _ => None,
    };
    if let Some(d) = dampening {
        if !(d >= 0.0) {
            return Err(Error::Config(format!("dampening constant must be non-negative, got {d}")));
        }
    }
    value_function_model(inst, "lower", cfg, |m, x| approx.encode(m, inst, x, cfg.encoding), dampening)
}

/// Value-function reformulation with the greedy follower value in place of `Φ`.
pub fn build_gvfa(inst: &Instance, cfg: &SurrogateConfig) -> Result<SurrogateModel> {
    let kip = inst.as_kip()?;
    let cfg = SurrogateConfig {
        slack: SlackMode::None,
        ..cfg.clone()
    };
    value_function_model(
        inst,
        "gvfa",
        &cfg,
        |m, x| Ok((encode_greedy(m, kip, x)?.1, EncodeStats::default())),
        None,
    )
}

/// Builds the surrogate selected by `cfg.approx`.
pub fn build(inst: &Instance, approx: Option<&dyn ValueApproximator>, cfg: &SurrogateConfig) -> Result<SurrogateModel> {
    inst.validate()?;
    let need = || Error::Config("this surrogate needs a value approximator".into());
    match cfg.approx {
        ApproxKind::Upper => build_upper(inst, approx.ok_or_else(need)?, cfg),
        ApproxKind::Lower => build_lower(inst, approx.ok_or_else(need)?, cfg),
        ApproxKind::Gvfa => build_gvfa(inst, cfg),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateOutcome {
    pub solution: BilevelSolution,
    pub approx: ApproxKind,
    pub milp_status: MilpStatus,
    pub nodes: usize,
    /// Surrogate objective at the incumbent.
    #[serde(with = "crate::oracle::nan_as_null")]
    pub surrogate_objective: f64,
    /// Decision returned by the surrogate before repair.
    pub surrogate_x: Option<LeaderDecision>,
    pub stats: EncodeStats,
    pub surrogate_time_s: f64,
    pub repair_time_s: f64,
}

/// Build, solve, extract `x⋆`, repair.
pub fn solve_end_to_end(inst: &Instance, approx: Option<&dyn ValueApproximator>, cfg: &SurrogateConfig) -> Result<SurrogateOutcome> {
    let start = Instant::now();
    let sm = build(inst, approx, cfg)?;
    let sol = milp::solve(&sm.model, &cfg.solve);
    let surrogate_time_s = start.elapsed().as_secs_f64();
    let n = inst.n();
    let Some(values) = sol.values.as_ref() else {
        let status = if sol.status == MilpStatus::Infeasible {
            SolutionStatus::Infeasible
        } else {
            SolutionStatus::NoSolution
        };
        return Ok(SurrogateOutcome {
            solution: BilevelSolution::infeasible(LeaderDecision::zeros(n), status, surrogate_time_s),
            approx: cfg.approx,
            milp_status: sol.status,
            nodes: sol.nodes,
            surrogate_objective: f64::NAN,
            surrogate_x: None,
            stats: sm.stats,
            surrogate_time_s,
            repair_time_s: 0.0,
        });
    };
    let x = sm.extract_x(inst, values);
    let repair_start = Instant::now();
    let mut solution = oracle::repair(inst, &x)?;
    let repair_time_s = repair_start.elapsed().as_secs_f64();
    solution.wall_time_s = surrogate_time_s + repair_time_s;
    Ok(SurrogateOutcome {
        solution,
        approx: cfg.approx,
        milp_status: sol.status,
        nodes: sol.nodes,
        surrogate_objective: sol.objective,
        surrogate_x: Some(x),
        stats: sm.stats,
        surrogate_time_s,
        repair_time_s,
    })
}

/// Lower surrogate solved with the leader fixed to `x` (and optionally the
/// follower to `y`). Returns the follower response and the slack value.
pub fn solve_fixed(
    inst: &Instance,
    approx: &dyn ValueApproximator,
    cfg: &SurrogateConfig,
    x: &LeaderDecision,
    y: Option<&[f64]>,
) -> Result<FixedResponse> {
    let mut sm = build_lower(inst, approx, cfg)?;
    for (v, &val) in sm.x.iter().zip(&x.0) {
        sm.model.fix(*v, val);
    }
    if let Some(y) = y {
        for (v, &val) in sm.y.iter().zip(y) {
            sm.model.fix(*v, val);
        }
    }
    let sol = milp::solve(&sm.model, &cfg.solve);
    let values = sol
        .values
        .as_ref()
        .ok_or_else(|| Error::Model(format!("fixed-leader surrogate ended with {:?}", sol.status)))?;
    let follower = crate::problems::FollowerDecision {
        y: sm.y.iter().map(|v| values[v.0].round()).collect(),
        y0: sm.y0.map_or(0.0, |v| values[v.0]),
    };
    Ok(FixedResponse {
        follower_value: inst.follower_objective(x, &follower)?,
        y: follower,
        slack: sm.slack.map_or(0.0, |s| values[s.0]),
        encoded_prediction: sm.prediction.eval(values),
        objective: sol.objective,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedResponse {
    pub y: crate::problems::FollowerDecision,
    pub follower_value: f64,
    pub slack: f64,
    pub encoded_prediction: f64,
    pub objective: f64,
}
