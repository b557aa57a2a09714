//! Evaluation across methods and empirical checks of the slack-penalty
//! guarantees on enumerable knapsack interdiction instances.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::SolveConfig;
use crate::mlp::SetNetwork;
use crate::oracle::{self, compare_leader, SolutionStatus};
use crate::problems::{FollowerDecision, Instance, KipInstance, LeaderDecision};
use crate::surrogate::{self, ApproxKind, SlackMode, SurrogateConfig, ValueApproximator};

/// Absolute tolerance of the verification suites.
pub const VERIFY_TOL: f64 = 1e-6;

/// Largest follower dimension for which `Δ` is enumerated.
pub const DELTA_MAX_N: usize = 12;

/// `100·|obj − best| / |best|`. With `best = 0` this is 0 when `obj = 0` and
/// undefined (`None`) otherwise.
pub fn relative_error(obj: f64, best: f64) -> Option<f64> {
    if !obj.is_finite() || !best.is_finite() {
        return None;
    }
    if best == 0.0 {
        return (obj == 0.0).then_some(0.0);
    }
    Some(100.0 * (obj - best).abs() / best.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NN_l")]
    NnLower,
    #[serde(rename = "NN_u")]
    NnUpper,
    #[serde(rename = "GVFA")]
    Gvfa,
    #[serde(rename = "bruteforce")]
    Bruteforce,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::NnLower => "NN_l",
            Method::NnUpper => "NN_u",
            Method::Gvfa => "GVFA",
            Method::Bruteforce => "bruteforce",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn_l" | "nnl" | "lower" => Ok(Method::NnLower),
            "nn_u" | "nnu" | "upper" => Ok(Method::NnUpper),
            "gvfa" => Ok(Method::Gvfa),
            "bruteforce" | "bf" => Ok(Method::Bruteforce),
            other => Err(Error::param(format!("unknown method {other:?}"))),
        }
    }
}

/// One (instance, method) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub instance_id: String,
    pub group: String,
    pub method: Method,
    /// Leader value after repair; NaN when no feasible solution came back.
    pub objective: f64,
    pub mre_pct: Option<f64>,
    pub surrogate_time_s: f64,
    pub repair_time_s: f64,
    pub nodes: usize,
    /// Solution status, or `error` when the method failed.
    pub status: String,
}

/// The CSV layout of a [`MethodResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance_id: String,
    pub method: Method,
    pub objective: Option<f64>,
    pub mre_pct: Option<f64>,
    pub surrogate_time_s: f64,
    pub repair_time_s: f64,
    pub status: String,
}

impl MethodResult {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            instance_id: self.instance_id.clone(),
            method: self.method,
            objective: self.objective.is_finite().then_some(self.objective),
            mre_pct: self.mre_pct,
            surrogate_time_s: self.surrogate_time_s,
            repair_time_s: self.repair_time_s,
            status: self.status.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub method: Method,
    pub instances: usize,
    /// Mean over instances with a defined relative error.
    pub mre_pct: Option<f64>,
    pub undefined_mre: usize,
    pub mean_surrogate_time_s: f64,
    pub mean_repair_time_s: f64,
    pub mean_total_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MethodResult>,
    pub groups: Vec<GroupSummary>,
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub lower_net: Option<SetNetwork>,
    pub upper_net: Option<SetNetwork>,
    pub surrogate: SurrogateConfig,
    pub bruteforce_cap: u128,
    /// Zeroes every timing so outputs are reproducible byte for byte.
    pub record_timings: bool,
}

impl EvalConfig {
    pub fn new(methods: Vec<Method>) -> Self {
        Self {
            methods,
            lower_net: None,
            upper_net: None,
            surrogate: SurrogateConfig::default(),
            bruteforce_cap: 1 << 22,
            record_timings: true,
        }
    }
}

/// Label used to aggregate instances, e.g. `kip-n18-k5`.
pub fn instance_group(inst: &Instance) -> String {
    match inst {
        Instance::Kip(k) => format!("kip-n{}-k{}", k.n, k.budget),
        other => format!("{}-n{}", other.kind(), other.n()),
    }
}

/// Every `*.json` instance in `dir`, sorted by file stem.
pub fn load_instances(dir: impl AsRef<Path>) -> Result<Vec<(String, Instance)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, Instance::load(&p)?))
        })
        .collect()
}

fn status_str(status: SolutionStatus) -> String {
    serde_json::to_value(status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| format!("{status:?}"))
}

fn run_method(id: &str, inst: &Instance, method: Method, cfg: &EvalConfig) -> Result<MethodResult> {
    let base = |objective, status: SolutionStatus, st, rt, nodes| MethodResult {
        instance_id: id.to_owned(),
        group: instance_group(inst),
        method,
        objective,
        mre_pct: None,
        surrogate_time_s: st,
        repair_time_s: rt,
        nodes,
        status: status_str(status),
    };
    if method == Method::Bruteforce {
        let sol = oracle::solve_bruteforce(inst, cfg.bruteforce_cap)?;
        let obj = if sol.is_feasible() { sol.leader_value } else { f64::NAN };
        return Ok(base(obj, sol.status, sol.wall_time_s, 0.0, 0));
    }
    let (approx, net): (ApproxKind, Option<&SetNetwork>) = match method {
        Method::NnLower => (ApproxKind::Lower, cfg.lower_net.as_ref()),
        Method::NnUpper => (
            ApproxKind::Upper,
            cfg.upper_net
                .as_ref()
                .or(if inst.as_kip().is_ok() { cfg.lower_net.as_ref() } else { None }),
        ),
        _ => (ApproxKind::Gvfa, None),
    };
    if approx != ApproxKind::Gvfa && net.is_none() {
        return Err(Error::Config(format!("method {method} needs a trained network")));
    }
    let scfg = SurrogateConfig {
        approx,
        slack: if approx == ApproxKind::Gvfa { SlackMode::None } else { cfg.surrogate.slack },
        ..cfg.surrogate.clone()
    };
    let out = surrogate::solve_end_to_end(inst, net.map(|n| n as &dyn ValueApproximator), &scfg)?;
    let obj = if out.solution.is_feasible() { out.solution.leader_value } else { f64::NAN };
    Ok(base(obj, out.solution.status, out.surrogate_time_s, out.repair_time_s, out.nodes))
}

/// Runs every method on every instance. Rows are ordered by instance then by
/// method; failures become rows with status `error`.
pub fn evaluate(instances: &[(String, Instance)], cfg: &EvalConfig) -> Result<EvalReport> {
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let per_instance: Vec<Vec<MethodResult>> = instances
        .par_iter()
        .map(|(id, inst)| {
            let mut rows: Vec<MethodResult> = methods
                .iter()
                .map(|&m| {
                    run_method(id, inst, m, cfg).unwrap_or_else(|e| {
                        log::warn!("{id}/{m}: {e}");
                        MethodResult {
                            instance_id: id.clone(),
                            group: instance_group(inst),
                            method: m,
                            objective: f64::NAN,
                            mre_pct: None,
                            surrogate_time_s: 0.0,
                            repair_time_s: 0.0,
                            nodes: 0,
                            status: "error".into(),
                        }
                    })
                })
                .collect();
            let sense = inst.kind().leader_sense();
            let exact = rows
                .iter()
                .find(|r| r.method == Method::Bruteforce && r.status == "optimal")
                .map(|r| r.objective);
            let best = exact.or_else(|| {
                rows.iter()
                    .map(|r| r.objective)
                    .filter(|v| v.is_finite())
                    .min_by(|a, b| compare_leader(sense, *a, *b))
            });
            for r in &mut rows {
                r.mre_pct = best.and_then(|b| relative_error(r.objective, b));
                if !cfg.record_timings {
                    r.surrogate_time_s = 0.0;
                    r.repair_time_s = 0.0;
                }
            }
            rows
        })
        .collect();
    let mut rows: Vec<MethodResult> = per_instance.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.instance_id.cmp(&b.instance_id).then(a.method.cmp(&b.method)));
    let groups = summarize(&rows);
    Ok(EvalReport { rows, groups })
}

/// Per-(group, method) means.
pub fn summarize(rows: &[MethodResult]) -> Vec<GroupSummary> {
    let mut buckets: BTreeMap<(String, Method), Vec<&MethodResult>> = BTreeMap::new();
    for r in rows {
        buckets.entry((r.group.clone(), r.method)).or_default().push(r);
    }
    buckets
        .into_iter()
        .map(|((group, method), rs)| {
            let n = rs.len() as f64;
            let defined: Vec<f64> = rs.iter().filter_map(|r| r.mre_pct).collect();
            let st = rs.iter().map(|r| r.surrogate_time_s).sum::<f64>() / n;
            let rt = rs.iter().map(|r| r.repair_time_s).sum::<f64>() / n;
            GroupSummary {
                group,
                method,
                instances: rs.len(),
                mre_pct: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                undefined_mre: rs.len() - defined.len(),
                mean_surrogate_time_s: st,
                mean_repair_time_s: rt,
                mean_total_time_s: st + rt,
            }
        })
        .collect()
}

/// Human-readable summary with two decimals.
pub fn format_summary(groups: &[GroupSummary]) -> String {
    let mut out = format!("{:<16} {:<10} {:>4} {:>9} {:>9}\n", "group", "method", "n", "MRE%", "time(s)");
    for g in groups {
        let mre = g.mre_pct.map_or_else(|| "undef".to_owned(), |v| format!("{v:.2}"));
        out.push_str(&format!(
            "{:<16} {:<10} {:>4} {:>9} {:>9.2}\n",
            g.group, g.method, g.instances, mre, g.mean_total_time_s
        ));
    }
    out
}

pub fn write_results(path: impl AsRef<Path>, rows: &[MethodResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r.row())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Largest gap between consecutive achievable follower values, over every
/// enumerated leader decision and every follower-feasible response.
pub fn delta_gap(inst: &KipInstance, cap: u128) -> Result<f64> {
    if inst.n > DELTA_MAX_N {
        return Err(Error::Size {
            count: 1u128 << inst.n,
            cap: 1u128 << DELTA_MAX_N,
        });
    }
    let wrapped = Instance::Kip(inst.clone());
    let decisions = oracle::enumerate_leader(&wrapped, cap)?;
    let gaps: Vec<i64> = decisions
        .par_iter()
        .map(|x| {
            let free: Vec<usize> = (0..inst.n).filter(|&i| x.0[i] < 0.5).collect();
            let mut values = Vec::with_capacity(1 << free.len());
            for mask in 0u32..(1 << free.len()) {
                let (mut w, mut p) = (0i64, 0i64);
                for (b, &i) in free.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        w += inst.weights[i];
                        p += inst.profits[i];
                    }
                }
                if w <= inst.capacity {
                    values.push(p);
                }
            }
            values.sort_unstable();
            values.dedup();
            values.windows(2).map(|v| v[1] - v[0]).max().unwrap_or(0)
        })
        .collect();
    Ok(gaps.into_iter().max().unwrap_or(0) as f64)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("the guarantees need a slack penalty above 1, got {lambda}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub instance_id: String,
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
    pub opt: f64,
    pub achieved: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `f(x⋆, y⋆) ≤ opt + 3α + (2/λ)Δ` for the repaired lower-surrogate
/// solution of a KIP instance.
pub fn verify_theorem1(
    id: &str,
    inst: &KipInstance,
    approx: &dyn ValueApproximator,
    lambda: f64,
    solve: &SolveConfig,
    cap: u128,
) -> Result<BoundReport> {
    check_lambda(lambda)?;
    let wrapped = Instance::Kip(inst.clone());
    let delta = delta_gap(inst, cap)?;
    let table = oracle::value_table(&wrapped, cap)?;
    let mut alpha = 0.0f64;
    for (x, phi) in &table {
        alpha = alpha.max((approx.predict(&wrapped, x)? - phi).abs());
    }
    let opt = table.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let cfg = SurrogateConfig {
        solve: solve.clone(),
        ..SurrogateConfig::lower(lambda)
    };
    let out = surrogate::solve_end_to_end(&wrapped, Some(approx), &cfg)?;
    let achieved = if out.solution.is_feasible() { out.solution.leader_value } else { f64::INFINITY };
    let bound = opt + 3.0 * alpha + 2.0 / lambda * delta;
    Ok(BoundReport {
        instance_id: id.to_owned(),
        lambda,
        alpha,
        delta,
        opt,
        achieved,
        bound,
        holds: achieved <= bound + VERIFY_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCase {
    pub x: LeaderDecision,
    pub prediction: f64,
    pub phi: f64,
    /// `f(x, y⋆_NN)` of the surrogate's response with `x` fixed.
    pub response: f64,
    /// 1 when the prediction is at least `Φ(x)`, else 2.
    pub case: u8,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub instance_id: String,
    pub lambda: f64,
    pub delta: f64,
    pub cases: Vec<LemmaCase>,
    pub holds: bool,
}

/// Fixes every feasible leader decision in turn and checks the follower
/// response of the lower surrogate against the case bounds.
pub fn verify_lemma1(
    id: &str,
    inst: &KipInstance,
    approx: &dyn ValueApproximator,
    lambda: f64,
    solve: &SolveConfig,
    cap: u128,
) -> Result<LemmaReport> {
    check_lambda(lambda)?;
    let wrapped = Instance::Kip(inst.clone());
    let delta = delta_gap(inst, cap)?;
    let table = oracle::value_table(&wrapped, cap)?;
    let cfg = SurrogateConfig {
        solve: solve.clone(),
        ..SurrogateConfig::lower(lambda)
    };
    let cases = table
        .par_iter()
        .map(|(x, phi)| {
            let prediction = approx.predict(&wrapped, x)?;
            let resp = surrogate::solve_fixed(&wrapped, approx, &cfg, x, None)?;
            let response = resp.follower_value;
            let (case, holds) = if prediction >= *phi {
                (1, (response - phi).abs() <= VERIFY_TOL)
            } else {
                (
                    2,
                    prediction - delta / lambda - VERIFY_TOL <= response && response <= phi + VERIFY_TOL,
                )
            };
            Ok(LemmaCase {
                x: x.clone(),
                prediction,
                phi: *phi,
                response,
                case,
                holds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport {
        instance_id: id.to_owned(),
        lambda,
        delta,
        holds: cases.iter().all(|c| c.holds),
        cases,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackProbe {
    pub x: LeaderDecision,
    pub y: Vec<f64>,
    pub prediction: f64,
    pub follower_value: f64,
    pub slack: f64,
    pub expected: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub instance_id: String,
    pub lambda: f64,
    pub probes: Vec<SlackProbe>,
    pub holds: bool,
}

/// Random follower-feasible binary response: items in random order, kept
/// while the follower budget allows.
pub fn random_response<R: Rng + ?Sized>(inst: &Instance, x: &LeaderDecision, rng: &mut R) -> Result<Vec<f64>> {
    let n = inst.n();
    let (weights, cap): (Vec<f64>, f64) = match inst {
        Instance::Kip(k) => (k.weights.iter().map(|&w| w as f64).collect(), k.capacity as f64),
        Instance::Cnp(c) => (c.attacker_cost.iter().map(|&w| w as f64).collect(), c.attacker_budget as f64),
        other => {
            return Err(Error::Kind {
                kind: "kip or cnp",
                found: other.kind().as_str(),
            })
        }
    };
    let target = rng.gen_range(0.0..=cap);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut y = vec![0.0; n];
    let mut used = 0.0;
    for i in order {
        let blocked = matches!(inst, Instance::Kip(_)) && x.0[i] > 0.5;
        if !blocked && used + weights[i] <= target {
            used += weights[i];
            y[i] = 1.0;
        }
    }
    debug_assert!(inst.follower_feasible(x, &FollowerDecision { y: y.clone(), y0: 0.0 }).unwrap_or(false));
    Ok(y)
}

/// With both `x` and `y` fixed, the solved slack must equal `max{0, NN − f}`.
pub fn verify_observation1(
    id: &str,
    inst: &Instance,
    approx: &dyn ValueApproximator,
    lambda: f64,
    probes: &[(LeaderDecision, Vec<f64>)],
    solve: &SolveConfig,
) -> Result<SlackReport> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("slack is only pinned down for a positive penalty, got {lambda}")));
    }
    let cfg = SurrogateConfig {
        solve: solve.clone(),
        ..SurrogateConfig::lower(lambda)
    };
    let probes = probes
        .par_iter()
        .map(|(x, y)| {
            let prediction = approx.predict(inst, x)?;
            let resp = surrogate::solve_fixed(inst, approx, &cfg, x, Some(y))?;
            let expected = (prediction - resp.follower_value).max(0.0);
            Ok(SlackProbe {
                x: x.clone(),
                y: y.clone(),
                prediction,
                follower_value: resp.follower_value,
                slack: resp.slack,
                expected,
                holds: (resp.slack - expected).abs() <= VERIFY_TOL,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlackReport {
        instance_id: id.to_owned(),
        lambda,
        holds: probes.iter().all(|p| p.holds),
        probes,
    })
}

/// Aggregate of one verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport<T> {
    pub suite: String,
    pub passed: usize,
    pub failed: usize,
    pub holds: bool,
    pub reports: Vec<T>,
}

impl<T> SuiteReport<T> {
    pub fn new(suite: &str, reports: Vec<T>, holds: impl Fn(&T) -> bool) -> Self {
        let passed = reports.iter().filter(|r| holds(r)).count();
        Self {
            suite: suite.to_owned(),
            passed,
            failed: reports.len() - passed,
            holds: passed == reports.len(),
            reports,
        }
    }
}
