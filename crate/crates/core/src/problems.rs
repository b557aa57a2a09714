//! Benchmark bilevel problem families: knapsack interdiction (KIP), critical
//! node (CNP), donor-recipient (DRP), plus the two-variable toy used to
//! contrast the upper- and lower-level surrogates.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::ObjSense;

const DOMAIN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Kip,
    Cnp,
    Drp,
    Toy,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Kip => "kip",
            ProblemKind::Cnp => "cnp",
            ProblemKind::Drp => "drp",
            ProblemKind::Toy => "toy",
        }
    }

    /// Optimisation sense of the leader.
    pub fn leader_sense(self) -> ObjSense {
        match self {
            ProblemKind::Kip | ProblemKind::Toy => ObjSense::Minimize,
            ProblemKind::Cnp | ProblemKind::Drp => ObjSense::Maximize,
        }
    }

    /// Whether leader variables are binary (DRP leaders are fractional).
    pub fn binary_leader(self) -> bool {
        !matches!(self, ProblemKind::Drp)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kip" => Ok(ProblemKind::Kip),
            "cnp" => Ok(ProblemKind::Cnp),
            "drp" => Ok(ProblemKind::Drp),
            "toy" => Ok(ProblemKind::Toy),
            other => Err(Error::param(format!("unknown problem kind {other:?}"))),
        }
    }
}

/// Knapsack interdiction: the leader removes up to `budget` items, the
/// follower packs the rest; both score `Σ profit·y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KipInstance {
    pub n: usize,
    pub profits: Vec<i64>,
    pub weights: Vec<i64>,
    pub capacity: i64,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Critical node problem: defender protects nodes under cost budget, attacker
/// then attacks nodes under its own budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnpInstance {
    pub n: usize,
    pub defender_profit: Vec<f64>,
    pub attacker_profit: Vec<f64>,
    pub defender_cost: Vec<i64>,
    pub attacker_cost: Vec<i64>,
    pub defender_budget: i64,
    pub attacker_budget: i64,
    /// Attacker's opportunity-cost factor for leaving an undefended node.
    pub gamma: f64,
    /// Mitigated-attack factor.
    pub eta: f64,
    /// Defended-but-not-attacked factor.
    pub epsilon: f64,
    /// Successful-attack factor.
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Donor-recipient problem: the donor subsidises fractions of project costs,
/// the recipient then picks projects plus a continuous external project.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrpInstance {
    pub n: usize,
    pub donor_profit: Vec<f64>,
    pub recipient_profit: Vec<f64>,
    pub cost: Vec<f64>,
    pub external_profit: f64,
    pub external_cost: f64,
    pub donor_budget: f64,
    pub recipient_budget: f64,
    #[serde(default)]
    pub seed: u64,
}

/// `min_x y  s.t.  y ∈ argmax { y : weight·x + y ≤ capacity, y ∈ {0,1} }`, `x ∈ {0,1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    pub weight: f64,
    pub capacity: f64,
}

impl Default for ToyInstance {
    fn default() -> Self {
        Self {
            weight: 2.0,
            capacity: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Instance {
    Kip(KipInstance),
    Cnp(CnpInstance),
    Drp(DrpInstance),
    Toy(ToyInstance),
}

/// Leader decision, one entry per item/node/project.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeaderDecision(pub Vec<f64>);

impl LeaderDecision {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Follower decision; `y0` is the DRP external project share and 0 elsewhere.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FollowerDecision {
    pub y: Vec<f64>,
    #[serde(default)]
    pub y0: f64,
}

impl FollowerDecision {
    pub fn zeros(n: usize) -> Self {
        Self {
            y: vec![0.0; n],
            y0: 0.0,
        }
    }
}

/// Size parameters for [`generate_instance`]. `budget` is the KIP
/// interdiction budget; when absent it is drawn from `{⌈n/4⌉, ⌈n/2⌉, ⌈3n/4⌉}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeParams {
    pub n: usize,
    pub budget: Option<usize>,
}

impl SizeParams {
    pub fn new(n: usize) -> Self {
        Self { n, budget: None }
    }

    pub fn with_budget(n: usize, budget: usize) -> Self {
        Self {
            n,
            budget: Some(budget),
        }
    }
}

/// The three KIP budgets used per item count.
pub fn kip_budget_levels(n: usize) -> [usize; 3] {
    [n.div_ceil(4), n.div_ceil(2), (3 * n).div_ceil(4)]
}

fn is_binary(v: f64) -> bool {
    v.abs() <= DOMAIN_TOL || (v - 1.0).abs() <= DOMAIN_TOL
}

fn bit(v: f64) -> f64 {
    if v > 0.5 {
        1.0
    } else {
        0.0
    }
}

impl Instance {
    pub fn kind(&self) -> ProblemKind {
        match self {
            Instance::Kip(_) => ProblemKind::Kip,
            Instance::Cnp(_) => ProblemKind::Cnp,
            Instance::Drp(_) => ProblemKind::Drp,
            Instance::Toy(_) => ProblemKind::Toy,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Instance::Kip(i) => i.n,
            Instance::Cnp(i) => i.n,
            Instance::Drp(i) => i.n,
            Instance::Toy(_) => 1,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Instance::Kip(i) => i.seed,
            Instance::Cnp(i) => i.seed,
            Instance::Drp(i) => i.seed,
            Instance::Toy(_) => 0,
        }
    }

    pub fn as_kip(&self) -> Result<&KipInstance> {
        match self {
            Instance::Kip(k) => Ok(k),
            other => Err(Error::Kind {
                kind: "kip",
                found: other.kind().as_str(),
            }),
        }
    }

    /// Objective coefficients the leader's value is linear in (per variable).
    pub fn leader_coefficients(&self) -> Vec<f64> {
        match self {
            Instance::Kip(i) => i.profits.iter().map(|&p| p as f64).collect(),
            Instance::Cnp(i) => i.defender_profit.clone(),
            Instance::Drp(i) => i.donor_profit.clone(),
            Instance::Toy(_) => vec![1.0],
        }
    }

    /// Objective coefficients of the follower's value (per variable).
    pub fn follower_coefficients(&self) -> Vec<f64> {
        match self {
            Instance::Kip(i) => i.profits.iter().map(|&p| p as f64).collect(),
            Instance::Cnp(i) => i.attacker_profit.clone(),
            Instance::Drp(i) => i.recipient_profit.clone(),
            Instance::Toy(_) => vec![1.0],
        }
    }

    /// Checks the type invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        let n = self.n();
        if n == 0 {
            return bad("instance must have n >= 1".into());
        }
        match self {
            Instance::Kip(i) => {
                if i.profits.len() != n || i.weights.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: i.profits.len().min(i.weights.len()),
                    });
                }
                if i.profits.iter().chain(&i.weights).any(|&v| v < 1) {
                    return bad("KIP profits and weights must be >= 1".into());
                }
                if i.budget > n {
                    return bad(format!("KIP budget {} exceeds n = {n}", i.budget));
                }
                let total: i64 = i.weights.iter().sum();
                if i.capacity < 0 || i.capacity >= total {
                    return bad(format!("KIP capacity {} outside [0, {total})", i.capacity));
                }
            }
            Instance::Cnp(i) => {
                for (name, len) in [
                    ("defender_profit", i.defender_profit.len()),
                    ("attacker_profit", i.attacker_profit.len()),
                    ("defender_cost", i.defender_cost.len()),
                    ("attacker_cost", i.attacker_cost.len()),
                ] {
                    if len != n {
                        return bad(format!("CNP {name} has length {len}, expected {n}"));
                    }
                }
                if i.defender_profit.iter().chain(&i.attacker_profit).any(|&v| v <= 0.0)
                    || i.defender_cost.iter().chain(&i.attacker_cost).any(|&v| v < 1)
                {
                    return bad("CNP profits and costs must be positive".into());
                }
                if [i.gamma, i.eta, i.epsilon, i.delta]
                    .iter()
                    .any(|v| !(0.0..=1.0).contains(v))
                {
                    return bad("CNP outcome factors must lie in [0, 1]".into());
                }
                if i.defender_budget < 0 || i.attacker_budget < 0 {
                    return bad("CNP budgets must be non-negative".into());
                }
            }
            Instance::Drp(i) => {
                if i.donor_profit.len() != n || i.recipient_profit.len() != n || i.cost.len() != n {
                    return bad("DRP coefficient arrays must have length n".into());
                }
                if i.cost.iter().any(|&c| c <= 0.0) || i.donor_budget <= 0.0 || i.recipient_budget <= 0.0 {
                    return bad("DRP costs and budgets must be positive".into());
                }
                if i.external_profit < 0.0 || i.external_cost < 0.0 {
                    return bad("DRP external project data must be non-negative".into());
                }
            }
            Instance::Toy(_) => {}
        }
        Ok(())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }

    /// Leader budget and domain constraints.
    pub fn leader_feasible(&self, x: &LeaderDecision) -> Result<bool> {
        self.check_dim(x.len())?;
        let x = &x.0;
        Ok(match self {
            Instance::Kip(i) => {
                x.iter().all(|&v| is_binary(v))
                    && x.iter().map(|&v| bit(v)).sum::<f64>() <= i.budget as f64
            }
            Instance::Cnp(i) => {
                x.iter().all(|&v| is_binary(v))
                    && x.iter()
                        .zip(&i.defender_cost)
                        .map(|(&v, &d)| bit(v) * d as f64)
                        .sum::<f64>()
                        <= i.defender_budget as f64
            }
            Instance::Drp(i) => {
                x.iter().all(|&v| (-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&v))
                    && x.iter().zip(&i.cost).map(|(&v, &c)| v * c).sum::<f64>()
                        <= i.donor_budget + DOMAIN_TOL * (1.0 + i.donor_budget)
            }
            Instance::Toy(_) => x.iter().all(|&v| is_binary(v)),
        })
    }

    /// Follower constraints `g(x, y) ≥ 0` plus the follower's variable domain.
    pub fn follower_feasible(&self, x: &LeaderDecision, y: &FollowerDecision) -> Result<bool> {
        self.check_dim(x.len())?;
        self.check_dim(y.y.len())?;
        let (x, yv) = (&x.0, &y.y);
        if !yv.iter().all(|&v| is_binary(v)) {
            return Ok(false);
        }
        Ok(match self {
            Instance::Kip(i) => {
                let weight: i64 = yv
                    .iter()
                    .zip(&i.weights)
                    .map(|(&v, &a)| bit(v) as i64 * a)
                    .sum();
                weight <= i.capacity && x.iter().zip(yv).all(|(&a, &b)| bit(a) + bit(b) <= 1.0)
            }
            Instance::Cnp(i) => {
                let cost: i64 = yv
                    .iter()
                    .zip(&i.attacker_cost)
                    .map(|(&v, &a)| bit(v) as i64 * a)
                    .sum();
                cost <= i.attacker_budget
            }
            Instance::Drp(i) => {
                if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&y.y0) {
                    return Ok(false);
                }
                let spend: f64 = (0..i.n)
                    .map(|k| i.cost[k] * (1.0 - x[k]) * bit(yv[k]))
                    .sum::<f64>()
                    + i.external_cost * y.y0;
                spend <= i.recipient_budget + 1e-7 * (1.0 + i.recipient_budget)
            }
            Instance::Toy(t) => t.weight * x[0] + bit(yv[0]) <= t.capacity + DOMAIN_TOL,
        })
    }

    /// Leader objective `F(x, y)`.
    pub fn leader_objective(&self, x: &LeaderDecision, y: &FollowerDecision) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(y.y.len())?;
        let (x, y) = (&x.0, &y.y);
        Ok(match self {
            Instance::Kip(i) => i.profits.iter().zip(y).map(|(&p, &v)| p as f64 * v).sum(),
            Instance::Cnp(i) => (0..i.n)
                .map(|k| {
                    let (xk, yk) = (x[k], y[k]);
                    i.defender_profit[k]
                        * ((1.0 - xk) * (1.0 - yk)
                            + i.eta * xk * yk
                            + i.epsilon * xk * (1.0 - yk)
                            + i.delta * (1.0 - xk) * yk)
                })
                .sum(),
            Instance::Drp(i) => i.donor_profit.iter().zip(y).map(|(&w, &v)| w * v).sum(),
            Instance::Toy(_) => y[0],
        })
    }

    /// Follower objective `f(x, y)`.
    pub fn follower_objective(&self, x: &LeaderDecision, y: &FollowerDecision) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(y.y.len())?;
        let (xv, yv) = (&x.0, &y.y);
        Ok(match self {
            Instance::Kip(_) => self.leader_objective(x, y)?,
            Instance::Cnp(i) => (0..i.n)
                .map(|k| {
                    let (xk, yk) = (xv[k], yv[k]);
                    i.attacker_profit[k]
                        * (-i.gamma * (1.0 - xk) * (1.0 - yk)
                            + (1.0 - xk) * yk
                            + (1.0 - i.eta) * xk * yk)
                })
                .sum(),
            Instance::Drp(i) => {
                i.recipient_profit.iter().zip(yv).map(|(&v, &b)| v * b).sum::<f64>()
                    + i.external_profit * y.y0
            }
            Instance::Toy(_) => yv[0],
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let inst: Instance = serde_json::from_str(&text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Draws a random instance; a pure function of `(kind, size, seed)`.
pub fn generate_instance(kind: ProblemKind, size: SizeParams, seed: u64) -> Result<Instance> {
    let n = size.n;
    if n == 0 {
        return Err(Error::param("instance size n must be positive"));
    }
    if let Some(k) = size.budget {
        if k > n {
            return Err(Error::param(format!("budget k = {k} exceeds n = {n}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = match kind {
        ProblemKind::Kip => {
            let profits: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=100)).collect();
            let weights: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=100)).collect();
            let total: i64 = weights.iter().sum();
            let capacity = ((0.5 * total as f64).round() as i64).min(total - 1);
            let budget = match size.budget {
                Some(k) => k,
                None => kip_budget_levels(n)[rng.gen_range(0..3)],
            };
            Instance::Kip(KipInstance {
                n,
                profits,
                weights,
                capacity,
                budget,
                seed,
            })
        }
        ProblemKind::Cnp => {
            let defender_cost: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=25)).collect();
            let attacker_cost: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=25)).collect();
            let defender_profit: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
            let attacker_profit: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
            let sd: i64 = defender_cost.iter().sum();
            let sa: i64 = attacker_cost.iter().sum();
            let mut factor = || rng.gen_range(0.05..=0.95);
            let (gamma, eta, epsilon, delta) = (factor(), factor(), factor(), factor());
            Instance::Cnp(CnpInstance {
                n,
                defender_profit,
                attacker_profit,
                defender_budget: (0.3 * sd as f64).round() as i64,
                attacker_budget: (0.3 * sa as f64).round() as i64,
                defender_cost,
                attacker_cost,
                gamma,
                eta,
                epsilon,
                delta,
                seed,
            })
        }
        ProblemKind::Drp => {
            let donor_profit: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
            let recipient_profit: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
            let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=50) as f64).collect();
            let total: f64 = cost.iter().sum();
            let mean_v = recipient_profit.iter().sum::<f64>() / n as f64;
            Instance::Drp(DrpInstance {
                n,
                external_cost: total / n as f64,
                external_profit: mean_v / 2.0,
                donor_budget: 0.3 * total,
                recipient_budget: 0.5 * total,
                donor_profit,
                recipient_profit,
                cost,
                seed,
            })
        }
        ProblemKind::Toy => Instance::Toy(ToyInstance::default()),
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kip3(k: usize) -> Instance {
        Instance::Kip(KipInstance {
            n: 3,
            profits: vec![6, 5, 4],
            weights: vec![3, 4, 5],
            capacity: 7,
            budget: k,
            seed: 0,
        })
    }

    fn cnp1(gamma: f64) -> Instance {
        Instance::Cnp(CnpInstance {
            n: 1,
            defender_profit: vec![10.0],
            attacker_profit: vec![8.0],
            defender_cost: vec![1],
            attacker_cost: vec![1],
            defender_budget: 1,
            attacker_budget: 1,
            gamma,
            eta: 0.6,
            epsilon: 0.3,
            delta: 0.2,
            seed: 0,
        })
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = generate_instance(ProblemKind::Kip, SizeParams::with_budget(18, 5), 1).unwrap();
        assert_eq!(a.n(), 18);
        assert_eq!(a.as_kip().unwrap().budget, 5);
        let b = generate_instance(ProblemKind::Kip, SizeParams::with_budget(3, 3), 9).unwrap();
        let c = generate_instance(ProblemKind::Kip, SizeParams::with_budget(3, 3), 9).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), serde_json::to_string(&c).unwrap());
        for kind in [ProblemKind::Kip, ProblemKind::Cnp, ProblemKind::Drp] {
            for seed in 0..50 {
                generate_instance(kind, SizeParams::new(1 + seed as usize % 20), seed)
                    .unwrap()
                    .validate()
                    .unwrap();
            }
        }
    }

    #[test]
    fn cnp_defender_budget_below_total_cost() {
        let Instance::Cnp(c) = generate_instance(ProblemKind::Cnp, SizeParams::new(10), 7).unwrap() else {
            unreachable!()
        };
        assert!(c.defender_budget < c.defender_cost.iter().sum::<i64>());
        assert!(c.attacker_budget < c.attacker_cost.iter().sum::<i64>());
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(generate_instance(ProblemKind::Kip, SizeParams::new(0), 1).is_err());
        assert!(generate_instance(ProblemKind::Kip, SizeParams::with_budget(3, 4), 1).is_err());
    }

    #[test]
    fn kip_budget_boundary() {
        let inst = Instance::Kip(KipInstance {
            n: 8,
            profits: vec![1; 8],
            weights: vec![1; 8],
            capacity: 4,
            budget: 5,
            seed: 0,
        });
        let five = LeaderDecision(vec![1., 1., 1., 1., 1., 0., 0., 0.]);
        let six = LeaderDecision(vec![1., 1., 1., 1., 1., 1., 0., 0.]);
        assert!(inst.leader_feasible(&five).unwrap());
        assert!(!inst.leader_feasible(&six).unwrap());
        assert!(inst.leader_feasible(&LeaderDecision(vec![0.0; 3])).is_err());
    }

    #[test]
    fn drp_donor_budget() {
        let inst = Instance::Drp(DrpInstance {
            n: 1,
            donor_profit: vec![1.0],
            recipient_profit: vec![1.0],
            cost: vec![4.0],
            external_profit: 0.0,
            external_cost: 0.0,
            donor_budget: 1.0,
            recipient_budget: 1.0,
            seed: 0,
        });
        assert!(!inst.leader_feasible(&LeaderDecision(vec![0.5])).unwrap());
        assert!(inst.leader_feasible(&LeaderDecision(vec![0.25])).unwrap());
    }

    #[test]
    fn objective_values() {
        let kip = kip3(1);
        let y = FollowerDecision { y: vec![1.0, 1.0, 0.0], y0: 0.0 };
        let x = LeaderDecision::zeros(3);
        assert_eq!(kip.leader_objective(&x, &y).unwrap(), 11.0);
        assert_eq!(kip.follower_objective(&x, &y).unwrap(), 11.0);
        assert_eq!(kip.leader_objective(&x, &FollowerDecision::zeros(3)).unwrap(), 0.0);

        let cnp = cnp1(0.5);
        let one = LeaderDecision(vec![1.0]);
        let y1 = FollowerDecision { y: vec![1.0], y0: 0.0 };
        assert!((cnp.leader_objective(&one, &y1).unwrap() - 6.0).abs() < 1e-12);
        let zero = LeaderDecision(vec![0.0]);
        let y0 = FollowerDecision::zeros(1);
        assert!((cnp.follower_objective(&zero, &y0).unwrap() + 4.0).abs() < 1e-12);

        let drp = Instance::Drp(DrpInstance {
            n: 1,
            donor_profit: vec![3.0],
            recipient_profit: vec![5.0],
            cost: vec![2.0],
            external_profit: 1.0,
            external_cost: 1.0,
            donor_budget: 1.0,
            recipient_budget: 10.0,
            seed: 0,
        });
        let y = FollowerDecision { y: vec![1.0], y0: 1.0 };
        assert_eq!(drp.follower_objective(&zero, &y).unwrap(), 6.0);
    }

    #[test]
    fn zero_follower_is_always_feasible() {
        for kind in [ProblemKind::Kip, ProblemKind::Cnp, ProblemKind::Drp] {
            for seed in 0..20 {
                let inst = generate_instance(kind, SizeParams::new(6), seed).unwrap();
                let x = LeaderDecision(vec![if kind == ProblemKind::Drp { 0.3 } else { 1.0 }; 6]);
                assert!(inst.follower_feasible(&x, &FollowerDecision::zeros(6)).unwrap());
            }
        }
    }

    #[test]
    fn objectives_are_affine_in_y() {
        // Finite-difference linearity: f(y + t e_k) - f(y) == t (f(y + e_k) - f(y)).
        for kind in [ProblemKind::Kip, ProblemKind::Cnp, ProblemKind::Drp] {
            let inst = generate_instance(kind, SizeParams::new(5), 3).unwrap();
            let x = LeaderDecision(vec![1.0, 0.0, 1.0, 0.0, 0.0]);
            let base = FollowerDecision { y: vec![0.0, 1.0, 0.0, 1.0, 0.0], y0: 0.0 };
            for k in 0..5 {
                let mut unit = base.clone();
                unit.y[k] += 1.0;
                let mut half = base.clone();
                half.y[k] += 0.37;
                for obj in [Instance::leader_objective, Instance::follower_objective] {
                    let f0 = obj(&inst, &x, &base).unwrap();
                    let f1 = obj(&inst, &x, &unit).unwrap();
                    let fh = obj(&inst, &x, &half).unwrap();
                    assert!(((fh - f0) - 0.37 * (f1 - f0)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_keeps_kind_tag() {
        let inst = generate_instance(ProblemKind::Cnp, SizeParams::new(4), 11).unwrap();
        let text = serde_json::to_string(&inst).unwrap();
        assert!(text.starts_with("{\"kind\":\"cnp\",\"n\":4"));
        let back: Instance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst);
    }
}
