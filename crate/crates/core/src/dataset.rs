//! Data collection for the value-function regressors: decision sampling,
//! oracle labelling and per-variable features.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{self, greedy_order};
use crate::problems::{generate_instance, Instance, KipInstance, LeaderDecision, ProblemKind, SizeParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Feature layout plus the per-column min-max constants of the static features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: ProblemKind,
    pub use_greedy_features: bool,
    pub static_min: Vec<f64>,
    pub static_max: Vec<f64>,
}

impl FeatureConfig {
    /// Identity scaling.
    pub fn unscaled(kind: ProblemKind, use_greedy_features: bool) -> Result<Self> {
        if use_greedy_features && kind != ProblemKind::Kip {
            return Err(Error::Config("greedy features are only defined for KIP".into()));
        }
        let d = static_dim(kind, use_greedy_features);
        Ok(Self {
            kind,
            use_greedy_features,
            static_min: vec![0.0; d],
            static_max: vec![1.0; d],
        })
    }

    /// Min-max constants fitted over every item of every instance.
    pub fn fit(kind: ProblemKind, use_greedy_features: bool, instances: &[Instance]) -> Result<Self> {
        let mut cfg = Self::unscaled(kind, use_greedy_features)?;
        let d = cfg.static_dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for inst in instances {
            for row in features_static(inst, use_greedy_features)? {
                for c in 0..d {
                    lo[c] = lo[c].min(row[c]);
                    hi[c] = hi[c].max(row[c]);
                }
            }
        }
        if !instances.is_empty() {
            cfg.static_min = lo;
            cfg.static_max = hi;
        }
        Ok(cfg)
    }

    pub fn static_dim(&self) -> usize {
        static_dim(self.kind, self.use_greedy_features)
    }

    /// Length of `h(x_i)`: scaled static features followed by the decision terms.
    pub fn decision_dim(&self) -> usize {
        self.static_dim()
            + match self.kind {
                ProblemKind::Kip => 1 + usize::from(self.use_greedy_features),
                ProblemKind::Cnp => 4,
                ProblemKind::Drp | ProblemKind::Toy => 1,
            }
    }

    pub fn scale(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(c, &v)| {
                let range = self.static_max[c] - self.static_min[c];
                if range > 0.0 {
                    (v - self.static_min[c]) / range
                } else {
                    v - self.static_min[c]
                }
            })
            .collect()
    }

    /// Scaled static features of `inst` under this configuration.
    pub fn static_features(&self, inst: &Instance) -> Result<Vec<Vec<f64>>> {
        self.check_kind(inst)?;
        Ok(features_static(inst, self.use_greedy_features)?
            .iter()
            .map(|r| self.scale(r))
            .collect())
    }

    pub fn check_kind(&self, inst: &Instance) -> Result<()> {
        if inst.kind() != self.kind {
            return Err(Error::Kind {
                kind: self.kind.as_str(),
                found: inst.kind().as_str(),
            });
        }
        Ok(())
    }
}

fn static_dim(kind: ProblemKind, greedy: bool) -> usize {
    match kind {
        ProblemKind::Kip => {
            if greedy {
                7
            } else {
                4
            }
        }
        ProblemKind::Cnp => 12,
        ProblemKind::Drp => 7,
        ProblemKind::Toy => 2,
    }
}

fn normalized(ratios: Vec<f64>) -> Vec<f64> {
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ratios.into_iter().map(|r| r / max).collect()
}

/// The "purely greedy" strategy: the leader interdicts the `k` best-ratio
/// items, then the follower fills greedily. Returns `(x^dg, y^dg, obj^dg)`.
pub fn purely_greedy(inst: &KipInstance) -> (Vec<f64>, Vec<f64>, f64) {
    let mut x = vec![0.0; inst.n];
    for &i in greedy_order(inst).iter().take(inst.budget) {
        x[i] = 1.0;
    }
    let g = oracle::greedy_knapsack(inst, &LeaderDecision(x.clone()));
    (x, g.y.y, g.value)
}

/// Raw (unscaled) decision-independent features `f_i`, one row per variable.
pub fn features_static(inst: &Instance, use_greedy_features: bool) -> Result<Vec<Vec<f64>>> {
    if use_greedy_features && inst.kind() != ProblemKind::Kip {
        return Err(Error::Config("greedy features are only defined for KIP".into()));
    }
    let n = inst.n();
    Ok(match inst {
        Instance::Kip(k) => {
            let ratio = normalized((0..n).map(|i| k.profits[i] as f64 / k.weights[i] as f64).collect());
            let kn = k.budget as f64 / n as f64;
            let dg = use_greedy_features.then(|| purely_greedy(k));
            (0..n)
                .map(|i| {
                    let mut row = vec![ratio[i], k.profits[i] as f64, k.weights[i] as f64, kn];
                    if let Some((x, y, obj)) = &dg {
                        row.extend([x[i], y[i], obj / n as f64]);
                    }
                    row
                })
                .collect()
        }
        Instance::Cnp(c) => {
            let rd = normalized((0..n).map(|i| c.defender_profit[i] / c.defender_cost[i] as f64).collect());
            let ra = normalized((0..n).map(|i| c.attacker_profit[i] / c.attacker_cost[i] as f64).collect());
            (0..n)
                .map(|i| {
                    vec![
                        rd[i],
                        ra[i],
                        c.defender_cost[i] as f64,
                        c.attacker_cost[i] as f64,
                        c.attacker_profit[i],
                        c.defender_profit[i],
                        c.gamma,
                        c.eta,
                        c.epsilon,
                        c.delta,
                        c.attacker_budget as f64,
                        c.defender_budget as f64,
                    ]
                })
                .collect()
        }
        Instance::Drp(d) => {
            let rw = normalized((0..n).map(|i| d.donor_profit[i] / d.cost[i]).collect());
            let rv = normalized((0..n).map(|i| d.recipient_profit[i] / d.cost[i]).collect());
            (0..n)
                .map(|i| {
                    vec![
                        rw[i],
                        rv[i],
                        d.donor_profit[i],
                        d.recipient_profit[i],
                        d.cost[i],
                        d.donor_budget,
                        d.recipient_budget,
                    ]
                })
                .collect()
        }
        Instance::Toy(t) => vec![vec![t.weight, t.capacity]],
    })
}

/// Decision features `h(x_i)`: the given (scaled) static row followed by the
/// kind's decision terms.
pub fn features_decision(
    inst: &Instance,
    static_features: &[Vec<f64>],
    use_greedy_features: bool,
    x: &LeaderDecision,
) -> Result<Vec<Vec<f64>>> {
    let n = inst.n();
    if x.len() != n || static_features.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if x.len() != n { x.len() } else { static_features.len() },
        });
    }
    let yg = match inst {
        Instance::Kip(k) if use_greedy_features => Some(oracle::greedy_knapsack(k, x).y.y),
        _ => None,
    };
    Ok((0..n)
        .map(|i| {
            let xi = x.0[i];
            let mut row = static_features[i].clone();
            match inst {
                Instance::Kip(_) => {
                    row.push(xi);
                    if let Some(yg) = &yg {
                        row.push(yg[i]);
                    }
                }
                Instance::Cnp(c) => row.extend([xi, -c.gamma * (1.0 - xi), 1.0 - xi, (1.0 - c.eta) * xi]),
                Instance::Drp(_) | Instance::Toy(_) => row.push(xi),
            }
            row
        })
        .collect())
}

/// Random leader-feasible decision: a uniform target count (KIP) or cost
/// (CNP) in `[0, budget]` filled by a random subset; for DRP i.i.d. uniform
/// entries, rescaled onto the donor budget when it is exceeded.
pub fn sample_decision<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> LeaderDecision {
    let n = inst.n();
    let mut x = vec![0.0; n];
    match inst {
        Instance::Kip(k) => {
            let count = rng.gen_range(0..=k.budget);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            for &i in &idx[..count] {
                x[i] = 1.0;
            }
        }
        Instance::Cnp(c) => {
            let target = rng.gen_range(0..=c.defender_budget);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let mut spent = 0;
            for i in idx {
                if spent + c.defender_cost[i] <= target {
                    spent += c.defender_cost[i];
                    x[i] = 1.0;
                }
            }
        }
        Instance::Drp(d) => {
            for v in x.iter_mut() {
                *v = rng.gen::<f64>();
            }
            let spend: f64 = x.iter().zip(&d.cost).map(|(a, b)| a * b).sum();
            if spend > d.donor_budget {
                let factor = d.donor_budget / spend;
                for v in x.iter_mut() {
                    *v *= factor;
                }
            }
        }
        Instance::Toy(_) => x[0] = f64::from(rng.gen_range(0..2u8)),
    }
    LeaderDecision(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub instance_id: usize,
    pub x: LeaderDecision,
    #[serde(rename = "F")]
    pub leader_value: f64,
    #[serde(rename = "f")]
    pub follower_value: f64,
    pub h_features: Vec<Vec<f64>>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    config: FeatureConfig,
    instances: Vec<Instance>,
    static_features: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: FeatureConfig,
    pub instances: Vec<Instance>,
    /// Scaled static features per instance.
    pub static_features: Vec<Vec<Vec<f64>>>,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollectConfig {
    pub kind: ProblemKind,
    pub size: SizeParams,
    pub instances: usize,
    pub decisions: usize,
    pub seed: u64,
    pub use_greedy_features: bool,
    pub val_fraction: f64,
}

impl CollectConfig {
    pub fn new(kind: ProblemKind, size: SizeParams, instances: usize, decisions: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            instances,
            decisions,
            seed,
            use_greedy_features: kind == ProblemKind::Kip,
            val_fraction: 0.1,
        }
    }
}

/// Generates instances, samples decisions, labels them through the repair
/// oracle and attaches features.
pub fn collect(cfg: &CollectConfig) -> Result<Dataset> {
    if cfg.instances == 0 || cfg.decisions == 0 {
        return Err(Error::param("instance and decision counts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let instances = (0..cfg.instances)
        .map(|_| generate_instance(cfg.kind, cfg.size, rng.gen()))
        .collect::<Result<Vec<_>>>()?;
    collect_from(instances, cfg.decisions, &mut rng, cfg.use_greedy_features, cfg.val_fraction)
}

/// Labels `decisions` sampled decisions on each of the given instances.
pub fn collect_from(
    instances: Vec<Instance>,
    decisions: usize,
    rng: &mut ChaCha8Rng,
    use_greedy_features: bool,
    val_fraction: f64,
) -> Result<Dataset> {
    let kind = match instances.first() {
        Some(i) => i.kind(),
        None => return Err(Error::param("no instances to collect from")),
    };
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::param(format!("validation fraction {val_fraction} not in [0, 1)")));
    }
    let config = FeatureConfig::fit(kind, use_greedy_features, &instances)?;
    let static_features = instances
        .iter()
        .map(|i| config.static_features(i))
        .collect::<Result<Vec<_>>>()?;
    let mut draws = Vec::with_capacity(instances.len() * decisions);
    for (id, inst) in instances.iter().enumerate() {
        for _ in 0..decisions {
            draws.push((id, sample_decision(inst, rng)));
        }
    }
    let mut samples: Vec<Sample> = draws
        .into_par_iter()
        .map(|(id, x)| label(&instances[id], id, x, &static_features[id], use_greedy_features))
        .collect::<Result<_>>()?;
    let total = samples.len();
    let n_val = ((val_fraction * total as f64).round() as usize).min(total.saturating_sub(1));
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    for &i in &order[..n_val] {
        samples[i].split = Split::Val;
    }
    Ok(Dataset {
        config,
        instances,
        static_features,
        samples,
    })
}

fn label(inst: &Instance, id: usize, x: LeaderDecision, statics: &[Vec<f64>], greedy: bool) -> Result<Sample> {
    let sol = oracle::repair(inst, &x)?;
    if !sol.is_feasible() {
        return Err(Error::Oracle(format!("instance {id}: decision {:?} could not be repaired", x.0)));
    }
    let h_features = features_decision(inst, statics, greedy, &x)?;
    Ok(Sample {
        instance_id: id,
        x,
        leader_value: sol.leader_value,
        follower_value: sol.follower_value,
        h_features,
        split: Split::Train,
    })
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Path of the companion metadata file for a JSONL dataset path.
    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let meta_path = Self::meta_path(path);
        let meta = DatasetMeta {
            config: self.config.clone(),
            instances: self.instances.clone(),
            static_features: self.static_features.clone(),
        };
        let file = File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &meta)?;
        w.flush().map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_path = Self::meta_path(path);
        let file = File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(file))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                samples.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            config: meta.config,
            instances: meta.instances,
            static_features: meta.static_features,
            samples,
        })
    }
}
