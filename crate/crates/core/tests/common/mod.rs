#![allow(dead_code)]

use bilo_core::dataset::FeatureConfig;
use bilo_core::embed::{encode_relu_network, EncodingMode};
use bilo_core::milp::{solve, LinExpr, MilpModel, MilpStatus, ObjSense, RowSense, SolveConfig, VarId};
use bilo_core::mlp::{Dims, SetNetwork, Target};
use bilo_core::{FollowerDecision, Instance, LeaderDecision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Randomly initialised network with scaling fitted to `inst`.
pub fn random_net(inst: &Instance, dims: Dims, seed: u64) -> SetNetwork {
    let kind = inst.kind();
    let greedy = kind == bilo_core::ProblemKind::Kip;
    let cfg = FeatureConfig::fit(kind, greedy, std::slice::from_ref(inst)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = SetNetwork::init(Target::Lower, cfg, dims, &mut rng);
    net.label_scale = rng.gen_range(10.0..100.0);
    net.coeff_scale = inst.follower_coefficients().iter().map(|c| c.abs()).sum::<f64>().max(1.0);
    net
}

pub fn small_dims() -> Dims {
    Dims { hidden_d: 4, m: 4, hidden_s: 4, k_emb: 3, hidden_v: 5 }
}

/// Follower optimum by listing every binary response (`y0` is left at 0, so
/// only for kinds without a continuous follower variable).
pub fn enumerate_follower(inst: &Instance, x: &LeaderDecision) -> f64 {
    let n = inst.n();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        let y = FollowerDecision {
            y: (0..n).map(|i| f64::from((mask >> i) & 1)).collect(),
            y0: 0.0,
        };
        if inst.follower_feasible(x, &y).unwrap() {
            best = best.max(inst.follower_objective(x, &y).unwrap());
        }
    }
    best
}

/// Leader variables matching the instance kind.
pub fn leader_vars(model: &mut MilpModel, inst: &Instance) -> Vec<VarId> {
    (0..inst.n())
        .map(|i| {
            if inst.kind().binary_leader() {
                model.add_binary(format!("x{i}"))
            } else {
                model.add_continuous(format!("x{i}"), 0.0, 1.0).unwrap()
            }
        })
        .collect()
}

/// Minimum and maximum of the encoded output with `x` fixed.
pub fn encoded_range(net: &SetNetwork, inst: &Instance, x: &LeaderDecision, mode: EncodingMode) -> (f64, f64) {
    let mut model = MilpModel::new("enc");
    let xv = leader_vars(&mut model, inst);
    let enc = encode_relu_network(&mut model, net, inst, &xv, mode).unwrap();
    for (v, &val) in xv.iter().zip(&x.0) {
        model.fix(*v, val);
    }
    let mut out = [0.0; 2];
    for (k, sense) in [ObjSense::Minimize, ObjSense::Maximize].into_iter().enumerate() {
        model.set_objective(sense, enc.output.clone());
        let sol = solve(&model, &SolveConfig::default());
        assert_eq!(sol.status, MilpStatus::Optimal);
        out[k] = sol.objective;
    }
    (out[0], out[1])
}

/// Random pure-binary model that is feasible by construction.
pub fn random_binary_model(rng: &mut ChaCha8Rng) -> MilpModel {
    let n = rng.gen_range(1..=12);
    let rows = rng.gen_range(0..=8);
    let mut m = MilpModel::new("rand");
    let vars: Vec<_> = (0..n).map(|j| m.add_binary(format!("b{j}"))).collect();
    let witness: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=1) as f64).collect();
    for i in 0..rows {
        let mut e = LinExpr::new();
        let mut act = 0.0;
        for (j, &v) in vars.iter().enumerate() {
            if rng.gen_bool(0.7) {
                let c = rng.gen_range(-9..=9) as f64;
                e.add_term(v, c);
                act += c * witness[j];
            }
        }
        let sense = match rng.gen_range(0..3) {
            0 => RowSense::Le,
            1 => RowSense::Ge,
            _ => RowSense::Eq,
        };
        let rhs = match sense {
            RowSense::Le => act + rng.gen_range(0..4) as f64,
            RowSense::Ge => act - rng.gen_range(0..4) as f64,
            RowSense::Eq => act,
        };
        m.add_constraint(format!("r{i}"), &e, sense, rhs).unwrap();
    }
    let mut obj = LinExpr::constant(rng.gen_range(-5.0..5.0));
    for &v in &vars {
        obj.add_term(v, rng.gen_range(-10.0..10.0));
    }
    let sense = if rng.gen_bool(0.5) { ObjSense::Minimize } else { ObjSense::Maximize };
    m.set_objective(sense, obj);
    m
}

/// Exhaustive enumeration oracle for pure-binary models.
pub fn enumerate_binary(m: &MilpModel) -> Option<f64> {
    let n = m.vars.len();
    let mut best: Option<f64> = None;
    let mut vals = vec![0.0; n];
    for mask in 0u32..(1 << n) {
        for (j, v) in vals.iter_mut().enumerate() {
            *v = ((mask >> j) & 1) as f64;
        }
        if m.constraints.iter().all(|c| c.violation(&vals) <= 1e-9) {
            let obj = m.objective.eval(&vals);
            best = Some(match best {
                None => obj,
                Some(b) => match m.sense {
                    ObjSense::Minimize => b.min(obj),
                    ObjSense::Maximize => b.max(obj),
                },
            });
        }
    }
    best
}
