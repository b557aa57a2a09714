mod common;

use bilo_core::dataset::{collect, features_static, sample_decision, CollectConfig, Dataset};
use bilo_core::embed::{encode_greedy, EncodingMode};
use bilo_core::harness::{random_response, verify_observation1};
use bilo_core::milp::{solve, LinExpr, MilpModel, MilpStatus, ObjSense, SolveConfig};
use bilo_core::mlp::{Dims, SetInput};
use bilo_core::oracle::{greedy_knapsack, repair, solve_bruteforce, solve_follower};
use bilo_core::problems::generate_instance;
use bilo_core::surrogate::{build_lower, solve_end_to_end, ApproxKind, SurrogateConfig};
use bilo_core::{FollowerDecision, Instance, ProblemKind, SizeParams, SolutionStatus};
use common::{encoded_range, enumerate_follower, random_net, small_dims};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kind_strategy() -> impl Strategy<Value = ProblemKind> {
    prop_oneof![Just(ProblemKind::Kip), Just(ProblemKind::Cnp), Just(ProblemKind::Drp)]
}

fn instance(kind: ProblemKind, n: usize, seed: u64) -> Instance {
    generate_instance(kind, SizeParams::new(n), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kip_leader_and_follower_values_coincide(n in 1usize..12, seed in any::<u64>(), bits in any::<u32>()) {
        let inst = instance(ProblemKind::Kip, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_decision(&inst, &mut rng);
        let y = FollowerDecision { y: (0..n).map(|i| f64::from((bits >> i) & 1)).collect(), y0: 0.0 };
        prop_assert_eq!(inst.leader_objective(&x, &y).unwrap(), inst.follower_objective(&x, &y).unwrap());
    }

    #[test]
    fn generation_is_pure(kind in kind_strategy(), n in 1usize..20, seed in any::<u64>()) {
        let a = instance(kind, n, seed);
        prop_assert_eq!(&a, &instance(kind, n, seed));
        prop_assert!(a.follower_feasible(&bilo_core::LeaderDecision::zeros(n), &FollowerDecision::zeros(n)).unwrap());
    }

    #[test]
    fn dp_matches_enumeration(cnp in any::<bool>(), n in 1usize..11, seed in any::<u64>()) {
        let kind = if cnp { ProblemKind::Cnp } else { ProblemKind::Kip };
        let inst = instance(kind, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = sample_decision(&inst, &mut rng);
        let dp = solve_follower(&inst, &x).unwrap().value;
        prop_assert!((dp - enumerate_follower(&inst, &x)).abs() <= 1e-9);
    }

    #[test]
    fn greedy_never_beats_the_follower_optimum(n in 1usize..25, seed in any::<u64>()) {
        let inst = instance(ProblemKind::Kip, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_decision(&inst, &mut rng);
        let g = greedy_knapsack(inst.as_kip().unwrap(), &x);
        prop_assert!(g.value <= solve_follower(&inst, &x).unwrap().value);
    }

    #[test]
    fn repair_is_bilevel_feasible(kind in kind_strategy(), n in 1usize..9, seed in any::<u64>()) {
        let inst = instance(kind, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_decision(&inst, &mut rng);
        let sol = repair(&inst, &x).unwrap();
        prop_assert!(sol.is_feasible());
        prop_assert!(inst.follower_feasible(&sol.x, &sol.y).unwrap());
        let phi = solve_follower(&inst, &x).unwrap().value;
        prop_assert!((sol.follower_value - phi).abs() <= 1e-6 * phi.abs().max(1.0));
    }

    #[test]
    fn static_features_ignore_the_decision(kind in kind_strategy(), n in 1usize..10, seed in any::<u64>()) {
        let inst = instance(kind, n, seed);
        let greedy = kind == ProblemKind::Kip;
        let f = features_static(&inst, greedy).unwrap();
        prop_assert_eq!(&f, &features_static(&inst, greedy).unwrap());
        // Leading entries are the normalised ratios.
        let ratios = if kind == ProblemKind::Cnp { 2 } else { 1 };
        for row in &f {
            for v in &row[..ratios] {
                prop_assert!(*v > 0.0 && *v <= 1.0, "{v}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bruteforce_bounds_every_heuristic(n in 2usize..7, seed in any::<u64>()) {
        let inst = instance(ProblemKind::Kip, n, seed);
        let opt = solve_bruteforce(&inst, 1 << 12).unwrap().leader_value;
        let gvfa = solve_end_to_end(&inst, None, &SurrogateConfig::with_approx(ApproxKind::Gvfa)).unwrap();
        prop_assert!(gvfa.solution.leader_value >= opt);
        let net = random_net(&inst, small_dims(), seed);
        let nn = solve_end_to_end(&inst, Some(&net), &SurrogateConfig::default()).unwrap();
        prop_assert!(nn.solution.leader_value >= opt);
        prop_assert!((nn.solution.wall_time_s - nn.surrogate_time_s - nn.repair_time_s).abs() <= 1e-3);
    }

    #[test]
    fn slack_surrogate_is_never_infeasible(kind in kind_strategy(), n in 2usize..6, seed in any::<u64>()) {
        let inst = instance(kind, n, seed);
        let mut net = random_net(&inst, small_dims(), seed);
        // Push predictions far above anything achievable.
        net.label_scale *= 50.0;
        let sm = build_lower(&inst, &net, &SurrogateConfig::default()).unwrap();
        let sol = solve(&sm.model, &SolveConfig::default());
        prop_assert_eq!(sol.status, MilpStatus::Optimal);
    }

    #[test]
    fn encoded_network_matches_forward(kind in kind_strategy(), n in 2usize..6, seed in any::<u64>()) {
        let inst = instance(kind, n, seed);
        let net = random_net(&inst, small_dims(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_decision(&inst, &mut rng);
        let want = net.predict(&inst, &x).unwrap();
        for mode in [EncodingMode::BigM, EncodingMode::Auto] {
            let (lo, hi) = encoded_range(&net, &inst, &x, mode);
            prop_assert!((lo - want).abs() <= 1e-5 * want.abs().max(1.0), "{mode:?}: {lo} vs {want}");
            prop_assert!((hi - want).abs() <= 1e-5 * want.abs().max(1.0), "{mode:?}: {hi} vs {want}");
        }
        let mut model = MilpModel::new("count");
        let xv = common::leader_vars(&mut model, &inst);
        let enc = bilo_core::embed::encode_relu_network(&mut model, &net, &inst, &xv, EncodingMode::BigM).unwrap();
        let hidden: usize = net.psi_v.layers[..net.psi_v.layers.len() - 1].iter().map(|l| l.out_dim).sum();
        prop_assert!(enc.stats.binaries <= n * hidden);
    }

    #[test]
    fn greedy_encoding_has_a_unique_response(n in 1usize..10, seed in any::<u64>()) {
        let inst = instance(ProblemKind::Kip, n, seed);
        let kip = inst.as_kip().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_decision(&inst, &mut rng);
        let want = greedy_knapsack(kip, &x);
        let mut model = MilpModel::new("greedy");
        let xv: Vec<_> = (0..n).map(|i| model.add_binary(format!("x{i}"))).collect();
        let (yg, _) = encode_greedy(&mut model, kip, &xv).unwrap();
        for (v, &val) in xv.iter().zip(&x.0) {
            model.fix(*v, val);
        }
        // Maximise then minimise a random weighting of y^g: both must land on the greedy point.
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut obj = LinExpr::new();
        for (v, w) in yg.iter().zip(&weights) {
            obj.add_term(*v, *w);
        }
        for sense in [ObjSense::Minimize, ObjSense::Maximize] {
            model.set_objective(sense, obj.clone());
            let sol = solve(&model, &SolveConfig::default());
            let vals = sol.values.unwrap();
            let got: Vec<f64> = yg.iter().map(|v| vals[v.0].round()).collect();
            prop_assert_eq!(&got, &want.y.y);
        }
    }

    #[test]
    fn observation_one_on_random_probes(cnp in any::<bool>(), n in 2usize..7, seed in any::<u64>()) {
        let kind = if cnp { ProblemKind::Cnp } else { ProblemKind::Kip };
        let inst = instance(kind, n, seed);
        let net = random_net(&inst, small_dims(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes: Vec<_> = (0..3)
            .map(|_| {
                let x = sample_decision(&inst, &mut rng);
                let y = random_response(&inst, &x, &mut rng).unwrap();
                (x, y)
            })
            .collect();
        let rep = verify_observation1("p", &inst, &net, 1.5, &probes, &SolveConfig::default()).unwrap();
        prop_assert!(rep.holds, "{rep:?}");
    }

    #[test]
    fn forward_is_piecewise_linear_in_decision_inputs(seed in any::<u64>()) {
        let inst = instance(ProblemKind::Drp, 5, seed);
        let net = random_net(&inst, Dims::default(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let statics = net.feature_config.static_features(&inst).unwrap();
        let x = sample_decision(&inst, &mut rng);
        let h = bilo_core::dataset::features_decision(&inst, &statics, false, &x).unwrap();
        let dir: Vec<Vec<f64>> = h.iter().map(|r| r.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let coeffs = inst.follower_coefficients();
        let mask = vec![1.0; 5];
        let eval = |t: f64| {
            let hh: Vec<Vec<f64>> = h.iter().zip(&dir).map(|(r, d)| r.iter().zip(d).map(|(a, b)| a + t * b).collect()).collect();
            net.forward(&SetInput { statics: &statics, decisions: &hh, coeffs: &coeffs, mask: &mask }).unwrap()
        };
        // Within one linear piece the midpoint is exact; a tiny step almost surely stays in one.
        let (a, m, b) = (eval(0.0), eval(1e-7), eval(2e-7));
        prop_assert!((a + b - 2.0 * m).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn dataset_labels_and_round_trip() {
    let cfg = CollectConfig::new(ProblemKind::Cnp, SizeParams::new(6), 3, 10, 5);
    let data = collect(&cfg).unwrap();
    for s in &data.samples {
        let phi = solve_follower(&data.instances[s.instance_id], &s.x).unwrap().value;
        assert_eq!(s.follower_value, phi);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.samples, data.samples);
    assert_eq!(back.instances, data.instances);
    assert_eq!(back.static_features, data.static_features);
}

#[test]
fn upper_surrogate_reports_repair_infeasibility() {
    let inst = Instance::Toy(Default::default());
    let out = solve_end_to_end(
        &inst,
        Some(&bilo_core::surrogate::TablePredictor::toy_stub()),
        &SurrogateConfig::with_approx(ApproxKind::Upper),
    )
    .unwrap();
    assert_eq!(out.solution.status, SolutionStatus::Infeasible);
}
