//! MILP encodings of the trained set network, the greedy knapsack heuristic
//! and binary products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{LinExpr, MilpModel, RowSense, VarId};
use crate::mlp::{coefficients, Mlp, SetNetwork};
use crate::oracle::greedy_order;
use crate::problems::{Instance, KipInstance};

/// Pre-activation interval per neuron of every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsTable {
    pub layers: Vec<Vec<(f64, f64)>>,
}

impl BoundsTable {
    /// `M⁻ = max(0, −lower)`.
    pub fn m_minus(&self, layer: usize, neuron: usize) -> f64 {
        (-self.layers[layer][neuron].0).max(0.0)
    }

    /// `M⁺ = max(0, upper)`.
    pub fn m_plus(&self, layer: usize, neuron: usize) -> f64 {
        self.layers[layer][neuron].1.max(0.0)
    }
}

/// Interval arithmetic through `net` for inputs in `input_box`.
pub fn propagate_bounds(net: &Mlp, input_box: &[(f64, f64)]) -> BoundsTable {
    let mut cur: Vec<(f64, f64)> = input_box.to_vec();
    let mut layers = Vec::with_capacity(net.layers.len());
    let last = net.layers.len().saturating_sub(1);
    for (l, layer) in net.layers.iter().enumerate() {
        let pre: Vec<(f64, f64)> = (0..layer.out_dim)
            .map(|o| {
                let mut lo = layer.bias[o];
                let mut hi = layer.bias[o];
                for (&w, &(a, b)) in layer.row(o).iter().zip(&cur) {
                    if w >= 0.0 {
                        lo += w * a;
                        hi += w * b;
                    } else {
                        lo += w * b;
                        hi += w * a;
                    }
                }
                (lo, hi)
            })
            .collect();
        cur = if l == last {
            pre.clone()
        } else {
            pre.iter().map(|&(lo, hi)| (lo.max(0.0), hi.max(0.0))).collect()
        };
        layers.push(pre);
    }
    BoundsTable { layers }
}

/// How the value head `Ψv` is compiled for each variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// Big-M ReLU encoding everywhere.
    BigM,
    /// Exact multilinear table over the item's binary inputs when it depends on
    /// at most three binaries; big-M otherwise.
    Auto,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeStats {
    /// Phase binaries introduced by big-M neurons.
    pub binaries: usize,
    /// Neurons fixed inactive by their bounds (upper ≤ 0).
    pub fixed_inactive: usize,
    /// Neurons made linear by their bounds (lower ≥ 0).
    pub fixed_active: usize,
    /// Items compiled by tabulation.
    pub tabulated_items: usize,
    pub products: usize,
}

impl EncodeStats {
    fn absorb(&mut self, other: &EncodeStats) {
        self.binaries += other.binaries;
        self.fixed_inactive += other.fixed_inactive;
        self.fixed_active += other.fixed_active;
        self.tabulated_items += other.tabulated_items;
        self.products += other.products;
    }
}

fn expr_box(model: &MilpModel, inputs: &[LinExpr]) -> Result<Vec<(f64, f64)>> {
    inputs
        .iter()
        .map(|e| {
            let (lo, hi) = e.range(model);
            if lo.is_finite() && hi.is_finite() {
                Ok((lo, hi))
            } else {
                Err(Error::Model("network input expression is unbounded".into()))
            }
        })
        .collect()
}

/// Big-M encoding of an MLP (ReLU hidden layers, affine output) on affine
/// inputs. Returns one expression per output neuron.
pub fn encode_mlp(model: &mut MilpModel, net: &Mlp, inputs: &[LinExpr], prefix: &str) -> Result<(Vec<LinExpr>, EncodeStats)> {
    if inputs.len() != net.in_dim() {
        return Err(Error::Dimension {
            expected: net.in_dim(),
            got: inputs.len(),
        });
    }
    let bounds = propagate_bounds(net, &expr_box(model, inputs)?);
    let mut stats = EncodeStats::default();
    let mut cur: Vec<LinExpr> = inputs.to_vec();
    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let mut pre = LinExpr::constant(layer.bias[o]);
            for (&w, e) in layer.row(o).iter().zip(&cur) {
                pre.add_scaled(e, w);
            }
            let pre = pre.normalized();
            if l == last {
                next.push(pre);
                continue;
            }
            let (lo, hi) = bounds.layers[l][o];
            if hi <= 0.0 {
                stats.fixed_inactive += 1;
                next.push(LinExpr::new());
            } else if lo >= 0.0 {
                stats.fixed_active += 1;
                next.push(pre);
            } else {
                let h = model.add_continuous(format!("{prefix}_h{l}_{o}"), 0.0, hi)?;
                let z = model.add_binary(format!("{prefix}_z{l}_{o}"));
                stats.binaries += 1;
                // h ≥ pre
                let mut row = LinExpr::var(h);
                row.add_scaled(&pre, -1.0);
                model.add_constraint(format!("{prefix}_lo{l}_{o}"), &row, RowSense::Ge, 0.0)?;
                // h ≤ pre + M⁻(1 − z)
                let m_minus = bounds.m_minus(l, o);
                let mut row = LinExpr::var(h);
                row.add_scaled(&pre, -1.0);
                row.add_term(z, m_minus);
                model.add_constraint(format!("{prefix}_off{l}_{o}"), &row, RowSense::Le, m_minus)?;
                // h ≤ M⁺ z
                let mut row = LinExpr::var(h);
                row.add_term(z, -bounds.m_plus(l, o));
                model.add_constraint(format!("{prefix}_on{l}_{o}"), &row, RowSense::Le, 0.0)?;
                next.push(LinExpr::var(h));
            }
        }
        cur = next;
    }
    Ok((cur, stats))
}

/// `z = u·v` for `u ∈ [0, 1]` and binary `v`, via the four McCormick rows.
pub fn linearize_product(model: &mut MilpModel, u: VarId, v: VarId) -> Result<VarId> {
    let (ul, uu) = (model.vars[u.0].lower, model.vars[u.0].upper);
    if ul < 0.0 || uu > 1.0 {
        return Err(Error::Model(format!(
            "product factor {} must lie in [0, 1], has [{ul}, {uu}]",
            model.vars[u.0].name
        )));
    }
    if !model.vars[v.0].is_binary() {
        return Err(Error::Model(format!("product factor {} must be binary", model.vars[v.0].name)));
    }
    let name = format!("p_{}_{}", model.vars[u.0].name, model.vars[v.0].name);
    let z = model.add_continuous(name.clone(), 0.0, 1.0)?;
    let mut row = LinExpr::var(z);
    row.add_term(u, -1.0);
    model.add_constraint(format!("{name}_u"), &row, RowSense::Le, 0.0)?;
    let mut row = LinExpr::var(z);
    row.add_term(v, -1.0);
    model.add_constraint(format!("{name}_v"), &row, RowSense::Le, 0.0)?;
    let mut row = LinExpr::var(z);
    row.add_term(u, -1.0).add_term(v, -1.0);
    model.add_constraint(format!("{name}_uv"), &row, RowSense::Ge, -1.0)?;
    Ok(z)
}

/// Greedy follower of `inst` as constraints over binary `x`; returns the
/// greedy choice variables (index order) and the value `Σ p·y^g`.
pub fn encode_greedy(model: &mut MilpModel, inst: &KipInstance, x: &[VarId]) -> Result<(Vec<VarId>, LinExpr)> {
    if x.len() != inst.n {
        return Err(Error::Dimension {
            expected: inst.n,
            got: x.len(),
        });
    }
    if inst.weights.iter().any(|&a| a <= 0) || inst.capacity < 0 {
        return Err(Error::Model("greedy encoding needs positive integer weights".into()));
    }
    let b = inst.capacity as f64;
    let yg: Vec<VarId> = (0..inst.n).map(|i| model.add_binary(format!("yg{i}"))).collect();
    let mut remaining = LinExpr::constant(b);
    let mut value = LinExpr::new();
    for j in greedy_order(inst) {
        let a = inst.weights[j] as f64;
        let (y, xj) = (yg[j], x[j]);
        let mut row = LinExpr::var(y);
        row.add_term(xj, 1.0);
        model.add_constraint(format!("yg_mask{j}"), &row, RowSense::Le, 1.0)?;
        // a·y ≤ r
        let mut row = remaining.scaled(-1.0);
        row.add_term(y, a);
        model.add_constraint(format!("yg_fit{j}"), &row, RowSense::Le, 0.0)?;
        // r − a + 1 ≤ (b + 1)(y + x)
        let mut row = remaining.clone();
        row.add_term(y, -(b + 1.0)).add_term(xj, -(b + 1.0));
        model.add_constraint(format!("yg_take{j}"), &row, RowSense::Le, a - 1.0)?;
        remaining.add_term(y, -a);
        value.add_term(y, inst.profits[j] as f64);
    }
    Ok((yg, value.normalized()))
}

/// Largest number of binaries an item may depend on for tabulation.
const MAX_TABLE_VARS: usize = 3;

/// Exact multilinear encoding of `Ψv` on an item whose inputs depend only on
/// the binaries `vars`: evaluates all `2^k` corners and interpolates.
fn tabulate(model: &mut MilpModel, net: &Mlp, inputs: &[LinExpr], vars: &[VarId], stats: &mut EncodeStats) -> Result<LinExpr> {
    let k = vars.len();
    let mut values = vec![0.0; model.num_vars()];
    let corners: Vec<f64> = (0..1usize << k)
        .map(|mask| {
            for (b, v) in vars.iter().enumerate() {
                values[v.0] = ((mask >> b) & 1) as f64;
            }
            let point: Vec<f64> = inputs.iter().map(|e| e.eval(&values)).collect();
            net.forward(&point)[0]
        })
        .collect();
    let mut out = LinExpr::new();
    for subset in 0..1usize << k {
        // Möbius inversion: coefficient of Π_{v ∈ S} v.
        let mut coef = 0.0;
        let mut t = subset;
        loop {
            let sign = if (subset.count_ones() - t.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            coef += sign * corners[t];
            if t == 0 {
                break;
            }
            t = (t - 1) & subset;
        }
        if subset == 0 {
            out.add_constant(coef);
            continue;
        }
        if coef == 0.0 {
            continue;
        }
        let members: Vec<VarId> = (0..k).filter(|b| (subset >> b) & 1 == 1).map(|b| vars[b]).collect();
        let mut prod = members[0];
        for &v in &members[1..] {
            prod = linearize_product(model, prod, v)?;
            stats.products += 1;
        }
        out.add_term(prod, coef);
    }
    stats.tabulated_items += 1;
    Ok(out)
}

/// Encodes `Ψv` on one item's affine inputs under `mode`.
pub fn encode_value_head(
    model: &mut MilpModel,
    net: &Mlp,
    inputs: &[LinExpr],
    mode: EncodingMode,
    prefix: &str,
) -> Result<(LinExpr, EncodeStats)> {
    let mut stats = EncodeStats::default();
    if mode == EncodingMode::Auto {
        let mut vars: Vec<VarId> = inputs
            .iter()
            .flat_map(|e| e.normalized().terms.into_iter().map(|(v, _)| v))
            .collect();
        vars.sort();
        vars.dedup();
        if vars.len() <= MAX_TABLE_VARS && vars.iter().all(|v| model.vars[v.0].is_binary()) {
            let out = tabulate(model, net, inputs, &vars, &mut stats)?;
            return Ok((out, stats));
        }
    }
    let (out, s) = encode_mlp(model, net, inputs, prefix)?;
    stats.absorb(&s);
    Ok((out.into_iter().next().expect("value head has one output"), stats))
}

/// Affine expressions of the value-head inputs of every item, given leader
/// variables `x` and (for KIP with greedy features) greedy variables `yg`.
///
/// For KIP the `(1 − x_i)` mask is folded in using binary `x` and
/// `y^g_i ≤ 1 − x_i`: constants become `c(1 − x_i)`, the `x_i` entry vanishes
/// and the `y^g_i` entry stays `y^g_i`.
pub fn item_input_exprs(
    net: &SetNetwork,
    inst: &Instance,
    statics: &[Vec<f64>],
    emb: &[f64],
    x: &[VarId],
    yg: Option<&[VarId]>,
) -> Result<Vec<Vec<LinExpr>>> {
    let n = inst.n();
    if x.len() != n || statics.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len() });
    }
    let greedy = net.feature_config.use_greedy_features;
    if greedy && yg.is_none() {
        return Err(Error::Model("greedy features need greedy variables".into()));
    }
    Ok((0..n)
        .map(|i| {
            let xi = x[i];
            let masked_const = |c: f64| {
                let mut e = LinExpr::constant(c);
                e.add_term(xi, -c);
                e
            };
            let mut row = Vec::with_capacity(net.psi_v.in_dim());
            match inst {
                Instance::Kip(_) => {
                    row.extend(statics[i].iter().map(|&c| masked_const(c)));
                    row.push(LinExpr::new());
                    if let Some(yg) = yg.filter(|_| greedy) {
                        row.push(LinExpr::var(yg[i]));
                    }
                    row.extend(emb.iter().map(|&c| masked_const(c)));
                }
                Instance::Cnp(c) => {
                    row.extend(statics[i].iter().map(|&v| LinExpr::constant(v)));
                    row.push(LinExpr::var(xi));
                    let mut e = LinExpr::constant(-c.gamma);
                    e.add_term(xi, c.gamma);
                    row.push(e);
                    row.push(masked_const(1.0));
                    row.push(LinExpr::term(xi, 1.0 - c.eta));
                    row.extend(emb.iter().map(|&v| LinExpr::constant(v)));
                }
                Instance::Drp(_) | Instance::Toy(_) => {
                    row.extend(statics[i].iter().map(|&v| LinExpr::constant(v)));
                    row.push(LinExpr::var(xi));
                    row.extend(emb.iter().map(|&v| LinExpr::constant(v)));
                }
            }
            row
        })
        .collect())
}

/// Result of compiling a set network into a model.
#[derive(Clone, Debug)]
pub struct NetworkEncoding {
    /// Prediction in label units.
    pub output: LinExpr,
    pub greedy_vars: Option<Vec<VarId>>,
    pub stats: EncodeStats,
}

/// Compiles `net` for instance `inst` over leader variables `x`. The static
/// branch is evaluated to constants; only the value head is encoded.
pub fn encode_relu_network(
    model: &mut MilpModel,
    net: &SetNetwork,
    inst: &Instance,
    x: &[VarId],
    mode: EncodingMode,
) -> Result<NetworkEncoding> {
    net.feature_config.check_kind(inst)?;
    let statics = net.feature_config.static_features(inst)?;
    let emb = net.embedding(&statics);
    let greedy_vars = match inst {
        Instance::Kip(k) if net.feature_config.use_greedy_features => Some(encode_greedy(model, k, x)?.0),
        _ => None,
    };
    let inputs = item_input_exprs(net, inst, &statics, &emb, x, greedy_vars.as_deref())?;
    let coeffs = coefficients(inst, net.target);
    let scale = net.output_scale();
    let mut output = LinExpr::new();
    let mut stats = EncodeStats::default();
    for (i, item) in inputs.iter().enumerate() {
        if coeffs[i] == 0.0 {
            continue;
        }
        let (value, s) = encode_value_head(model, &net.psi_v, item, mode, &format!("v{i}"))?;
        stats.absorb(&s);
        output.add_scaled(&value, scale * coeffs[i]);
    }
    Ok(NetworkEncoding {
        output: output.normalized(),
        greedy_vars,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{check, solve, ObjSense, SolveConfig};
    use crate::mlp::Dense;
    use crate::oracle::greedy_knapsack;
    use crate::problems::LeaderDecision;

    fn relu_diff() -> Mlp {
        Mlp {
            layers: vec![
                Dense { in_dim: 2, out_dim: 1, weights: vec![1.0, -1.0], bias: vec![0.0] },
                Dense { in_dim: 1, out_dim: 1, weights: vec![1.0], bias: vec![0.0] },
            ],
        }
    }

    #[test]
    fn single_neuron_bounds() {
        let b = propagate_bounds(&relu_diff(), &[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(b.layers[0], vec![(-1.0, 1.0)]);
        assert_eq!(b.layers[1], vec![(0.0, 1.0)]);
        assert_eq!((b.m_minus(0, 0), b.m_plus(0, 0)), (1.0, 1.0));
    }

    #[test]
    fn zero_layer_bounds_are_bias() {
        let net = Mlp {
            layers: vec![Dense { in_dim: 2, out_dim: 2, weights: vec![0.0; 4], bias: vec![0.5, -2.0] }],
        };
        let b = propagate_bounds(&net, &[(-3.0, 3.0), (0.0, 9.0)]);
        assert_eq!(b.layers[0], vec![(0.5, 0.5), (-2.0, -2.0)]);
    }

    #[test]
    fn relu_difference_encoding() {
        for (a, b, expect) in [(1.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 1.0, 0.0), (0.0, 0.0, 0.0)] {
            let mut m = MilpModel::new("relu");
            let x1 = m.add_binary("x1");
            let x2 = m.add_binary("x2");
            let (out, stats) = encode_mlp(&mut m, &relu_diff(), &[LinExpr::var(x1), LinExpr::var(x2)], "n").unwrap();
            assert_eq!(stats.binaries, 1);
            m.fix(x1, a);
            m.fix(x2, b);
            for sense in [ObjSense::Minimize, ObjSense::Maximize] {
                m.set_objective(sense, out[0].clone());
                let sol = solve(&m, &SolveConfig::default());
                let vals = sol.values.unwrap();
                assert!(check(&m, &vals, 1e-6, 1e-6).is_empty());
                assert!((out[0].eval(&vals) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn products() {
        for (u, v, expect) in [(1.0, 1.0, 1.0), (0.5, 1.0, 0.5), (0.7, 0.0, 0.0), (0.0, 1.0, 0.0)] {
            let mut m = MilpModel::new("prod");
            let uv = m.add_continuous("u", 0.0, 1.0).unwrap();
            let vv = m.add_binary("v");
            let z = linearize_product(&mut m, uv, vv).unwrap();
            m.fix(uv, u);
            m.fix(vv, v);
            for sense in [ObjSense::Minimize, ObjSense::Maximize] {
                m.set_objective(sense, LinExpr::var(z));
                let sol = solve(&m, &SolveConfig::default());
                assert!((sol.objective - expect).abs() < 1e-9);
            }
        }
        let mut m = MilpModel::new("bad");
        let u = m.add_continuous("u", 0.0, 2.0).unwrap();
        let v = m.add_binary("v");
        assert!(linearize_product(&mut m, u, v).is_err());
    }

    fn kip3() -> KipInstance {
        KipInstance { n: 3, profits: vec![6, 5, 4], weights: vec![3, 4, 5], capacity: 7, budget: 3, seed: 0 }
    }

    #[test]
    fn greedy_encoding_examples() {
        for (x, expect_y, expect_v) in [
            ([0.0, 0.0, 0.0], [1.0, 1.0, 0.0], 11.0),
            ([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 0.0),
            ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 5.0),
        ] {
            let inst = kip3();
            let mut m = MilpModel::new("greedy");
            let xv: Vec<VarId> = (0..3).map(|i| m.add_binary(format!("x{i}"))).collect();
            let (yg, value) = encode_greedy(&mut m, &inst, &xv).unwrap();
            for i in 0..3 {
                m.fix(xv[i], x[i]);
            }
            m.set_objective(ObjSense::Maximize, value.clone());
            let sol = solve(&m, &SolveConfig::default());
            let vals = sol.values.unwrap();
            let y: Vec<f64> = yg.iter().map(|v| vals[v.0]).collect();
            assert_eq!(y, expect_y);
            assert_eq!(value.eval(&vals), expect_v);
            assert_eq!(greedy_knapsack(&inst, &LeaderDecision(x.to_vec())).value, expect_v);
        }
    }

    #[test]
    fn tabulation_matches_network_on_corners() {
        let net = Mlp {
            layers: vec![
                Dense { in_dim: 2, out_dim: 2, weights: vec![1.0, -2.0, 0.5, 1.0], bias: vec![0.1, -0.3] },
                Dense { in_dim: 2, out_dim: 1, weights: vec![2.0, -1.0], bias: vec![0.25] },
            ],
        };
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let mut m = MilpModel::new("tab");
            let x = m.add_binary("x");
            let y = m.add_binary("y");
            let mut e = LinExpr::constant(0.3);
            e.add_term(x, 1.0);
            let (out, stats) = encode_value_head(&mut m, &net, &[e, LinExpr::var(y)], EncodingMode::Auto, "t").unwrap();
            assert_eq!(stats.tabulated_items, 1);
            m.fix(x, a);
            m.fix(y, b);
            m.set_objective(ObjSense::Minimize, out.clone());
            let sol = solve(&m, &SolveConfig::default());
            let expect = net.forward(&[0.3 + a, b])[0];
            assert!((sol.objective - expect).abs() < 1e-9, "{a} {b}: {} vs {expect}", sol.objective);
        }
    }
}
