use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Mlp, Trace};
use crate::dataset::{features_decision, FeatureConfig};
use crate::error::{Error, Result};
use crate::problems::{Instance, LeaderDecision, ProblemKind};

/// Which value function the network approximates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Leader value `F(x, y⋆(x))`, aggregated with the leader coefficients.
    Upper,
    /// Follower value `Φ(x)`, aggregated with the follower coefficients.
    Lower,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Target::Upper),
            "lower" => Ok(Target::Lower),
            other => Err(Error::param(format!("unknown target {other:?}"))),
        }
    }
}

/// Aggregation coefficients of `inst` for `target`.
pub fn coefficients(inst: &Instance, target: Target) -> Vec<f64> {
    match target {
        Target::Upper => inst.leader_coefficients(),
        Target::Lower => inst.follower_coefficients(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub hidden_d: usize,
    pub m: usize,
    pub hidden_s: usize,
    pub k_emb: usize,
    pub hidden_v: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            hidden_d: 16,
            m: 16,
            hidden_s: 16,
            k_emb: 8,
            hidden_v: 16,
        }
    }
}

/// Per-variable inputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SetInput<'a> {
    pub statics: &'a [Vec<f64>],
    pub decisions: &'a [Vec<f64>],
    pub coeffs: &'a [f64],
    /// Elementwise multiplier of each value-head input (`1 − x_i` for KIP, else 1).
    pub mask: &'a [f64],
}

/// Set-based regressor: `Σ_i c_i·Ψv(mask_i·[h(x_i), Ψs(Σ_j Ψd(f_j))])`,
/// rescaled by `label_scale / coeff_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetNetwork {
    pub target: Target,
    pub feature_config: FeatureConfig,
    pub psi_d: Mlp,
    pub psi_s: Mlp,
    pub psi_v: Mlp,
    pub label_scale: f64,
    pub coeff_scale: f64,
    /// Largest absolute validation error seen at training time.
    #[serde(default)]
    pub val_max_abs_error: f64,
}

impl SetNetwork {
    pub fn init<R: Rng + ?Sized>(target: Target, feature_config: FeatureConfig, dims: Dims, rng: &mut R) -> Self {
        let fd = feature_config.static_dim();
        let hd = feature_config.decision_dim();
        Self {
            psi_d: Mlp::init(&[fd, dims.hidden_d, dims.m], rng),
            psi_s: Mlp::init(&[dims.m, dims.hidden_s, dims.k_emb], rng),
            psi_v: Mlp::init(&[hd + dims.k_emb, dims.hidden_v, 1], rng),
            target,
            feature_config,
            label_scale: 1.0,
            coeff_scale: 1.0,
            val_max_abs_error: 0.0,
        }
    }

    pub fn kind(&self) -> ProblemKind {
        self.feature_config.kind
    }

    pub fn is_masked(&self) -> bool {
        self.kind() == ProblemKind::Kip
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.psi_d.is_consistent()
            && self.psi_s.is_consistent()
            && self.psi_v.is_consistent()
            && self.psi_d.in_dim() == self.feature_config.static_dim()
            && self.psi_s.in_dim() == self.psi_d.out_dim()
            && self.psi_v.in_dim() == self.feature_config.decision_dim() + self.psi_s.out_dim()
            && self.psi_v.out_dim() == 1;
        if !ok {
            return Err(Error::Model("inconsistent set network layer dimensions".into()));
        }
        if !(self.label_scale.is_finite() && self.coeff_scale.is_finite() && self.coeff_scale != 0.0) {
            return Err(Error::Model("invalid network scaling constants".into()));
        }
        Ok(())
    }

    pub fn embedding(&self, statics: &[Vec<f64>]) -> Vec<f64> {
        let mut pooled = vec![0.0; self.psi_d.out_dim()];
        for f in statics {
            for (p, v) in pooled.iter_mut().zip(self.psi_d.forward(f)) {
                *p += v;
            }
        }
        self.psi_s.forward(&pooled)
    }

    pub fn item_input(h: &[f64], emb: &[f64], mask: f64) -> Vec<f64> {
        h.iter().chain(emb).map(|v| mask * v).collect()
    }

    /// `Ψv` output on one item input.
    pub fn item_value(&self, input: &[f64]) -> f64 {
        self.psi_v.forward(input)[0]
    }

    /// Factor from the raw coefficient dot product to label units.
    pub fn output_scale(&self) -> f64 {
        self.label_scale / self.coeff_scale
    }

    fn check_input(&self, input: &SetInput) -> Result<()> {
        let n = input.decisions.len();
        for len in [input.statics.len(), input.coeffs.len(), input.mask.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        for f in input.statics {
            if f.len() != self.psi_d.in_dim() {
                return Err(Error::Dimension {
                    expected: self.psi_d.in_dim(),
                    got: f.len(),
                });
            }
        }
        let hd = self.psi_v.in_dim() - self.psi_s.out_dim();
        for h in input.decisions {
            if h.len() != hd {
                return Err(Error::Dimension { expected: hd, got: h.len() });
            }
        }
        Ok(())
    }

    /// Prediction in label units.
    pub fn forward(&self, input: &SetInput) -> Result<f64> {
        self.check_input(input)?;
        let emb = self.embedding(input.statics);
        let total: f64 = (0..input.decisions.len())
            .map(|i| input.coeffs[i] * self.item_value(&Self::item_input(&input.decisions[i], &emb, input.mask[i])))
            .sum();
        Ok(self.output_scale() * total)
    }

    /// Prediction in label units and its gradient with respect to every parameter.
    pub fn gradient(&self, input: &SetInput) -> Result<(f64, SetNetwork)> {
        self.check_input(input)?;
        let mut grad = self.zeros_like();
        let raw = self.backward_raw(input, |_| self.label_scale, &mut grad);
        Ok((raw * self.label_scale, grad))
    }

    /// Mask applied for `x` on this network's kind.
    pub fn mask(&self, x: &LeaderDecision) -> Vec<f64> {
        if self.is_masked() {
            x.0.iter().map(|v| 1.0 - v).collect()
        } else {
            vec![1.0; x.len()]
        }
    }

    /// Features, coefficients and forward pass for `(inst, x)`.
    pub fn predict(&self, inst: &Instance, x: &LeaderDecision) -> Result<f64> {
        let statics = self.feature_config.static_features(inst)?;
        let h = features_decision(inst, &statics, self.feature_config.use_greedy_features, x)?;
        let coeffs = coefficients(inst, self.target);
        let mask = self.mask(x);
        self.forward(&SetInput {
            statics: &statics,
            decisions: &h,
            coeffs: &coeffs,
            mask: &mask,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let net: Self = serde_json::from_reader(BufReader::new(file))?;
        net.validate()?;
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            psi_d: self.psi_d.zeros_like(),
            psi_s: self.psi_s.zeros_like(),
            psi_v: self.psi_v.zeros_like(),
            ..self.clone()
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.psi_d.params().chain(self.psi_s.params()).chain(self.psi_v.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.psi_d
            .params_mut()
            .chain(self.psi_s.params_mut())
            .chain(self.psi_v.params_mut())
    }

    /// Computes the unscaled output `o = Σ c_i·Ψv(v_i) / coeff_scale`, then
    /// accumulates into `grad` the gradient of `o` times `upstream(o)`. Returns `o`.
    pub(crate) fn backward_raw(
        &self,
        input: &SetInput,
        upstream: impl FnOnce(f64) -> f64,
        grad: &mut SetNetwork,
    ) -> f64 {
        let d_traces: Vec<Trace> = input.statics.iter().map(|f| self.psi_d.forward_trace(f)).collect();
        let mut pooled = vec![0.0; self.psi_d.out_dim()];
        for t in &d_traces {
            for (p, v) in pooled.iter_mut().zip(t.acts.last().unwrap()) {
                *p += v;
            }
        }
        let s_trace = self.psi_s.forward_trace(&pooled);
        let emb = s_trace.acts.last().unwrap().clone();
        let hd = self.psi_v.in_dim() - emb.len();
        let v_traces: Vec<Trace> = (0..input.decisions.len())
            .map(|i| self.psi_v.forward_trace(&Self::item_input(&input.decisions[i], &emb, input.mask[i])))
            .collect();
        let out: f64 = v_traces
            .iter()
            .enumerate()
            .map(|(i, t)| input.coeffs[i] / self.coeff_scale * t.acts.last().unwrap()[0])
            .sum();
        let upstream = upstream(out);
        let mut g_emb = vec![0.0; emb.len()];
        for (i, trace) in v_traces.iter().enumerate() {
            let c = input.coeffs[i] / self.coeff_scale;
            if c == 0.0 || upstream == 0.0 {
                continue;
            }
            let g_in = self.psi_v.backward(trace, &[upstream * c], &mut grad.psi_v);
            for (g, gi) in g_emb.iter_mut().zip(&g_in[hd..]) {
                *g += input.mask[i] * gi;
            }
        }
        if upstream != 0.0 {
            let g_pooled = self.psi_s.backward(&s_trace, &g_emb, &mut grad.psi_s);
            for t in &d_traces {
                self.psi_d.backward(t, &g_pooled, &mut grad.psi_d);
            }
        }
        out
    }
}
