use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a variable inside a [`MilpModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
    /// Higher values are branched on first under
    /// [`BranchingRule::PriorityMostFractional`](super::BranchingRule).
    #[serde(default)]
    pub priority: i32,
}

impl Variable {
    pub fn is_binary(&self) -> bool {
        self.integer && self.lower == 0.0 && self.upper == 1.0
    }
}

/// Affine expression `constant + Σ coef·var`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        if scale != 0.0 {
            for &(v, c) in &other.terms {
                self.terms.push((v, c * scale));
            }
            self.constant += scale * other.constant;
        }
        self
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut out = LinExpr::new();
        out.add_scaled(self, scale);
        out
    }

    /// Merges repeated variables, drops zero coefficients and sorts by index.
    pub fn normalized(&self) -> LinExpr {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        LinExpr {
            terms: merged.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * values[v.0])
    }

    /// Interval of the expression over the variable bounds of `model`.
    pub fn range(&self, model: &MilpModel) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for &(v, c) in &self.terms {
            let var = &model.vars[v.0];
            if c >= 0.0 {
                lo += c * var.lower;
                hi += c * var.upper;
            } else {
                lo += c * var.upper;
                hi += c * var.lower;
            }
        }
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

impl ObjSense {
    /// True when `a` is strictly better than `b` by more than `tol`.
    pub fn better(self, a: f64, b: f64, tol: f64) -> bool {
        match self {
            ObjSense::Minimize => a < b - tol,
            ObjSense::Maximize => a > b + tol,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            ObjSense::Minimize => 1.0,
            ObjSense::Maximize => -1.0,
        }
    }
}

/// Linear row `Σ coef·var (sense) rhs`; constants are folded into `rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let act = self.activity(values);
        match self.sense {
            RowSense::Le => (act - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - act).max(0.0),
            RowSense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// A mixed-integer linear program with finite variable bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MilpModel {
    pub name: String,
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: LinExpr,
    pub sense: ObjSense,
    pub tags: BTreeMap<String, String>,
}

impl MilpModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: LinExpr::new(),
            sense: ObjSense::Minimize,
            tags: BTreeMap::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_integer(&self) -> usize {
        self.vars.iter().filter(|v| v.integer).count()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        integer: bool,
    ) -> Result<VarId> {
        let name = name.into();
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Model(format!(
                "variable {name} has non-finite bounds [{lower}, {upper}]"
            )));
        }
        if lower > upper {
            return Err(Error::Model(format!(
                "variable {name} has empty domain [{lower}, {upper}]"
            )));
        }
        self.vars.push(Variable {
            name,
            lower,
            upper,
            integer,
            priority: 0,
        });
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, true)
            .expect("binary bounds are finite")
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Result<VarId> {
        self.add_var(name, lower, upper, false)
    }

    pub fn set_priority(&mut self, v: VarId, priority: i32) {
        self.vars[v.0].priority = priority;
    }

    pub fn fix(&mut self, v: VarId, value: f64) {
        let var = &mut self.vars[v.0];
        var.lower = value;
        var.upper = value;
    }

    /// Adds `expr (sense) rhs`, folding the expression constant into the right-hand side.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: &LinExpr,
        sense: RowSense,
        rhs: f64,
    ) -> Result<usize> {
        let name = name.into();
        let expr = expr.normalized();
        let rhs = rhs - expr.constant;
        if !rhs.is_finite() || expr.terms.iter().any(|&(_, c)| !c.is_finite()) {
            return Err(Error::Model(format!("constraint {name} has non-finite data")));
        }
        if let Some(&(v, _)) = expr.terms.iter().find(|&&(v, _)| v.0 >= self.vars.len()) {
            return Err(Error::Model(format!(
                "constraint {name} references unknown variable {}",
                v.0
            )));
        }
        self.constraints.push(Constraint {
            name,
            terms: expr.terms,
            sense,
            rhs,
        });
        Ok(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: LinExpr) {
        self.sense = sense;
        self.objective = expr.normalized();
    }

    pub fn tag(&mut self, key: impl Into<String>, value: impl ToString) {
        self.tags.insert(key.into(), value.to_string());
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.eval(values)
    }
}
