//! Dense bounded-variable primal simplex.
//!
//! Every row gets a slack `a·x + s = rhs` whose bounds encode the row sense.
//! Structural columns start at their lower bound; rows whose slack would
//! leave its bounds receive an artificial column, and phase 1 minimises the
//! artificial sum. Variables fixed by their bounds are substituted out before
//! the tableau is built.

use super::model::{MilpModel, RowSense};

const PIVOT_EPS: f64 = 1e-11;
const WEAK_PIVOT: f64 = 1e-10;
const DROP_EPS: f64 = 1e-13;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration budget exhausted without a verdict.
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Value per model variable (meaningful when optimal).
    pub values: Vec<f64>,
    /// Objective in the model's own sense, constant included.
    pub objective: f64,
    pub iterations: usize,
    /// A pivot element below 1e-10 was accepted somewhere along the way.
    pub precision_warning: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct LpTolerances {
    pub primal: f64,
    pub dual: f64,
}

impl Default for LpTolerances {
    fn default() -> Self {
        Self {
            primal: 1e-9,
            dual: 1e-9,
        }
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `B⁻¹A`.
    t: Vec<f64>,
    /// `B⁻¹ rhs`.
    beta: Vec<f64>,
    basis: Vec<usize>,
    basic_row: Vec<Option<usize>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    iterations: usize,
    precision_warning: bool,
}

enum Phase {
    Done,
    Unbounded,
    Limit,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn refresh_basics(&mut self) {
        for i in 0..self.rows {
            let row = &self.t[i * self.cols..(i + 1) * self.cols];
            let mut v = self.beta[i];
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 && self.basic_row[j].is_none() {
                    v -= a * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, &a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for i in 0..self.rows {
            d[self.basis[i]] = 0.0;
        }
        d
    }

    fn pivot(&mut self, r: usize, q: usize, d: &mut [f64]) {
        let cols = self.cols;
        let p = self.at(r, q);
        if p.abs() < WEAK_PIVOT {
            self.precision_warning = true;
        }
        let inv = 1.0 / p;
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            for a in row.iter_mut() {
                *a *= inv;
            }
            row[q] = 1.0;
        }
        self.beta[r] *= inv;
        let pivot_row: Vec<f64> = self.t[r * cols..(r + 1) * cols].to_vec();
        let nz: Vec<usize> = pivot_row
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, _)| j)
            .collect();
        let beta_r = self.beta[r];
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            for &j in &nz {
                let v = row[j] - f * pivot_row[j];
                row[j] = if v.abs() < DROP_EPS { 0.0 } else { v };
            }
            row[q] = 0.0;
            self.beta[i] -= f * beta_r;
        }
        let dq = d[q];
        if dq != 0.0 {
            for &j in &nz {
                d[j] -= dq * pivot_row[j];
            }
            d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.basic_row[leaving] = None;
        self.basic_row[q] = Some(r);
        self.basis[r] = q;
    }

    /// Primal simplex iterations minimising `cost` from the current basis.
    fn run(&mut self, cost: &[f64], tol: &LpTolerances, max_iter: usize) -> Phase {
        let mut d = self.reduced_costs(cost);
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return Phase::Limit;
            }
            let bland = degenerate >= DEGENERATE_STREAK;

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.cols {
                if self.basic_row[j].is_some() || self.upper[j] - self.lower[j] <= 0.0 {
                    continue;
                }
                let dj = d[j];
                let at_upper = self.x[j] >= self.upper[j];
                let at_lower = self.x[j] <= self.lower[j];
                let dir = if dj < -tol.dual && !at_upper {
                    1.0
                } else if dj > tol.dual && !at_lower {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Phase::Done;
            };

            // Ratio test: x_B(i) moves at rate -dir·T[i,q].
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_mag = 0.0;
            for i in 0..self.rows {
                let a = self.at(i, q);
                if a.abs() <= PIVOT_EPS {
                    continue;
                }
                let rate = -dir * a;
                let b = self.basis[i];
                let (limit, to_upper) = if rate < 0.0 {
                    if self.lower[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    (((self.x[b] - self.lower[b]) / -rate).max(0.0), false)
                } else {
                    if self.upper[b] == f64::INFINITY {
                        continue;
                    }
                    (((self.upper[b] - self.x[b]) / rate).max(0.0), true)
                };
                if limit < step - 1e-12 {
                    step = limit;
                    leave = Some((i, to_upper));
                    leave_mag = a.abs();
                } else if limit <= step + 1e-12 {
                    if let Some((r, _)) = leave {
                        let take = if bland {
                            b < self.basis[r]
                        } else {
                            a.abs() > leave_mag
                        };
                        if take {
                            leave = Some((i, to_upper));
                            leave_mag = a.abs();
                        }
                    }
                }
            }
            if !step.is_finite() {
                return Phase::Unbounded;
            }
            self.iterations += 1;
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            // Update values.
            self.x[q] += dir * step;
            for i in 0..self.rows {
                let a = self.at(i, q);
                if a != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= dir * a * step;
                }
            }
            match leave {
                None => {
                    // Bound flip.
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, to_upper)) => {
                    let b = self.basis[r];
                    self.pivot(r, q, &mut d);
                    self.x[b] = if to_upper { self.upper[b] } else { self.lower[b] };
                }
            }
        }
    }
}

/// Solves the LP relaxation of `model` under the bound vectors `lower`/`upper`.
pub fn solve_relaxation(
    model: &MilpModel,
    lower: &[f64],
    upper: &[f64],
    tol: &LpTolerances,
) -> LpSolution {
    let n = model.vars.len();
    let mut values = vec![0.0; n];
    let mut col_of: Vec<Option<usize>> = vec![None; n];
    let mut free = Vec::new();
    for j in 0..n {
        if upper[j] < lower[j] - tol.primal {
            return infeasible(values);
        }
        if upper[j] - lower[j] <= 1e-12 {
            values[j] = lower[j];
        } else {
            col_of[j] = Some(free.len());
            free.push(j);
            values[j] = lower[j];
        }
    }

    // Reduce rows to the free columns; rows without free columns are checked directly.
    let nf = free.len();
    let mut a_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs = Vec::new();
    let mut senses = Vec::new();
    for c in &model.constraints {
        let mut r = c.rhs;
        let mut row = Vec::new();
        for &(v, coef) in &c.terms {
            match col_of[v.0] {
                Some(k) => row.push((k, coef)),
                None => r -= coef * values[v.0],
            }
        }
        if row.is_empty() {
            let ok = match c.sense {
                RowSense::Le => r >= -tol.primal * 10.0,
                RowSense::Ge => r <= tol.primal * 10.0,
                RowSense::Eq => r.abs() <= tol.primal * 10.0,
            };
            if !ok {
                return infeasible(values);
            }
            continue;
        }
        a_rows.push(row);
        rhs.push(r);
        senses.push(c.sense);
    }
    let m = a_rows.len();

    let sign = model.sense.sign();
    let mut cost_struct = vec![0.0; nf];
    for &(v, coef) in &model.objective.terms {
        if let Some(k) = col_of[v.0] {
            cost_struct[k] += sign * coef;
        }
    }

    if m == 0 {
        // Bound-optimal: each column sits at its cheaper bound.
        for (k, &j) in free.iter().enumerate() {
            values[j] = if cost_struct[k] < 0.0 { upper[j] } else { lower[j] };
        }
        let objective = model.objective.eval(&values);
        return LpSolution {
            status: LpStatus::Optimal,
            values,
            objective,
            iterations: 0,
            precision_warning: false,
        };
    }

    // Column layout: structurals | slacks | artificials.
    let mut col_lower: Vec<f64> = free.iter().map(|&j| lower[j]).collect();
    let mut col_upper: Vec<f64> = free.iter().map(|&j| upper[j]).collect();
    for s in &senses {
        let (lo, hi) = match s {
            RowSense::Le => (0.0, f64::INFINITY),
            RowSense::Ge => (f64::NEG_INFINITY, 0.0),
            RowSense::Eq => (0.0, 0.0),
        };
        col_lower.push(lo);
        col_upper.push(hi);
    }
    let mut x: Vec<f64> = col_lower[..nf].to_vec();
    x.extend(std::iter::repeat(0.0).take(m));

    let mut needs_art = Vec::new();
    let mut slack_val = vec![0.0; m];
    for i in 0..m {
        let act: f64 = a_rows[i].iter().map(|&(k, a)| a * x[k]).sum();
        let s = rhs[i] - act;
        let (lo, hi) = (col_lower[nf + i], col_upper[nf + i]);
        if s < lo - tol.primal || s > hi + tol.primal {
            let at = if s < lo { lo } else { hi };
            slack_val[i] = at;
            needs_art.push((i, s - at));
        } else {
            slack_val[i] = s;
        }
    }
    let na = needs_art.len();
    let cols = nf + m + na;
    for _ in 0..na {
        col_lower.push(0.0);
        col_upper.push(f64::INFINITY);
        x.push(0.0);
    }

    let mut t = vec![0.0; m * cols];
    let mut beta = rhs.clone();
    let mut basis = vec![0usize; m];
    let mut basic_row = vec![None; cols];
    let mut art_of_row = vec![None; m];
    for (a, &(i, _)) in needs_art.iter().enumerate() {
        art_of_row[i] = Some(a);
    }
    for i in 0..m {
        let row = &mut t[i * cols..(i + 1) * cols];
        for &(k, a) in &a_rows[i] {
            row[k] += a;
        }
        row[nf + i] = 1.0;
        match art_of_row[i] {
            None => {
                basis[i] = nf + i;
                basic_row[nf + i] = Some(i);
                x[nf + i] = slack_val[i];
            }
            Some(a) => {
                let resid = needs_art[a].1;
                let sigma = if resid >= 0.0 { 1.0 } else { -1.0 };
                let col = nf + m + a;
                row[col] = sigma;
                // Scale so the artificial has a unit pivot.
                for v in row.iter_mut() {
                    *v *= sigma;
                }
                beta[i] *= sigma;
                basis[i] = col;
                basic_row[col] = Some(i);
                x[nf + i] = slack_val[i];
                x[col] = resid.abs();
            }
        }
    }

    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        beta,
        basis,
        basic_row,
        lower: col_lower,
        upper: col_upper,
        x,
        iterations: 0,
        precision_warning: false,
    };
    tab.refresh_basics();
    let max_iter = 200 * (m + cols) + 10_000;

    if na > 0 {
        let mut c1 = vec![0.0; cols];
        for c in c1.iter_mut().skip(nf + m) {
            *c = 1.0;
        }
        match tab.run(&c1, tol, max_iter) {
            Phase::Done => {}
            Phase::Unbounded => unreachable!("phase 1 objective is bounded below"),
            Phase::Limit => return limit(values, &tab),
        }
        tab.refresh_basics();
        let infeas: f64 = (nf + m..cols).map(|j| tab.x[j]).sum();
        if infeas > tol.primal * (1.0 + m as f64).sqrt() * 10.0 {
            let mut sol = infeasible(values);
            sol.iterations = tab.iterations;
            return sol;
        }
        for j in nf + m..cols {
            tab.upper[j] = 0.0;
            if tab.basic_row[j].is_none() {
                tab.x[j] = 0.0;
            }
        }
    }

    let mut c2 = vec![0.0; cols];
    c2[..nf].copy_from_slice(&cost_struct);
    match tab.run(&c2, tol, max_iter) {
        Phase::Done => {}
        Phase::Unbounded => {
            return LpSolution {
                status: LpStatus::Unbounded,
                values,
                objective: f64::NAN,
                iterations: tab.iterations,
                precision_warning: tab.precision_warning,
            }
        }
        Phase::Limit => return limit(values, &tab),
    }
    tab.refresh_basics();
    for (k, &j) in free.iter().enumerate() {
        values[j] = tab.x[k].clamp(lower[j], upper[j]);
    }
    let objective = model.objective.eval(&values);
    LpSolution {
        status: LpStatus::Optimal,
        values,
        objective,
        iterations: tab.iterations,
        precision_warning: tab.precision_warning,
    }
}

fn infeasible(values: Vec<f64>) -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        values,
        objective: f64::NAN,
        iterations: 0,
        precision_warning: false,
    }
}

fn limit(values: Vec<f64>, tab: &Tableau) -> LpSolution {
    LpSolution {
        status: LpStatus::IterationLimit,
        values,
        objective: f64::NAN,
        iterations: tab.iterations,
        precision_warning: tab.precision_warning,
    }
}

/// LP relaxation of `model` with its own bounds.
pub fn solve_lp(model: &MilpModel) -> LpSolution {
    let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    solve_relaxation(model, &lower, &upper, &LpTolerances::default())
}

