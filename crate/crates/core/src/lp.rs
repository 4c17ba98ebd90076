//! Dense bounded-variable simplex for small and medium linear programs.
//!
//! Problems are stated as maximization over variables with (possibly
//! infinite) bounds and rows `a·x {<=,=,>=} b`. Each row receives a slack
//! `s` with `a·x + s = b`; the slack's bounds encode the relation. Rows whose
//! initial slack is out of bounds get an artificial column for phase one.

use std::fmt::Write as _;

use thiserror::Error;

pub const PIVOT_TOL: f64 = 1e-10;
pub const FEAS_TOL: f64 = 1e-9;
pub const OPT_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn new(name: impl Into<String>, terms: Vec<(VarId, f64)>, relation: Relation, rhs: f64) -> Self {
        Row {
            name: name.into(),
            terms,
            relation,
            rhs,
        }
    }

    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let act = self.activity(values);
        match self.relation {
            Relation::Le => (act - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - act).max(0.0),
            Relation::Eq => (act - self.rhs).abs(),
        }
    }
}

/// A maximization problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("row {row} references undeclared variable {var}")]
    UndeclaredVariable { row: String, var: usize },
    #[error("variable {0} has lower bound above upper bound")]
    InvertedBounds(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("solution violates constraints by {0:e} after solve")]
    Numerical(f64),
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        self.objective.push(0.0);
        VarId(self.variables.len() - 1)
    }

    pub fn add_objective(&mut self, var: VarId, coeff: f64) {
        self.objective[var.0] += coeff;
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.rows.push(Row::new(name, terms, relation, rhs));
        self.rows.len() - 1
    }

    pub fn validate(&self) -> Result<(), LpError> {
        for v in &self.variables {
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() || v.lower == f64::INFINITY
                || v.upper == f64::NEG_INFINITY
            {
                return Err(LpError::InvertedBounds(v.name.clone()));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective".into()));
        }
        for r in &self.rows {
            for &(v, a) in &r.terms {
                if v.0 >= self.variables.len() {
                    return Err(LpError::UndeclaredVariable {
                        row: r.name.clone(),
                        var: v.0,
                    });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(r.name.clone()));
                }
            }
            if !r.rhs.is_finite() {
                return Err(LpError::NonFinite(r.name.clone()));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Largest row or bound violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(values)).fold(0.0, f64::max);
        self.variables
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0))
            .fold(rows, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Variable values (meaningful only when optimal).
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Row multipliers of the maximization problem: nonnegative on binding
    /// `<=` rows, nonpositive on binding `>=` rows.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Upper bound on the optimum implied by row multipliers `y` (weak duality).
/// Returns +inf when `y` leaves a reduced cost pointing at an infinite bound.
pub fn dual_bound(problem: &LpProblem, y: &[f64]) -> f64 {
    let mut reduced = problem.objective.clone();
    let mut bound = 0.0;
    for (r, &yi) in problem.rows.iter().zip(y) {
        bound += yi * r.rhs;
        for &(v, a) in &r.terms {
            reduced[v.0] -= a * yi;
        }
        // sup over the slack range of -y s
        let (lo, hi) = slack_bounds(r.relation);
        bound += sup_linear(-yi, lo, hi);
    }
    for (v, d) in problem.variables.iter().zip(&reduced) {
        bound += sup_linear(*d, v.lower, v.upper);
    }
    bound
}

fn sup_linear(coeff: f64, lo: f64, hi: f64) -> f64 {
    if coeff.abs() <= OPT_TOL {
        // treat tiny multipliers as exact zeros, but still count them on finite bounds
        let at_lo = if lo.is_finite() { coeff * lo } else { 0.0 };
        let at_hi = if hi.is_finite() { coeff * hi } else { 0.0 };
        return at_lo.max(at_hi);
    }
    if coeff > 0.0 {
        coeff * hi
    } else {
        coeff * lo
    }
}

fn slack_bounds(rel: Relation) -> (f64, f64) {
    match rel {
        Relation::Le => (0.0, f64::INFINITY),
        Relation::Ge => (f64::NEG_INFINITY, 0.0),
        Relation::Eq => (0.0, 0.0),
    }
}

struct Tableau {
    m: usize,
    ncols: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    iterations: usize,
    limit: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn reset_reduced_costs(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    fn recompute_basics(&mut self) {
        for i in 0..self.m {
            let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
            let mut v = self.beta[i];
            for (j, &tij) in row.iter().enumerate() {
                if tij != 0.0 && self.row_of[j].is_none() {
                    v -= tij * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.ncols;
        let p = self.t[r * n + q];
        {
            let row = &mut self.t[r * n..(r + 1) * n];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[q] = 1.0;
        }
        self.beta[r] /= p;
        let nz: Vec<usize> = (0..n).filter(|&j| self.t[r * n + j] != 0.0).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&j| self.t[r * n + j]).collect();
        let beta_r = self.beta[r];
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * n..(i + 1) * n];
            for (&j, &pj) in nz.iter().zip(&pivot_row) {
                row[j] -= f * pj;
            }
            row[q] = 0.0;
            self.beta[i] -= f * beta_r;
        }
        let f = self.d[q];
        if f != 0.0 {
            for (&j, &pj) in nz.iter().zip(&pivot_row) {
                self.d[j] -= f * pj;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = None;
        self.basis[r] = q;
        self.row_of[q] = Some(r);
    }

    /// Minimize `cost · x` from the current basic feasible point.
    fn run(&mut self) -> Result<PhaseEnd, LpError> {
        let mut degenerate = 0usize;
        let mut since_refresh = 0usize;
        loop {
            self.iterations += 1;
            if self.iterations > self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            since_refresh += 1;
            if since_refresh >= 200 {
                self.recompute_basics();
                self.reset_reduced_costs();
                since_refresh = 0;
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if self.row_of[j].is_some() {
                    continue;
                }
                let dj = self.d[j];
                let dir = if dj < -OPT_TOL && self.x[j] < self.upper[j] {
                    1.0
                } else if dj > OPT_TOL && self.x[j] > self.lower[j] {
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
                return Ok(PhaseEnd::Optimal);
            };

            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            let mut leave_piv = 0.0;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * a;
                let (limit, target) = if rate < 0.0 {
                    if self.lower[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    (((self.x[b] - self.lower[b]) / -rate).max(0.0), self.lower[b])
                } else {
                    if self.upper[b] == f64::INFINITY {
                        continue;
                    }
                    (((self.upper[b] - self.x[b]) / rate).max(0.0), self.upper[b])
                };
                let better = if limit < step - 1e-12 {
                    true
                } else if let (Some((li, _)), true) = (leave, limit <= step + 1e-12) {
                    if bland {
                        b < self.basis[li]
                    } else {
                        a.abs() > leave_piv
                    }
                } else {
                    false
                };
                if better {
                    step = limit.min(step);
                    leave = Some((i, target));
                    leave_piv = a.abs();
                }
            }
            if step == f64::INFINITY {
                return Ok(PhaseEnd::Unbounded);
            }
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            if step > 0.0 {
                self.x[q] += dir * step;
                for i in 0..self.m {
                    let a = self.at(i, q);
                    if a != 0.0 {
                        self.x[self.basis[i]] -= dir * step * a;
                    }
                }
            }
            match leave {
                None => {
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, target)) => {
                    let b = self.basis[r];
                    self.pivot(r, q);
                    self.x[b] = target;
                }
            }
        }
    }
}

/// Solve a maximization problem.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let m = problem.rows.len();

    let mut x = vec![0.0; n + m];
    let mut lower = Vec::with_capacity(n + m);
    let mut upper = Vec::with_capacity(n + m);
    for (j, v) in problem.variables.iter().enumerate() {
        lower.push(v.lower);
        upper.push(v.upper);
        x[j] = if v.lower.is_finite() {
            v.lower
        } else if v.upper.is_finite() {
            v.upper
        } else {
            0.0
        };
    }
    // natural slack values and rows needing an artificial
    let mut art_rows = Vec::new();
    let mut sign = vec![0.0; m];
    for (i, r) in problem.rows.iter().enumerate() {
        let (lo, hi) = slack_bounds(r.relation);
        lower.push(lo);
        upper.push(hi);
        let s = r.rhs - r.activity(&x[..n]);
        if s < lo - FEAS_TOL || s > hi + FEAS_TOL {
            let bound = if s < lo { lo } else { hi };
            x[n + i] = bound;
            sign[i] = if s > bound { 1.0 } else { -1.0 };
            art_rows.push(i);
        } else {
            x[n + i] = s.clamp(lo, hi);
        }
    }
    let k = art_rows.len();
    let ncols = n + m + k;
    x.resize(ncols, 0.0);
    lower.resize(ncols, 0.0);
    upper.resize(ncols, f64::INFINITY);

    let mut t = vec![0.0; m * ncols];
    let mut beta = vec![0.0; m];
    let mut basis: Vec<usize> = (n..n + m).collect();
    for (i, r) in problem.rows.iter().enumerate() {
        for &(v, a) in &r.terms {
            t[i * ncols + v.0] += a;
        }
        t[i * ncols + n + i] = 1.0;
        beta[i] = r.rhs;
    }
    for (a, &i) in art_rows.iter().enumerate() {
        let col = n + m + a;
        // row i: a x + s + sign * art = b, with art basic; normalize by sign
        t[i * ncols + col] = sign[i];
        let s = sign[i];
        for v in &mut t[i * ncols..(i + 1) * ncols] {
            *v *= s;
        }
        beta[i] *= s;
        basis[i] = col;
    }
    let mut row_of = vec![None; ncols];
    for (i, &b) in basis.iter().enumerate() {
        row_of[b] = Some(i);
    }

    let mut tab = Tableau {
        m,
        ncols,
        t,
        beta,
        d: vec![0.0; ncols],
        cost: vec![0.0; ncols],
        lower,
        upper,
        x,
        basis,
        row_of,
        iterations: 0,
        limit: 50_000 + 50 * (m + n),
    };
    tab.recompute_basics();

    if k > 0 {
        for a in 0..k {
            tab.cost[n + m + a] = 1.0;
        }
        tab.reset_reduced_costs();
        tab.run()?;
        tab.recompute_basics();
        let infeas: f64 = (0..k).map(|a| tab.x[n + m + a].abs()).sum();
        let scale = 1.0 + problem.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeas > 1e-8 * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                values: tab.x[..n].to_vec(),
                objective_value: f64::NAN,
                duals: vec![0.0; m],
                iterations: tab.iterations,
            });
        }
        // drive remaining artificials out of the basis
        for i in 0..m {
            let b = tab.basis[i];
            if b < n + m {
                continue;
            }
            let mut best = None;
            let mut mag = 1e-7;
            for j in 0..n + m {
                let a = tab.at(i, j).abs();
                if tab.row_of[j].is_none() && a > mag {
                    mag = a;
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                tab.pivot(i, j);
                tab.x[b] = 0.0;
            }
        }
        for a in 0..k {
            let col = n + m + a;
            tab.cost[col] = 0.0;
            tab.upper[col] = 0.0;
            if tab.row_of[col].is_none() {
                tab.x[col] = 0.0;
            }
        }
        tab.recompute_basics();
    }

    for j in 0..n {
        tab.cost[j] = -problem.objective[j];
    }
    tab.reset_reduced_costs();
    let end = tab.run()?;
    tab.recompute_basics();
    if let PhaseEnd::Unbounded = end {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: tab.x[..n].to_vec(),
            objective_value: f64::INFINITY,
            duals: vec![0.0; m],
            iterations: tab.iterations,
        });
    }
    tab.reset_reduced_costs();
    let mut values = tab.x[..n].to_vec();
    for (v, var) in values.iter_mut().zip(&problem.variables) {
        *v = v.clamp(var.lower, var.upper);
    }
    let viol = problem.max_violation(&values);
    if viol > 1e-7 {
        return Err(LpError::Numerical(viol));
    }
    let duals = (0..m).map(|i| tab.d[n + i]).collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value: problem.objective_value(&values),
        values,
        duals,
        iterations: tab.iterations,
    })
}

fn lp_name(raw: &str, prefix: char, idx: usize) -> String {
    let clean: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if clean.is_empty() || clean.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        format!("{prefix}{idx}_{clean}")
    } else {
        clean
    }
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (String, f64)>) {
    let mut any = false;
    for (name, a) in terms {
        if a == 0.0 {
            continue;
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {name}", a.abs());
        any = true;
    }
    if !any {
        out.push_str(" 0");
    }
}

/// Render the problem in CPLEX LP format.
pub fn to_lp_format(problem: &LpProblem) -> String {
    let names: Vec<String> = problem
        .variables
        .iter()
        .enumerate()
        .map(|(j, v)| lp_name(&v.name, 'x', j))
        .collect();
    let mut out = String::from("Maximize\n obj:");
    write_terms(
        &mut out,
        problem.objective.iter().enumerate().map(|(j, &c)| (names[j].clone(), c)),
    );
    out.push_str("\nSubject To\n");
    for (i, r) in problem.rows.iter().enumerate() {
        let _ = write!(out, " {}:", lp_name(&r.name, 'r', i));
        write_terms(&mut out, r.terms.iter().map(|&(v, a)| (names[v.0].clone(), a)));
        let rel = match r.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {rel} {}", r.rhs);
    }
    out.push_str("Bounds\n");
    for (v, name) in problem.variables.iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
            (true, true) if v.lower == v.upper => {
                let _ = writeln!(out, " {name} = {}", v.lower);
            }
            (true, true) => {
                let _ = writeln!(out, " {} <= {name} <= {}", v.lower, v.upper);
            }
            (true, false) => {
                let _ = writeln!(out, " {name} >= {}", v.lower);
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {}", v.upper);
            }
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_bounded_variable() {
        let mut p = LpProblem::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_objective(x, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.value(x), 1.0);
        assert_eq!(s.objective_value, 1.0);
    }

    #[test]
    fn tight_face_has_unique_value() {
        let mut p = LpProblem::new();
        let x = p.add_var("x", 0.0, 1.0);
        let y = p.add_var("y", 0.0, 1.0);
        p.add_objective(x, 1.0);
        p.add_objective(y, 1.0);
        p.add_row("cap", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.objective_value - 1.0).abs() < 1e-12);
        assert!((s.duals[0] - 1.0).abs() < 1e-12);
        assert!((dual_bound(&p, &s.duals) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded_are_flagged() {
        let mut p = LpProblem::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        p.add_row("lo", vec![(x, 1.0)], Relation::Ge, 2.0);
        p.add_row("hi", vec![(x, 1.0)], Relation::Le, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);

        let mut q = LpProblem::new();
        let x = q.add_var("x", 0.0, f64::INFINITY);
        let y = q.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        q.add_objective(x, 1.0);
        q.add_row("r", vec![(x, 1.0), (y, -1.0)], Relation::Le, 0.0);
        assert_eq!(solve_lp(&q).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_free_variables() {
        // max -|y| style: x free, y = x - 3, maximize -x with x >= 1
        let mut p = LpProblem::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = p.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        p.add_objective(x, -1.0);
        p.add_row("link", vec![(y, 1.0), (x, -1.0)], Relation::Eq, -3.0);
        p.add_row("floor", vec![(x, 1.0)], Relation::Ge, 1.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.value(x) - 1.0).abs() < 1e-12);
        assert!((s.value(y) + 2.0).abs() < 1e-12);
        assert!(s.duals[1] <= 0.0);
        assert!((dual_bound(&p, &s.duals) - s.objective_value).abs() < 1e-9);
    }

    #[test]
    fn malformed_problems_are_rejected() {
        let mut p = LpProblem::new();
        p.add_var("x", 1.0, 0.0);
        assert!(matches!(solve_lp(&p), Err(LpError::InvertedBounds(_))));
        let mut q = LpProblem::new();
        q.add_var("x", 0.0, 1.0);
        q.add_row("bad", vec![(VarId(3), 1.0)], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&q), Err(LpError::UndeclaredVariable { .. })));
    }

    #[test]
    fn solves_are_bit_identical() {
        let mut p = LpProblem::new();
        let vars: Vec<VarId> = (0..4).map(|i| p.add_var(format!("v{i}"), -1.0, 2.0)).collect();
        for (i, &v) in vars.iter().enumerate() {
            p.add_objective(v, 1.0 + i as f64 * 0.3);
        }
        p.add_row("a", vars.iter().map(|&v| (v, 1.0)).collect(), Relation::Le, 2.5);
        p.add_row("b", vec![(vars[0], 1.0), (vars[3], -2.0)], Relation::Ge, -1.0);
        let a = solve_lp(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lp_format_lists_every_section() {
        let mut p = LpProblem::new();
        let x = p.add_var("p[1,2]", 0.0, 1.0);
        let y = p.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        p.add_objective(x, 2.0);
        p.add_row("bal", vec![(x, 1.0), (y, -1.5)], Relation::Eq, 0.0);
        let text = to_lp_format(&p);
        assert!(text.starts_with("Maximize\n obj: + 2 p[1_2]"));
        assert!(text.contains(" bal: + 1 p[1_2] - 1.5 y = 0\n"));
        assert!(text.contains(" y free\n"));
        assert!(text.ends_with("End\n"));
    }

    fn box_lp(n: usize, obj: &[f64], rows: &[(Vec<f64>, f64)]) -> LpProblem {
        let mut lp = LpProblem::new();
        let vars: Vec<_> = (0..n).map(|i| lp.add_var(format!("x{i}"), 0.0, 1.0)).collect();
        for (v, &c) in vars.iter().zip(obj) {
            lp.add_objective(*v, c);
        }
        for (k, (coef, rhs)) in rows.iter().enumerate() {
            let terms = vars.iter().copied().zip(coef.iter().copied()).collect();
            lp.rows.push(Row::new(format!("r{k}"), terms, Relation::Le, *rhs));
        }
        lp
    }

    fn lp_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<(Vec<f64>, f64)>, Vec<Vec<f64>>)> {
        (1usize..6).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(-2.0..2.0f64, n),
                prop::collection::vec((prop::collection::vec(-1.0..1.0f64, n), 0.0..1.0f64), 0..6),
                prop::collection::vec(prop::collection::vec(0.0..1.0f64, n), 20),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn lp_optimum_is_feasible_dominant_and_tight((n, obj, rows, probes) in lp_case()) {
            let lp = box_lp(n, &obj, &rows);
            let sol = solve_lp(&lp).unwrap();
            prop_assert_eq!(sol.status, LpStatus::Optimal);
            prop_assert!(lp.max_violation(&sol.values) <= 1e-9);
            for p in &probes {
                if lp.max_violation(p) == 0.0 {
                    prop_assert!(lp.objective_value(p) <= sol.objective_value + 1e-9);
                }
            }
            let bound = dual_bound(&lp, &sol.duals);
            prop_assert!((bound - sol.objective_value).abs() <= 1e-7 * (1.0 + sol.objective_value.abs()));
        }
    }
}
