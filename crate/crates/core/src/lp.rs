//! Linear programs and the scenario LP solver.
//!
//! Scenario programs have tens of thousands of rows but only a handful of
//! variables, and few rows are ever binding. [`CuttingPlane`] therefore solves
//! over a small active subset with `minilp`, scans every row for violations
//! in parallel, adds the worst offenders and re-optimizes from the previous
//! basis until no row is violated.

use std::panic::{catch_unwind, AssertUnwindSafe};

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Violation above which a row is added to the active set.
pub const ADD_TOL: f64 = 1e-9;
/// Rows seeded per family before the first solve.
const SEED_ROWS: usize = 64;
/// Rows added per cutting-plane round.
const ADD_ROWS: usize = 256;
const MAX_ROUNDS: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical failure in LP solver: {0}")]
    NumericalFailure(String),
    #[error("malformed LP: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Objective coefficient (the objective is maximized).
    pub obj: f64,
}

/// `Σ coeffs·x  sense  rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub family: usize,
}

impl Row {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// Amount by which `x` violates the row (≤ 0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.lhs(x);
        match self.sense {
            Sense::Le => v - self.rhs,
            Sense::Ge => self.rhs - v,
            Sense::Eq => (v - self.rhs).abs(),
        }
    }
}

/// Maximize `Σ obj·x` subject to rows and box bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    vars: Vec<VarSpec>,
    rows: Vec<Row>,
    families: Vec<String>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: &str, lo: f64, hi: f64, obj: f64) -> usize {
        self.vars.push(VarSpec {
            name: name.to_string(),
            lo,
            hi,
            obj,
        });
        self.vars.len() - 1
    }

    /// Index of the named constraint family, created on first use.
    pub fn family(&mut self, name: &str) -> usize {
        match self.families.iter().position(|f| f == name) {
            Some(i) => i,
            None => {
                self.families.push(name.to_string());
                self.families.len() - 1
            }
        }
    }

    pub fn add_row(&mut self, family: usize, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(Row {
            coeffs,
            sense,
            rhs,
            family,
        });
    }

    pub fn extend_rows(&mut self, rows: impl IntoIterator<Item = Row>) {
        self.rows.extend(rows);
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn family_rows(&self, name: &str) -> usize {
        match self.families.iter().position(|f| f == name) {
            Some(i) => self.rows.iter().filter(|r| r.family == i).count(),
            None => 0,
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.vars.iter().zip(x).map(|(v, xi)| v.obj * xi).sum()
    }

    /// Largest row or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = par::max_by_key(&self.rows, |r| r.violation(x))
            .map(|(_, v)| v)
            .unwrap_or(f64::NEG_INFINITY);
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, xi)| (v.lo - xi).max(xi - v.hi))
            .fold(f64::NEG_INFINITY, f64::max);
        rows.max(bounds)
    }

    fn validate(&self) -> Result<(), LpError> {
        for (i, v) in self.vars.iter().enumerate() {
            if !(v.lo <= v.hi) || !v.obj.is_finite() {
                return Err(LpError::Malformed(format!("variable {i} `{}`", v.name)));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            let bad_index = r.coeffs.iter().any(|&(j, _)| j >= self.vars.len());
            let bad_value = r.coeffs.iter().any(|&(_, c)| !c.is_finite()) || !r.rhs.is_finite();
            if bad_index || bad_value {
                return Err(LpError::Malformed(format!("row {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest violation over all rows and bounds, recomputed outside the solver.
    pub max_violation: f64,
    pub rounds: usize,
    pub active_rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

pub trait LpSolver {
    fn solve(&self, p: &LpProblem) -> Result<LpOutcome, LpError>;
}

/// Constraint generation around `minilp`'s dual simplex.
#[derive(Clone, Copy, Debug)]
pub struct CuttingPlane {
    pub seed_rows: usize,
    pub add_rows: usize,
    pub max_rounds: usize,
}

impl Default for CuttingPlane {
    fn default() -> Self {
        CuttingPlane {
            seed_rows: SEED_ROWS,
            add_rows: ADD_ROWS,
            max_rounds: MAX_ROUNDS,
        }
    }
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, LpError> {
    catch_unwind(AssertUnwindSafe(f))
        .map_err(|_| LpError::NumericalFailure("solver panicked".into()))
}

fn cmp_op(s: Sense) -> ComparisonOp {
    match s {
        Sense::Le => ComparisonOp::Le,
        Sense::Ge => ComparisonOp::Ge,
        Sense::Eq => ComparisonOp::Eq,
    }
}

fn expr(row: &Row, vars: &[Variable]) -> LinearExpr {
    let mut e = LinearExpr::empty();
    for &(i, c) in &row.coeffs {
        e.add(vars[i], c);
    }
    e
}

impl CuttingPlane {
    fn seed(&self, p: &LpProblem) -> Vec<bool> {
        let mut active = vec![false; p.rows.len()];
        for f in 0..p.families.len().max(1) {
            let idx: Vec<usize> = (0..p.rows.len())
                .filter(|&i| p.rows[i].family == f)
                .collect();
            if idx.len() <= self.seed_rows {
                for i in idx {
                    active[i] = true;
                }
            } else {
                for s in 0..self.seed_rows {
                    active[idx[s * idx.len() / self.seed_rows]] = true;
                }
            }
        }
        active
    }
}

impl LpSolver for CuttingPlane {
    fn solve(&self, p: &LpProblem) -> Result<LpOutcome, LpError> {
        p.validate()?;
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<Variable> = p
            .vars
            .iter()
            .map(|v| problem.add_var(v.obj, (v.lo, v.hi)))
            .collect();
        let mut active = self.seed(p);
        for (row, _) in p.rows.iter().zip(&active).filter(|(_, a)| **a) {
            problem.add_constraint(expr(row, &vars), cmp_op(row.sense), row.rhs);
        }
        let mut sol = match guarded(|| problem.solve())? {
            Ok(s) => s,
            Err(minilp::Error::Infeasible) => return Ok(LpOutcome::Infeasible),
            Err(minilp::Error::Unbounded) => return Ok(LpOutcome::Unbounded),
        };
        let mut rounds = 0;
        loop {
            let x: Vec<f64> = vars.iter().map(|v| *sol.var_value(*v)).collect();
            let viol = par::map_slice(&p.rows, |r| r.violation(&x));
            let mut worst: Vec<usize> = (0..p.rows.len())
                .filter(|&i| !active[i] && viol[i] > ADD_TOL)
                .collect();
            if worst.is_empty() {
                let objective = p.objective(&x);
                let max_violation = p.max_violation(&x);
                let active_rows = active.iter().filter(|a| **a).count();
                return Ok(LpOutcome::Optimal(LpSolution {
                    x,
                    objective,
                    max_violation,
                    rounds,
                    active_rows,
                }));
            }
            rounds += 1;
            if rounds > self.max_rounds {
                return Err(LpError::NumericalFailure(format!(
                    "constraint generation did not converge in {} rounds",
                    self.max_rounds
                )));
            }
            worst.sort_by(|&a, &b| viol[b].total_cmp(&viol[a]).then(a.cmp(&b)));
            worst.truncate(self.add_rows);
            for i in worst {
                active[i] = true;
                let row = &p.rows[i];
                let e = expr(row, &vars);
                sol = match guarded(move || sol.add_constraint(e, cmp_op(row.sense), row.rhs))? {
                    Ok(s) => s,
                    Err(minilp::Error::Infeasible) => return Ok(LpOutcome::Infeasible),
                    Err(minilp::Error::Unbounded) => return Ok(LpOutcome::Unbounded),
                };
            }
        }
    }
}

/// Solves with the default [`CuttingPlane`] solver.
pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome, LpError> {
    CuttingPlane::default().solve(p)
}
