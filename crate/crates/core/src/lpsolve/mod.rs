//! Linear programs in inequality form and a bounded-variable revised simplex solver.

mod lu;
mod simplex;

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use simplex::{Basis, SolverOptions};

/// One constraint row `Σ coeff_j z_j <= rhs`, stored sparsely with sorted, unique columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `minimize objective·z` subject to `rows` and per-variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<SparseRow>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LinearProgram {
    /// A program with the given objective, no rows, and all variables free.
    pub fn new(objective: Vec<f64>) -> Result<Self> {
        if let Some(j) = objective.iter().position(|c| !c.is_finite()) {
            return Err(Error::Lp(format!("objective coefficient {j} is not finite")));
        }
        let n = objective.len();
        Ok(Self { objective, rows: Vec::new(), lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective(&mut self, objective: Vec<f64>) -> Result<()> {
        if objective.len() != self.num_vars() {
            return Err(Error::DimensionMismatch(format!(
                "objective has {} entries, program has {} variables",
                objective.len(),
                self.num_vars()
            )));
        }
        if objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Lp("objective is not finite".into()));
        }
        self.objective = objective;
        Ok(())
    }

    /// Appends `row·z <= rhs` from a dense coefficient row.
    pub fn add_row(&mut self, row: &[f64], rhs: f64) -> Result<()> {
        if row.len() != self.num_vars() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} entries, program has {} variables",
                row.len(),
                self.num_vars()
            )));
        }
        let entries = row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
        self.add_sparse_row(entries, rhs)
    }

    /// Appends `Σ v z_j <= rhs` for `(j, v)` in `entries`; repeated columns are summed.
    pub fn add_sparse_row(&mut self, mut entries: Vec<(usize, f64)>, rhs: f64) -> Result<()> {
        let n = self.num_vars();
        if !rhs.is_finite() || entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::Lp(format!("row {} has non-finite data", self.rows.len())));
        }
        if let Some(&(j, _)) = entries.iter().find(|(j, _)| *j >= n) {
            return Err(Error::DimensionMismatch(format!("column {j} out of range for {n} variables")));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        self.rows.push(SparseRow { entries: merged, rhs });
        Ok(())
    }

    pub fn set_nonneg(&mut self, j: usize) {
        self.lower[j] = 0.0;
        self.upper[j] = f64::INFINITY;
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) -> Result<()> {
        if j >= self.num_vars() {
            return Err(Error::DimensionMismatch(format!("variable {j} out of range")));
        }
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::Lp(format!("invalid bounds [{lo}, {hi}] for variable {j}")));
        }
        self.lower[j] = lo;
        self.upper[j] = hi;
        Ok(())
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    /// True for variables whose bounds are exactly `[0, ∞)`.
    pub fn nonneg_mask(&self) -> Vec<bool> {
        self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| lo == 0.0 && hi == f64::INFINITY).collect()
    }

    pub fn sparse_rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// Rows as dense coefficient vectors with their right-hand sides.
    pub fn rows(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let n = self.num_vars();
        self.rows.iter().map(move |r| {
            let mut dense = vec![0.0; n];
            for &(j, v) in &r.entries {
                dense[j] = v;
            }
            (dense, r.rhs)
        })
    }

    pub fn eval_objective(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    /// Largest violation over rows and bounds at `z` (zero when feasible).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| {
            let lhs: f64 = r.entries.iter().map(|&(j, v)| v * z[j]).sum();
            lhs - r.rhs
        });
        let bounds = z.iter().enumerate().map(|(j, &v)| (self.lower[j] - v).max(v - self.upper[j]));
        rows.chain(bounds).fold(0.0f64, f64::max)
    }

    /// Text form: a `c:` line, one `r:` line per row, then `b:` lines for bounded variables.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "c: {}", join(&self.objective));
        for (row, rhs) in self.rows() {
            let _ = writeln!(out, "r: {} <= {rhs}", join(&row));
        }
        for j in 0..self.num_vars() {
            let (lo, hi) = self.bounds(j);
            if lo.is_finite() || hi.is_finite() {
                let _ = writeln!(out, "b: {j} {lo} {hi}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful when `status` is `Optimal`.
    pub z: Vec<f64>,
    pub objective_value: f64,
    /// Row multipliers `y <= 0` with `objective = y·A + reduced costs`.
    pub duals: Vec<f64>,
    pub iterations: usize,
    /// Final basis, usable to warm-start a structurally identical program.
    pub basis: Option<Basis>,
}

impl LpSolution {
    /// Lower bound on the optimum implied by the row multipliers and variable bounds.
    ///
    /// Returns `-∞` when some reduced cost pushes towards an infinite bound.
    pub fn dual_bound(&self, lp: &LinearProgram) -> f64 {
        let n = lp.num_vars();
        let mut reduced = lp.objective().to_vec();
        let scale = reduced.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
        let mut value = 0.0;
        for (row, &y) in lp.sparse_rows().iter().zip(&self.duals) {
            value += y * row.rhs;
            for &(j, v) in &row.entries {
                reduced[j] -= y * v;
            }
        }
        for (j, &d) in reduced.iter().enumerate().take(n) {
            let (lo, hi) = lp.bounds(j);
            // reduced costs of basic variables are zero up to rounding
            if d.abs() <= 1e-9 * scale {
                continue;
            }
            let bound = if d > 0.0 { lo } else { hi };
            if !bound.is_finite() {
                return f64::NEG_INFINITY;
            }
            value += d * bound;
        }
        value
    }
}

/// Solves `lp` from a slack basis with default options.
pub fn solve_lp(lp: &LinearProgram) -> LpSolution {
    simplex::solve(lp, None, &SolverOptions::default())
}

/// Solves `lp`, starting from `basis` when it fits the program's dimensions.
pub fn solve_lp_with(lp: &LinearProgram, basis: Option<&Basis>, options: &SolverOptions) -> LpSolution {
    simplex::solve(lp, basis, options)
}
