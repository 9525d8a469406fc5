//! Bounded-variable revised primal simplex.
//!
//! Every row `a·z <= b` gets a slack `w >= 0` so the working system is
//! `A z + w = b`. The basis is factorized through its structural kernel: rows
//! whose slack is basic drop out, and the remaining square block is handed to
//! a dense LU. Pivots between refactorizations are kept as eta columns.

use super::lu::DenseLu;
use super::{LinearProgram, LpSolution, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Free nonbasic variable held at zero.
    Zero,
}

/// A simplex basis, reusable as a warm start for a program of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    num_vars: usize,
    num_rows: usize,
    head: Vec<usize>,
    state: Vec<VarState>,
}

impl Basis {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    /// The same basis for a program with `extra` rows appended, whose slacks enter as basic.
    pub fn with_extra_rows(&self, extra: usize) -> Basis {
        let mut out = self.clone();
        let first = self.num_vars + self.num_rows;
        out.head.extend(first..first + extra);
        out.state.extend(std::iter::repeat(VarState::Basic).take(extra));
        out.num_rows += extra;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance, relative to the largest objective coefficient (at least 1).
    pub optimality_tol: f64,
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub stall_threshold: usize,
    /// Pivot budget; defaults to `50 * (rows + cols)`.
    pub max_pivots: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            refactor_interval: 50,
            stall_threshold: 50,
            max_pivots: None,
        }
    }
}

const PIVOT_TOL: f64 = 1e-9;
const NONE: usize = usize::MAX;

struct Csc {
    start: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl Csc {
    fn from_lp(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let mut count = vec![0usize; n + 1];
        for row in lp.sparse_rows() {
            for &(j, _) in &row.entries {
                count[j + 1] += 1;
            }
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let nnz = count[n];
        let mut next = count.clone();
        let mut rows = vec![0; nnz];
        let mut vals = vec![0.0; nnz];
        for (r, row) in lp.sparse_rows().iter().enumerate() {
            for &(j, v) in &row.entries {
                rows[next[j]] = r;
                vals[next[j]] = v;
                next[j] += 1;
            }
        }
        Self { start: count, rows, vals }
    }

    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.start[j]..self.start[j + 1];
        self.rows[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }
}

struct Eta {
    pos: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

#[derive(Default)]
struct Factor {
    kernel_rows: Vec<usize>,
    kernel_vars: Vec<usize>,
    kernel_pos: Vec<usize>,
    slack_rows: Vec<usize>,
    /// Row -> basis position of its slack, or `NONE`.
    slack_pos: Vec<usize>,
    lu: DenseLu,
    etas: Vec<Eta>,
    kbuf: Vec<f64>,
    work: Vec<f64>,
}

impl Factor {
    /// `out = B^{-1} a` with `a` in row space and `out` in basis-position space.
    fn ftran(&mut self, csc: &Csc, a: &[f64], out: &mut [f64]) {
        self.kbuf.clear();
        self.kbuf.extend(self.kernel_rows.iter().map(|&r| a[r]));
        self.lu.solve(&mut self.kbuf, &mut self.work);
        for &r in &self.slack_rows {
            out[self.slack_pos[r]] = a[r];
        }
        for (c, &q) in self.kernel_vars.iter().enumerate() {
            let xc = self.kbuf[c];
            out[self.kernel_pos[c]] = xc;
            if xc != 0.0 {
                for (r, v) in csc.col(q) {
                    let p = self.slack_pos[r];
                    if p != NONE {
                        out[p] -= v * xc;
                    }
                }
            }
        }
        for eta in &self.etas {
            let vp = out[eta.pos] / eta.pivot;
            out[eta.pos] = vp;
            if vp != 0.0 {
                for &(i, d) in &eta.entries {
                    out[i] -= d * vp;
                }
            }
        }
    }

    /// `y = B^{-T} c` with `c` in position space (overwritten) and `y` in row space.
    fn btran(&mut self, csc: &Csc, c: &mut [f64], y: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let s: f64 = eta.entries.iter().map(|&(i, d)| c[i] * d).sum();
            c[eta.pos] = (c[eta.pos] - s) / eta.pivot;
        }
        for &r in &self.slack_rows {
            y[r] = c[self.slack_pos[r]];
        }
        self.kbuf.clear();
        for (col, &q) in self.kernel_vars.iter().enumerate() {
            let mut v = c[self.kernel_pos[col]];
            for (r, a) in csc.col(q) {
                if self.slack_pos[r] != NONE {
                    v -= a * y[r];
                }
            }
            self.kbuf.push(v);
        }
        self.lu.solve_transpose(&mut self.kbuf, &mut self.work);
        for (i, &r) in self.kernel_rows.iter().enumerate() {
            y[r] = self.kbuf[i];
        }
    }

    fn push_eta(&mut self, pos: usize, alpha: &[f64]) {
        let entries =
            alpha.iter().enumerate().filter(|&(i, v)| i != pos && v.abs() > 1e-14).map(|(i, v)| (i, *v)).collect();
        self.etas.push(Eta { pos, pivot: alpha[pos], entries });
    }
}

enum Step {
    Flip,
    Pivot { pos: usize, to_upper: bool },
}

struct Solver<'a> {
    lp: &'a LinearProgram,
    n: usize,
    m: usize,
    csc: Csc,
    b: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    head: Vec<usize>,
    factor: Factor,
    ftol: f64,
    otol: f64,
    opts: SolverOptions,
    // scratch
    cb: Vec<f64>,
    y: Vec<f64>,
    col: Vec<f64>,
    alpha: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(lp: &'a LinearProgram, opts: &SolverOptions) -> Self {
        let (n, m) = (lp.num_vars(), lp.num_rows());
        let mut lo = Vec::with_capacity(n + m);
        let mut up = Vec::with_capacity(n + m);
        for j in 0..n {
            let (l, u) = lp.bounds(j);
            lo.push(l);
            up.push(u);
        }
        lo.extend(std::iter::repeat(0.0).take(m));
        up.extend(std::iter::repeat(f64::INFINITY).take(m));
        let mut cost = lp.objective().to_vec();
        cost.extend(std::iter::repeat(0.0).take(m));
        let cmax = cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
        Self {
            lp,
            n,
            m,
            csc: Csc::from_lp(lp),
            b: lp.sparse_rows().iter().map(|r| r.rhs).collect(),
            cost,
            lo,
            up,
            x: vec![0.0; n + m],
            state: vec![VarState::AtLower; n + m],
            head: Vec::with_capacity(m),
            factor: Factor::default(),
            ftol: opts.feasibility_tol,
            otol: opts.optimality_tol * cmax,
            opts: opts.clone(),
            cb: vec![0.0; m],
            y: vec![0.0; m],
            col: vec![0.0; m],
            alpha: vec![0.0; m],
        }
    }

    fn rest_state(&self, j: usize, preferred: VarState) -> (VarState, f64) {
        let (l, u) = (self.lo[j], self.up[j]);
        match preferred {
            VarState::AtUpper if u.is_finite() => (VarState::AtUpper, u),
            _ if l.is_finite() => (VarState::AtLower, l),
            _ if u.is_finite() => (VarState::AtUpper, u),
            _ => (VarState::Zero, 0.0),
        }
    }

    fn slack_basis(&mut self) {
        self.head = (self.n..self.n + self.m).collect();
        for j in 0..self.n + self.m {
            if j >= self.n {
                self.state[j] = VarState::Basic;
            } else {
                let (s, v) = self.rest_state(j, VarState::AtLower);
                self.state[j] = s;
                self.x[j] = v;
            }
        }
    }

    fn load_basis(&mut self, basis: &Basis) -> bool {
        if basis.num_vars != self.n || basis.num_rows != self.m || basis.head.len() != self.m {
            return false;
        }
        let basic = basis.state.iter().filter(|s| **s == VarState::Basic).count();
        if basic != self.m || basis.head.iter().any(|&j| basis.state[j] != VarState::Basic) {
            return false;
        }
        self.head = basis.head.clone();
        for j in 0..self.n + self.m {
            if basis.state[j] == VarState::Basic {
                self.state[j] = VarState::Basic;
            } else {
                let (s, v) = self.rest_state(j, basis.state[j]);
                self.state[j] = s;
                self.x[j] = v;
            }
        }
        true
    }

    fn column_into(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for (r, v) in self.csc.col(j) {
                out[r] = v;
            }
        } else {
            out[j - self.n] = 1.0;
        }
    }

    /// Rebuilds the factorization from `head`, swapping slacks in for dependent columns.
    fn refactor(&mut self) {
        loop {
            let f = &mut self.factor;
            f.kernel_rows.clear();
            f.kernel_vars.clear();
            f.kernel_pos.clear();
            f.slack_rows.clear();
            f.slack_pos.clear();
            f.slack_pos.resize(self.m, NONE);
            f.etas.clear();
            for (p, &j) in self.head.iter().enumerate() {
                if j >= self.n {
                    f.slack_rows.push(j - self.n);
                    f.slack_pos[j - self.n] = p;
                } else {
                    f.kernel_vars.push(j);
                    f.kernel_pos.push(p);
                }
            }
            let mut row_kernel = vec![NONE; self.m];
            for r in 0..self.m {
                if f.slack_pos[r] == NONE {
                    row_kernel[r] = f.kernel_rows.len();
                    f.kernel_rows.push(r);
                }
            }
            let k = f.kernel_vars.len();
            debug_assert_eq!(k, f.kernel_rows.len());
            let mut dense = vec![0.0; k * k];
            for (c, &q) in f.kernel_vars.iter().enumerate() {
                for (r, v) in self.csc.col(q) {
                    let rk = row_kernel[r];
                    if rk != NONE {
                        dense[rk * k + c] = v;
                    }
                }
            }
            match DenseLu::factorize(dense, k) {
                Ok(lu) => {
                    f.lu = lu;
                    return;
                }
                Err(def) => {
                    let swaps: Vec<(usize, usize, usize)> = def
                        .dependent_cols
                        .iter()
                        .zip(&def.free_rows)
                        .map(|(&c, &fr)| (f.kernel_pos[c], f.kernel_vars[c], f.kernel_rows[fr]))
                        .collect();
                    for (p, q, r) in swaps {
                        let (s, v) = self.rest_state(q, VarState::AtLower);
                        self.state[q] = s;
                        self.x[q] = v;
                        self.head[p] = self.n + r;
                        self.state[self.n + r] = VarState::Basic;
                    }
                }
            }
        }
    }

    /// Recomputes basic values from the nonbasic ones.
    fn compute_basics(&mut self) {
        let mut rhs = self.b.clone();
        for j in 0..self.n {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for (r, v) in self.csc.col(j) {
                    rhs[r] -= v * self.x[j];
                }
            }
        }
        for r in 0..self.m {
            let j = self.n + r;
            if self.state[j] != VarState::Basic {
                rhs[r] -= self.x[j];
            }
        }
        let mut xb = vec![0.0; self.m];
        self.factor.ftran(&self.csc, &rhs, &mut xb);
        for (p, &j) in self.head.iter().enumerate() {
            self.x[j] = xb[p];
        }
    }

    /// Fills `cb` with phase costs; returns true when some basic variable is infeasible.
    fn phase_costs(&mut self) -> bool {
        let mut infeasible = false;
        for (p, &j) in self.head.iter().enumerate() {
            let v = self.x[j];
            self.cb[p] = if v < self.lo[j] - self.ftol {
                infeasible = true;
                -1.0
            } else if v > self.up[j] + self.ftol {
                infeasible = true;
                1.0
            } else {
                0.0
            };
        }
        if !infeasible {
            for (p, &j) in self.head.iter().enumerate() {
                self.cb[p] = self.cost[j];
            }
        }
        infeasible
    }

    fn reduced_cost(&self, j: usize, phase1: bool) -> f64 {
        let c = if phase1 { 0.0 } else { self.cost[j] };
        if j < self.n {
            c - self.csc.col(j).map(|(r, v)| v * self.y[r]).sum::<f64>()
        } else {
            c - self.y[j - self.n]
        }
    }

    /// Entering variable and direction (+1 increase, -1 decrease), if any.
    fn price(&self, phase1: bool, bland: bool) -> Option<(usize, f64, f64)> {
        let tol = if phase1 { self.opts.optimality_tol } else { self.otol };
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n + self.m {
            let dir = match self.state[j] {
                VarState::Basic => continue,
                _ if self.lo[j] == self.up[j] => continue,
                VarState::AtLower => {
                    let d = self.reduced_cost(j, phase1);
                    if d < -tol {
                        (1.0, d)
                    } else {
                        continue;
                    }
                }
                VarState::AtUpper => {
                    let d = self.reduced_cost(j, phase1);
                    if d > tol {
                        (-1.0, d)
                    } else {
                        continue;
                    }
                }
                VarState::Zero => {
                    let d = self.reduced_cost(j, phase1);
                    if d.abs() > tol {
                        (-d.signum(), d)
                    } else {
                        continue;
                    }
                }
            };
            if bland {
                return Some((j, dir.0, dir.1));
            }
            if best.map_or(true, |b| dir.1.abs() > b.2.abs()) {
                best = Some((j, dir.0, dir.1));
            }
        }
        best
    }

    /// Harris-style choice among hard blocking positions; returns (theta, step).
    fn hard_block(&self, q: usize, dir: f64, bland: bool) -> Option<(f64, Step)> {
        let mut bound = f64::INFINITY;
        let ratio = |p: usize, tol: f64| -> Option<(f64, bool)> {
            let a = -dir * self.alpha[p];
            if a.abs() <= PIVOT_TOL {
                return None;
            }
            let j = self.head[p];
            let v = self.x[j];
            let below = v < self.lo[j] - self.ftol;
            let above = v > self.up[j] + self.ftol;
            if a < 0.0 {
                // decreasing: blocks at the lower bound unless already below it
                if below || !self.lo[j].is_finite() {
                    return None;
                }
                Some(((v - self.lo[j] + tol).max(0.0) / -a, false))
            } else {
                if above || !self.up[j].is_finite() {
                    return None;
                }
                Some(((self.up[j] - v + tol).max(0.0) / a, true))
            }
        };
        for p in 0..self.m {
            if let Some((t, _)) = ratio(p, self.ftol) {
                bound = bound.min(t);
            }
        }
        let range = self.up[q] - self.lo[q];
        if range.is_finite() && range <= bound {
            return Some((range, Step::Flip));
        }
        if !bound.is_finite() {
            return None;
        }
        let mut chosen: Option<(usize, f64, bool)> = None;
        for p in 0..self.m {
            if let Some((t, to_upper)) = ratio(p, 0.0) {
                if t <= bound {
                    let better = match chosen {
                        None => true,
                        Some((cp, _, _)) if bland => self.head[p] < self.head[cp],
                        Some((cp, _, _)) => self.alpha[p].abs() > self.alpha[cp].abs(),
                    };
                    if better {
                        chosen = Some((p, t, to_upper));
                    }
                }
            }
        }
        chosen.map(|(pos, t, to_upper)| (t, Step::Pivot { pos, to_upper }))
    }

    /// Phase-1 long step: pass breakpoints while the infeasibility keeps decreasing.
    fn phase1_step(&self, q: usize, dir: f64, d: f64, bland: bool) -> Option<(f64, Step)> {
        let hard = self.hard_block(q, dir, bland);
        let limit = hard.as_ref().map_or(f64::INFINITY, |h| h.0);
        let mut points: Vec<(f64, usize, f64, bool)> = Vec::new();
        for p in 0..self.m {
            let a = -dir * self.alpha[p];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let j = self.head[p];
            let v = self.x[j];
            if v < self.lo[j] - self.ftol && a > 0.0 {
                points.push(((self.lo[j] - v) / a, p, a, false));
            } else if v > self.up[j] + self.ftol && a < 0.0 {
                points.push(((v - self.up[j]) / -a, p, -a, true));
            }
        }
        points.retain(|pt| pt.0 <= limit);
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slope = -d.abs();
        for &(t, pos, inc, to_upper) in &points {
            slope += inc;
            if slope >= 0.0 {
                return Some((t, Step::Pivot { pos, to_upper }));
            }
        }
        hard.or_else(|| points.last().map(|&(t, pos, _, to_upper)| (t, Step::Pivot { pos, to_upper })))
    }

    fn apply(&mut self, q: usize, dir: f64, theta: f64, step: Step) {
        let theta = theta.max(0.0);
        if theta > 0.0 {
            self.x[q] += dir * theta;
            for p in 0..self.m {
                let a = self.alpha[p];
                if a != 0.0 {
                    self.x[self.head[p]] -= dir * theta * a;
                }
            }
        }
        match step {
            Step::Flip => {
                if dir > 0.0 {
                    self.state[q] = VarState::AtUpper;
                    self.x[q] = self.up[q];
                } else {
                    self.state[q] = VarState::AtLower;
                    self.x[q] = self.lo[q];
                }
            }
            Step::Pivot { pos, to_upper } => {
                let j = self.head[pos];
                if to_upper {
                    self.state[j] = VarState::AtUpper;
                    self.x[j] = self.up[j];
                } else {
                    self.state[j] = VarState::AtLower;
                    self.x[j] = self.lo[j];
                }
                self.state[q] = VarState::Basic;
                self.head[pos] = q;
                self.factor.push_eta(pos, &self.alpha);
            }
        }
    }

    fn run(&mut self) -> (LpStatus, usize) {
        let budget = self.opts.max_pivots.unwrap_or(50 * (self.m + self.n)).max(1);
        self.refactor();
        self.compute_basics();
        let mut fresh = true;
        let mut iterations = 0;
        let mut degenerate_run = 0;
        loop {
            if iterations >= budget {
                return (LpStatus::IterationLimit, iterations);
            }
            if self.factor.etas.len() >= self.opts.refactor_interval {
                self.refactor();
                self.compute_basics();
                fresh = true;
            }
            let phase1 = self.phase_costs();
            let mut cb = std::mem::take(&mut self.cb);
            let mut y = std::mem::take(&mut self.y);
            self.factor.btran(&self.csc, &mut cb, &mut y);
            self.cb = cb;
            self.y = y;
            let bland = degenerate_run > self.opts.stall_threshold;
            let Some((q, dir, d)) = self.price(phase1, bland) else {
                if !fresh {
                    self.refactor();
                    self.compute_basics();
                    fresh = true;
                    continue;
                }
                let status = if phase1 { LpStatus::Infeasible } else { LpStatus::Optimal };
                return (status, iterations);
            };
            let mut col = std::mem::take(&mut self.col);
            let mut alpha = std::mem::take(&mut self.alpha);
            self.column_into(q, &mut col);
            self.factor.ftran(&self.csc, &col, &mut alpha);
            self.col = col;
            self.alpha = alpha;
            let step = if phase1 { self.phase1_step(q, dir, d, bland) } else { self.hard_block(q, dir, bland) };
            let Some((theta, step)) = step else {
                if !fresh {
                    self.refactor();
                    self.compute_basics();
                    fresh = true;
                    continue;
                }
                let status = if phase1 { LpStatus::IterationLimit } else { LpStatus::Unbounded };
                return (status, iterations);
            };
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.apply(q, dir, theta, step);
            fresh = false;
            iterations += 1;
        }
    }

    fn basis(&self) -> Basis {
        Basis { num_vars: self.n, num_rows: self.m, head: self.head.clone(), state: self.state.clone() }
    }

    fn solution(mut self, status: LpStatus, iterations: usize) -> LpSolution {
        let z = self.x[..self.n].to_vec();
        let objective_value = self.lp.eval_objective(&z);
        let duals = if status == LpStatus::Optimal {
            for (p, &j) in self.head.iter().enumerate() {
                self.cb[p] = self.cost[j];
            }
            let mut cb = std::mem::take(&mut self.cb);
            let mut y = vec![0.0; self.m];
            self.factor.btran(&self.csc, &mut cb, &mut y);
            y
        } else {
            vec![0.0; self.m]
        };
        LpSolution { status, z, objective_value, duals, iterations, basis: Some(self.basis()) }
    }
}

pub(super) fn solve(lp: &LinearProgram, warm: Option<&Basis>, opts: &SolverOptions) -> LpSolution {
    let mut solver = Solver::new(lp, opts);
    if !warm.map_or(false, |b| solver.load_basis(b)) {
        solver.slack_basis();
    }
    let (status, iterations) = solver.run();
    solver.solution(status, iterations)
}
