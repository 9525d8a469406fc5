//! Penalty convex-concave procedure for the pointwise bounds on the log-density.
//!
//! For a design index `t` the lower (upper) confidence value is the minimum
//! (maximum) of `ell_t` over the relaxed confidence set. The lower-mass
//! constraints are concave in the unknowns, so each iteration replaces `U_i`
//! and `V_i` by tangent planes at the current iterate, softens the resulting
//! rows with penalized slacks and solves a linear program.
//!
//! All subproblems are solved in standardized coordinates, with the knots
//! mapped affinely onto `[0, 1]`. Masses are unchanged by that map, log
//! densities shift by `ln(x_{m-1} - x_0)` and slopes scale by the same factor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DesignGrid, IntervalSystem};
use crate::error::{Error, Result};
use crate::lpsolve::{solve_lp_with, Basis, LinearProgram, LpStatus, SolverOptions};
use crate::relax::{
    check_feasible, eval_l, linearize_l, linearize_u, linearize_v, AffineFunction, FeasiblePoint, VarLayout,
};

/// Feasibility tolerance for declaring a CCP run converged.
pub const CONVERGED_FEASIBILITY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Concave majorant of a spacing-based histogram estimate.
    Data,
    /// Concave majorant of i.i.d. standard normal log values.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpConfig {
    pub tau0: f64,
    pub kappa: f64,
    pub tau_max: f64,
    pub k_max: usize,
    pub slack_tol: f64,
    pub obj_tol: f64,
    pub init: InitStrategy,
    pub seed: u64,
    /// Keep the upper-mass rows exact through tangent cuts instead of a single linearization.
    pub exact_up: bool,
    /// Per-iteration step limit on each log-density value, in log units.
    pub trust_radius: f64,
    /// Standardized log-densities are confined to `[-log_box, log_box]`.
    pub log_box: f64,
}

impl Default for CcpConfig {
    fn default() -> Self {
        Self {
            tau0: 10.0,
            kappa: 2.0,
            tau_max: 1e4,
            k_max: 50,
            slack_tol: 1e-6,
            obj_tol: 1e-7,
            init: InitStrategy::Data,
            seed: 0,
            exact_up: false,
            trust_radius: 2.0,
            log_box: 40.0,
        }
    }
}

impl CcpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return bad("tau0 must be positive");
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return bad("kappa must exceed 1");
        }
        if !(self.tau_max > self.tau0 && self.tau_max.is_finite()) {
            return bad("tau_max must exceed tau0");
        }
        if self.k_max == 0 {
            return bad("k_max must be positive");
        }
        if !(self.slack_tol > 0.0 && self.obj_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        // a radius of at least one keeps every subproblem feasible
        if !(self.trust_radius >= 1.0 && self.log_box > self.trust_radius) {
            return bad("trust_radius must be at least 1 and below log_box");
        }
        Ok(())
    }

    /// Penalty used at iteration `k`.
    pub fn tau(&self, k: usize) -> f64 {
        (self.tau0 * self.kappa.powi(k as i32)).min(self.tau_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointStatus {
    Converged,
    /// Feasible at the iteration cap, but the criterion was still moving.
    IterationLimit,
    /// Slack above tolerance at the iteration cap.
    NotConverged,
    LpFailure,
    /// The value is infinite: an endpoint minimum, or the log box was reached.
    Unbounded,
}

impl PointStatus {
    /// Whether the value can be used as reported.
    pub fn is_usable(self) -> bool {
        matches!(self, PointStatus::Converged | PointStatus::IterationLimit | PointStatus::Unbounded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub t: usize,
    pub sense: Sense,
    pub iterations: usize,
    pub slack: f64,
    pub status: PointStatus,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    /// `ell_t` in the data's log-density units; infinite when unbounded or unusable.
    pub value: f64,
    pub diagnostics: PointDiagnostics,
    /// Penalized criterion after each iteration, oriented for minimization.
    pub history: Vec<f64>,
    /// Final iterate in the data's units, when one exists.
    pub point: Option<FeasiblePoint>,
}

/// Knots mapped onto `[0, 1]` and the log-density shift that goes with them.
#[derive(Debug, Clone)]
struct Standardized {
    grid: DesignGrid,
    log_scale: f64,
}

impl Standardized {
    fn new(grid: &DesignGrid) -> Self {
        let x0 = grid.x[0];
        let scale = grid.x[grid.m() - 1] - x0;
        let x = grid.x.iter().map(|&v| (v - x0) / scale).collect();
        Self { grid: grid.with_knots(x), log_scale: scale.ln() }
    }

    fn to_data(&self, p: &FeasiblePoint) -> FeasiblePoint {
        let scale = self.log_scale.exp();
        FeasiblePoint {
            ell: p.ell.iter().map(|v| v - self.log_scale).collect(),
            g: p.g.iter().map(|v| v / scale).collect(),
        }
    }
}

fn slack_column(m: usize, pair: usize) -> usize {
    2 * m - 2 + pair
}

/// Appends `sum(terms) >= c - s` for slack column `s_col`, written as `<=`.
fn add_lower_mass_row(lp: &mut LinearProgram, terms: &AffineFunction, c: f64, s_col: usize) -> Result<()> {
    let mut entries: Vec<(usize, f64)> = terms.coeffs.iter().map(|&(j, a)| (j, -a)).collect();
    entries.push((s_col, -1.0));
    lp.add_sparse_row(entries, terms.constant - c)
}

fn upper_mass_row(grid: &DesignGrid, ell: &[f64], j: usize, k: usize) -> AffineFunction {
    let mut sum = AffineFunction::default();
    for i in j..k {
        sum.accumulate(&linearize_l(grid, ell, i));
    }
    sum
}

/// Convexified subproblem at `point`: variables `(ell, g, s)`, one slack per interval pair.
///
/// The objective is `±ell_t + tau * Σ s_{jk} / c_B`; weighting each slack by
/// the inverse of its block's lower quantile makes the penalty dimensionless.
pub fn build_subproblem(
    grid: &DesignGrid,
    system: &IntervalSystem,
    point: &FeasiblePoint,
    t: usize,
    sense: Sense,
    tau: f64,
) -> Result<LinearProgram> {
    let m = grid.m();
    if point.m() != m || point.g.len() + 2 != m {
        return Err(Error::DimensionMismatch(format!("point has {} values for {m} knots", point.m())));
    }
    if t >= m {
        return Err(Error::IndexOutOfRange { index: t, m });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("penalty must be positive, got {tau}")));
    }
    let layout = VarLayout::new(m);
    let pairs: Vec<(usize, usize, f64, f64)> = system.iter_pairs().collect();
    let num_vars = layout.num_vars() + pairs.len();
    let mut objective = vec![0.0; num_vars];
    objective[layout.ell(t)] = match sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    for (p, &(_, _, c, _)) in pairs.iter().enumerate() {
        objective[slack_column(m, p)] = tau / c;
    }
    let mut lp = LinearProgram::new(objective)?;
    let x = &grid.x;
    for i in 1..m - 1 {
        for j in [i - 1, i + 1] {
            let entries = vec![(layout.ell(j), 1.0), (layout.ell(i), -1.0), (layout.slope(i), -(x[j] - x[i]))];
            lp.add_sparse_row(entries, 0.0)?;
        }
    }
    for &(j, k, _, d) in &pairs {
        let row = upper_mass_row(grid, &point.ell, j, k);
        lp.add_sparse_row(row.coeffs, d - row.constant)?;
    }
    let u: Vec<AffineFunction> = (0..m - 1).map(|i| linearize_u(grid, point, i)).collect();
    let v: Vec<AffineFunction> = (0..m - 1).map(|i| linearize_v(grid, point, i)).collect();
    for (p, &(j, k, c, _)) in pairs.iter().enumerate() {
        for tangents in [&u, &v] {
            let mut sum = AffineFunction::default();
            for f in &tangents[j..k] {
                sum.accumulate(f);
            }
            add_lower_mass_row(&mut lp, &sum, c, slack_column(m, p))?;
        }
    }
    for p in 0..pairs.len() {
        lp.set_nonneg(slack_column(m, p));
    }
    Ok(lp)
}

/// Bounds each log value and slope to a neighbourhood of `point` inside the log box.
fn restrict_step(
    lp: &mut LinearProgram,
    grid: &DesignGrid,
    point: &FeasiblePoint,
    radius: f64,
    log_box: f64,
) -> Result<()> {
    let m = grid.m();
    let layout = VarLayout::new(m);
    for i in 0..m {
        let e = point.ell[i].clamp(-log_box, log_box);
        lp.set_bounds(layout.ell(i), (e - radius).max(-log_box), (e + radius).min(log_box))?;
    }
    for i in 1..m - 1 {
        let width = (grid.x[i] - grid.x[i - 1]).max(grid.x[i + 1] - grid.x[i]);
        let g = point.slope(i);
        lp.set_bounds(layout.slope(i), g - radius / width, g + radius / width)?;
    }
    Ok(())
}

/// Least concave majorant of `(x_i, y_i)` evaluated at the knots, with mid-chord slopes.
pub fn concave_majorant(x: &[f64], y: &[f64]) -> FeasiblePoint {
    let m = x.len();
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b when it lies on or below the chord from a to i
            if (y[b] - y[a]) * (x[i] - x[a]) <= (y[i] - y[a]) * (x[b] - x[a]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut ell = vec![0.0; m];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (y[b] - y[a]) / (x[b] - x[a]);
        for i in a..=b {
            ell[i] = y[a] + slope * (x[i] - x[a]);
        }
    }
    let g = (1..m - 1)
        .map(|i| {
            let left = (ell[i] - ell[i - 1]) / (x[i] - x[i - 1]);
            let right = (ell[i + 1] - ell[i]) / (x[i + 1] - x[i]);
            0.5 * (left + right)
        })
        .collect();
    FeasiblePoint { ell, g }
}

fn sense_stream(t: usize, sense: Sense) -> u64 {
    2 * t as u64 + matches!(sense, Sense::Max) as u64
}

/// Starting point in standardized coordinates.
fn initial_point(grid: &DesignGrid, std: &Standardized, cfg: &CcpConfig, t: usize, sense: Sense) -> FeasiblePoint {
    let m = grid.m();
    let y: Vec<f64> = match cfg.init {
        InitStrategy::Data => {
            let x = &grid.x;
            (0..m)
                .map(|i| {
                    let h = if i == 0 {
                        x[1] - x[0]
                    } else if i == m - 1 {
                        x[m - 1] - x[m - 2]
                    } else {
                        0.5 * (x[i + 1] - x[i - 1])
                    };
                    let v = (grid.spacing as f64 / (grid.n as f64 * h)).ln().clamp(-30.0, 30.0);
                    v + std.log_scale
                })
                .collect()
        }
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(sense_stream(t, sense));
            (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let y: Vec<f64> = y.iter().map(|v| v.clamp(-cfg.log_box + 1.0, cfg.log_box - 1.0)).collect();
    concave_majorant(&std.grid.x, &y)
}

/// Largest excess of the exact upper-mass sums over their bounds, per pair.
fn upper_mass_excess(grid: &DesignGrid, system: &IntervalSystem, ell: &[f64]) -> Vec<f64> {
    let l: Vec<f64> = (0..grid.m() - 1).map(|i| eval_l(grid, ell, i)).collect();
    system.iter_pairs().map(|(j, k, _, d)| l[j..k].iter().sum::<f64>() - d).collect()
}

struct Subsolve {
    z: Vec<f64>,
    basis: Option<Basis>,
    pivots: usize,
}

/// Solves the subproblem, adding tangent cuts on the upper-mass rows when `exact_up` is set.
fn solve_subproblem(
    mut lp: LinearProgram,
    grid: &DesignGrid,
    system: &IntervalSystem,
    warm: Option<&Basis>,
    exact_up: bool,
    opts: &SolverOptions,
) -> std::result::Result<Subsolve, LpStatus> {
    let m = grid.m();
    let base_rows = lp.num_rows();
    let mut pivots = 0;
    let mut basis = warm.cloned();
    let mut first_basis = None;
    for _round in 0..60 {
        let mut sol = solve_lp_with(&lp, basis.as_ref(), opts);
        pivots += sol.iterations;
        if sol.status != LpStatus::Optimal && basis.is_some() {
            sol = solve_lp_with(&lp, None, opts);
            pivots += sol.iterations;
        }
        if sol.status != LpStatus::Optimal {
            return Err(sol.status);
        }
        if first_basis.is_none() {
            first_basis = sol.basis.clone();
        }
        if !exact_up {
            return Ok(Subsolve { z: sol.z, basis: sol.basis, pivots });
        }
        let ell = &sol.z[..m];
        let excess = upper_mass_excess(grid, system, ell);
        // cut rows are only met to the solver's feasibility tolerance
        let pairs: Vec<(usize, usize, f64, f64)> = system.iter_pairs().collect();
        let violated: Vec<usize> =
            (0..excess.len()).filter(|&p| excess[p] > 10.0 * opts.feasibility_tol * (1.0 + pairs[p].3)).collect();
        if violated.is_empty() {
            return Ok(Subsolve { z: sol.z, basis: first_basis, pivots });
        }
        for &p in &violated {
            let (j, k, _, d) = pairs[p];
            let row = upper_mass_row(grid, ell, j, k);
            lp.add_sparse_row(row.coeffs, d - row.constant).map_err(|_| LpStatus::Infeasible)?;
        }
        basis = sol.basis.map(|b| b.with_extra_rows(violated.len()));
        debug_assert!(lp.num_rows() > base_rows);
    }
    Err(LpStatus::IterationLimit)
}

fn unusable_value(sense: Sense) -> f64 {
    match sense {
        Sense::Min => f64::NEG_INFINITY,
        Sense::Max => f64::INFINITY,
    }
}

/// Runs the penalty convex-concave procedure for `ell_t` in the given sense.
pub fn run_ccp_point(
    grid: &DesignGrid,
    system: &IntervalSystem,
    t: usize,
    sense: Sense,
    cfg: &CcpConfig,
) -> Result<PointResult> {
    run_ccp_point_from(grid, system, t, sense, cfg, None)
}

/// Basis for the first subproblem of every point: the middle knot's upper problem at the data start.
pub fn shared_start_basis(grid: &DesignGrid, system: &IntervalSystem, cfg: &CcpConfig) -> Result<Option<Basis>> {
    cfg.validate()?;
    if grid.m() < 3 {
        return Err(Error::TooFewKnots { needed: 3, got: grid.m() });
    }
    let std = Standardized::new(grid);
    let data_cfg = CcpConfig { init: InitStrategy::Data, ..cfg.clone() };
    let t = grid.m() / 2;
    let point = initial_point(grid, &std, &data_cfg, t, Sense::Max);
    let mut lp = build_subproblem(&std.grid, system, &point, t, Sense::Max, cfg.tau0)?;
    restrict_step(&mut lp, &std.grid, &point, cfg.trust_radius, cfg.log_box)?;
    let sol = solve_lp_with(&lp, None, &SolverOptions::default());
    Ok(if sol.status == LpStatus::Optimal { sol.basis } else { None })
}

/// As [`run_ccp_point`], warm-starting the first subproblem from `start`.
pub fn run_ccp_point_from(
    grid: &DesignGrid,
    system: &IntervalSystem,
    t: usize,
    sense: Sense,
    cfg: &CcpConfig,
    start: Option<&Basis>,
) -> Result<PointResult> {
    cfg.validate()?;
    let m = grid.m();
    if m < 3 {
        return Err(Error::TooFewKnots { needed: 3, got: m });
    }
    if t >= m {
        return Err(Error::IndexOutOfRange { index: t, m });
    }
    let mut diagnostics =
        PointDiagnostics { t, sense, iterations: 0, slack: 0.0, status: PointStatus::Unbounded, pivots: 0 };
    // end values only ever appear in upper-bounding constraints
    if sense == Sense::Min && (t == 0 || t == m - 1) {
        return Ok(PointResult { value: f64::NEG_INFINITY, diagnostics, history: Vec::new(), point: None });
    }
    let std = Standardized::new(grid);
    let sgrid = &std.grid;
    let weights: Vec<f64> = system.iter_pairs().map(|(_, _, c, _)| 1.0 / c).collect();
    let opts = SolverOptions::default();
    let mut point = initial_point(grid, &std, cfg, t, sense);
    let mut basis: Option<Basis> = start.cloned();
    let mut history = Vec::new();
    let mut prev_value = f64::NAN;
    let mut status = PointStatus::NotConverged;
    let mut slack = f64::INFINITY;
    for k in 0..cfg.k_max {
        let tau = cfg.tau(k);
        let mut lp = build_subproblem(sgrid, system, &point, t, sense, tau)?;
        restrict_step(&mut lp, sgrid, &point, cfg.trust_radius, cfg.log_box)?;
        diagnostics.iterations = k + 1;
        let solved = match solve_subproblem(lp, sgrid, system, basis.as_ref(), cfg.exact_up, &opts) {
            Ok(s) => s,
            Err(_) => {
                status = PointStatus::LpFailure;
                break;
            }
        };
        diagnostics.pivots += solved.pivots;
        basis = solved.basis;
        let z = &solved.z;
        let s = &z[2 * m - 2..];
        slack = s.iter().map(|v| v.max(0.0)).sum();
        let value = z[t];
        let signed = if sense == Sense::Min { value } else { -value };
        let penalty: f64 = s.iter().zip(&weights).map(|(v, w)| v.max(0.0) * w).sum();
        history.push(signed + tau * penalty);
        point = FeasiblePoint::from_vector(m, z);
        let settled = (value - prev_value).abs() <= cfg.obj_tol;
        prev_value = value;
        if slack <= cfg.slack_tol && settled {
            let report = check_feasible(sgrid, system, &point, CONVERGED_FEASIBILITY_TOL)?;
            if report.feasible {
                status = PointStatus::Converged;
                break;
            }
        }
    }
    if status == PointStatus::NotConverged && slack <= cfg.slack_tol {
        let report = check_feasible(sgrid, system, &point, CONVERGED_FEASIBILITY_TOL)?;
        if report.feasible {
            status = PointStatus::IterationLimit;
        }
    }
    diagnostics.slack = slack;
    let mut value = point.ell[t] - std.log_scale;
    if status == PointStatus::LpFailure || status == PointStatus::NotConverged {
        value = unusable_value(sense);
    } else if point.ell[t].abs() >= cfg.log_box - 1e-6 {
        status = PointStatus::Unbounded;
        value = unusable_value(sense);
    }
    diagnostics.status = status;
    let point = (status != PointStatus::LpFailure).then(|| std.to_data(&point));
    Ok(PointResult { value, diagnostics, history, point })
}

/// Pointwise log-density bounds at a subset of design indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseIntervals {
    pub indices: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub lower_diagnostics: Vec<PointDiagnostics>,
    pub upper_diagnostics: Vec<PointDiagnostics>,
}

impl PointwiseIntervals {
    pub fn all_usable(&self) -> bool {
        self.lower_diagnostics.iter().chain(&self.upper_diagnostics).all(|d| d.status.is_usable())
    }

    pub fn num_unusable(&self) -> usize {
        self.lower_diagnostics.iter().chain(&self.upper_diagnostics).filter(|d| !d.status.is_usable()).count()
    }
}

/// `ceil(frac * m)` indices (at least four, at most `m`) spread evenly, both ends included.
pub fn choose_subset(m: usize, frac: f64) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::InvalidConfig(format!("subset fraction must lie in (0, 1], got {frac}")));
    }
    if m < 2 {
        return Err(Error::TooFewKnots { needed: 2, got: m });
    }
    let p = ((frac * m as f64).ceil() as usize).clamp(4.min(m), m);
    let mut out: Vec<usize> = (0..p).map(|i| ((i * (m - 1)) as f64 / (p - 1) as f64).round() as usize).collect();
    out.dedup();
    Ok(out)
}

/// Runs both senses at every index in `subset`; tasks run on the current rayon pool.
pub fn pointwise_intervals(
    grid: &DesignGrid,
    system: &IntervalSystem,
    cfg: &CcpConfig,
    subset: &[usize],
) -> Result<PointwiseIntervals> {
    cfg.validate()?;
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let m = grid.m();
    if let Some(&bad) = subset.iter().find(|&&t| t >= m) {
        return Err(Error::IndexOutOfRange { index: bad, m });
    }
    if subset.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("subset must be strictly increasing".into()));
    }
    let start = shared_start_basis(grid, system, cfg)?;
    let tasks: Vec<(usize, Sense)> = subset.iter().flat_map(|&t| [(t, Sense::Min), (t, Sense::Max)]).collect();
    let results: Vec<Result<PointResult>> =
        tasks.par_iter().map(|&(t, sense)| run_ccp_point_from(grid, system, t, sense, cfg, start.as_ref())).collect();
    let mut out = PointwiseIntervals {
        indices: subset.to_vec(),
        lo: Vec::with_capacity(subset.len()),
        hi: Vec::with_capacity(subset.len()),
        lower_diagnostics: Vec::with_capacity(subset.len()),
        upper_diagnostics: Vec::with_capacity(subset.len()),
    };
    let mut iter = results.into_iter();
    while let (Some(lo), Some(hi)) = (iter.next(), iter.next()) {
        let (lo, hi) = (lo?, hi?);
        // two local solutions can cross; widen to keep the interval ordered
        out.lo.push(lo.value.min(hi.value));
        out.hi.push(hi.value.max(lo.value));
        out.lower_diagnostics.push(lo.diagnostics);
        out.upper_diagnostics.push(hi.diagnostics);
    }
    Ok(out)
}
