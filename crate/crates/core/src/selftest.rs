//! Oracle suites that check the numerical building blocks against
//! independent computations: adaptive quadrature, central differences and
//! brute-force vertex enumeration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::DesignGrid;
use crate::lpsolve::{solve_lp, LinearProgram, LpStatus};
use crate::oracle::{central_difference, integrate, vertex_enumeration};
use crate::relax::{
    eval_l, eval_u, eval_v, grad_l, grad_u, grad_v, linearize_l, linearize_u, linearize_v, FeasiblePoint,
};
use crate::specfun::{qbeta, BetaParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error in the suite's own metric.
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, failures: 0, worst: 0.0, first_failure: None }
    }

    fn record(&mut self, err: f64, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(what());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} cases, {} failures, worst {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst
        )
    }
}

fn grid_from(x: Vec<f64>) -> DesignGrid {
    DesignGrid { n: 0, s_n: 0, spacing: 1, x }
}

fn random_knots(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut x = vec![rng.gen_range(-2.0..0.0)];
    for _ in 1..m {
        let next = x[x.len() - 1] + rng.gen_range(0.05..2.0);
        x.push(next);
    }
    x
}

/// Random point with moderate log values and slopes.
fn random_point(rng: &mut ChaCha8Rng, m: usize) -> FeasiblePoint {
    let ell = (0..m).map(|_| rng.gen_range(-4.0..2.0)).collect();
    let g = (0..m - 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
    FeasiblePoint { ell, g }
}

fn log_cosh(y: f64) -> f64 {
    let y = y.abs();
    y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2
}

/// A concave log-density shape and its (super)derivative.
struct Concave {
    kind: u8,
    p: [f64; 2],
    lines: Vec<(f64, f64)>,
    shift: f64,
}

impl Concave {
    /// Random shape whose maximum over `[lo, hi]` is between -2 and 1.
    fn random(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Self {
        let kind = rng.gen_range(0..3);
        let p = [rng.gen_range(0.01..3.0), rng.gen_range(lo..hi)];
        let lines = (0..rng.gen_range(2..6)).map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..1.0))).collect();
        let mut phi = Self { kind, p, lines, shift: 0.0 };
        let peak = (0..=2000).map(|j| phi.value(lo + (hi - lo) * j as f64 / 2000.0)).fold(f64::NEG_INFINITY, f64::max);
        phi.shift = rng.gen_range(-2.0..1.0) - peak;
        phi
    }

    fn value(&self, x: f64) -> f64 {
        self.shift + self.raw(x)
    }

    fn raw(&self, x: f64) -> f64 {
        let [a, c] = self.p;
        match self.kind {
            0 => -a * (x - c) * (x - c),
            1 => self.lines.iter().map(|(s, b)| s * x + b).fold(f64::INFINITY, f64::min),
            _ => -a * log_cosh((x - c) / a),
        }
    }

    fn slope(&self, x: f64) -> f64 {
        let [a, c] = self.p;
        match self.kind {
            0 => -2.0 * a * (x - c),
            // slope of an active line is a supergradient
            1 => self.lines.iter().min_by(|u, v| (u.0 * x + u.1).total_cmp(&(v.0 * x + v.1))).expect("nonempty").0,
            _ => -((x - c) / a).tanh(),
        }
    }
}

/// Chord and tangent integral bounds bracket the quadrature of a concave log-density.
pub fn sandwich_suite(configs: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("integral sandwich (quadrature)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..configs {
        let m = rng.gen_range(4..10);
        let x = random_knots(&mut rng, m);
        let phi = Concave::random(&mut rng, x[0], x[m - 1]);
        let ell: Vec<f64> = x.iter().map(|&t| phi.value(t)).collect();
        let g: Vec<f64> = x[1..m - 1].iter().map(|&t| phi.slope(t)).collect();
        let point = FeasiblePoint { ell, g };
        let grid = grid_from(x.clone());
        for i in 0..m - 1 {
            let truth = integrate(|t| phi.value(t).exp(), x[i], x[i + 1], 1e-13);
            let lower = eval_l(&grid, &point.ell, i);
            let upper = eval_u(&grid, &point, i).min(eval_v(&grid, &point, i));
            let err = (lower - truth).max(truth - upper).max(0.0);
            rep.record(err, err <= 1e-9, || format!("config {c} segment {i}: {lower} <= {truth} <= {upper}"));
        }
    }
    rep
}

/// Analytic gradients of the integral bounds against central differences with step `1e-6`.
pub fn gradient_suite(points: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("gradients vs central differences");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 6;
    for c in 0..points {
        let grid = grid_from(random_knots(&mut rng, m));
        let p = random_point(&mut rng, m);
        let i = rng.gen_range(0..m - 1);
        let z0 = p.to_vector();
        type Bound<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;
        let cases: [(&str, Vec<(usize, f64)>, Bound); 3] = [
            ("U", grad_u(&grid, &p, i), Box::new(|z: &[f64]| eval_u(&grid, &FeasiblePoint::from_vector(m, z), i))),
            ("V", grad_v(&grid, &p, i), Box::new(|z: &[f64]| eval_v(&grid, &FeasiblePoint::from_vector(m, z), i))),
            ("L", grad_l(&grid, &p.ell, i), Box::new(|z: &[f64]| eval_l(&grid, &z[..m], i))),
        ];
        for (name, grad, f) in &cases {
            for col in 0..z0.len() {
                let fd = central_difference(
                    |t| {
                        let mut z = z0.clone();
                        z[col] = t;
                        f(&z)
                    },
                    z0[col],
                    1e-6,
                );
                let an: f64 = grad.iter().filter(|e| e.0 == col).map(|e| e.1).sum();
                let err = if an == 0.0 { fd.abs() } else { (fd - an).abs() / an.abs() };
                rep.record(err, err <= 1e-6, || format!("point {c} {name}_{i} column {col}: fd {fd} analytic {an}"));
            }
        }
    }
    rep
}

/// First-order expansions never exceed the bounds they linearize.
pub fn tangent_suite(probes: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("tangent planes underestimate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 6;
    for c in 0..probes {
        let grid = grid_from(random_knots(&mut rng, m));
        let p = random_point(&mut rng, m);
        let q = random_point(&mut rng, m);
        let i = rng.gen_range(0..m - 1);
        let zq = q.to_vector();
        let slacks = [
            ("U", eval_u(&grid, &q, i) - linearize_u(&grid, &p, i).eval(&zq)),
            ("V", eval_v(&grid, &q, i) - linearize_v(&grid, &p, i).eval(&zq)),
            ("L", eval_l(&grid, &q.ell, i) - linearize_l(&grid, &p.ell, i).eval(&q.ell)),
        ];
        for (name, slack) in slacks {
            let err = (-slack).max(0.0);
            rep.record(err, slack >= -1e-12, || format!("probe {c} {name}_{i}: slack {slack}"));
        }
    }
    rep
}

/// Random LP over `z >= 0` with a budget row, so it is bounded; negative
/// right-hand sides make some instances infeasible.
fn random_bounded_lp(rng: &mut ChaCha8Rng, n: usize, rows: usize) -> LinearProgram {
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("finite");
    lp.add_row(&vec![1.0; n], rng.gen_range(1.0..5.0)).expect("sized");
    for _ in 0..rows {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        lp.add_row(&row, rng.gen_range(-0.5..1.0)).expect("sized");
    }
    for j in 0..n {
        lp.set_nonneg(j);
    }
    lp
}

/// Simplex optimum against brute-force vertex enumeration, plus constructed
/// infeasible and unbounded programs.
pub fn lp_oracle_suite(count: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("LP vs vertex enumeration");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    for c in 0..count {
        let lp = random_bounded_lp(&mut rng, n, 6);
        let sol = solve_lp(&lp);
        match vertex_enumeration(&lp, 1e-9) {
            Some((best, _)) => {
                let err =
                    if sol.status == LpStatus::Optimal { (sol.objective_value - best).abs() } else { f64::INFINITY };
                rep.record(err, err <= 1e-6, || format!("lp {c}: {:?} {} vs {best}", sol.status, sol.objective_value));
            }
            None => {
                let ok = sol.status == LpStatus::Infeasible;
                rep.record(0.0, ok, || format!("lp {c}: oracle infeasible, solver {:?}", sol.status));
            }
        }
    }
    for c in 0..count.div_ceil(10) {
        // z_0 >= 1 + t and z_0 <= t cannot both hold
        let mut lp = random_bounded_lp(&mut rng, n, 3);
        let t = rng.gen_range(0.0..1.0);
        let mut row = vec![0.0; n];
        row[0] = -1.0;
        lp.add_row(&row, -1.0 - t).expect("sized");
        row[0] = 1.0;
        lp.add_row(&row, t).expect("sized");
        let s = solve_lp(&lp).status;
        rep.record(0.0, s == LpStatus::Infeasible, || format!("constructed infeasible {c}: {s:?}"));
        // a free direction with negative cost
        let mut lp = LinearProgram::new((0..n).map(|j| if j == 0 { -1.0 } else { rng.gen_range(0.0..1.0) }).collect())
            .expect("finite");
        let row: Vec<f64> = (0..n).map(|j| if j == 0 { -1.0 } else { rng.gen_range(-1.0..1.0) }).collect();
        lp.add_row(&row, 1.0).expect("sized");
        for j in 0..n {
            lp.set_nonneg(j);
        }
        let s = solve_lp(&lp).status;
        rep.record(0.0, s == LpStatus::Unbounded, || format!("constructed unbounded {c}: {s:?}"));
    }
    rep
}

/// Deviation of upper and lower beta quantiles from the mean, against the Bernstein-type bound.
pub fn quantile_bound_suite(count: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("beta quantile deviation bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..count {
        let n: usize = if rng.gen_bool(0.5) { rng.gen_range(2..200) } else { rng.gen_range(200..20_000) };
        let k = rng.gen_range(1..=n);
        let alpha = if rng.gen_bool(0.5) { rng.gen_range(1e-6..1.0) } else { 10f64.powf(-rng.gen_range(0.0..8.0)) };
        let n1 = (n + 1) as f64;
        let p = k as f64 / n1;
        let log_inv = (1.0 / alpha).ln();
        let bound = (p * (1.0 - p) / n1).sqrt() * (2.0 * log_inv).sqrt() + log_inv / n1;
        let params = BetaParams::new(k as f64, n1 - k as f64).expect("positive shapes");
        let (upper, lower) = match (qbeta(1.0 - alpha, params), qbeta(alpha, params)) {
            (Ok(u), Ok(l)) => (u, l),
            _ => {
                rep.record(f64::INFINITY, false, || format!("case {c}: qbeta failed for n {n} k {k} alpha {alpha}"));
                continue;
            }
        };
        let excess = (upper - p - bound).max(p - lower - bound);
        rep.record(excess.max(0.0), excess <= 0.0, || {
            format!("case {c}: n {n} k {k} alpha {alpha}: quantiles [{lower}, {upper}] around {p}, bound {bound}")
        });
    }
    rep
}

/// Every suite at the sizes used by the `selftest` command.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        sandwich_suite(200, seed),
        gradient_suite(200, seed),
        tangent_suite(1000, seed),
        lp_oracle_suite(40, seed),
        quantile_bound_suite(1000, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_small_sizes() {
        for rep in [
            sandwich_suite(50, 1),
            gradient_suite(50, 1),
            tangent_suite(200, 1),
            lp_oracle_suite(10, 1),
            quantile_bound_suite(200, 1),
        ] {
            assert!(rep.passed(), "{} {:?}", rep.line(), rep.first_failure);
        }
    }

    #[test]
    fn report_line_format() {
        let mut r = SuiteReport::new("x");
        r.record(0.5, false, || "bad".into());
        assert!(!r.passed());
        assert_eq!(r.first_failure.as_deref(), Some("bad"));
        assert!(r.line().starts_with("FAIL x: 1 cases, 1 failures"));
    }
}
