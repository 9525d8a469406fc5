//! Finite-dimensional relaxation of the confidence set under log-concavity.
//!
//! For consecutive design points the integral of `f = exp(phi)` over
//! `(x_i, x_{i+1})` is bounded below by the chord integral `L_i` and above by
//! the tangent integrals `U_i`, `V_i`. All three are smooth convex functions of
//! the log-density values `ell` and interior slopes `g`.
//!
//! Variables are laid out as one flat vector `(ell_0, ..., ell_{m-1},
//! g_1, ..., g_{m-2})`; see [`VarLayout`]. Interval index `i` refers to the
//! segment `[x_i, x_{i+1}]`, `0 <= i < m - 1`.

use serde::{Deserialize, Serialize};

use crate::design::{DesignGrid, IntervalSystem};
use crate::error::{Error, Result};
use crate::specfun::{scaled_exp_mean, scaled_exp_mean_deriv};

/// Feasibility tolerance used when auditing points, in constraint units.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-7;

/// Flat variable ordering shared by every module that builds constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    m: usize,
}

impl VarLayout {
    pub fn new(m: usize) -> Self {
        assert!(m >= 3, "need at least three design points, got {m}");
        Self { m }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn ell(&self, i: usize) -> usize {
        debug_assert!(i < self.m);
        i
    }

    /// Column of the slope at interior knot `i` (`1 <= i <= m - 2`).
    #[inline]
    pub fn slope(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i + 1 < self.m);
        self.m + i - 1
    }

    pub fn num_vars(&self) -> usize {
        2 * self.m - 2
    }
}

/// Candidate log-density values and supporting slopes at the design points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasiblePoint {
    pub ell: Vec<f64>,
    /// Slopes at interior knots; `g[k]` belongs to knot `k + 1`.
    pub g: Vec<f64>,
}

impl FeasiblePoint {
    pub fn new(ell: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if ell.len() < 3 || g.len() + 2 != ell.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} log-density values need {} interior slopes, got {}",
                ell.len(),
                ell.len().saturating_sub(2),
                g.len()
            )));
        }
        if ell.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("feasible point entries must be finite".into()));
        }
        Ok(Self { ell, g })
    }

    pub fn m(&self) -> usize {
        self.ell.len()
    }

    /// Slope at interior knot `i`.
    #[inline]
    pub fn slope(&self, i: usize) -> f64 {
        self.g[i - 1]
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut z = self.ell.clone();
        z.extend_from_slice(&self.g);
        z
    }

    pub fn from_vector(m: usize, z: &[f64]) -> Self {
        Self { ell: z[..m].to_vec(), g: z[m..2 * m - 2].to_vec() }
    }
}

/// `constant + sum coeff * z[index]` over the flat variable vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineFunction {
    pub constant: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl AffineFunction {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(j, a)| a * z[j]).sum::<f64>()
    }

    /// Adds `other` into `self`, merging repeated columns.
    pub fn accumulate(&mut self, other: &AffineFunction) {
        self.constant += other.constant;
        for &(j, a) in &other.coeffs {
            match self.coeffs.iter_mut().find(|(k, _)| *k == j) {
                Some(entry) => entry.1 += a,
                None => self.coeffs.push((j, a)),
            }
        }
    }
}

/// Which design point a tangent bound is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Tangent at `x_i`, extrapolated to the right.
    Left,
    /// Tangent at `x_{i+1}`, extrapolated to the left.
    Right,
}

/// Anchor used by `U_i`: the left tangent only on the last segment.
pub fn u_anchor(m: usize, i: usize) -> Anchor {
    if i + 2 == m {
        Anchor::Left
    } else {
        Anchor::Right
    }
}

/// Anchor used by `V_i`: the right tangent only on the first segment.
pub fn v_anchor(_m: usize, i: usize) -> Anchor {
    if i == 0 {
        Anchor::Right
    } else {
        Anchor::Left
    }
}

fn check_segment(m: usize, i: usize) {
    assert!(i + 1 < m, "segment index {i} out of range for {m} knots");
}

/// Value of a tangent bound and its partials `(d/d ell_anchor, d/d g_anchor)`.
fn tangent_bound(x: &[f64], point: &FeasiblePoint, i: usize, anchor: Anchor) -> (usize, f64, f64, f64) {
    let dx = x[i + 1] - x[i];
    let (a, sign) = match anchor {
        Anchor::Left => (i, 1.0),
        Anchor::Right => (i + 1, -1.0),
    };
    let ell = point.ell[a];
    let s = sign * point.slope(a) * dx;
    let value = dx * scaled_exp_mean(ell, s);
    let d_slope = sign * dx * dx * scaled_exp_mean_deriv(ell, s);
    (a, value, value, d_slope)
}

/// Chord integral `L_i = (x_{i+1} - x_i) exp(ell_i) E(ell_{i+1} - ell_i)`.
pub fn eval_l(grid: &DesignGrid, ell: &[f64], i: usize) -> f64 {
    check_segment(grid.m(), i);
    let dx = grid.x[i + 1] - grid.x[i];
    dx * scaled_exp_mean(ell[i], ell[i + 1] - ell[i])
}

pub fn eval_u(grid: &DesignGrid, point: &FeasiblePoint, i: usize) -> f64 {
    check_segment(grid.m(), i);
    tangent_bound(&grid.x, point, i, u_anchor(grid.m(), i)).1
}

pub fn eval_v(grid: &DesignGrid, point: &FeasiblePoint, i: usize) -> f64 {
    check_segment(grid.m(), i);
    tangent_bound(&grid.x, point, i, v_anchor(grid.m(), i)).1
}

fn tangent_gradient(grid: &DesignGrid, point: &FeasiblePoint, i: usize, anchor: Anchor) -> Vec<(usize, f64)> {
    let layout = VarLayout::new(grid.m());
    let (a, _, d_ell, d_slope) = tangent_bound(&grid.x, point, i, anchor);
    vec![(layout.ell(a), d_ell), (layout.slope(a), d_slope)]
}

/// Sparse gradient of `U_i` over the flat variable vector.
pub fn grad_u(grid: &DesignGrid, point: &FeasiblePoint, i: usize) -> Vec<(usize, f64)> {
    check_segment(grid.m(), i);
    tangent_gradient(grid, point, i, u_anchor(grid.m(), i))
}

/// Sparse gradient of `V_i` over the flat variable vector.
pub fn grad_v(grid: &DesignGrid, point: &FeasiblePoint, i: usize) -> Vec<(usize, f64)> {
    check_segment(grid.m(), i);
    tangent_gradient(grid, point, i, v_anchor(grid.m(), i))
}

/// Sparse gradient of `L_i`; only `ell_i` and `ell_{i+1}` participate.
pub fn grad_l(grid: &DesignGrid, ell: &[f64], i: usize) -> Vec<(usize, f64)> {
    check_segment(grid.m(), i);
    let dx = grid.x[i + 1] - grid.x[i];
    let s = ell[i + 1] - ell[i];
    let e = scaled_exp_mean(ell[i], s);
    let de = scaled_exp_mean_deriv(ell[i], s);
    vec![(i, dx * (e - de)), (i + 1, dx * de)]
}

fn tangent_plane(value: f64, grad: Vec<(usize, f64)>, z0: &[f64]) -> AffineFunction {
    let constant = value - grad.iter().map(|&(j, a)| a * z0[j]).sum::<f64>();
    AffineFunction { constant, coeffs: grad }
}

/// First-order expansion of `U_i` at `point0`; underestimates `U_i` everywhere.
pub fn linearize_u(grid: &DesignGrid, point0: &FeasiblePoint, i: usize) -> AffineFunction {
    let z0 = point0.to_vector();
    tangent_plane(eval_u(grid, point0, i), grad_u(grid, point0, i), &z0)
}

/// First-order expansion of `V_i` at `point0`; underestimates `V_i` everywhere.
pub fn linearize_v(grid: &DesignGrid, point0: &FeasiblePoint, i: usize) -> AffineFunction {
    let z0 = point0.to_vector();
    tangent_plane(eval_v(grid, point0, i), grad_v(grid, point0, i), &z0)
}

/// First-order expansion of `L_i` at `ell0`; underestimates `L_i` everywhere.
pub fn linearize_l(grid: &DesignGrid, ell0: &[f64], i: usize) -> AffineFunction {
    tangent_plane(eval_l(grid, ell0, i), grad_l(grid, ell0, i), ell0)
}

/// Largest positive violation of each constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub conc_violation: f64,
    pub up_violation: f64,
    pub down1_violation: f64,
    pub down2_violation: f64,
    pub feasible: bool,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.conc_violation.max(self.up_violation).max(self.down1_violation).max(self.down2_violation)
    }
}

/// Evaluates the concavity, lower-mass and upper-mass constraints at `point`.
pub fn check_feasible(
    grid: &DesignGrid,
    system: &IntervalSystem,
    point: &FeasiblePoint,
    eps: f64,
) -> Result<ConstraintReport> {
    let m = grid.m();
    if point.m() != m || point.g.len() + 2 != m {
        return Err(Error::DimensionMismatch(format!("point has {} values for {} design points", point.m(), m)));
    }
    if let Some((_, k, _, _)) = system.iter_pairs().find(|&(_, k, _, _)| k >= m) {
        return Err(Error::DimensionMismatch(format!("interval system references knot {k} but grid has {m}")));
    }
    let x = &grid.x;
    let ell = &point.ell;
    let mut conc: f64 = 0.0;
    for i in 1..m - 1 {
        for j in [i - 1, i + 1] {
            let v = ell[j] - ell[i] - point.slope(i) * (x[j] - x[i]);
            conc = conc.max(v);
        }
    }
    let l: Vec<f64> = (0..m - 1).map(|i| eval_l(grid, ell, i)).collect();
    let u: Vec<f64> = (0..m - 1).map(|i| eval_u(grid, point, i)).collect();
    let v: Vec<f64> = (0..m - 1).map(|i| eval_v(grid, point, i)).collect();
    let (mut up, mut down1, mut down2): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (j, k, c, d) in system.iter_pairs() {
        up = up.max(l[j..k].iter().sum::<f64>() - d);
        down1 = down1.max(c - u[j..k].iter().sum::<f64>());
        down2 = down2.max(c - v[j..k].iter().sum::<f64>());
    }
    // NaN propagates as infeasible
    let feasible = [conc, up, down1, down2].iter().all(|&w| w <= eps);
    Ok(ConstraintReport {
        conc_violation: conc,
        up_violation: up,
        down1_violation: down1,
        down2_violation: down2,
        feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_interval_system, select_design_points};
    use crate::oracle::{central_difference, integrate};
    use proptest::prelude::*;

    fn grid_from(x: Vec<f64>) -> DesignGrid {
        DesignGrid { n: 100, s_n: 3, spacing: 8, x }
    }

    fn unit_grid(m: usize) -> DesignGrid {
        grid_from((0..m).map(|i| i as f64).collect())
    }

    fn zero_point(m: usize) -> FeasiblePoint {
        FeasiblePoint::new(vec![0.0; m], vec![0.0; m - 2]).unwrap()
    }

    #[test]
    fn chord_integral_examples() {
        let g = unit_grid(4);
        assert_eq!(eval_l(&g, &[0.0, 0.0, 0.0, 0.0], 0), 1.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((eval_l(&g, &[0.0, 1.0, 0.0, 0.0], 0) - e1).abs() < 1e-15);
        let g2 = grid_from(vec![0.0, 2.0, 3.0]);
        let want = (-1.0f64).exp() - (-3.0f64).exp();
        assert!((eval_l(&g2, &[-1.0, -3.0, 0.0], 0) - want).abs() < 1e-15);
        // frozen adaptive-quadrature value of the chord exponential
        assert!((eval_l(&g2, &[-1.0, -3.0, 0.0], 0) - 0.318_092_372_803_578_4).abs() < 1e-12);
        // symmetric under swapping the endpoint values
        let a = eval_l(&g2, &[0.3, -1.7, 0.0], 0);
        let b = eval_l(&g2, &[-1.7, 0.3, 0.0], 0);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn tangent_bound_examples() {
        let m = 5;
        let g = unit_grid(m);
        let p = zero_point(m);
        for i in 0..m - 1 {
            assert_eq!(eval_u(&g, &p, i), 1.0);
            assert_eq!(eval_v(&g, &p, i), 1.0);
        }
        let e1 = std::f64::consts::E - 1.0;
        // last segment of U uses the slope at knot m-2
        let mut q = p.clone();
        q.g[m - 3] = 1.0;
        assert!((eval_u(&g, &q, m - 2) - e1).abs() < 1e-15);
        // first segment of U uses the right tangent at knot 1
        let mut q = p.clone();
        q.g[0] = 1.0;
        assert!((eval_u(&g, &q, 0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        // V on an interior segment shares the left-tangent formula
        let mut q = p.clone();
        q.ell[2] = 0.4;
        q.g[1] = -0.7;
        assert_eq!(eval_v(&g, &q, 2), eval_u(&grid_from(vec![0.0, 1.0, 2.0, 3.0]), &q_trunc(&q), 2));
        // V on the first segment: exp(ell_1) dx E(g_1 (x_0 - x_1))
        let g3 = grid_from(vec![0.0, 0.5, 1.0, 2.0]);
        let mut q = zero_point(4);
        q.ell[1] = std::f64::consts::LN_2;
        q.g[0] = 2.0;
        assert!((eval_v(&g3, &q, 0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    // first four knots of a point, so that segment 2 is the last segment
    fn q_trunc(q: &FeasiblePoint) -> FeasiblePoint {
        FeasiblePoint::new(q.ell[..4].to_vec(), q.g[..2].to_vec()).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let m = 4;
        let g = unit_grid(m);
        let p = zero_point(m);
        let layout = VarLayout::new(m);
        let grad = grad_u(&g, &p, m - 2);
        assert_eq!(grad, vec![(layout.ell(m - 2), 1.0), (layout.slope(m - 2), 0.5)]);
        let lg = grad_l(&g, &p.ell, 1);
        assert_eq!(lg, vec![(1, 0.5), (2, 0.5)]);
    }

    #[test]
    fn linearization_examples() {
        let m = 4;
        let g = unit_grid(m);
        let p = zero_point(m);
        let layout = VarLayout::new(m);
        let lin = linearize_u(&g, &p, m - 2);
        let mut z = p.to_vector();
        z[layout.ell(m - 2)] = 0.3;
        z[layout.slope(m - 2)] = -0.8;
        assert!((lin.eval(&z) - (1.0 + 0.3 + 0.5 * -0.8)).abs() < 1e-15);
        assert_eq!(lin.eval(&p.to_vector()), eval_u(&g, &p, m - 2));
    }

    #[test]
    fn feasibility_examples() {
        let g = select_design_points(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        let sys = build_interval_system(&g, 0.1).unwrap();
        let m = g.m();
        let tiny = FeasiblePoint::new(vec![-1e6; m], vec![0.0; m - 2]).unwrap();
        let rep = check_feasible(&g, &sys, &tiny, DEFAULT_FEASIBILITY_TOL).unwrap();
        assert!(!rep.feasible);
        assert!(rep.down1_violation > 0.0 && rep.down2_violation > 0.0);
        assert_eq!(rep.conc_violation, 0.0);

        let mut ell = vec![0.0; m];
        ell[1] = -1.0;
        let bumpy = FeasiblePoint::new(ell, vec![0.0; m - 2]).unwrap();
        let rep = check_feasible(&g, &sys, &bumpy, DEFAULT_FEASIBILITY_TOL).unwrap();
        assert_eq!(rep.conc_violation, 1.0);

        let short = FeasiblePoint::new(vec![0.0; 5], vec![0.0; 3]).unwrap();
        assert!(check_feasible(&g, &sys, &short, 1e-7).is_err());
    }

    #[test]
    fn uniform_truth_feasible_for_typical_sample() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut hits = 0;
        let reps = 300;
        for _ in 0..reps {
            let sample: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
            let g = select_design_points(&sample).unwrap();
            let sys = build_interval_system(&g, 0.1).unwrap();
            let m = g.m();
            let truth = FeasiblePoint::new(vec![0.0; m], vec![0.0; m - 2]).unwrap();
            hits += check_feasible(&g, &sys, &truth, DEFAULT_FEASIBILITY_TOL).unwrap().feasible as usize;
        }
        let freq = hits as f64 / reps as f64;
        assert!(freq >= 0.9 - 2.0 * (0.09f64 / reps as f64).sqrt(), "{freq}");
    }

    #[test]
    fn sandwich_on_gaussian_truth() {
        let x: Vec<f64> = vec![-2.5, -1.7, -1.0, -0.2, 0.3, 1.1, 2.0, 2.6];
        let g = grid_from(x.clone());
        let phi = |t: f64| -0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let ell: Vec<f64> = x.iter().map(|&t| phi(t)).collect();
        let slopes: Vec<f64> = x[1..x.len() - 1].iter().map(|&t| -t).collect();
        let p = FeasiblePoint::new(ell, slopes).unwrap();
        for i in 0..x.len() - 1 {
            let truth = integrate(|t| phi(t).exp(), x[i], x[i + 1], 1e-13);
            assert!(eval_l(&g, &p.ell, i) <= truth + 1e-12);
            assert!(truth <= eval_u(&g, &p, i) + 1e-12);
            assert!(truth <= eval_v(&g, &p, i) + 1e-12);
        }
    }

    fn random_point(m: usize) -> impl Strategy<Value = (Vec<f64>, FeasiblePoint)> {
        (
            prop::collection::vec(0.05f64..2.0, m - 1),
            prop::collection::vec(-4.0f64..2.0, m),
            prop::collection::vec(-3.0f64..3.0, m - 2),
        )
            .prop_map(move |(gaps, ell, g)| {
                let mut x = vec![0.0];
                for gap in gaps {
                    x.push(x.last().unwrap() + gap);
                }
                (x, FeasiblePoint::new(ell, g).unwrap())
            })
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences((x, p) in random_point(6), i in 0usize..5) {
            let g = grid_from(x);
            let z0 = p.to_vector();
            let m = 6;
            for (grad, f) in [
                (grad_u(&g, &p, i), Box::new(|z: &[f64]| eval_u(&g, &FeasiblePoint::from_vector(m, z), i)) as Box<dyn Fn(&[f64]) -> f64>),
                (grad_v(&g, &p, i), Box::new(|z: &[f64]| eval_v(&g, &FeasiblePoint::from_vector(m, z), i))),
                (grad_l(&g, &p.ell, i), Box::new(|z: &[f64]| eval_l(&g, &z[..m], i))),
            ] {
                for col in 0..z0.len() {
                    let fd = central_difference(|t| {
                        let mut z = z0.clone();
                        z[col] = t;
                        f(&z)
                    }, z0[col], 1e-6);
                    let an = grad.iter().filter(|e| e.0 == col).map(|e| e.1).sum::<f64>();
                    prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-2), "col {} fd {} an {}", col, fd, an);
                }
            }
        }

        #[test]
        fn tangent_planes_underestimate((x, p) in random_point(6), (_, q) in random_point(6), i in 0usize..5) {
            let g = grid_from(x);
            let zq = q.to_vector();
            prop_assert!(linearize_u(&g, &p, i).eval(&zq) <= eval_u(&g, &q, i) + 1e-12);
            prop_assert!(linearize_v(&g, &p, i).eval(&zq) <= eval_v(&g, &q, i) + 1e-12);
            prop_assert!(linearize_l(&g, &p.ell, i).eval(&q.ell) <= eval_l(&g, &q.ell, i) + 1e-12);
            let at = eval_u(&g, &p, i);
            prop_assert!((linearize_u(&g, &p, i).eval(&p.to_vector()) - at).abs() <= 1e-14 * at.abs().max(1e-300));
        }

        #[test]
        fn bounds_are_midpoint_convex((x, p) in random_point(5), (_, q) in random_point(5), i in 0usize..4) {
            let g = grid_from(x);
            let zp = p.to_vector();
            let zq = q.to_vector();
            let mid: Vec<f64> = zp.iter().zip(&zq).map(|(a, b)| 0.5 * (a + b)).collect();
            let mp = FeasiblePoint::from_vector(5, &mid);
            let tol = 1e-12;
            prop_assert!(eval_u(&g, &mp, i) <= 0.5 * (eval_u(&g, &p, i) + eval_u(&g, &q, i)) + tol);
            prop_assert!(eval_v(&g, &mp, i) <= 0.5 * (eval_v(&g, &p, i) + eval_v(&g, &q, i)) + tol);
            prop_assert!(eval_l(&g, &mp.ell, i) <= 0.5 * (eval_l(&g, &p.ell, i) + eval_l(&g, &q.ell, i)) + tol);
        }

        #[test]
        fn chord_integral_increasing_in_endpoints((x, p) in random_point(4), delta in 1e-4f64..2.0, i in 0usize..3) {
            let g = grid_from(x);
            let base = eval_l(&g, &p.ell, i);
            let mut up = p.ell.clone();
            up[i] += delta;
            prop_assert!(eval_l(&g, &up, i) > base);
            let mut up = p.ell.clone();
            up[i + 1] += delta;
            prop_assert!(eval_l(&g, &up, i) > base);
        }

        #[test]
        fn feasibility_monotone_in_tolerance((x, p) in random_point(9), eps in 0.0f64..1.0, extra in 0.0f64..1.0) {
            let mut g = grid_from(x);
            g.n = 40;
            g.s_n = 2;
            g.spacing = 4;
            let sys = IntervalSystem {
                alpha: 0.1,
                b_max: 0,
                t_n: 0.5,
                blocks: vec![crate::design::Block { b: 0, n_b: 8, pairs: (0..8).map(|i| (i, i + 1)).collect(), c: 0.02, d: 0.3 }],
            };
            let a = check_feasible(&g, &sys, &p, eps).unwrap();
            let b = check_feasible(&g, &sys, &p, eps + extra).unwrap();
            prop_assert!(!a.feasible || b.feasible);
        }
    }
}
