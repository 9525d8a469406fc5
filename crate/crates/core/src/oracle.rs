//! Independent reference computations used to check the optimized code paths:
//! adaptive quadrature, central finite differences, and brute-force vertex
//! enumeration for small linear programs.
//!
//! Nothing here is used by the band pipeline itself.

use crate::lpsolve::LinearProgram;

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS_WEIGHTS: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for k in 0..7 {
        let dx = h * GK_NODES[k];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[k] * s;
        if k % 2 == 1 {
            gauss += GAUSS_WEIGHTS[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature of `f` over `[a, b]` to absolute tolerance `tol`,
/// or to rounding level when that is larger.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gauss_kronrod(f, a, b);
        // below the rounding floor a smaller estimate is noise; a NaN estimate
        // stops the recursion and propagates through the value
        if !(err > tol.max(64.0 * f64::EPSILON * value.abs()))
            || depth >= 50
            || (b - a).abs() < 1e-15 * a.abs().max(1.0)
        {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1) + recurse(f, mid, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(&f, a, b, tol, 0)
}

/// Symmetric difference quotient `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Solves a small dense square system by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for c in col..n {
                    a[r][c] -= factor * a[col][c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Best objective over all basic feasible solutions, or `None` if no vertex is feasible.
///
/// Every combination of `num_vars` constraints (rows and finite variable
/// bounds) is made active and solved; the caller must ensure the LP is
/// bounded and has vertices. Cost grows combinatorially, so only use this on
/// problems with a handful of variables.
pub fn vertex_enumeration(lp: &LinearProgram, feas_tol: f64) -> Option<(f64, Vec<f64>)> {
    let n = lp.num_vars();
    // every inequality as (coefficients, rhs): rows, then bounds
    let mut ineqs: Vec<(Vec<f64>, f64)> = lp.rows().map(|(row, rhs)| (row, rhs)).collect();
    for j in 0..n {
        let (lo, hi) = lp.bounds(j);
        if lo.is_finite() {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            ineqs.push((e, -lo));
        }
        if hi.is_finite() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            ineqs.push((e, hi));
        }
    }
    let total = ineqs.len();
    if total < n {
        return None;
    }
    let objective = lp.objective();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = subset.iter().map(|&r| ineqs[r].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&r| ineqs[r].1).collect();
        if let Some(z) = dense_solve(a, b) {
            let feasible = ineqs.iter().all(|(row, rhs)| {
                let lhs: f64 = row.iter().zip(&z).map(|(a, v)| a * v).sum();
                lhs <= rhs + feas_tol * (1.0 + rhs.abs())
            });
            if feasible {
                let val: f64 = objective.iter().zip(&z).map(|(c, v)| c * v).sum();
                if best.as_ref().map_or(true, |(bv, _)| val < *bv) {
                    best = Some((val, z));
                }
            }
        }
        // next combination in lexicographic order
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < total - n + i {
                break;
            }
        }
        subset[i] += 1;
        for k in i + 1..n {
            subset[k] = subset[k - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_smooth_functions() {
        let v = integrate(|t| t.exp(), 0.0, 1.0, 1e-14);
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-13);
        let v = integrate(|t| 12.0 * t * (1.0 - t).powi(2), 0.0, 0.3, 1e-14);
        assert!((v - 0.3483).abs() < 1e-13);
        let v = integrate(|t| (-1.0 - t).exp(), 0.0, 2.0, 1e-14);
        assert!((v - 0.318_092_372_803_578_4).abs() < 1e-13);
    }

    #[test]
    fn finite_difference_of_polynomial() {
        let d = central_difference(|t| t * t * t, 2.0, 1e-5);
        assert!((d - 12.0).abs() < 1e-6);
    }

    #[test]
    fn dense_solve_small_system() {
        let x = dense_solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(dense_solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }
}
