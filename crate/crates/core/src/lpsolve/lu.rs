//! Dense LU factorization with partial pivoting, used on the structural
//! kernel of a simplex basis.

/// Columns for which no acceptable pivot was found, and the rows left without one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Deficiency {
    pub dependent_cols: Vec<usize>,
    pub free_rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct DenseLu {
    k: usize,
    /// `perm[i]` is the original row at pivot position `i`.
    perm: Vec<usize>,
    // strict lower and upper triangles in compressed row form
    l_start: Vec<usize>,
    l_entries: Vec<(usize, f64)>,
    u_start: Vec<usize>,
    u_entries: Vec<(usize, f64)>,
    diag: Vec<f64>,
}

const PIVOT_REL_TOL: f64 = 1e-11;

impl DenseLu {
    /// Factorizes the `k x k` row-major matrix `a`.
    pub fn factorize(mut a: Vec<f64>, k: usize) -> Result<Self, Deficiency> {
        debug_assert_eq!(a.len(), k * k);
        let mut perm: Vec<usize> = (0..k).collect();
        let col_norm: Vec<f64> = (0..k).map(|c| (0..k).fold(0.0f64, |acc, r| acc.max(a[r * k + c].abs()))).collect();
        let mut dependent = Vec::new();
        let mut pattern = Vec::with_capacity(k);
        // `t` counts successful pivots; rows t.. are still unpivoted
        let mut t = 0;
        for c in 0..k {
            let (mut best, mut best_row) = (0.0f64, usize::MAX);
            for r in t..k {
                let v = a[r * k + c].abs();
                if v > best {
                    best = v;
                    best_row = r;
                }
            }
            if best_row == usize::MAX || best <= PIVOT_REL_TOL * col_norm[c].max(1.0) {
                dependent.push(c);
                continue;
            }
            if best_row != t {
                for j in 0..k {
                    a.swap(t * k + j, best_row * k + j);
                }
                perm.swap(t, best_row);
            }
            let (head, tail) = a.split_at_mut((t + 1) * k);
            let pivot_row = &head[t * k..t * k + k];
            let piv = pivot_row[c];
            pattern.clear();
            pattern.extend((c + 1..k).filter(|&j| pivot_row[j] != 0.0));
            for row in tail.chunks_exact_mut(k) {
                if row[c] != 0.0 {
                    let f = row[c] / piv;
                    row[c] = f;
                    for &j in &pattern {
                        row[j] -= f * pivot_row[j];
                    }
                }
            }
            t += 1;
        }
        if !dependent.is_empty() {
            return Err(Deficiency { dependent_cols: dependent, free_rows: perm[t..].to_vec() });
        }
        let mut lu = Self { k, perm, ..Self::default() };
        lu.l_start.push(0);
        lu.u_start.push(0);
        for i in 0..k {
            let row = &a[i * k..(i + 1) * k];
            lu.l_entries.extend(row[..i].iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, v)| (j, *v)));
            lu.u_entries.extend(row[i + 1..].iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, v)| (i + 1 + j, *v)));
            lu.l_start.push(lu.l_entries.len());
            lu.u_start.push(lu.u_entries.len());
            lu.diag.push(row[i]);
        }
        Ok(lu)
    }

    fn l_row(&self, i: usize) -> &[(usize, f64)] {
        &self.l_entries[self.l_start[i]..self.l_start[i + 1]]
    }

    fn u_row(&self, i: usize) -> &[(usize, f64)] {
        &self.u_entries[self.u_start[i]..self.u_start[i + 1]]
    }

    /// Solves `K x = rhs` in place (`rhs` indexed by original row, result by column).
    pub fn solve(&self, rhs: &mut [f64], work: &mut Vec<f64>) {
        work.clear();
        work.extend(self.perm.iter().map(|&r| rhs[r]));
        for i in 0..self.k {
            let s: f64 = self.l_row(i).iter().map(|&(j, l)| l * work[j]).sum();
            work[i] -= s;
        }
        for i in (0..self.k).rev() {
            let s: f64 = self.u_row(i).iter().map(|&(j, u)| u * work[j]).sum();
            work[i] = (work[i] - s) / self.diag[i];
        }
        rhs.copy_from_slice(work);
    }

    /// Solves `K^T y = rhs` in place (`rhs` indexed by column, result by original row).
    pub fn solve_transpose(&self, rhs: &mut [f64], work: &mut Vec<f64>) {
        work.clear();
        work.extend_from_slice(rhs);
        for i in 0..self.k {
            let wi = work[i] / self.diag[i];
            work[i] = wi;
            if wi != 0.0 {
                for &(j, u) in self.u_row(i) {
                    work[j] -= u * wi;
                }
            }
        }
        for i in (0..self.k).rev() {
            let vi = work[i];
            if vi != 0.0 {
                for &(j, l) in self.l_row(i) {
                    work[j] -= l * vi;
                }
            }
        }
        for (i, &r) in self.perm.iter().enumerate() {
            rhs[r] = work[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[f64], k: usize, x: &[f64]) -> Vec<f64> {
        (0..k).map(|r| (0..k).map(|c| a[r * k + c] * x[c]).sum()).collect()
    }

    #[test]
    fn solves_and_transposed_solves() {
        let k = 4;
        let a = vec![
            0.0, 2.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 3.0, //
            4.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 5.0, 1.0,
        ];
        let lu = DenseLu::factorize(a.clone(), k).unwrap();
        let mut work = Vec::new();
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let mut x = b.clone();
        lu.solve(&mut x, &mut work);
        let back = matvec(&a, k, &x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let mut y = b.clone();
        lu.solve_transpose(&mut y, &mut work);
        let at: Vec<f64> = (0..k * k).map(|i| a[(i % k) * k + i / k]).collect();
        let back = matvec(&at, k, &y);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_dependent_columns() {
        let a = vec![
            1.0, 2.0, 0.0, //
            2.0, 4.0, 0.0, //
            0.0, 0.0, 1.0,
        ];
        let def = DenseLu::factorize(a, 3).unwrap_err();
        assert_eq!(def.dependent_cols, vec![1]);
        assert_eq!(def.free_rows.len(), 1);
    }
}
