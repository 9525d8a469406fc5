//! Design points and the dyadic interval system.
//!
//! Only every `2^{s_n}`-th order statistic enters the optimization. Pairs of
//! design points `(j, k)` with `k - j = 2^B` carry Bonferroni-weighted beta
//! quantile bounds on the probability content `F(x_k) - F(x_j)`.
//!
//! Indices are zero-based throughout the crate: design point `i` is the
//! order statistic of rank `1 + i * 2^{s_n}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{qbeta, BetaParams};

/// Selected order statistics `x_0 < ... < x_{m-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    pub n: usize,
    pub s_n: u32,
    pub spacing: usize,
    pub x: Vec<f64>,
}

impl DesignGrid {
    pub fn m(&self) -> usize {
        self.x.len()
    }

    /// Same sample bookkeeping, different knot coordinates.
    pub(crate) fn with_knots(&self, x: Vec<f64>) -> Self {
        Self { n: self.n, s_n: self.s_n, spacing: self.spacing, x }
    }
}

/// `s_n = ceil(log2(ln n))`.
pub fn spacing_exponent(n: usize) -> u32 {
    let v = (n as f64).ln().log2().ceil();
    if v < 1.0 {
        1
    } else {
        v as u32
    }
}

/// `floor(log2(n / 8)) - s_n`, negative when `n` is too small.
pub fn largest_block(n: usize, s_n: u32) -> i64 {
    if n < 8 {
        return -1 - s_n as i64;
    }
    n.ilog2() as i64 - 3 - s_n as i64
}

pub fn select_design_points(samples: &[f64]) -> Result<DesignGrid> {
    if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample(pos));
    }
    let n = samples.len();
    let s_n = if n >= 2 { spacing_exponent(n) } else { 1 };
    let b_max = largest_block(n, s_n);
    if b_max < 0 {
        return Err(Error::TooFewSamples { n, b_max });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spacing = 1usize << s_n;
    let m = (n - 1) / spacing + 1;
    let x: Vec<f64> = (0..m).map(|i| sorted[i * spacing]).collect();
    for i in 1..m {
        if x[i] <= x[i - 1] {
            return Err(Error::DuplicateDesignPoint {
                first: (i - 1) * spacing + 1,
                second: i * spacing + 1,
                value: x[i],
            });
        }
    }
    Ok(DesignGrid { n, s_n, spacing, x })
}

/// One dyadic block `I_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub b: u32,
    /// Number of pairs, `floor((n-1) / 2^{B+s_n})`.
    pub n_b: usize,
    /// Zero-based design index pairs `(j, k)` with `k - j = 2^B`.
    pub pairs: Vec<(usize, usize)>,
    /// Lower quantile bound on `F(x_k) - F(x_j)`.
    pub c: f64,
    /// Upper quantile bound on `F(x_k) - F(x_j)`.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSystem {
    pub alpha: f64,
    pub b_max: u32,
    pub t_n: f64,
    pub blocks: Vec<Block>,
}

impl IntervalSystem {
    /// Total number of constrained pairs `|I|`.
    pub fn num_pairs(&self) -> usize {
        self.blocks.iter().map(|b| b.pairs.len()).sum()
    }

    /// All pairs with their bounds, block by block.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        self.blocks.iter().flat_map(|blk| blk.pairs.iter().map(move |&(j, k)| (j, k, blk.c, blk.d)))
    }
}

pub fn build_interval_system(grid: &DesignGrid, alpha: f64) -> Result<IntervalSystem> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let n = grid.n;
    let b_max = largest_block(n, grid.s_n);
    if b_max < 0 {
        return Err(Error::TooFewSamples { n, b_max });
    }
    let b_max = b_max as u32;
    let t_n: f64 = (0..=b_max).map(|b| 1.0 / (b as f64 + 2.0)).sum();
    let m = grid.m();
    let mut blocks = Vec::with_capacity(b_max as usize + 1);
    for b in 0..=b_max {
        let width = 1usize << (b + grid.s_n);
        let n_b = (n - 1) / width;
        let step = 1usize << b;
        let pairs: Vec<(usize, usize)> = (0..n_b).map(|i| (i * step, (i + 1) * step)).collect();
        debug_assert!(pairs.last().map_or(true, |&(_, k)| k < m));
        let level = alpha / (2.0 * (b as f64 + 2.0) * n_b as f64 * t_n);
        let shapes = BetaParams::new(width as f64, (n + 1 - width) as f64)?;
        let c = qbeta(level, shapes)?;
        let d = qbeta(1.0 - level, shapes)?;
        blocks.push(Block { b, n_b, pairs, c, d });
    }
    Ok(IntervalSystem { alpha, b_max, t_n, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn design_sizes_for_reference_sample_sizes() {
        let g = select_design_points(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!((g.s_n, g.spacing, g.m()), (3, 8, 13));
        let expected: Vec<f64> = (0..13).map(|i| 1.0 + 8.0 * i as f64).collect();
        assert_eq!(g.x, expected);

        let g = select_design_points(&(0..1000).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert_eq!((g.s_n, g.spacing, g.m()), (3, 8, 125));

        assert_eq!(spacing_exponent(10_000), 4);
        assert_eq!((10_000 - 1) / 16 + 1, 625);
    }

    #[test]
    fn unsorted_input_is_sorted_first() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        v.reverse();
        let g = select_design_points(&v).unwrap();
        assert_eq!(g.x[0], 1.0);
        assert_eq!(g.x[12], 97.0);
    }

    #[test]
    fn too_few_samples() {
        let v: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(select_design_points(&v), Err(Error::TooFewSamples { n: 20, b_max: -1 }));
        assert!(select_design_points(&[]).is_err());
        // smallest admissible size under natural-log spacing
        assert!(select_design_points(&(0..31).map(f64::from).collect::<Vec<_>>()).is_err());
        assert!(select_design_points(&(0..32).map(f64::from).collect::<Vec<_>>()).is_ok());
    }

    #[test]
    fn ties_among_design_points_are_rejected() {
        let mut v: Vec<f64> = (0..100).map(f64::from).collect();
        for val in v.iter_mut().take(9) {
            *val = 0.0;
        }
        match select_design_points(&v) {
            Err(Error::DuplicateDesignPoint { first, second, .. }) => {
                assert_eq!((first, second), (1, 9))
            }
            other => panic!("unexpected {other:?}"),
        }
        // ties between non-selected order statistics are harmless
        let mut v: Vec<f64> = (0..100).map(f64::from).collect();
        v[3] = v[4];
        assert!(select_design_points(&v).is_ok());
    }

    #[test]
    fn non_finite_samples_rejected() {
        let mut v: Vec<f64> = (0..100).map(f64::from).collect();
        v[17] = f64::NAN;
        assert_eq!(select_design_points(&v), Err(Error::NonFiniteSample(17)));
    }

    #[test]
    fn interval_system_n100() {
        let g = select_design_points(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        let sys = build_interval_system(&g, 0.1).unwrap();
        assert_eq!(sys.b_max, 0);
        assert_eq!(sys.t_n, 0.5);
        assert_eq!(sys.blocks.len(), 1);
        let blk = &sys.blocks[0];
        assert_eq!(blk.n_b, 12);
        assert_eq!(blk.pairs.first(), Some(&(0, 1)));
        assert_eq!(blk.pairs.last(), Some(&(11, 12)));
        assert!((blk.c - 0.025_501_207_106_399_24).abs() < 1e-10);
        assert!((blk.d - 0.165_329_749_496_939_3).abs() < 1e-10);
    }

    #[test]
    fn interval_system_n1000() {
        let g = select_design_points(&(0..1000).map(f64::from).collect::<Vec<_>>()).unwrap();
        let sys = build_interval_system(&g, 0.1).unwrap();
        assert_eq!(sys.b_max, 3);
        let n_b: Vec<usize> = sys.blocks.iter().map(|b| b.n_b).collect();
        assert_eq!(n_b, vec![124, 62, 31, 15]);
        assert!((sys.t_n - (0.5 + 1.0 / 3.0 + 0.25 + 0.2)).abs() < 1e-15);
        // 40-digit references
        let reference = [
            (0.001_487_106_542_887_616_6, 0.022_153_780_127_574_09),
            (0.005_549_246_008_466_795_9, 0.033_701_366_310_226_94),
            (0.016_244_731_200_447_709, 0.054_308_059_012_146_976),
            (0.041_425_368_382_678_968, 0.092_090_488_630_924_019),
        ];
        for (blk, (c, d)) in sys.blocks.iter().zip(reference) {
            assert!((blk.c - c).abs() < 1e-10, "c_{} = {}", blk.b, blk.c);
            assert!((blk.d - d).abs() < 1e-10, "d_{} = {}", blk.b, blk.d);
            for &(j, k) in &blk.pairs {
                assert_eq!(k - j, 1 << blk.b);
                assert!(k < g.m());
            }
        }
        assert_eq!(sys.num_pairs(), 232);
    }

    #[test]
    fn bounds_straddle_beta_mean() {
        for n in [64usize, 100, 333, 1000, 5000] {
            let g = select_design_points(&(0..n).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
            let sys = build_interval_system(&g, 0.1).unwrap();
            for blk in &sys.blocks {
                let mean = (1usize << (blk.b + g.s_n)) as f64 / (n as f64 + 1.0);
                assert!(0.0 < blk.c && blk.c < mean && mean < blk.d && blk.d < 1.0);
            }
        }
    }

    #[test]
    fn invalid_alpha() {
        let g = select_design_points(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        for a in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(build_interval_system(&g, a), Err(Error::InvalidAlpha(_))));
        }
    }

    fn coverage_frequency(n: usize, reps: usize, exponential: bool, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let template = select_design_points(&(0..n).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let sys = build_interval_system(&template, 0.1).unwrap();
        let mut hits = 0;
        for _ in 0..reps {
            let sample: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    if exponential {
                        -(1.0 - u).ln()
                    } else {
                        u
                    }
                })
                .collect();
            let grid = select_design_points(&sample).unwrap();
            let cdf = |x: f64| if exponential { 1.0 - (-x).exp() } else { x };
            let ok = sys.iter_pairs().all(|(j, k, c, d)| {
                let mass = cdf(grid.x[k]) - cdf(grid.x[j]);
                c <= mass && mass <= d
            });
            hits += ok as usize;
        }
        hits as f64 / reps as f64
    }

    #[test]
    fn raw_confidence_set_covers_and_is_distribution_free() {
        let reps = 2000;
        let unif = coverage_frequency(100, reps, false, 11);
        let expo = coverage_frequency(100, reps, true, 12);
        let se = (0.1f64 * 0.9 / reps as f64).sqrt();
        assert!(unif >= 0.9 - 2.0 * se, "uniform coverage {unif}");
        assert!(expo >= 0.9 - 2.0 * se, "exponential coverage {expo}");
        // two independent binomial proportions; 4 standard errors of their difference
        let pooled = 0.5 * (unif + expo);
        let se_diff = (2.0 * pooled * (1.0 - pooled) / reps as f64).sqrt().max(1.0 / reps as f64);
        assert!((unif - expo).abs() < 4.0 * se_diff, "{unif} vs {expo}");
    }
}
