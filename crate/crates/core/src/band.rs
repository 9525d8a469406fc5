//! Confidence bands on the whole real line from pointwise log-density bounds.
//!
//! The lower band interpolates the lower values linearly between knots and is
//! `-inf` outside them. The upper band uses extreme chord slopes: concavity
//! forces `log f` below the line through `(x_k, hi_k)` with slope `L_k` to the
//! right of `x_k` and below the line with slope `R_k` to its left.
//!
//! Knots are indexed from zero. `L_k` exists for `k >= 1` and `R_k` for
//! `k <= m - 2`; both are stored in vectors of length `m - 1`, so `l[k - 1]`
//! holds `L_k` and `r[k]` holds `R_k`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ccp::{choose_subset, pointwise_intervals, CcpConfig, PointwiseIntervals};
use crate::design::{build_interval_system, select_design_points, DesignGrid};
use crate::error::{Error, Result};

/// Smallest number of knots for which every case of the upper band is defined.
pub const MIN_KNOTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMode {
    /// Chord-slope upper band with the finite-sample guarantee.
    Guaranteed,
    /// Linear interpolation of `exp(hi)` between knots; no coverage guarantee.
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub knots: Vec<f64>,
    #[serde(serialize_with = "ser_ext", deserialize_with = "de_neg_inf")]
    pub lo_log: Vec<f64>,
    #[serde(serialize_with = "ser_ext", deserialize_with = "de_pos_inf")]
    pub hi_log: Vec<f64>,
    /// `L_1 .. L_{m-1}`.
    #[serde(rename = "L", serialize_with = "ser_ext", deserialize_with = "de_pos_inf")]
    pub l: Vec<f64>,
    /// `R_0 .. R_{m-2}`.
    #[serde(rename = "R", serialize_with = "ser_ext", deserialize_with = "de_neg_inf")]
    pub r: Vec<f64>,
    /// Switch point between the two tangent lines on segments `1 .. m-3`, clamped to the segment.
    pub xbar: Vec<Option<f64>>,
    pub mode: BandMode,
    pub alpha: f64,
    pub n: usize,
    /// Set when some pointwise bound was unusable and replaced by an infinite value.
    #[serde(default)]
    pub partial: bool,
}

// JSON has no infinities; every non-finite entry of a field has the same sign,
// so null decodes to that field's infinity.
fn ser_ext<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
}

fn de_ext<'de, D: Deserializer<'de>>(d: D, fill: f64) -> std::result::Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(fill)).collect())
}

fn de_neg_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    de_ext(d, f64::NEG_INFINITY)
}

fn de_pos_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    de_ext(d, f64::INFINITY)
}

/// `mu + slope * dx`, exact at `dx = 0` and `+inf` when `mu` is.
fn line(mu: f64, slope: f64, dx: f64) -> f64 {
    if dx == 0.0 || mu == f64::INFINITY {
        mu
    } else {
        mu + slope * dx
    }
}

impl ConfidenceBand {
    /// Band from bounds at the given knots.
    pub fn from_bounds(
        knots: Vec<f64>,
        lo_log: Vec<f64>,
        hi_log: Vec<f64>,
        mode: BandMode,
        alpha: f64,
        n: usize,
    ) -> Result<Self> {
        let m = knots.len();
        if lo_log.len() != m || hi_log.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} knots with {} lower and {} upper values",
                lo_log.len(),
                hi_log.len()
            )));
        }
        if m < MIN_KNOTS {
            return Err(Error::TooFewKnots { needed: MIN_KNOTS, got: m });
        }
        if knots.iter().any(|x| !x.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("knots must be finite and strictly increasing".into()));
        }
        for i in 0..m {
            let (lo, hi) = (lo_log[i], hi_log[i]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY || lo > hi {
                return Err(Error::Domain(format!("invalid bounds [{lo}, {hi}] at knot {i}")));
            }
        }
        let x = &knots;
        let l: Vec<f64> = (1..m)
            .map(|k| (0..k).map(|j| chord(hi_log[k], lo_log[j], x[k] - x[j])).fold(f64::INFINITY, f64::min))
            .collect();
        let r: Vec<f64> = (0..m - 1)
            .map(|k| (k + 1..m).map(|j| -chord(hi_log[k], lo_log[j], x[j] - x[k])).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let xbar = (1..m.saturating_sub(2))
            .map(|i| {
                let (li, rn) = (l[i - 1], r[i + 1]);
                let finite = li.is_finite() && rn.is_finite() && hi_log[i].is_finite() && hi_log[i + 1].is_finite();
                (finite && li > rn).then(|| {
                    let v = (hi_log[i + 1] - hi_log[i] + li * x[i] - rn * x[i + 1]) / (li - rn);
                    v.clamp(x[i], x[i + 1])
                })
            })
            .collect();
        Ok(Self { knots, lo_log, hi_log, l, r, xbar, mode, alpha, n, partial: false })
    }

    pub fn m(&self) -> usize {
        self.knots.len()
    }

    /// `L_k` for `k >= 1`.
    pub fn l_slope(&self, k: usize) -> f64 {
        self.l[k - 1]
    }

    /// `R_k` for `k <= m - 2`.
    pub fn r_slope(&self, k: usize) -> f64 {
        self.r[k]
    }

    /// Index `i` with `x_i <= x < x_{i+1}`, or `None` outside `[x_0, x_{m-1})`.
    fn segment(&self, x: f64) -> Option<usize> {
        let p = self.knots.partition_point(|&k| k <= x);
        (p >= 1 && p < self.m()).then(|| p - 1)
    }

    /// Lower log-density band: linear between knots, `-inf` outside `[x_0, x_{m-1}]`.
    pub fn eval_lower(&self, x: f64) -> f64 {
        let m = self.m();
        if x == self.knots[m - 1] {
            return self.lo_log[m - 1];
        }
        let Some(i) = self.segment(x) else {
            return f64::NEG_INFINITY;
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.lo_log[i], self.lo_log[i + 1]);
        if x == x0 {
            return y0;
        }
        if y0.is_infinite() || y1.is_infinite() {
            return f64::NEG_INFINITY;
        }
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }

    /// Guaranteed upper log-density band.
    pub fn eval_upper(&self, x: f64) -> f64 {
        let m = self.m();
        let (k, mu) = (&self.knots, &self.hi_log);
        if x < k[0] {
            return line(mu[0], self.r_slope(0), x - k[0]);
        }
        if x >= k[m - 1] {
            return line(mu[m - 1], self.l_slope(m - 1), x - k[m - 1]);
        }
        let i = self.segment(x).expect("x lies inside the knot range");
        if i == 0 {
            let v = line(mu[1], self.r_slope(1), x - k[1]);
            return if x == k[0] { v.min(mu[0]) } else { v };
        }
        if i == m - 2 {
            return line(mu[i], self.l_slope(i), x - k[i]);
        }
        let left = line(mu[i], self.l_slope(i), x - k[i]);
        let right = line(mu[i + 1], self.r_slope(i + 1), x - k[i + 1]);
        left.min(right)
    }

    /// Linear interpolation of `exp(hi)` on `[x_0, x_{m-1}]`, guaranteed tails outside.
    pub fn eval_upper_interpolated(&self, x: f64) -> f64 {
        let m = self.m();
        if x == self.knots[m - 1] {
            return self.hi_log[m - 1].exp();
        }
        let Some(i) = self.segment(x) else {
            return self.eval_upper(x).exp();
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.hi_log[i].exp(), self.hi_log[i + 1].exp());
        if x == x0 {
            return y0;
        }
        if y0.is_infinite() || y1.is_infinite() {
            return f64::INFINITY;
        }
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }

    /// Upper density value in the band's mode.
    pub fn eval_upper_density(&self, x: f64) -> f64 {
        match self.mode {
            BandMode::Guaranteed => self.eval_upper(x).exp(),
            BandMode::Interpolated => self.eval_upper_interpolated(x),
        }
    }

    /// `(lower, upper)` density bounds at `x`.
    pub fn eval_density_band(&self, x: f64) -> (f64, f64) {
        (self.eval_lower(x).exp(), self.eval_upper_density(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("band serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let band: Self = serde_json::from_str(s).map_err(|e| Error::Domain(format!("band JSON: {e}")))?;
        let expect = band.m().saturating_sub(1);
        if band.m() < MIN_KNOTS
            || band.lo_log.len() != band.m()
            || band.hi_log.len() != band.m()
            || band.l.len() != expect
            || band.r.len() != expect
            || band.xbar.len() != band.m() - 3
        {
            return Err(Error::DimensionMismatch("band JSON fields have inconsistent lengths".into()));
        }
        Ok(band)
    }
}

/// `(hi - lo) / dx` with `+inf` whenever either bound is infinite.
fn chord(hi: f64, lo: f64, dx: f64) -> f64 {
    if hi == f64::INFINITY || lo == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        (hi - lo) / dx
    }
}

/// Band over the knots for which pointwise intervals were computed.
pub fn build_band(
    grid: &DesignGrid,
    intervals: &PointwiseIntervals,
    mode: BandMode,
    alpha: f64,
) -> Result<ConfidenceBand> {
    if let Some(&i) = intervals.indices.iter().find(|&&i| i >= grid.m()) {
        return Err(Error::IndexOutOfRange { index: i, m: grid.m() });
    }
    let knots = intervals.indices.iter().map(|&i| grid.x[i]).collect();
    let mut band = ConfidenceBand::from_bounds(knots, intervals.lo.clone(), intervals.hi.clone(), mode, alpha, grid.n)?;
    band.partial = !intervals.all_usable();
    Ok(band)
}

/// Design points, pointwise intervals on a subset of them, and the band, from raw samples.
pub fn compute_band(
    samples: &[f64],
    alpha: f64,
    subset_frac: f64,
    cfg: &CcpConfig,
    mode: BandMode,
) -> Result<(ConfidenceBand, PointwiseIntervals)> {
    let grid = select_design_points(samples)?;
    let system = build_interval_system(&grid, alpha)?;
    let subset = choose_subset(grid.m(), subset_frac)?;
    let intervals = pointwise_intervals(&grid, &system, cfg, &subset)?;
    let band = build_band(&grid, &intervals, mode, alpha)?;
    Ok((band, intervals))
}
