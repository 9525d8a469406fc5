//! Monte Carlo coverage and width study.
//!
//! Each repetition draws a sample, computes a band, checks containment of the
//! true density on an even grid over the data range and records the band width
//! at the sample quartiles. Repetition `r` draws from stream `r` of a ChaCha8
//! generator keyed by the master seed, so results do not depend on how the
//! repetitions are scheduled.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{compute_band, BandMode};
use crate::ccp::CcpConfig;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    /// Standard normal.
    Gaussian,
    /// Uniform on `[-10, 10]`.
    Uniform,
    /// Chi-squared with three degrees of freedom.
    Chisq,
    /// Gamma with unit shape and scale.
    Gamma,
}

impl Dist {
    pub const ALL: [Dist; 4] = [Dist::Gaussian, Dist::Uniform, Dist::Chisq, Dist::Gamma];

    pub fn label(self) -> &'static str {
        match self {
            Dist::Gaussian => "Gaussian",
            Dist::Uniform => "Uniform",
            Dist::Chisq => "Chi-squared",
            Dist::Gamma => "Gamma",
        }
    }

    pub fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Dist::Gaussian => Normal::new(0.0, 1.0).expect("valid").sample_iter(rng).take(n).collect(),
            Dist::Uniform => Uniform::new(-10.0, 10.0).sample_iter(rng).take(n).collect(),
            Dist::Chisq => ChiSquared::new(3.0).expect("valid").sample_iter(rng).take(n).collect(),
            Dist::Gamma => Gamma::new(1.0, 1.0).expect("valid").sample_iter(rng).take(n).collect(),
        }
    }

    /// Log-density; `-inf` off the support.
    pub fn log_density(self, x: f64) -> f64 {
        match self {
            Dist::Gaussian => -0.5 * x * x - LN_SQRT_2PI,
            Dist::Uniform if (-10.0..=10.0).contains(&x) => -(20f64.ln()),
            Dist::Chisq if x > 0.0 => 0.5 * x.ln() - 0.5 * x - LN_SQRT_2PI,
            Dist::Gamma if x >= 0.0 => -x,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Derivative of the log-density inside the support.
    pub fn log_density_deriv(self, x: f64) -> f64 {
        match self {
            Dist::Gaussian => -x,
            Dist::Uniform => 0.0,
            Dist::Chisq => 0.5 / x - 0.5,
            Dist::Gamma => -1.0,
        }
    }

    pub fn density(self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub distribution: Dist,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub subset_frac: f64,
    pub seed: u64,
    pub grid_points: usize,
    pub mode: BandMode,
    pub ccp: CcpConfig,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            distribution: Dist::Gaussian,
            n: 100,
            reps: 200,
            alpha: 0.1,
            subset_frac: 0.3,
            seed: 0,
            grid_points: 10_000,
            mode: BandMode::Interpolated,
            ccp: CcpConfig::default(),
        }
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if !(self.subset_frac > 0.0 && self.subset_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!("subset fraction must lie in (0, 1], got {}", self.subset_frac)));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("grid_points must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        self.ccp.validate()
    }
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub covered: bool,
    /// Some pointwise bound did not converge or the pipeline failed.
    pub failed: bool,
    /// Upper minus lower density at the sample quartiles.
    pub widths: [f64; 3],
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub distribution: Dist,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub subset_frac: f64,
    pub mode: BandMode,
    pub coverage: f64,
    pub width_q1: f64,
    pub width_q2: f64,
    pub width_q3: f64,
    pub mean_runtime_s: f64,
    pub failures: usize,
}

impl StudyReport {
    /// Equality of everything except timing.
    pub fn same_statistics(&self, other: &StudyReport) -> bool {
        let strip = |r: &StudyReport| StudyReport { mean_runtime_s: 0.0, ..r.clone() };
        strip(self) == strip(other)
    }
}

/// Type 7 sample quantile (linear interpolation between order statistics).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Sample used by repetition `rep` of a study with master seed `seed`.
pub fn rep_sample(dist: Dist, n: usize, seed: u64, rep: usize) -> Vec<f64> {
    dist.sample(n, &mut rep_rng(seed, rep))
}

pub fn run_rep(spec: &StudySpec, rep: usize) -> RepOutcome {
    let start = Instant::now();
    let mut data = rep_sample(spec.distribution, spec.n, spec.seed, rep);
    let result = compute_band(&data, spec.alpha, spec.subset_frac, &spec.ccp, spec.mode);
    let runtime_s = start.elapsed().as_secs_f64();
    let band = match result {
        Ok((band, _)) if !band.partial => band,
        _ => return RepOutcome { covered: false, failed: true, widths: [f64::NAN; 3], runtime_s },
    };
    data.sort_by(f64::total_cmp);
    let (a, z) = (data[0], data[data.len() - 1]);
    let f = |x: f64| spec.distribution.density(x);
    let covered = (0..spec.grid_points).all(|j| {
        let x = a + (z - a) * j as f64 / (spec.grid_points - 1) as f64;
        let (lo, hi) = band.eval_density_band(x);
        let fx = f(x);
        lo <= fx && fx <= hi
    });
    let widths = [0.25, 0.5, 0.75].map(|p| {
        let (lo, hi) = band.eval_density_band(quantile_sorted(&data, p));
        hi - lo
    });
    RepOutcome { covered, failed: false, widths, runtime_s }
}

pub fn summarize(spec: &StudySpec, outcomes: &[RepOutcome]) -> StudyReport {
    let reps = outcomes.len();
    let ok: Vec<&RepOutcome> = outcomes.iter().filter(|o| !o.failed).collect();
    let mean_width = |q: usize| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|o| o.widths[q]).sum::<f64>() / ok.len() as f64
        }
    };
    StudyReport {
        distribution: spec.distribution,
        n: spec.n,
        reps,
        alpha: spec.alpha,
        subset_frac: spec.subset_frac,
        mode: spec.mode,
        coverage: outcomes.iter().filter(|o| o.covered).count() as f64 / reps as f64,
        width_q1: mean_width(0),
        width_q2: mean_width(1),
        width_q3: mean_width(2),
        mean_runtime_s: outcomes.iter().map(|o| o.runtime_s).sum::<f64>() / reps as f64,
        failures: reps - ok.len(),
    }
}

pub fn run_study_outcomes(spec: &StudySpec) -> Result<Vec<RepOutcome>> {
    spec.validate()?;
    Ok((0..spec.reps).into_par_iter().map(|r| run_rep(spec, r)).collect())
}

pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    let outcomes = run_study_outcomes(spec)?;
    Ok(summarize(spec, &outcomes))
}

/// Aligned text table with one row per report.
pub fn format_table(reports: &[StudyReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>9} {:>9} {:>9} {:>9} {:>12} {:>9}",
        "Density", "n", "Coverage", "Width Q1", "Width Q2", "Width Q3", "Runtime (s)", "Failures"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>12.3} {:>9}",
            r.distribution.label(),
            r.n,
            r.coverage,
            r.width_q1,
            r.width_q2,
            r.width_q3,
            r.mean_runtime_s,
            r.failures
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::integrate;

    #[test]
    fn sample_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = |d: Dist, rng: &mut ChaCha8Rng| d.sample(1_000_000, rng).iter().sum::<f64>() / 1e6;
        assert!(mean(Dist::Uniform, &mut rng).abs() < 0.02);
        assert!((mean(Dist::Chisq, &mut rng) - 3.0).abs() < 0.01);
        assert!((mean(Dist::Gamma, &mut rng) - 1.0).abs() < 0.01);
        assert!(mean(Dist::Gaussian, &mut rng).abs() < 0.005);
    }

    #[test]
    fn density_values() {
        assert!((Dist::Gaussian.density(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((Dist::Uniform.density(3.0) - 0.05).abs() < 1e-15);
        assert_eq!(Dist::Uniform.density(10.5), 0.0);
        assert!((Dist::Chisq.density(1.0) - 0.241_970_724_519_143_37).abs() < 1e-14);
        assert_eq!(Dist::Chisq.density(-1.0), 0.0);
        assert!((Dist::Gamma.density(2.0) - (-2f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn densities_integrate_to_one() {
        let cases = [
            (Dist::Gaussian, -12.0, 12.0),
            (Dist::Uniform, -10.0, 10.0),
            (Dist::Chisq, 0.0, 80.0),
            (Dist::Gamma, 0.0, 60.0),
        ];
        for (d, a, b) in cases {
            let total = integrate(|x| d.density(x), a, b, 1e-12);
            assert!((total - 1.0).abs() < 1e-6, "{d:?}: {total}");
        }
    }

    #[test]
    fn log_density_derivatives() {
        for d in Dist::ALL {
            for x in [0.5, 1.3, 4.0] {
                let h = 1e-6;
                let fd = (d.log_density(x + h) - d.log_density(x - h)) / (2.0 * h);
                assert!((fd - d.log_density_deriv(x)).abs() < 1e-6, "{d:?} at {x}");
            }
        }
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
    }

    #[test]
    fn spec_validation() {
        assert!(StudySpec::default().validate().is_ok());
        assert!(StudySpec { reps: 0, ..StudySpec::default() }.validate().is_err());
        assert!(StudySpec { subset_frac: 0.0, ..StudySpec::default() }.validate().is_err());
        assert!(StudySpec { grid_points: 1, ..StudySpec::default() }.validate().is_err());
        assert!(StudySpec { alpha: 1.0, ..StudySpec::default() }.validate().is_err());
    }

    #[test]
    fn repeated_study_is_identical() {
        let spec = StudySpec { reps: 3, grid_points: 1000, ..StudySpec::default() };
        let a = run_study(&spec).unwrap();
        let b = run_study(&spec).unwrap();
        assert!(a.same_statistics(&b), "{a:?} vs {b:?}");
        let serial: Vec<RepOutcome> = (0..3).map(|r| run_rep(&spec, r)).collect();
        assert!(summarize(&spec, &serial).same_statistics(&a));
        assert!(a.coverage >= 0.0 && a.coverage <= 1.0 && a.width_q2 >= 0.0);
    }

    #[test]
    fn table_has_one_row_per_report() {
        let spec = StudySpec { reps: 2, grid_points: 100, ..StudySpec::default() };
        let r = run_study(&spec).unwrap();
        let table = format_table(&[r.clone(), r]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().starts_with("Gaussian"));
    }
}
