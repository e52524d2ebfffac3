//! Bayesian-bootstrap inference for the support-function process.
//!
//! Each draw reweights every estimation step — bounding-function fits, the
//! cross-moment matrix, and the support-function average — by i.i.d. unit
//! exponential weights `e_i / mean(e)`, holding the basis, grids, and tie
//! rule fixed. The recentered draws `sigma~ - sigma^` then stand in for the
//! sampling error of `sigma^`, which calibrates pointwise intervals,
//! uniform bands, functional critical values, and sign tests.
//!
//! Determinism: draw `b` uses a stream seeded by `(master seed, b)`, and
//! aggregation is an ordered reduction over the draw index, so results are
//! identical regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{fit_support, PipelineSpec, Prepared};
use crate::support::SupportSurface;
use crate::util::{derive_seed, quantile_type7, sample_sd};

/// Weight scheme for the ensemble. `Unit` is a degenerate-weights
/// diagnostic mode in which every draw must reproduce the base estimator
/// exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Exponential,
    Unit,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub seed: u64,
    pub scheme: WeightScheme,
}

impl BootstrapOptions {
    pub fn new(draws: usize, seed: u64) -> Self {
        BootstrapOptions {
            draws,
            seed,
            scheme: WeightScheme::Exponential,
        }
    }
}

/// The base surface plus `B` reweighted re-estimates.
pub struct BootstrapEnsemble {
    pub base: SupportSurface,
    /// Surviving draws, in draw order.
    pub draws: Vec<SupportSurface>,
    /// Indices of draws whose refit failed.
    pub failed: Vec<usize>,
    pub requested: usize,
    pub seed: u64,
    pub n: usize,
}

impl BootstrapEnsemble {
    /// Bootstrap standard deviation of `sigma~(q, a)` over surviving draws.
    pub fn cell_sd(&self, q_idx: usize, a_idx: usize) -> f64 {
        let values: Vec<f64> = self
            .draws
            .iter()
            .map(|s| s.sigma[(q_idx, a_idx)])
            .collect();
        sample_sd(&values)
    }

    /// Recentered draws `sigma~(q, a) - sigma^(q, a)`.
    pub fn draw_deltas(&self, q_idx: usize, a_idx: usize) -> Vec<f64> {
        let base = self.base.sigma[(q_idx, a_idx)];
        self.draws
            .iter()
            .map(|s| s.sigma[(q_idx, a_idx)] - base)
            .collect()
    }
}

/// Exponential bootstrap weights `e_i / mean(e)` for draw `b`.
fn draw_weights(n: usize, master_seed: u64, b: usize, scheme: WeightScheme) -> Vec<f64> {
    match scheme {
        WeightScheme::Unit => vec![1.0; n],
        WeightScheme::Exponential => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, b as u64));
            let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            let mean = raw.iter().sum::<f64>() / n as f64;
            raw.iter().map(|e| e / mean).collect()
        }
    }
}

/// Runs the Bayesian bootstrap: refits everything under per-draw
/// exponential weights. Failed draws are excluded with accounting; more
/// than 5% failures aborts.
pub fn bayesian_bootstrap(
    prep: &Prepared,
    spec: &PipelineSpec,
    base: &SupportSurface,
    opts: &BootstrapOptions,
) -> Result<BootstrapEnsemble> {
    if opts.draws < 50 {
        return Err(Error::Parameter(format!(
            "bootstrap needs at least 50 draws, got {}",
            opts.draws
        )));
    }
    let n = prep.ds.n();
    let results: Vec<Result<SupportSurface>> = (0..opts.draws)
        .into_par_iter()
        .map(|b| {
            let w = draw_weights(n, opts.seed, b, opts.scheme);
            fit_support(prep, spec, Some(&w))
        })
        .collect();

    let mut draws = Vec::with_capacity(opts.draws);
    let mut failed = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => draws.push(s),
            Err(_) => failed.push(b),
        }
    }
    if failed.len() * 20 > opts.draws {
        return Err(Error::FailureRate(format!(
            "{} of {} bootstrap draws failed",
            failed.len(),
            opts.draws
        )));
    }
    Ok(BootstrapEnsemble {
        base: base.clone(),
        draws,
        failed,
        requested: opts.draws,
        seed: opts.seed,
        n,
    })
}

/// Calibration record for a pointwise interval.
#[derive(Debug, Clone, Serialize)]
pub struct PointwiseInterval {
    pub lo: f64,
    pub hi: f64,
    /// The marginal exclusion level found by bisection.
    pub lambda: f64,
    /// Fraction of draws jointly inside at the chosen lambda.
    pub joint_coverage: f64,
}

/// Confidence interval covering the whole identified interval
/// `[-sigma(-q, a), sigma(q, a)]` with probability `level`.
///
/// Bootstrap pairs `(sigma^(-q) - sigma~(-q), sigma~(q) - sigma^(q))`
/// replicate the joint sampling error of the two endpoints; a single
/// marginal exclusion level `lambda` is tuned by bisection until the
/// fraction of draws with the first coordinate above its `lambda/2`
/// quantile and the second below its `1 - lambda/2` quantile reaches the
/// target, and the endpoint shifts are read off those quantiles.
pub fn pointwise_ci(
    ens: &BootstrapEnsemble,
    q: &DVector<f64>,
    a_idx: usize,
    level: f64,
) -> Result<PointwiseInterval> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Parameter("confidence level must be in (0, 1)".into()));
    }
    let tau = 1.0 - level;
    let b = ens.draws.len();
    if (b as f64) * tau < 5.0 {
        return Err(Error::Resolution(format!(
            "only {b} draws for tail mass {tau}; need B*tau >= 5"
        )));
    }
    let (plus, minus) = ens.base.directions.find_pair(q)?;
    let base_plus = ens.base.sigma[(plus, a_idx)];
    let base_minus = ens.base.sigma[(minus, a_idx)];
    let first: Vec<f64> = ens
        .draws
        .iter()
        .map(|s| base_minus - s.sigma[(minus, a_idx)])
        .collect();
    let second: Vec<f64> = ens
        .draws
        .iter()
        .map(|s| s.sigma[(plus, a_idx)] - base_plus)
        .collect();

    let mut sorted_first = first.clone();
    sorted_first.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sorted_second = second.clone();
    sorted_second.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let coverage_at = |lambda: f64| -> (f64, f64, f64) {
        let c_lo = crate::util::quantile_type7_sorted(&sorted_first, lambda / 2.0);
        let c_hi = crate::util::quantile_type7_sorted(&sorted_second, 1.0 - lambda / 2.0);
        let hits = first
            .iter()
            .zip(&second)
            .filter(|(u, v)| **u >= c_lo && **v <= c_hi)
            .count();
        (hits as f64 / b as f64, c_lo, c_hi)
    };

    // joint coverage decreases in lambda; find the largest lambda that
    // still meets the target
    let (mut lo_l, mut hi_l) = (0.0_f64, 1.0_f64);
    let target = level;
    for _ in 0..60 {
        let mid = 0.5 * (lo_l + hi_l);
        let (cov, _, _) = coverage_at(mid);
        if cov >= target {
            lo_l = mid;
        } else {
            hi_l = mid;
        }
    }
    let (joint_coverage, c_lo, c_hi) = coverage_at(lo_l);
    Ok(PointwiseInterval {
        lo: -base_minus + c_lo,
        hi: base_plus + c_hi,
        lambda: lo_l,
        joint_coverage,
    })
}

/// Denominator choice for uniform bands and studentized functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandWeight {
    One,
    InvSd,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformBand {
    /// Directions included (indices into the ensemble's direction set).
    pub directions: Vec<usize>,
    pub critical_value: f64,
    /// `|subset| x |grid|` denominators.
    pub varpi: Vec<Vec<f64>>,
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
    /// True when a degenerate bootstrap sd forced the unit weight.
    pub weight_fallback: bool,
}

impl UniformBand {
    /// Does the band contain the given surface at every covered cell?
    pub fn covers(&self, reference: &dyn Fn(usize, usize) -> f64) -> bool {
        for (row, &q_idx) in self.directions.iter().enumerate() {
            for a in 0..self.lo[row].len() {
                let v = reference(q_idx, a);
                if v < self.lo[row][a] || v > self.hi[row][a] {
                    return false;
                }
            }
        }
        true
    }
}

/// Uniform band over a direction subset and the full grid: the critical
/// value is the `level`-quantile over draws of the weighted sup deviation,
/// and the band is `sigma^ +/- c * varpi`.
pub fn uniform_band(
    ens: &BootstrapEnsemble,
    direction_subset: &[usize],
    level: f64,
    weight: BandWeight,
) -> Result<UniformBand> {
    if direction_subset.is_empty() {
        return Err(Error::Parameter("direction subset must be nonempty".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Parameter("confidence level must be in (0, 1)".into()));
    }
    let g = ens.base.grid.len();
    let mut varpi = vec![vec![1.0; g]; direction_subset.len()];
    let mut weight_fallback = false;
    if weight == BandWeight::InvSd {
        let mut sds = vec![vec![0.0; g]; direction_subset.len()];
        let mut degenerate = false;
        for (row, &q_idx) in direction_subset.iter().enumerate() {
            for a in 0..g {
                let sd = ens.cell_sd(q_idx, a);
                if sd < 1e-12 {
                    degenerate = true;
                }
                sds[row][a] = sd;
            }
        }
        if degenerate {
            weight_fallback = true;
        } else {
            varpi = sds;
        }
    }

    let mut sups = Vec::with_capacity(ens.draws.len());
    for draw in &ens.draws {
        let mut sup = 0.0_f64;
        for (row, &q_idx) in direction_subset.iter().enumerate() {
            for a in 0..g {
                let dev = (draw.sigma[(q_idx, a)] - ens.base.sigma[(q_idx, a)]).abs()
                    / varpi[row][a];
                sup = sup.max(dev);
            }
        }
        sups.push(sup);
    }
    let critical_value = quantile_type7(&sups, level);

    let mut lo = vec![vec![0.0; g]; direction_subset.len()];
    let mut hi = vec![vec![0.0; g]; direction_subset.len()];
    for (row, &q_idx) in direction_subset.iter().enumerate() {
        for a in 0..g {
            let center = ens.base.sigma[(q_idx, a)];
            lo[row][a] = center - critical_value * varpi[row][a];
            hi[row][a] = center + critical_value * varpi[row][a];
        }
    }
    Ok(UniformBand {
        directions: direction_subset.to_vec(),
        critical_value,
        varpi,
        lo,
        hi,
        weight_fallback,
    })
}

/// Functional statistics of a support-function perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Kolmogorov,
    DirectedKolmogorov,
    CramerVonMises,
}

/// Evaluates the functional on a `|Q| x |grid|` field `s` over the listed
/// cells. `varpi` must be strictly positive on the cells. The
/// Cramer-von-Mises integral uses the uniform discrete measure on the
/// supplied cells.
pub fn functional_statistic(
    s: &DMatrix<f64>,
    kind: FunctionalKind,
    varpi: &DMatrix<f64>,
    cells: &[(usize, usize)],
) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::Parameter("functional needs a nonempty cell set".into()));
    }
    for &(q, a) in cells {
        if varpi[(q, a)] <= 0.0 {
            return Err(Error::Parameter("weighting function must be positive".into()));
        }
    }
    let value = match kind {
        FunctionalKind::Kolmogorov => cells
            .iter()
            .map(|&(q, a)| s[(q, a)].abs() / varpi[(q, a)])
            .fold(0.0_f64, f64::max),
        FunctionalKind::DirectedKolmogorov => cells
            .iter()
            .map(|&(q, a)| (-s[(q, a)]).max(0.0) / varpi[(q, a)])
            .fold(0.0_f64, f64::max),
        FunctionalKind::CramerVonMises => {
            let total: f64 = cells
                .iter()
                .map(|&(q, a)| s[(q, a)] * s[(q, a)] / varpi[(q, a)])
                .sum();
            total / cells.len() as f64
        }
    };
    Ok(value)
}

/// Empirical `level`-quantile over draws of the functional applied to the
/// scaled bootstrap process `sqrt(n) (sigma~ - sigma^)`.
pub fn bootstrap_critical_value(
    ens: &BootstrapEnsemble,
    kind: FunctionalKind,
    varpi: &DMatrix<f64>,
    cells: &[(usize, usize)],
    level: f64,
) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Parameter("quantile level must be in (0, 1)".into()));
    }
    let root_n = (ens.n as f64).sqrt();
    let mut values = Vec::with_capacity(ens.draws.len());
    for draw in &ens.draws {
        let s = (&draw.sigma - &ens.base.sigma) * root_n;
        values.push(functional_statistic(&s, kind, varpi, cells)?);
    }
    Ok(quantile_type7(&values, level))
}

/// Sign test report: is zero inside the identified interval of coefficient
/// `j` at every grid level?
#[derive(Debug, Clone, Serialize)]
pub struct SignTestReport {
    pub coefficient: usize,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub level: f64,
    /// Per grid level: (alpha, scaled lower-positive part, scaled
    /// upper-negative part).
    pub per_alpha: Vec<(f64, f64, f64)>,
    pub weight_fallback: bool,
}

/// Tests whether `0` can be excluded from the bound on coefficient `j`
/// uniformly over the grid: positive evidence is a lower bound above zero
/// or an upper bound below zero. Critical values come from the
/// least-favorable recentering (both population bounds at zero), which
/// makes the test conservative when the band is wide.
pub fn sign_positivity_test(
    ens: &BootstrapEnsemble,
    j: usize,
    level: f64,
) -> Result<SignTestReport> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Parameter("test level must be in (0, 1)".into()));
    }
    let (plus, minus) = ens.base.directions.axis_pair(j)?;
    let g = ens.base.grid.len();
    let root_n = (ens.n as f64).sqrt();

    // studentizing weights with degenerate-sd fallback
    let mut rho_plus = vec![1.0; g];
    let mut rho_minus = vec![1.0; g];
    let mut weight_fallback = false;
    for a in 0..g {
        let sd_p = ens.cell_sd(plus, a);
        let sd_m = ens.cell_sd(minus, a);
        if sd_p < 1e-12 || sd_m < 1e-12 {
            weight_fallback = true;
        }
        rho_plus[a] = 1.0 / sd_p.max(1e-12);
        rho_minus[a] = 1.0 / sd_m.max(1e-12);
    }
    if weight_fallback {
        rho_plus = vec![1.0; g];
        rho_minus = vec![1.0; g];
    }

    let piece = |sigma_minus: f64, sigma_plus: f64, a: usize| -> (f64, f64) {
        let lower_positive = if -sigma_minus > 0.0 {
            sigma_minus.abs() * rho_minus[a]
        } else {
            0.0
        };
        let upper_negative = if sigma_plus < 0.0 {
            sigma_plus.abs() * rho_plus[a]
        } else {
            0.0
        };
        (lower_positive, upper_negative)
    };

    let mut statistic = 0.0_f64;
    let mut per_alpha = Vec::with_capacity(g);
    for a in 0..g {
        let (lp, un) = piece(ens.base.sigma[(minus, a)], ens.base.sigma[(plus, a)], a);
        statistic = statistic.max(lp.max(un));
        per_alpha.push((ens.base.grid.values()[a], root_n * lp, root_n * un));
    }
    statistic *= root_n;

    // least-favorable recentering: apply the same functional to the
    // bootstrap noise sigma~ - sigma^
    let mut draw_stats = Vec::with_capacity(ens.draws.len());
    for draw in &ens.draws {
        let mut t = 0.0_f64;
        for a in 0..g {
            let dm = draw.sigma[(minus, a)] - ens.base.sigma[(minus, a)];
            let dp = draw.sigma[(plus, a)] - ens.base.sigma[(plus, a)];
            let (lp, un) = piece(dm, dp, a);
            t = t.max(lp.max(un));
        }
        draw_stats.push(root_n * t);
    }
    let critical_value = quantile_type7(&draw_stats, level);

    Ok(SignTestReport {
        coefficient: j,
        statistic,
        critical_value,
        reject: statistic > critical_value,
        level,
        per_alpha,
        weight_fallback,
    })
}

/// Serializable inference report (JSON).
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceReport {
    pub kind: String,
    pub level: f64,
    pub grid: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub cells: Vec<ReportCell>,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum ReportCell {
    Interval {
        q: Vec<f64>,
        alpha: f64,
        lo: f64,
        hi: f64,
    },
    Band {
        q: Vec<f64>,
        alpha: f64,
        lo: f64,
        estimate: f64,
        hi: f64,
    },
    Test {
        stat: f64,
        crit: f64,
        reject: bool,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
}

impl ConfidenceReport {
    pub fn meta_from(ens: &BootstrapEnsemble) -> ReportMeta {
        ReportMeta {
            b: ens.requested,
            seed: ens.seed,
            failures: ens.failed.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::bounds::{BoundMethod, IndexGrid};
    use crate::dataset::{Dataset, Roles, INTERCEPT};
    use crate::pipeline::{prepare, run_pipeline, DirectionsSpec};
    use indexmap::IndexMap;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn interval_ds(n: usize, seed: u64, half_width: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y0 = Vec::new();
        let mut y1 = Vec::new();
        let mut x1 = Vec::new();
        for _ in 0..n {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = 1.0 + 0.5 * x + 0.3 * e;
            y0.push(y - half_width);
            y1.push(y + half_width);
            x1.push(x);
        }
        let mut cols = IndexMap::new();
        cols.insert("y0".to_string(), y0);
        cols.insert("y1".to_string(), y1);
        cols.insert("x1".to_string(), x1);
        Dataset::new(
            cols,
            Roles {
                y_lower: Some("y0".into()),
                y_upper: Some("y1".into()),
                x: vec![INTERCEPT.into(), "x1".into()],
                ..Roles::default()
            },
        )
        .unwrap()
    }

    fn mean_spec() -> PipelineSpec {
        PipelineSpec {
            basis: BasisSpec::polynomial(1),
            grid: IndexGrid::singleton(0.0),
            method: BoundMethod::MeanInterval,
            restriction: None,
            v_support: None,
            directions: DirectionsSpec::AxesPm,
            weight_matrix: None,
            jitter: None,
            sort_crossings: false,
        }
    }

    fn make_ensemble(n: usize, seed: u64, half_width: f64, b: usize) -> BootstrapEnsemble {
        let ds = interval_ds(n, seed, half_width);
        let spec = mean_spec();
        let (prep, _, base) = run_pipeline(&ds, &spec).unwrap();
        bayesian_bootstrap(&prep, &spec, &base, &BootstrapOptions::new(b, seed + 1)).unwrap()
    }

    #[test]
    fn unit_weight_hook_reproduces_base_in_every_draw() {
        let ds = interval_ds(50, 1, 0.2);
        let spec = mean_spec();
        let (prep, _, base) = run_pipeline(&ds, &spec).unwrap();
        let opts = BootstrapOptions {
            draws: 50,
            seed: 3,
            scheme: WeightScheme::Unit,
        };
        let ens = bayesian_bootstrap(&prep, &spec, &base, &opts).unwrap();
        for draw in &ens.draws {
            assert_eq!(draw.sigma, base.sigma);
        }
    }

    #[test]
    fn ensembles_are_deterministic_in_seed() {
        let a = make_ensemble(60, 5, 0.2, 60);
        let b = make_ensemble(60, 5, 0.2, 60);
        assert_eq!(a.draws.len(), b.draws.len());
        for (da, db) in a.draws.iter().zip(&b.draws) {
            assert_eq!(da.sigma, db.sigma);
        }
    }

    #[test]
    fn bootstrap_sd_tracks_analytic_slope_standard_error() {
        // point-identified band: sigma~(e2) draws are reweighted LS slopes
        let n = 200;
        let ds = interval_ds(n, 7, 0.0);
        let spec = mean_spec();
        let (prep, _, base) = run_pipeline(&ds, &spec).unwrap();
        let ens =
            bayesian_bootstrap(&prep, &spec, &base, &BootstrapOptions::new(200, 11)).unwrap();
        let (plus, _) = ens.base.directions.axis_pair(1).unwrap();
        let boot_sd = ens.cell_sd(plus, 0);

        // analytic sandwich standard error of the OLS slope
        let x = ds.x_matrix().unwrap();
        let y = ds.column("y0").unwrap(); // zero width: y0 = y1 = y
        let fit = crate::solvers::weighted_least_squares(&x, y, &vec![1.0; n]).unwrap();
        let fitted = &x * &fit.theta;
        let xx = x.transpose() * &x;
        let xx_inv = xx.try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..n {
            let r = y[i] - fitted[i];
            for a in 0..2 {
                for c in 0..2 {
                    meat[(a, c)] += x[(i, a)] * x[(i, c)] * r * r;
                }
            }
        }
        let cov = &xx_inv * meat * &xx_inv;
        let analytic_se = cov[(1, 1)].sqrt();
        assert!(
            (boot_sd - analytic_se).abs() <= 0.3 * analytic_se,
            "bootstrap sd {boot_sd} vs analytic {analytic_se}"
        );
    }

    #[test]
    fn bootstrap_draws_recenter_around_base() {
        let ens = make_ensemble(150, 9, 0.0, 150);
        let (plus, _) = ens.base.directions.axis_pair(1).unwrap();
        let deltas = ens.draw_deltas(plus, 0);
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let sd = sample_sd(&deltas);
        assert!(mean.abs() <= 3.0 * sd / (deltas.len() as f64).sqrt() + 1e-12);
    }

    #[test]
    fn pointwise_intervals_are_nested_and_collapse_at_zero_level() {
        let ens = make_ensemble(80, 13, 0.2, 120);
        let q = DVector::from_vec(vec![0.0, 1.0]);
        let wide = pointwise_ci(&ens, &q, 0, 0.95).unwrap();
        let mid = pointwise_ci(&ens, &q, 0, 0.80).unwrap();
        assert!(wide.lo <= mid.lo + 1e-12);
        assert!(mid.hi <= wide.hi + 1e-12);

        // level -> 0 collapses toward the estimated bound
        let tiny = pointwise_ci(&ens, &q, 0, 0.02).unwrap();
        let bound = ens.base.project_bounds(&q).unwrap()[0];
        let slack = 3.0 * ens.cell_sd(ens.base.directions.find_pair(&q).unwrap().0, 0);
        assert!((tiny.lo - bound.0).abs() <= slack + 1e-9);
        assert!((tiny.hi - bound.1).abs() <= slack + 1e-9);
        // and the interval still contains the estimated bound ordering
        assert!(tiny.lo <= tiny.hi + 1e-12);
    }

    #[test]
    fn pointwise_ci_is_roughly_symmetric_on_point_identified_data() {
        let ens = make_ensemble(150, 15, 0.0, 200);
        let q = DVector::from_vec(vec![0.0, 1.0]);
        let ci = pointwise_ci(&ens, &q, 0, 0.90).unwrap();
        let (plus, _) = ens.base.directions.axis_pair(1).unwrap();
        let center = ens.base.sigma[(plus, 0)];
        let below = center - ci.lo;
        let above = ci.hi - center;
        let se = ens.cell_sd(plus, 0);
        assert!((below - above).abs() <= 2.0 * se, "below {below}, above {above}, se {se}");
    }

    #[test]
    fn pointwise_ci_needs_enough_draws() {
        let ens = make_ensemble(40, 17, 0.2, 60);
        let q = DVector::from_vec(vec![0.0, 1.0]);
        // tau = 0.05 needs B*tau >= 5 i.e. B >= 100
        let err = pointwise_ci(&ens, &q, 0, 0.95).unwrap_err();
        assert!(matches!(err, Error::Resolution(_)));
    }

    #[test]
    fn uniform_band_is_monotone_in_level_and_reduces_to_pointwise() {
        let ens = make_ensemble(80, 19, 0.2, 100);
        let all: Vec<usize> = (0..ens.base.directions.len()).collect();
        let b90 = uniform_band(&ens, &all, 0.90, BandWeight::One).unwrap();
        let b95 = uniform_band(&ens, &all, 0.95, BandWeight::One).unwrap();
        for row in 0..all.len() {
            for a in 0..ens.base.grid.len() {
                assert!(b95.lo[row][a] <= b90.lo[row][a] + 1e-12);
                assert!(b90.hi[row][a] <= b95.hi[row][a] + 1e-12);
            }
        }
        // singleton subset: symmetric band at the marginal sup quantile
        let single = uniform_band(&ens, &[all[0]], 0.90, BandWeight::One).unwrap();
        let devs: Vec<f64> = ens
            .draws
            .iter()
            .map(|d| (d.sigma[(all[0], 0)] - ens.base.sigma[(all[0], 0)]).abs())
            .collect();
        let expected = quantile_type7(&devs, 0.90);
        assert!((single.critical_value - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sd_falls_back_to_unit_weight() {
        let ds = interval_ds(50, 21, 0.2);
        let spec = mean_spec();
        let (prep, _, base) = run_pipeline(&ds, &spec).unwrap();
        let opts = BootstrapOptions {
            draws: 50,
            seed: 23,
            scheme: WeightScheme::Unit, // all draws identical: sd = 0
        };
        let ens = bayesian_bootstrap(&prep, &spec, &base, &opts).unwrap();
        let all: Vec<usize> = (0..ens.base.directions.len()).collect();
        let band = uniform_band(&ens, &all, 0.90, BandWeight::InvSd).unwrap();
        assert!(band.weight_fallback);
    }

    #[test]
    fn functional_statistics_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let s = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let varpi = DMatrix::from_element(5, 3, 1.0);
        let cells: Vec<(usize, usize)> = (0..5).flat_map(|q| (0..3).map(move |a| (q, a))).collect();

        // zero field: all three vanish
        let zeros = DMatrix::zeros(5, 3);
        for kind in [
            FunctionalKind::Kolmogorov,
            FunctionalKind::DirectedKolmogorov,
            FunctionalKind::CramerVonMises,
        ] {
            assert_eq!(functional_statistic(&zeros, kind, &varpi, &cells).unwrap(), 0.0);
        }

        // constant positive field: kolmogorov = c, directed = 0
        let c = 0.7;
        let constant = DMatrix::from_element(5, 3, c);
        assert!(
            (functional_statistic(&constant, FunctionalKind::Kolmogorov, &varpi, &cells).unwrap()
                - c)
                .abs()
                < 1e-15
        );
        assert_eq!(
            functional_statistic(&constant, FunctionalKind::DirectedKolmogorov, &varpi, &cells)
                .unwrap(),
            0.0
        );

        // CvM equals the mean of s^2 over the 15 cells
        let direct: f64 = cells.iter().map(|&(q, a)| s[(q, a)] * s[(q, a)]).sum::<f64>() / 15.0;
        assert!(
            (functional_statistic(&s, FunctionalKind::CramerVonMises, &varpi, &cells).unwrap()
                - direct)
                .abs()
                < 1e-15
        );

        // positive homogeneity: degree 1 for sup statistics, 2 for CvM
        let s3 = &s * 3.0;
        let k1 = functional_statistic(&s, FunctionalKind::Kolmogorov, &varpi, &cells).unwrap();
        let k3 = functional_statistic(&s3, FunctionalKind::Kolmogorov, &varpi, &cells).unwrap();
        assert!((k3 - 3.0 * k1).abs() < 1e-12);
        let d1 =
            functional_statistic(&s, FunctionalKind::DirectedKolmogorov, &varpi, &cells).unwrap();
        let d3 =
            functional_statistic(&s3, FunctionalKind::DirectedKolmogorov, &varpi, &cells).unwrap();
        assert!((d3 - 3.0 * d1).abs() < 1e-12);
        let c1 = functional_statistic(&s, FunctionalKind::CramerVonMises, &varpi, &cells).unwrap();
        let c3 = functional_statistic(&s3, FunctionalKind::CramerVonMises, &varpi, &cells).unwrap();
        assert!((c3 - 9.0 * c1).abs() < 1e-12);
    }

    #[test]
    fn critical_value_at_single_cell_is_marginal_quantile() {
        let ens = make_ensemble(60, 27, 0.2, 80);
        let varpi = DMatrix::from_element(ens.base.sigma.nrows(), ens.base.sigma.ncols(), 1.0);
        let cells = vec![(0usize, 0usize)];
        let root_n = (ens.n as f64).sqrt();
        let c = bootstrap_critical_value(&ens, FunctionalKind::Kolmogorov, &varpi, &cells, 0.5)
            .unwrap();
        let marginal: Vec<f64> = ens
            .draws
            .iter()
            .map(|d| root_n * (d.sigma[(0, 0)] - ens.base.sigma[(0, 0)]).abs())
            .collect();
        assert!((c - quantile_type7(&marginal, 0.5)).abs() < 1e-12);

        // sup over two cells dominates each marginal
        let cells2 = vec![(0usize, 0usize), (1usize, 0usize)];
        let c2 = bootstrap_critical_value(&ens, FunctionalKind::Kolmogorov, &varpi, &cells2, 0.9)
            .unwrap();
        for cell in cells2 {
            let m: Vec<f64> = ens
                .draws
                .iter()
                .map(|d| root_n * (d.sigma[(cell.0, cell.1)] - ens.base.sigma[cell]).abs())
                .collect();
            assert!(c2 >= quantile_type7(&m, 0.9) - 1e-12);
        }
    }

    #[test]
    fn sign_test_never_rejects_a_wide_straddling_band() {
        // wide band around zero slope: both bound estimates straddle zero
        let ens = make_ensemble(100, 29, 2.0, 80);
        let report = sign_positivity_test(&ens, 1, 0.95).unwrap();
        assert_eq!(report.statistic, 0.0);
        assert!(!report.reject);
    }
}
