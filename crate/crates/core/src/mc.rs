//! Monte Carlo validation harness: synthetic data generators whose
//! identified sets are analytically known, a quasi-random population oracle
//! for the support function, and coverage/size/power experiments.
//!
//! Shipped generators keep the bounding functions in closed form (constant
//! half-width brackets around a linear model), so experiments isolate the
//! inference error from any bound-estimation bias.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::BasisSpec;
use crate::bounds::{BoundMethod, IndexGrid};
use crate::dataset::{Dataset, Roles, INTERCEPT};
use crate::error::{Error, Result};
use crate::inference::{
    bayesian_bootstrap, pointwise_ci, sign_positivity_test, uniform_band, BandWeight,
    BootstrapOptions,
};
use crate::pipeline::{fit_bounds, prepare, DirectionsSpec, PipelineSpec};
use crate::support::compute_support_surface;
use crate::util::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RegressorLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl RegressorLaw {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            RegressorLaw::Uniform { lo, hi } => lo + rng.random::<f64>() * (hi - lo),
            RegressorLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            RegressorLaw::Discrete { values, probs } => {
                let u = rng.random::<f64>();
                self.quantile_of(u, values, probs)
            }
        }
    }

    fn quantile_of(&self, u: f64, values: &[f64], probs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (v, p) in values.iter().zip(probs) {
            acc += p;
            if u <= acc {
                return *v;
            }
        }
        *values.last().unwrap()
    }

    /// Inverse CDF, used by the deterministic quadrature.
    fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            RegressorLaw::Uniform { lo, hi } => lo + u * (hi - lo),
            RegressorLaw::Normal { mean, sd } => {
                let n = Normal::new(0.0, 1.0).expect("standard normal");
                mean + sd * n.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
            }
            RegressorLaw::Discrete { values, probs } => self.quantile_of(u, values, probs),
        }
    }

    fn mean(&self) -> f64 {
        match self {
            RegressorLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            RegressorLaw::Normal { mean, .. } => *mean,
            RegressorLaw::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    fn variance(&self) -> f64 {
        match self {
            RegressorLaw::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            RegressorLaw::Normal { sd, .. } => sd * sd,
            RegressorLaw::Discrete { values, probs } => {
                let m = self.mean();
                values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (v - m) * (v - m))
                    .sum()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseLaw {
    Normal { sd: f64 },
    Uniform { half_width: f64 },
}

impl NoiseLaw {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseLaw::Normal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            NoiseLaw::Uniform { half_width } => (2.0 * rng.random::<f64>() - 1.0) * half_width,
        }
    }

    fn quantile(&self, alpha: f64) -> f64 {
        match self {
            NoiseLaw::Normal { sd } => {
                let n = Normal::new(0.0, 1.0).expect("standard normal");
                sd * n.inverse_cdf(alpha)
            }
            NoiseLaw::Uniform { half_width } => (2.0 * alpha - 1.0) * half_width,
        }
    }
}

/// How the observed interval brackets the latent outcome.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bracket {
    /// `y0 = y - c`, `y1 = y + c`; bounding functions are the shifted
    /// conditional mean/quantile functions, available in closed form.
    HalfWidth { c: f64 },
    /// Rounding to a fixed step; no closed-form bounds.
    Rounding { step: f64 },
}

/// Logistic selection probability `P(u = 1 | x, v)` with clamping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionRule {
    pub intercept: f64,
    pub slope_x: f64,
    pub slope_v: f64,
    /// Probabilities are clamped to `[min_prob, 1 - min_prob]`.
    pub min_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    IntervalMean,
    IntervalQuantile,
    Selection,
}

/// Synthetic data-generating process with a linear latent model
/// `y = x' beta + e`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    /// Coefficients including the intercept; `d = beta.len()`.
    pub beta: Vec<f64>,
    /// Laws for the `d - 1` non-constant regressors (independent).
    pub regressors: Vec<RegressorLaw>,
    pub noise: NoiseLaw,
    #[serde(default)]
    pub bracket: Option<Bracket>,
    #[serde(default)]
    pub selection: Option<SelectionRule>,
    #[serde(default)]
    pub instrument: Option<RegressorLaw>,
}

impl DgpSpec {
    /// The default experiment process: interval mean regression with one
    /// uniform regressor and a constant-width bracket.
    pub fn interval_mean_default() -> Self {
        DgpSpec {
            kind: DgpKind::IntervalMean,
            beta: vec![1.0, 0.5],
            regressors: vec![RegressorLaw::Uniform { lo: -1.0, hi: 1.0 }],
            noise: NoiseLaw::Normal { sd: 0.5 },
            bracket: Some(Bracket::HalfWidth { c: 0.25 }),
            selection: None,
            instrument: None,
        }
    }

    fn d(&self) -> usize {
        self.beta.len()
    }

    fn validate(&self) -> Result<()> {
        if self.beta.is_empty() {
            return Err(Error::Parameter("beta must be nonempty".into()));
        }
        if self.regressors.len() + 1 != self.beta.len() {
            return Err(Error::Parameter(format!(
                "got {} regressor laws for {} coefficients (intercept excluded)",
                self.regressors.len(),
                self.beta.len()
            )));
        }
        match self.kind {
            DgpKind::IntervalMean | DgpKind::IntervalQuantile => {
                if self.bracket.is_none() {
                    return Err(Error::Parameter("interval processes need a bracket rule".into()));
                }
            }
            DgpKind::Selection => {
                if self.selection.is_none() {
                    return Err(Error::Parameter("selection process needs a selection rule".into()));
                }
            }
        }
        Ok(())
    }
}

/// Draws a reproducible dataset from the process.
pub fn simulate_dgp(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Parameter("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d();
    let mut x_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d - 1];
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let mut xb = spec.beta[0];
        for (j, law) in spec.regressors.iter().enumerate() {
            let xj = law.sample(&mut rng);
            xb += spec.beta[j + 1] * xj;
            x_cols[j].push(xj);
        }
        latent.push(xb + spec.noise.sample(&mut rng));
    }

    let mut cols = indexmap::IndexMap::new();
    let mut roles = Roles {
        x: std::iter::once(INTERCEPT.to_string())
            .chain((1..d).map(|j| format!("x{j}")))
            .collect(),
        ..Roles::default()
    };
    for (j, col) in x_cols.into_iter().enumerate() {
        cols.insert(format!("x{}", j + 1), col);
    }

    match spec.kind {
        DgpKind::IntervalMean | DgpKind::IntervalQuantile => {
            let bracket = spec.bracket.unwrap();
            let (y0, y1): (Vec<f64>, Vec<f64>) = latent
                .iter()
                .map(|y| match bracket {
                    Bracket::HalfWidth { c } => (y - c, y + c),
                    Bracket::Rounding { step } => {
                        let lo = (y / step).floor() * step;
                        (lo, lo + step)
                    }
                })
                .unzip();
            cols.insert("y0".to_string(), y0);
            cols.insert("y1".to_string(), y1);
            cols.insert("y_latent".to_string(), latent);
            roles.y_lower = Some("y0".into());
            roles.y_upper = Some("y1".into());
        }
        DgpKind::Selection => {
            let rule = spec.selection.unwrap();
            let mut v_col = Vec::with_capacity(n);
            let mut u_col = Vec::with_capacity(n);
            let mut y_col = Vec::with_capacity(n);
            let x1 = cols.get("x1").cloned().unwrap_or_else(|| vec![0.0; n]);
            for i in 0..n {
                let v = match &spec.instrument {
                    Some(law) => law.sample(&mut rng),
                    None => 0.0,
                };
                let eta = rule.intercept + rule.slope_x * x1[i] + rule.slope_v * v;
                let p = (1.0 / (1.0 + (-eta).exp()))
                    .clamp(rule.min_prob, 1.0 - rule.min_prob);
                let u = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                v_col.push(v);
                u_col.push(u);
                y_col.push(if u == 1.0 { latent[i] } else { 0.0 });
            }
            cols.insert("y".to_string(), y_col);
            cols.insert("u".to_string(), u_col);
            roles.y = Some("y".into());
            roles.selection_u = Some("u".into());
            if spec.instrument.is_some() {
                cols.insert("v".to_string(), v_col);
                roles.v = vec!["v".into()];
            }
        }
    }
    Dataset::new(cols, roles)
}

fn analytic_second_moment(spec: &DgpSpec) -> DMatrix<f64> {
    let d = spec.d();
    let mut m = DMatrix::zeros(d, d);
    m[(0, 0)] = 1.0;
    for j in 1..d {
        let mu = spec.regressors[j - 1].mean();
        m[(0, j)] = mu;
        m[(j, 0)] = mu;
    }
    for r in 1..d {
        for c in 1..d {
            let mr = spec.regressors[r - 1].mean();
            let mc = spec.regressors[c - 1].mean();
            m[(r, c)] = if r == c {
                mr * mr + spec.regressors[r - 1].variance()
            } else {
                mr * mc
            };
        }
    }
    m
}

fn analytic_theta(spec: &DgpSpec, x: &DVector<f64>, alpha: f64) -> Result<(f64, f64)> {
    let xb: f64 = spec
        .beta
        .iter()
        .enumerate()
        .map(|(j, b)| b * x[j])
        .sum();
    let c = match spec.bracket {
        Some(Bracket::HalfWidth { c }) => c,
        _ => {
            return Err(Error::Unsupported(
                "population oracle requires the half-width bracket".into(),
            ))
        }
    };
    match spec.kind {
        DgpKind::IntervalMean => Ok((xb - c, xb + c)),
        DgpKind::IntervalQuantile => {
            let qe = spec.noise.quantile(alpha);
            Ok((xb + qe - c, xb + qe + c))
        }
        DgpKind::Selection => Err(Error::Unsupported(
            "population oracle is unavailable for the selection process".into(),
        )),
    }
}

/// Population support function `sigma0(q, alpha)` of the shipped interval
/// processes, by quasi-random integration of the closed-form bounds over
/// the regressor law. Point identification (`c = 0`) short-circuits to the
/// exact value `q' beta`.
pub fn population_support_oracle(
    spec: &DgpSpec,
    q: &DVector<f64>,
    alpha: f64,
    n_nodes: usize,
) -> Result<f64> {
    spec.validate()?;
    if n_nodes == 0 {
        return Err(Error::Parameter("quadrature needs at least one node".into()));
    }
    if q.len() != spec.d() {
        return Err(Error::Parameter("direction dimension mismatch".into()));
    }
    if let (Some(Bracket::HalfWidth { c }), DgpKind::IntervalMean) = (spec.bracket, spec.kind) {
        if c == 0.0 {
            return Ok(q.dot(&DVector::from_vec(spec.beta.clone())));
        }
    }
    let sigma = analytic_second_moment(spec)
        .try_inverse()
        .ok_or_else(|| Error::Singular("population second moment not invertible".into()))?;
    let qt_sigma = sigma.transpose() * q;

    // Kronecker lattice over the regressor quantile space
    let m = spec.d() - 1;
    let mut phi = 1.5_f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (m as f64 + 1.0));
    }
    let gammas: Vec<f64> = (1..=m.max(1))
        .map(|j| (1.0 / phi.powi(j as i32)).fract())
        .collect();

    let mut acc = 0.0;
    let mut x = DVector::zeros(spec.d());
    x[0] = 1.0;
    for i in 0..n_nodes {
        for j in 0..m {
            let u = (0.5 + (i as f64 + 1.0) * gammas[j]).fract();
            x[j + 1] = spec.regressors[j].inverse_cdf(u);
        }
        let zq = qt_sigma.dot(&x);
        let (t0, t1) = analytic_theta(spec, &x, alpha)?;
        let pick = if zq > 0.0 { t1 } else { t0 };
        acc += zq * pick;
    }
    Ok(acc / n_nodes as f64)
}

/// Options for a coverage experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageOptions {
    pub replications: usize,
    pub n: usize,
    pub draws: usize,
    pub level: f64,
    pub seed: u64,
    /// Coefficient targeted by the pointwise interval.
    pub coefficient: usize,
    /// Grid index at which the pointwise interval is evaluated.
    pub grid_index: usize,
    /// Quantile grid for the interval-quantile process; ignored otherwise.
    pub grid: Option<Vec<f64>>,
    pub oracle_nodes: usize,
}

impl CoverageOptions {
    pub fn new(replications: usize, n: usize, draws: usize, level: f64, seed: u64) -> Self {
        CoverageOptions {
            replications,
            n,
            draws,
            level,
            seed,
            coefficient: 1,
            grid_index: 0,
            grid: None,
            oracle_nodes: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub covered_pointwise: bool,
    pub covered_uniform: bool,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub replications: usize,
    pub n: usize,
    pub draws: usize,
    pub level: f64,
    pub seed: u64,
    pub pointwise_coverage: f64,
    /// Binomial standard errors; absent for a single replication.
    pub pointwise_se: Option<f64>,
    pub uniform_coverage: f64,
    pub uniform_se: Option<f64>,
    pub mean_ci_width: f64,
    pub oracle_lo: f64,
    pub oracle_hi: f64,
    pub failures: usize,
    pub per_rep: Vec<RepRecord>,
}

impl CoverageReport {
    /// One CSV row per replication.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rep", "covered_pointwise", "covered_uniform", "ci_lo", "ci_hi"])?;
        for r in &self.per_rep {
            w.write_record(&[
                r.rep.to_string(),
                (r.covered_pointwise as u8).to_string(),
                (r.covered_uniform as u8).to_string(),
                format!("{}", r.ci_lo),
                format!("{}", r.ci_hi),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pipeline_spec_for(spec: &DgpSpec, grid: IndexGrid) -> Result<PipelineSpec> {
    let method = match spec.kind {
        DgpKind::IntervalMean => BoundMethod::MeanInterval,
        DgpKind::IntervalQuantile => BoundMethod::QuantileInterval,
        DgpKind::Selection => {
            return Err(Error::Unsupported(
                "coverage experiments ship for the interval processes".into(),
            ))
        }
    };
    Ok(PipelineSpec {
        basis: BasisSpec::polynomial(1),
        grid,
        method,
        restriction: None,
        v_support: None,
        directions: DirectionsSpec::AxesPm,
        weight_matrix: None,
        jitter: None,
        sort_crossings: false,
    })
}

fn experiment_grid(spec: &DgpSpec, opts: &CoverageOptions) -> Result<IndexGrid> {
    match spec.kind {
        DgpKind::IntervalMean => Ok(IndexGrid::singleton(0.0)),
        DgpKind::IntervalQuantile => IndexGrid::quantiles(
            opts.grid
                .clone()
                .unwrap_or_else(|| vec![0.25, 0.5, 0.75]),
        ),
        DgpKind::Selection => Err(Error::Unsupported("selection has no oracle grid".into())),
    }
}

/// Runs the full pipeline `R` times on fresh draws from the process and
/// reports how often the pointwise interval covers the oracle bound on the
/// chosen coefficient and how often the uniform band covers the oracle
/// support surface over the axis directions.
pub fn coverage_experiment(spec: &DgpSpec, opts: &CoverageOptions) -> Result<CoverageReport> {
    spec.validate()?;
    if opts.replications == 0 {
        return Err(Error::Parameter("need at least one replication".into()));
    }
    let grid = experiment_grid(spec, opts)?;
    let pipe = pipeline_spec_for(spec, grid.clone())?;
    let d = spec.d();
    let j = opts.coefficient;
    if j >= d {
        return Err(Error::Parameter(format!("coefficient {j} out of range")));
    }

    // oracle values, one per (axis direction, grid level)
    let dirs = DirectionsSpec::AxesPm.build(d)?;
    let mut oracle = vec![vec![0.0; grid.len()]; dirs.len()];
    for (qi, q) in dirs.dirs().iter().enumerate() {
        for (a, &alpha) in grid.values().iter().enumerate() {
            oracle[qi][a] = population_support_oracle(spec, q, alpha, opts.oracle_nodes)?;
        }
    }
    let mut ej = DVector::zeros(d);
    ej[j] = 1.0;
    let (plus, minus) = dirs.find_pair(&ej)?;
    let oracle_hi = oracle[plus][opts.grid_index];
    let oracle_lo = -oracle[minus][opts.grid_index];

    let results: Vec<Result<RepRecord>> = (0..opts.replications)
        .into_par_iter()
        .map(|rep| {
            let data_seed = derive_seed(opts.seed, 2 * rep as u64);
            let boot_seed = derive_seed(opts.seed, 2 * rep as u64 + 1);
            let ds = simulate_dgp(spec, opts.n, data_seed)?;
            let prep = prepare(&ds, &pipe)?;
            let bs = fit_bounds(&prep, &pipe, None)?;
            let w = prep.ds.effective_weights(None)?;
            let base = compute_support_surface(
                &prep.x,
                &prep.z,
                &bs,
                &prep.directions,
                &w,
                &prep.z_descriptor,
            )?;
            let ens = bayesian_bootstrap(
                &prep,
                &pipe,
                &base,
                &BootstrapOptions::new(opts.draws, boot_seed),
            )?;
            let ci = pointwise_ci(&ens, &ej, opts.grid_index, opts.level)?;
            let covered_pointwise = ci.lo <= oracle_lo && oracle_hi <= ci.hi;

            let all: Vec<usize> = (0..ens.base.directions.len()).collect();
            let band = uniform_band(&ens, &all, opts.level, BandWeight::InvSd)?;
            let covered_uniform = band.covers(&|q_idx, a| oracle[q_idx][a]);

            Ok(RepRecord {
                rep,
                covered_pointwise,
                covered_uniform,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            })
        })
        .collect();

    let mut per_rep = Vec::with_capacity(opts.replications);
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(rec) => per_rep.push(rec),
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > opts.replications {
        return Err(Error::FailureRate(format!(
            "{failures} of {} replications failed",
            opts.replications
        )));
    }
    let m = per_rep.len().max(1) as f64;
    let p_cov = per_rep.iter().filter(|r| r.covered_pointwise).count() as f64 / m;
    let u_cov = per_rep.iter().filter(|r| r.covered_uniform).count() as f64 / m;
    let width = per_rep.iter().map(|r| r.ci_hi - r.ci_lo).sum::<f64>() / m;
    let se = |p: f64| {
        if per_rep.len() >= 2 {
            Some((p * (1.0 - p) / m).sqrt())
        } else {
            None
        }
    };
    Ok(CoverageReport {
        replications: opts.replications,
        n: opts.n,
        draws: opts.draws,
        level: opts.level,
        seed: opts.seed,
        pointwise_coverage: p_cov,
        pointwise_se: se(p_cov),
        uniform_coverage: u_cov,
        uniform_se: se(u_cov),
        mean_ci_width: width,
        oracle_lo,
        oracle_hi,
        failures,
        per_rep,
    })
}

/// Sign-test rejection rate over repeated samples from the process; used
/// for size and power experiments.
pub fn sign_test_rejection_rate(
    spec: &DgpSpec,
    replications: usize,
    n: usize,
    draws: usize,
    test_level: f64,
    coefficient: usize,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    let grid = IndexGrid::singleton(0.0);
    let pipe = pipeline_spec_for(spec, grid)?;
    let results: Vec<Result<bool>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let data_seed = derive_seed(seed, 2 * rep as u64);
            let boot_seed = derive_seed(seed, 2 * rep as u64 + 1);
            let ds = simulate_dgp(spec, n, data_seed)?;
            let prep = prepare(&ds, &pipe)?;
            let bs = fit_bounds(&prep, &pipe, None)?;
            let w = prep.ds.effective_weights(None)?;
            let base = compute_support_surface(
                &prep.x,
                &prep.z,
                &bs,
                &prep.directions,
                &w,
                &prep.z_descriptor,
            )?;
            let ens = bayesian_bootstrap(
                &prep,
                &pipe,
                &base,
                &BootstrapOptions::new(draws, boot_seed),
            )?;
            let report = sign_positivity_test(&ens, coefficient, 1.0 - test_level)?;
            Ok(report.reject)
        })
        .collect();
    let mut rejections = 0usize;
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(true) => rejections += 1,
            Ok(false) => {}
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > replications {
        return Err(Error::FailureRate(format!(
            "{failures} of {replications} replications failed"
        )));
    }
    Ok(rejections as f64 / (replications - failures) as f64)
}
