//! Construction of the bounding surfaces `theta0(x, a) <= f(x, a) <=
//! theta1(x, a)` for every supported setting: interval-valued outcomes
//! (mean, quantile, and distribution regression), sample selection through
//! the pseudo-outcome transform, instrument intersection, monotone
//! interval-regressor envelopes, selection restrictions, and
//! treatment-effect combination.
//!
//! A fitted [`BoundingSurface`] stores the two `n x |grid|` matrices of
//! fitted values at the sample points plus, when the bound comes from a
//! coefficient fit, the per-index coefficient vectors for out-of-sample
//! evaluation. Surfaces are immutable; transformations return new surfaces.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::BasisMatrix;
use crate::dataset::{BoundMagnitudes, Dataset};
use crate::error::{Error, Result};
use crate::solvers::{
    weighted_distribution_regression, weighted_least_squares, weighted_quantile_regression, Link,
};

const QR_TOL: f64 = 1e-9;
const QR_MAX_ITER: usize = 400;
const DR_TOL: f64 = 1e-10;
const DR_MAX_ITER: usize = 200;

/// Sorted vector of index values: quantile levels, thresholds, or a
/// singleton for mean regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexGrid {
    values: Vec<f64>,
}

impl IndexGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("index grid must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("index grid values must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(
                "index grid values must be strictly increasing".into(),
            ));
        }
        Ok(IndexGrid { values })
    }

    /// Grid of quantile levels; all values must lie strictly inside (0, 1).
    pub fn quantiles(values: Vec<f64>) -> Result<Self> {
        let grid = Self::new(values)?;
        if grid.values.iter().any(|v| *v <= 0.0 || *v >= 1.0) {
            return Err(Error::Parameter(
                "quantile levels must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(grid)
    }

    /// The trivial index set used by mean regression.
    pub fn singleton(value: f64) -> Self {
        IndexGrid {
            values: vec![value],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which bound construction produced a surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MethodTag {
    MeanInterval,
    QuantileInterval,
    DistributionInterval,
    SelectionQuantile,
    SelectionIntersected,
    IntervalRegressor,
    TreatmentEffect,
    Restricted(String),
}

/// The bound construction to run.
#[derive(Debug, Clone)]
pub enum BoundMethod {
    /// Interval outcome, conditional mean: least squares on each endpoint.
    MeanInterval,
    /// Interval outcome, conditional quantiles at each grid level.
    QuantileInterval,
    /// Interval outcome, distribution regression at each grid threshold
    /// with the given link; the sides swap (the upper outcome bounds the
    /// distribution from below).
    DistributionInterval { link: Link },
    /// Sample selection with logical outcome bounds; infinite sentinels are
    /// admissible only on grid levels inside the informative region.
    SelectionQuantile { y_lo: f64, y_hi: f64 },
}

/// Restrictions that tighten the upper selection bound.
#[derive(Debug, Clone, Serialize)]
pub enum SelectionRestriction {
    /// Observed outcomes stochastically dominate unobserved ones: the upper
    /// bound collapses to the observed-data quantile regression.
    StochasticDominance,
    /// The `alpha1` quantile of observed outcomes bounds the `alpha0`
    /// quantile of unobserved ones.
    QuantileRestriction { alpha0: f64, alpha1: f64 },
}

/// Per-row record of which instrument value attained the envelope.
#[derive(Debug, Clone)]
pub struct InstrumentSelection {
    pub v_support: Vec<f64>,
    /// Flattened `n x |grid|` (row-major) argmax indices for the lower bound.
    pub argmax_lower: Vec<usize>,
    /// Same layout, argmin indices for the upper bound.
    pub argmin_upper: Vec<usize>,
}

/// Logical bounds a selection fit was run with, kept for restrictions.
#[derive(Debug, Clone, Copy)]
pub struct SelectionInfo {
    pub y_lo: f64,
    pub y_hi: f64,
}

/// Fitted lower/upper bounding functions on the sample.
#[derive(Debug, Clone)]
pub struct BoundingSurface {
    /// `n x |grid|` fitted values.
    pub theta0: DMatrix<f64>,
    pub theta1: DMatrix<f64>,
    /// Per-grid-index coefficient vectors, absent for envelope-type bounds.
    pub coef0: Option<Vec<DVector<f64>>>,
    pub coef1: Option<Vec<DVector<f64>>>,
    pub method: MethodTag,
    pub grid: IndexGrid,
    /// Number of cells with `theta0 > theta1`.
    pub crossing_count: usize,
    pub instrument_selection: Option<InstrumentSelection>,
    pub selection_info: Option<SelectionInfo>,
    /// Evaluation abscissae when rows are a grid rather than sample points
    /// (interval-regressor envelopes).
    pub eval_points: Option<Vec<f64>>,
}

impl BoundingSurface {
    fn assemble(
        theta0: DMatrix<f64>,
        theta1: DMatrix<f64>,
        coef0: Option<Vec<DVector<f64>>>,
        coef1: Option<Vec<DVector<f64>>>,
        method: MethodTag,
        grid: IndexGrid,
    ) -> Result<Self> {
        if theta0.shape() != theta1.shape() {
            return Err(Error::Parameter("bound surfaces differ in shape".into()));
        }
        if theta0.iter().chain(theta1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Informativeness(
                "bounding surface has non-finite entries; restrict the index grid \
                 to the informative region or supply finite logical bounds"
                    .into(),
            ));
        }
        let crossing_count = theta0
            .iter()
            .zip(theta1.iter())
            .filter(|(a, b)| a > b)
            .count();
        Ok(BoundingSurface {
            theta0,
            theta1,
            coef0,
            coef1,
            method,
            grid,
            crossing_count,
            instrument_selection: None,
            selection_info: None,
            eval_points: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.theta0.nrows()
    }

    /// Sample-mean magnitudes maximized over the grid; the jitter noise
    /// scale plugs these in for the population moments.
    pub fn magnitudes(&self) -> BoundMagnitudes {
        let n = self.theta0.nrows() as f64;
        let g = self.grid.len();
        let mut m0: f64 = 0.0;
        let mut m1: f64 = 0.0;
        let mut mw: f64 = 0.0;
        for a in 0..g {
            let col0 = self.theta0.column(a);
            let col1 = self.theta1.column(a);
            m0 = m0.max(col0.iter().map(|v| v.abs()).sum::<f64>() / n);
            m1 = m1.max(col1.iter().map(|v| v.abs()).sum::<f64>() / n);
            mw = mw.max(
                col0.iter()
                    .zip(col1.iter())
                    .map(|(a, b)| (b - a).abs())
                    .sum::<f64>()
                    / n,
            );
        }
        BoundMagnitudes {
            mean_abs_theta0: m0,
            mean_abs_theta1: m1,
            mean_abs_width: mw,
        }
    }

    /// Opt-in repair of crossing cells: each violating `(theta0, theta1)`
    /// pair is swapped. The default pipeline keeps crossings raw and only
    /// reports them, since silent rearrangement biases the support function.
    pub fn with_sorted_cells(&self) -> BoundingSurface {
        let mut out = self.clone();
        for i in 0..out.theta0.nrows() {
            for a in 0..out.theta0.ncols() {
                if out.theta0[(i, a)] > out.theta1[(i, a)] {
                    let t = out.theta0[(i, a)];
                    out.theta0[(i, a)] = out.theta1[(i, a)];
                    out.theta1[(i, a)] = t;
                }
            }
        }
        out.crossing_count = 0;
        out
    }
}

/// Crossing report cell; `grid_index` indexes into the surface grid.
#[derive(Debug, Clone, Serialize)]
pub struct CrossingCell {
    pub row: usize,
    pub grid_index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    pub cells: Vec<CrossingCell>,
    pub max_violation: f64,
    pub fraction: f64,
}

/// Lists every cell where the fitted lower bound exceeds the fitted upper
/// bound. The framework assumes the population bounds are ordered; finite
/// samples can violate this and the violation pattern is diagnostic.
pub fn crossing_diagnostic(bs: &BoundingSurface) -> CrossingReport {
    let mut cells = Vec::new();
    let mut max_violation: f64 = 0.0;
    for i in 0..bs.theta0.nrows() {
        for a in 0..bs.theta0.ncols() {
            let gap = bs.theta0[(i, a)] - bs.theta1[(i, a)];
            if gap > 0.0 {
                cells.push(CrossingCell {
                    row: i,
                    grid_index: a,
                    magnitude: gap,
                });
                max_violation = max_violation.max(gap);
            }
        }
    }
    let total = (bs.theta0.nrows() * bs.theta0.ncols()).max(1);
    CrossingReport {
        fraction: cells.len() as f64 / total as f64,
        cells,
        max_violation,
    }
}

fn effective_weights(ds: &Dataset, extra: Option<&[f64]>) -> Result<Vec<f64>> {
    ds.effective_weights(extra)
}

fn cell_err(side: usize, index: f64, e: Error) -> Error {
    match e {
        Error::Separation(msg) => {
            Error::Separation(format!("at (side {side}, index {index}): {msg}"))
        }
        other => Error::Solver(format!("at (side {side}, index {index}): {other}")),
    }
}

/// Proxy values standing in for infinite logical bounds, plus the escape
/// thresholds used to reject fits that leave the observed range.
struct SentinelGuard {
    lo_proxy: f64,
    hi_proxy: f64,
    lo_escape: Option<f64>,
    hi_escape: Option<f64>,
}

fn selection_guard(ds: &Dataset, y_lo: f64, y_hi: f64, grid: &IndexGrid) -> Result<SentinelGuard> {
    let y = ds.y()?;
    let u = ds.selection_u()?;
    let n = ds.n();
    let selected: Vec<f64> = (0..n).filter(|&i| u[i] == 1.0).map(|i| y[i]).collect();
    let any_unselected = selected.len() < n;
    let p_hat = selected.len() as f64 / n as f64;
    let obs_min = selected.iter().cloned().fold(f64::INFINITY, f64::min);
    let obs_max = selected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (obs_max - obs_min).max(1.0);

    let mut guard = SentinelGuard {
        lo_proxy: y_lo,
        hi_proxy: y_hi,
        lo_escape: None,
        hi_escape: None,
    };
    if y_lo == f64::NEG_INFINITY && any_unselected {
        let min_level = grid.values()[0];
        if min_level <= 1.0 - p_hat {
            return Err(Error::Informativeness(format!(
                "grid level {min_level} touches the infinite lower sentinel; restrict \
                 to the informative region {:.4} < a < {:.4}",
                1.0 - p_hat,
                p_hat
            )));
        }
        guard.lo_proxy = obs_min - 10.0 * range;
        guard.lo_escape = Some(obs_min - range);
    }
    if y_hi == f64::INFINITY && any_unselected {
        let max_level = *grid.values().last().unwrap();
        if max_level >= p_hat {
            return Err(Error::Informativeness(format!(
                "grid level {max_level} touches the infinite upper sentinel; restrict \
                 to the informative region {:.4} < a < {:.4}",
                1.0 - p_hat,
                p_hat
            )));
        }
        guard.hi_proxy = obs_max + 10.0 * range;
        guard.hi_escape = Some(obs_max + range);
    }
    Ok(guard)
}

fn check_escape(
    guard: &SentinelGuard,
    theta0: &DMatrix<f64>,
    theta1: &DMatrix<f64>,
    grid: &IndexGrid,
) -> Result<()> {
    if let Some(thresh) = guard.lo_escape {
        for a in 0..theta0.ncols() {
            if theta0.column(a).iter().any(|v| *v < thresh) {
                return Err(Error::Informativeness(format!(
                    "lower bound at index {} escapes below the observed range; the \
                     infinite sentinel binds there — restrict the grid",
                    grid.values()[a]
                )));
            }
        }
    }
    if let Some(thresh) = guard.hi_escape {
        for a in 0..theta1.ncols() {
            if theta1.column(a).iter().any(|v| *v > thresh) {
                return Err(Error::Informativeness(format!(
                    "upper bound at index {} escapes above the observed range; the \
                     infinite sentinel binds there — restrict the grid",
                    grid.values()[a]
                )));
            }
        }
    }
    Ok(())
}

/// Fits the bounding surfaces for the requested method on a pre-built
/// basis. `obs_weights` multiplies any role weights; the bootstrap passes
/// its exponential weights here.
pub fn fit_bounding_surface(
    ds: &Dataset,
    basis: &BasisMatrix,
    grid: &IndexGrid,
    method: &BoundMethod,
    obs_weights: Option<&[f64]>,
) -> Result<BoundingSurface> {
    if basis.p.nrows() != ds.n() {
        return Err(Error::Parameter("basis rows do not match dataset".into()));
    }
    let w = effective_weights(ds, obs_weights)?;
    let n = ds.n();
    let g = grid.len();

    match method {
        BoundMethod::MeanInterval => {
            if g != 1 {
                return Err(Error::Parameter(
                    "mean regression uses a singleton index grid".into(),
                ));
            }
            let lo = column_for(ds, &ds.roles.y_lower.clone(), "y_lower")?;
            let hi = column_for(ds, &ds.roles.y_upper.clone(), "y_upper")?;
            let fit0 = weighted_least_squares(&basis.p, lo, &w)
                .map_err(|e| cell_err(0, grid.values()[0], e))?;
            let fit1 = weighted_least_squares(&basis.p, hi, &w)
                .map_err(|e| cell_err(1, grid.values()[0], e))?;
            let theta0 = DMatrix::from_column_slice(n, 1, (&basis.p * &fit0.theta).as_slice());
            let theta1 = DMatrix::from_column_slice(n, 1, (&basis.p * &fit1.theta).as_slice());
            BoundingSurface::assemble(
                theta0,
                theta1,
                Some(vec![fit0.theta]),
                Some(vec![fit1.theta]),
                MethodTag::MeanInterval,
                grid.clone(),
            )
        }
        BoundMethod::QuantileInterval => {
            require_quantile_grid(grid)?;
            let lo = column_for(ds, &ds.roles.y_lower.clone(), "y_lower")?;
            let hi = column_for(ds, &ds.roles.y_upper.clone(), "y_upper")?;
            fit_quantile_pair(basis, lo, hi, grid, &w, MethodTag::QuantileInterval)
        }
        BoundMethod::DistributionInterval { link } => {
            let lo = column_for(ds, &ds.roles.y_lower.clone(), "y_lower")?;
            let hi = column_for(ds, &ds.roles.y_upper.clone(), "y_upper")?;
            let mut theta0 = DMatrix::zeros(n, g);
            let mut theta1 = DMatrix::zeros(n, g);
            let mut coef0 = Vec::with_capacity(g);
            let mut coef1 = Vec::with_capacity(g);
            for (a, &threshold) in grid.values().iter().enumerate() {
                // side swap: the upper outcome bounds the distribution from
                // below, so theta0 comes from y_upper and theta1 from y_lower
                let b_from_hi: Vec<f64> =
                    hi.iter().map(|v| if *v < threshold { 1.0 } else { 0.0 }).collect();
                let b_from_lo: Vec<f64> =
                    lo.iter().map(|v| if *v < threshold { 1.0 } else { 0.0 }).collect();
                let fit0 =
                    weighted_distribution_regression(&basis.p, &b_from_hi, *link, &w, DR_TOL, DR_MAX_ITER)
                        .map_err(|e| cell_err(0, threshold, e))?;
                let fit1 =
                    weighted_distribution_regression(&basis.p, &b_from_lo, *link, &w, DR_TOL, DR_MAX_ITER)
                        .map_err(|e| cell_err(1, threshold, e))?;
                let f0 = &basis.p * &fit0.theta;
                let f1 = &basis.p * &fit1.theta;
                for i in 0..n {
                    theta0[(i, a)] = f0[i];
                    theta1[(i, a)] = f1[i];
                }
                coef0.push(fit0.theta);
                coef1.push(fit1.theta);
            }
            BoundingSurface::assemble(
                theta0,
                theta1,
                Some(coef0),
                Some(coef1),
                MethodTag::DistributionInterval,
                grid.clone(),
            )
        }
        BoundMethod::SelectionQuantile { y_lo, y_hi } => {
            require_quantile_grid(grid)?;
            let guard = selection_guard(ds, *y_lo, *y_hi, grid)?;
            let (t0, t1) = ds.build_tilde_y(guard.lo_proxy, guard.hi_proxy)?;
            let mut bs = fit_quantile_pair(basis, &t0, &t1, grid, &w, MethodTag::SelectionQuantile)?;
            check_escape(&guard, &bs.theta0, &bs.theta1, grid)?;
            bs.selection_info = Some(SelectionInfo {
                y_lo: *y_lo,
                y_hi: *y_hi,
            });
            Ok(bs)
        }
    }
}

fn column_for<'d>(ds: &'d Dataset, role: &Option<String>, what: &str) -> Result<&'d [f64]> {
    match role {
        Some(name) => ds.column(name),
        None => Err(Error::Role(format!("role '{what}' is required but unset"))),
    }
}

fn require_quantile_grid(grid: &IndexGrid) -> Result<()> {
    if grid.values().iter().any(|v| *v <= 0.0 || *v >= 1.0) {
        return Err(Error::Parameter(
            "quantile methods need grid levels strictly inside (0, 1)".into(),
        ));
    }
    Ok(())
}

fn fit_quantile_pair(
    basis: &BasisMatrix,
    lo: &[f64],
    hi: &[f64],
    grid: &IndexGrid,
    w: &[f64],
    method: MethodTag,
) -> Result<BoundingSurface> {
    let n = basis.p.nrows();
    let g = grid.len();
    let mut theta0 = DMatrix::zeros(n, g);
    let mut theta1 = DMatrix::zeros(n, g);
    let mut coef0 = Vec::with_capacity(g);
    let mut coef1 = Vec::with_capacity(g);
    for (a, &alpha) in grid.values().iter().enumerate() {
        let fit0 = weighted_quantile_regression(&basis.p, lo, alpha, w, QR_TOL, QR_MAX_ITER)
            .map_err(|e| cell_err(0, alpha, e))?;
        let fit1 = weighted_quantile_regression(&basis.p, hi, alpha, w, QR_TOL, QR_MAX_ITER)
            .map_err(|e| cell_err(1, alpha, e))?;
        let f0 = &basis.p * &fit0.theta;
        let f1 = &basis.p * &fit1.theta;
        for i in 0..n {
            theta0[(i, a)] = f0[i];
            theta1[(i, a)] = f1[i];
        }
        coef0.push(fit0.theta);
        coef1.push(fit1.theta);
    }
    BoundingSurface::assemble(theta0, theta1, Some(coef0), Some(coef1), method, grid.clone())
}

/// Intersection bounds over an excluded instrument: fit the selection
/// quantile bounds on a basis over `(x, v)`, then take the per-row envelope
/// over candidate instrument values. The candidate set approximates
/// `supp(v | x)` by the supplied global support (rectangular-support
/// assumption).
pub fn intersect_over_instrument(
    ds: &Dataset,
    basis_xv: &BasisMatrix,
    grid: &IndexGrid,
    v_support: &[f64],
    method: &BoundMethod,
    obs_weights: Option<&[f64]>,
) -> Result<BoundingSurface> {
    if v_support.is_empty() {
        return Err(Error::Parameter("instrument support must be nonempty".into()));
    }
    let (y_lo, y_hi) = match method {
        BoundMethod::SelectionQuantile { y_lo, y_hi } => (*y_lo, *y_hi),
        _ => {
            return Err(Error::Parameter(
                "intersection bounds require the selection quantile method".into(),
            ))
        }
    };
    if ds.roles.v.len() != 1 {
        return Err(Error::Role(
            "intersection bounds need exactly one excluded-instrument column".into(),
        ));
    }
    require_quantile_grid(grid)?;
    let w = effective_weights(ds, obs_weights)?;
    let guard = selection_guard(ds, y_lo, y_hi, grid)?;
    let (t0, t1) = ds.build_tilde_y(guard.lo_proxy, guard.hi_proxy)?;
    let fitted = fit_quantile_pair(basis_xv, &t0, &t1, grid, &w, MethodTag::SelectionIntersected)?;
    let coef0 = fitted.coef0.as_ref().unwrap();
    let coef1 = fitted.coef1.as_ref().unwrap();

    let n = ds.n();
    let g = grid.len();
    let x = ds.x_matrix()?;
    let n_x_inputs = x.ncols() - 1;
    let mut theta0 = DMatrix::zeros(n, g);
    let mut theta1 = DMatrix::zeros(n, g);
    let mut argmax_lower = vec![0usize; n * g];
    let mut argmin_upper = vec![0usize; n * g];
    let mut point = vec![0.0; n_x_inputs + 1];
    for i in 0..n {
        for j in 0..n_x_inputs {
            point[j] = x[(i, j + 1)];
        }
        for (vi, &v) in v_support.iter().enumerate() {
            point[n_x_inputs] = v;
            let row = basis_xv.evaluate(&point)?;
            for a in 0..g {
                let q0 = row.dot(&coef0[a]);
                let q1 = row.dot(&coef1[a]);
                if vi == 0 || q0 > theta0[(i, a)] {
                    theta0[(i, a)] = q0;
                    argmax_lower[i * g + a] = vi;
                }
                if vi == 0 || q1 < theta1[(i, a)] {
                    theta1[(i, a)] = q1;
                    argmin_upper[i * g + a] = vi;
                }
            }
        }
    }
    check_escape(&guard, &theta0, &theta1, grid)?;
    let mut bs = BoundingSurface::assemble(
        theta0,
        theta1,
        None,
        None,
        MethodTag::SelectionIntersected,
        grid.clone(),
    )?;
    bs.instrument_selection = Some(InstrumentSelection {
        v_support: v_support.to_vec(),
        argmax_lower,
        argmin_upper,
    });
    bs.selection_info = Some(SelectionInfo { y_lo, y_hi });
    Ok(bs)
}

/// Applies a selection restriction, replacing the upper surface and leaving
/// the lower one untouched.
pub fn apply_selection_restriction(
    bs: &BoundingSurface,
    restriction: &SelectionRestriction,
    ds: &Dataset,
    basis: &BasisMatrix,
    grid: &IndexGrid,
    obs_weights: Option<&[f64]>,
) -> Result<BoundingSurface> {
    if !matches!(
        bs.method,
        MethodTag::SelectionQuantile | MethodTag::SelectionIntersected
    ) {
        return Err(Error::Parameter(
            "selection restrictions apply only to selection-method surfaces".into(),
        ));
    }
    if grid != &bs.grid {
        return Err(Error::Parameter("restriction grid differs from surface grid".into()));
    }
    let n = ds.n();
    let g = grid.len();
    let w = effective_weights(ds, obs_weights)?;
    let u = ds.selection_u()?;
    let y = ds.y()?;
    let w_selected: Vec<f64> = (0..n).map(|i| w[i] * u[i]).collect();

    let mut out = bs.clone();
    match restriction {
        SelectionRestriction::StochasticDominance => {
            let mut coef1 = Vec::with_capacity(g);
            for (a, &alpha) in grid.values().iter().enumerate() {
                let fit =
                    weighted_quantile_regression(&basis.p, y, alpha, &w_selected, QR_TOL, QR_MAX_ITER)
                        .map_err(|e| cell_err(1, alpha, e))?;
                let fitted = &basis.p * &fit.theta;
                for i in 0..n {
                    out.theta1[(i, a)] = fitted[i];
                }
                coef1.push(fit.theta);
            }
            out.coef1 = Some(coef1);
            out.method = MethodTag::Restricted("stochastic_dominance".into());
        }
        SelectionRestriction::QuantileRestriction { alpha0, alpha1 } => {
            if !(0.0 < *alpha0 && *alpha0 < 1.0 && 0.0 < *alpha1 && *alpha1 < 1.0) {
                return Err(Error::Parameter(
                    "restriction quantile levels must lie in (0, 1)".into(),
                ));
            }
            let info = bs.selection_info.ok_or_else(|| {
                Error::Parameter("surface carries no logical-bound record".into())
            })?;
            // conditional quantile of observed outcomes at level alpha1
            let fit_q = weighted_quantile_regression(
                &basis.p, y, *alpha1, &w_selected, QR_TOL, QR_MAX_ITER,
            )
            .map_err(|e| cell_err(1, *alpha1, e))?;
            let q_fit_vec = &basis.p * &fit_q.theta;
            let q_fit: Vec<f64> = q_fit_vec.iter().cloned().collect();

            // the pseudo-rows need a usable upper sentinel
            let guard = selection_guard(ds, info.y_lo, info.y_hi, grid)?;
            let pseudo = ds.build_restricted_tilde_y1(*alpha0, *alpha1, guard.hi_proxy, &q_fit)?;
            let m = pseudo.values.len();
            let k = basis.p.ncols();
            let mut p_pseudo = DMatrix::zeros(m, k);
            let mut w_pseudo = vec![0.0; m];
            for (j, &row) in pseudo.rows.iter().enumerate() {
                for c in 0..k {
                    p_pseudo[(j, c)] = basis.p[(row, c)];
                }
                w_pseudo[j] = pseudo.weights[j] * w[row];
            }
            let mut coef1 = Vec::with_capacity(g);
            for (a, &alpha) in grid.values().iter().enumerate() {
                let fit = weighted_quantile_regression(
                    &p_pseudo,
                    &pseudo.values,
                    alpha,
                    &w_pseudo,
                    QR_TOL,
                    QR_MAX_ITER,
                )
                .map_err(|e| cell_err(1, alpha, e))?;
                let fitted = &basis.p * &fit.theta;
                for i in 0..n {
                    out.theta1[(i, a)] = fitted[i];
                }
                coef1.push(fit.theta);
            }
            check_escape(&guard, &out.theta0, &out.theta1, grid)?;
            out.coef1 = Some(coef1);
            out.method = MethodTag::Restricted(format!(
                "quantile_restriction({alpha0},{alpha1})"
            ));
        }
    }
    out.crossing_count = out
        .theta0
        .iter()
        .zip(out.theta1.iter())
        .filter(|(a, b)| a > b)
        .count();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneDirection {
    Nondecreasing,
    Nonincreasing,
}

/// Monotone envelope bounds for a scalar interval-valued regressor.
///
/// Fits `m(x0, x1) = E[y | x0, x1]` by series least squares, then builds
/// `theta0(t) = max { m_i : rows whose interval lies weakly below t }` and
/// `theta1(t) = min { m_i : rows whose interval lies weakly above t }` on
/// the evaluation grid (sides flip for the nonincreasing direction). Rows
/// are the evaluation points, not sample points.
pub fn fit_interval_regressor_bounds(
    ds: &Dataset,
    conditioning_basis: &BasisMatrix,
    eval_points: &[f64],
    direction: MonotoneDirection,
    logical_bounds: Option<(f64, f64)>,
    obs_weights: Option<&[f64]>,
) -> Result<BoundingSurface> {
    let x0 = column_for(ds, &ds.roles.x_lower.clone(), "x_lower")?;
    let x1 = column_for(ds, &ds.roles.x_upper.clone(), "x_upper")?;
    let y = ds.y()?;
    if eval_points.is_empty() {
        return Err(Error::Parameter("evaluation grid must be nonempty".into()));
    }
    for i in 0..ds.n() {
        if x0[i] > x1[i] {
            return Err(Error::Parameter(format!(
                "interval regressor endpoints out of order at row {i}"
            )));
        }
    }
    let w = effective_weights(ds, obs_weights)?;
    let fit = weighted_least_squares(&conditioning_basis.p, y, &w)?;
    let m_hat = &conditioning_basis.p * &fit.theta;

    let n = ds.n();
    let mut theta0 = DMatrix::zeros(eval_points.len(), 1);
    let mut theta1 = DMatrix::zeros(eval_points.len(), 1);
    for (t_idx, &t) in eval_points.iter().enumerate() {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let (below, above) = match direction {
                MonotoneDirection::Nondecreasing => (x1[i] <= t, x0[i] >= t),
                MonotoneDirection::Nonincreasing => (x0[i] >= t, x1[i] <= t),
            };
            if below {
                lo = lo.max(m_hat[i]);
            }
            if above {
                hi = hi.min(m_hat[i]);
            }
        }
        if !lo.is_finite() {
            match logical_bounds {
                Some((l, _)) => lo = l,
                None => {
                    return Err(Error::Informativeness(format!(
                        "no sample interval bounds the function from below at x = {t}; \
                         supply logical bounds"
                    )))
                }
            }
        }
        if !hi.is_finite() {
            match logical_bounds {
                Some((_, h)) => hi = h,
                None => {
                    return Err(Error::Informativeness(format!(
                        "no sample interval bounds the function from above at x = {t}; \
                         supply logical bounds"
                    )))
                }
            }
        }
        theta0[(t_idx, 0)] = lo;
        theta1[(t_idx, 0)] = hi;
    }
    let mut bs = BoundingSurface::assemble(
        theta0,
        theta1,
        None,
        None,
        MethodTag::IntervalRegressor,
        IndexGrid::singleton(0.0),
    )?;
    bs.eval_points = Some(eval_points.to_vec());
    Ok(bs)
}

/// Bounds on the difference between two partially identified outcomes
/// (treated minus control):
/// `theta0_TE = theta0_T - theta1_C`, `theta1_TE = theta1_T - theta0_C`.
pub fn combine_treatment_effect(
    bs_t: &BoundingSurface,
    bs_c: &BoundingSurface,
) -> Result<BoundingSurface> {
    if bs_t.grid != bs_c.grid {
        return Err(Error::Parameter("treatment and control grids differ".into()));
    }
    if bs_t.theta0.shape() != bs_c.theta0.shape() {
        return Err(Error::Parameter(
            "treatment and control surfaces differ in shape".into(),
        ));
    }
    let theta0 = &bs_t.theta0 - &bs_c.theta1;
    let theta1 = &bs_t.theta1 - &bs_c.theta0;
    BoundingSurface::assemble(
        theta0,
        theta1,
        None,
        None,
        MethodTag::TreatmentEffect,
        bs_t.grid.clone(),
    )
}
