//! Column-oriented observation data with declared roles.
//!
//! A [`Dataset`] owns named real-valued columns of equal length and a
//! [`Roles`] mapping that declares which columns play which part: outcomes,
//! interval bounds, the selection flag, regressors (first one an intercept),
//! excluded instruments, IV instruments, and observation weights.
//!
//! Beyond ingestion the module houses the data-level transforms that the
//! band constructions need: jittering of discrete regressors (with the
//! explicit noise scale that keeps the identified set within a chosen
//! Hausdorff slack), and the selection pseudo-outcome transforms that turn
//! quantile bounds under selection into plain quantile regressions.

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Reserved column name for the synthesized intercept.
pub const INTERCEPT: &str = "const";

/// Role mapping from model parts to column names.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Roles {
    pub y: Option<String>,
    pub y_lower: Option<String>,
    pub y_upper: Option<String>,
    pub selection_u: Option<String>,
    /// Regressor block; the first entry is the intercept. A column named
    /// `const` that is absent from the data is synthesized as ones.
    pub x: Vec<String>,
    /// Lower/upper endpoints of a scalar interval-valued regressor.
    pub x_lower: Option<String>,
    pub x_upper: Option<String>,
    /// Excluded instruments entering intersection bounds.
    pub v: Vec<String>,
    /// IV instruments defining the weighted best-approximation criterion.
    pub z_tilde: Vec<String>,
    pub weight: Option<String>,
}

impl Roles {
    /// All column names referenced by any role, in a deterministic order.
    pub fn referenced(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for opt in [
            &self.y,
            &self.y_lower,
            &self.y_upper,
            &self.selection_u,
            &self.x_lower,
            &self.x_upper,
            &self.weight,
        ] {
            if let Some(name) = opt {
                out.push(name);
            }
        }
        out.extend(self.x.iter().map(|s| s.as_str()));
        out.extend(self.v.iter().map(|s| s.as_str()));
        out.extend(self.z_tilde.iter().map(|s| s.as_str()));
        out
    }
}

/// One rule violation found by [`Dataset::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// Row index (zero-based over data rows); `None` for dataset-level rules.
    pub row: Option<usize>,
    pub rule: String,
    pub message: String,
}

/// Validation output: all violations plus the numeric rank of the x block.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub x_rank: usize,
    pub x_columns: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Immutable observation data. All operations that transform data return a
/// new `Dataset`; sharing across threads is safe.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    columns: IndexMap<String, Vec<f64>>,
    pub roles: Roles,
    /// Free-form provenance notes (jitter scales, transform records).
    pub provenance: Vec<String>,
    synthesized_intercept: bool,
}

impl Dataset {
    /// Builds a dataset from named columns, checking role references and
    /// synthesizing the intercept when the x role names `const` and no such
    /// column exists.
    pub fn new(mut columns: IndexMap<String, Vec<f64>>, roles: Roles) -> Result<Self> {
        let n = columns
            .values()
            .next()
            .map(|c| c.len())
            .ok_or_else(|| Error::Role("dataset has no columns".into()))?;
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::Role(format!(
                    "column '{name}' has length {} but expected {n}",
                    col.len()
                )));
            }
        }
        if roles.x.is_empty() {
            return Err(Error::Role("x role must name at least the intercept".into()));
        }
        let mut synthesized = false;
        if !columns.contains_key(INTERCEPT) && roles.x.iter().any(|c| c == INTERCEPT) {
            columns.insert(INTERCEPT.to_string(), vec![1.0; n]);
            synthesized = true;
        }
        for name in roles.referenced() {
            if !columns.contains_key(name) {
                return Err(Error::Role(format!(
                    "role-referenced column '{name}' not found"
                )));
            }
        }
        Ok(Dataset {
            n,
            columns,
            roles,
            provenance: Vec::new(),
            synthesized_intercept: synthesized,
        })
    }

    /// Reads an RFC-4180 CSV file (header required, UTF-8, `.` decimals).
    pub fn load_csv<P: AsRef<Path>>(path: P, roles: Roles) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
        let mut columns: IndexMap<String, Vec<f64>> =
            headers.iter().map(|h| (h.clone(), Vec::new())).collect();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            for (col_idx, cell) in record.iter().enumerate() {
                let name = &headers[col_idx];
                let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row: row_idx,
                    column: name.clone(),
                    message: format!("cannot parse '{}' as a number", cell.trim()),
                })?;
                columns[name].push(value);
            }
        }
        if columns.values().next().map(|c| c.len()).unwrap_or(0) == 0 {
            return Err(Error::Role("CSV file contains no data rows".into()));
        }
        Dataset::new(columns, roles)
    }

    /// Writes all non-synthesized columns back to CSV. Values are printed in
    /// shortest round-trip form, so finite decimal inputs survive a
    /// load/save cycle exactly.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        let names: Vec<&String> = self
            .columns
            .keys()
            .filter(|k| !(self.synthesized_intercept && k.as_str() == INTERCEPT))
            .collect();
        writer.write_record(names.iter().map(|s| s.as_str()))?;
        for i in 0..self.n {
            let row: Vec<String> = names
                .iter()
                .map(|name| format!("{}", self.columns[name.as_str()][i]))
                .collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::Role(format!("column '{name}' not found")))
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.keys().map(|s| s.as_str()).collect()
    }

    pub fn y(&self) -> Result<&[f64]> {
        match &self.roles.y {
            Some(name) => self.column(name),
            None => Err(Error::Role("role 'y' is required but unset".into())),
        }
    }

    pub fn selection_u(&self) -> Result<&[f64]> {
        match &self.roles.selection_u {
            Some(name) => self.column(name),
            None => Err(Error::Role("role 'selection_u' is required but unset".into())),
        }
    }

    pub fn weights(&self) -> Result<Option<&[f64]>> {
        match &self.roles.weight {
            Some(name) => Ok(Some(self.column(name)?)),
            None => Ok(None),
        }
    }

    /// Combined observation weights: role weights (ones when absent)
    /// multiplied by the optional extra vector (bootstrap draws). Every
    /// estimation entry point uses this single combination rule.
    pub fn effective_weights(&self, extra: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.n;
        let mut w = vec![1.0; n];
        if let Some(role_w) = self.weights()? {
            for i in 0..n {
                w[i] *= role_w[i];
            }
        }
        if let Some(extra) = extra {
            if extra.len() != n {
                return Err(Error::Parameter(format!(
                    "weight vector length {} does not match n = {n}",
                    extra.len()
                )));
            }
            for i in 0..n {
                w[i] *= extra[i];
            }
        }
        Ok(w)
    }

    /// The regressor block as an `n x d` matrix, role order preserved.
    pub fn x_matrix(&self) -> Result<nalgebra::DMatrix<f64>> {
        self.matrix_of(&self.roles.x)
    }

    /// Regressors plus excluded instruments, in `(x, v)` order.
    pub fn xv_matrix(&self) -> Result<nalgebra::DMatrix<f64>> {
        let mut names = self.roles.x.clone();
        names.extend(self.roles.v.iter().cloned());
        self.matrix_of(&names)
    }

    pub fn z_tilde_matrix(&self) -> Result<Option<nalgebra::DMatrix<f64>>> {
        if self.roles.z_tilde.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.matrix_of(&self.roles.z_tilde)?))
    }

    fn matrix_of(&self, names: &[String]) -> Result<nalgebra::DMatrix<f64>> {
        let d = names.len();
        let mut m = nalgebra::DMatrix::zeros(self.n, d);
        for (j, name) in names.iter().enumerate() {
            let col = self.column(name)?;
            for i in 0..self.n {
                m[(i, j)] = col[i];
            }
        }
        Ok(m)
    }

    /// Checks every dataset invariant and reports violations; never errors.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        // finite values in every role column
        for name in self.roles.referenced() {
            if let Ok(col) = self.column(name) {
                for (i, v) in col.iter().enumerate() {
                    if !v.is_finite() {
                        violations.push(Violation {
                            row: Some(i),
                            rule: "finite".into(),
                            message: format!("column '{name}' has non-finite value at row {i}"),
                        });
                    }
                }
            }
        }

        // bound ordering
        if let (Some(lo), Some(hi)) = (&self.roles.y_lower, &self.roles.y_upper) {
            if let (Ok(lo), Ok(hi)) = (self.column(lo), self.column(hi)) {
                for i in 0..self.n {
                    if lo[i] > hi[i] {
                        violations.push(Violation {
                            row: Some(i),
                            rule: "bound_order".into(),
                            message: format!("y_lower {} > y_upper {} at row {i}", lo[i], hi[i]),
                        });
                    }
                }
            }
        }

        // binary selection flag
        if let Some(name) = &self.roles.selection_u {
            if let Ok(u) = self.column(name) {
                for (i, v) in u.iter().enumerate() {
                    if *v != 0.0 && *v != 1.0 {
                        violations.push(Violation {
                            row: Some(i),
                            rule: "selection_binary".into(),
                            message: format!("selection flag is {v} at row {i}"),
                        });
                    }
                }
            }
        }

        // intercept column of ones
        if let Some(first) = self.roles.x.first() {
            if let Ok(col) = self.column(first) {
                if col.iter().any(|v| *v != 1.0) {
                    violations.push(Violation {
                        row: None,
                        rule: "intercept".into(),
                        message: format!("first x column '{first}' is not identically one"),
                    });
                }
            }
        }

        // rank of the x block via the Gram matrix
        let (x_rank, rank_message) = self.x_block_rank();
        if x_rank < self.roles.x.len() {
            violations.push(Violation {
                row: None,
                rule: "x_rank".into(),
                message: rank_message,
            });
        }

        ValidationReport {
            violations,
            x_rank,
            x_columns: self.roles.x.clone(),
        }
    }

    fn x_block_rank(&self) -> (usize, String) {
        let x = match self.x_matrix() {
            Ok(x) => x,
            Err(e) => return (0, format!("x block unavailable: {e}")),
        };
        let d = x.ncols();
        let gram = x.transpose() * &x;
        let eig = gram.symmetric_eigenvalues();
        let max_eig = eig.iter().cloned().fold(0.0_f64, f64::max);
        let tol = max_eig * 1e-12 * d as f64;
        let rank = eig.iter().filter(|&&e| e > tol).count();
        if rank == d {
            return (rank, String::new());
        }
        // name exactly duplicated column pairs when they exist
        let mut dup_pairs = Vec::new();
        for a in 0..d {
            for b in (a + 1)..d {
                let ca = x.column(a);
                let cb = x.column(b);
                if (0..x.nrows()).all(|i| (ca[i] - cb[i]).abs() <= 1e-12 * ca[i].abs().max(1.0)) {
                    dup_pairs.push(format!("({}, {})", self.roles.x[a], self.roles.x[b]));
                }
            }
        }
        let message = if dup_pairs.is_empty() {
            format!("x block is rank deficient: rank {rank} < {d}")
        } else {
            format!(
                "x block is rank deficient: rank {rank} < {d}; duplicated columns {}",
                dup_pairs.join(", ")
            )
        };
        (rank, message)
    }

    /// Non-intercept x columns with at most `max_unique` distinct values,
    /// the default candidates for jittering.
    pub fn discrete_columns(&self, max_unique: usize) -> Vec<String> {
        let mut out = Vec::new();
        for name in self.roles.x.iter().skip(1) {
            if let Ok(col) = self.column(name) {
                let mut values: Vec<f64> = col.to_vec();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                values.dedup();
                if values.len() <= max_unique {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    /// Applies the jitter plan: every target column `c` is replaced in the x
    /// role by `c + sigma_delta * eta` with `eta` i.i.d. standard normal.
    /// The original columns are retained and the noise scale is recorded in
    /// the provenance notes.
    pub fn jitter_discrete(&self, plan: &JitterPlan) -> Result<Dataset> {
        if plan.delta <= 0.0 {
            return Err(Error::Parameter("jitter delta must be positive".into()));
        }
        for target in &plan.target_columns {
            if !self.roles.x.iter().skip(1).any(|c| c == target) {
                return Err(Error::Parameter(format!(
                    "jitter target '{target}' is not a non-intercept x column"
                )));
            }
        }
        let mut out = self.clone();
        for (t_idx, target) in plan.target_columns.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, t_idx as u64));
            let orig = self.column(target)?;
            let jittered: Vec<f64> = orig
                .iter()
                .map(|v| {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    v + plan.sigma_delta * eta
                })
                .collect();
            let new_name = format!("{target}_jit");
            out.columns.insert(new_name.clone(), jittered);
            for slot in out.roles.x.iter_mut() {
                if slot == target {
                    *slot = new_name.clone();
                }
            }
        }
        out.provenance.push(format!(
            "jitter: delta={} sigma_delta={} seed={} columns={:?}",
            plan.delta, plan.sigma_delta, plan.seed, plan.target_columns
        ));
        Ok(out)
    }

    /// Selection pseudo-outcomes: unobserved outcomes are replaced by the
    /// logical bounds, so conditional quantiles of the results equal the
    /// selection bounds without a propensity-score step.
    ///
    /// `tilde0_i = y_i` if selected, else `y_lo`; `tilde1_i = y_i` if
    /// selected, else `y_hi`. Infinite sentinels are legal here; whether a
    /// downstream fit can use them is checked by the bound constructions.
    pub fn build_tilde_y(&self, y_lo: f64, y_hi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let y = self.y()?;
        let u = self.selection_u()?;
        let mut observed_min = f64::INFINITY;
        let mut observed_max = f64::NEG_INFINITY;
        for i in 0..self.n {
            if u[i] == 1.0 {
                observed_min = observed_min.min(y[i]);
                observed_max = observed_max.max(y[i]);
            }
        }
        if observed_min <= observed_max && (y_lo > observed_min || y_hi < observed_max) {
            return Err(Error::Parameter(format!(
                "logical bounds [{y_lo}, {y_hi}] do not contain observed y range \
                 [{observed_min}, {observed_max}]"
            )));
        }
        let mut t0 = Vec::with_capacity(self.n);
        let mut t1 = Vec::with_capacity(self.n);
        for i in 0..self.n {
            if u[i] == 1.0 {
                t0.push(y[i]);
                t1.push(y[i]);
            } else {
                t0.push(y_lo);
                t1.push(y_hi);
            }
        }
        Ok((t0, t1))
    }

    /// Upper pseudo-outcome under the quantile selection restriction: the
    /// `alpha1` conditional quantile of observed outcomes bounds the
    /// `alpha0` quantile of the unobserved ones.
    ///
    /// Each unselected row becomes two weighted pseudo-rows, `(y_hi,
    /// 1 - alpha0)` and `(qhat_i, alpha0)` where `qhat_i` is the fitted
    /// `alpha1` conditional quantile of observed outcomes at that row's
    /// regressors. The mixture the restriction describes is represented
    /// exactly by the weights rather than by per-row randomization.
    pub fn build_restricted_tilde_y1(
        &self,
        alpha0: f64,
        alpha1: f64,
        y_hi: f64,
        q_fit: &[f64],
    ) -> Result<PseudoSample> {
        if !(0.0 < alpha0 && alpha0 < 1.0 && 0.0 < alpha1 && alpha1 < 1.0) {
            return Err(Error::Parameter(
                "restriction quantile levels must lie in (0, 1)".into(),
            ));
        }
        if q_fit.len() != self.n {
            return Err(Error::Parameter(format!(
                "q_fit has length {} but n = {}",
                q_fit.len(),
                self.n
            )));
        }
        let y = self.y()?;
        let u = self.selection_u()?;
        let mut values = Vec::new();
        let mut weights = Vec::new();
        let mut rows = Vec::new();
        for i in 0..self.n {
            if u[i] == 1.0 {
                values.push(y[i]);
                weights.push(1.0);
                rows.push(i);
            } else {
                if !q_fit[i].is_finite() {
                    return Err(Error::Solver(format!(
                        "conditional quantile evaluator undefined at row {i}"
                    )));
                }
                values.push(y_hi);
                weights.push(1.0 - alpha0);
                rows.push(i);
                values.push(q_fit[i]);
                weights.push(alpha0);
                rows.push(i);
            }
        }
        Ok(PseudoSample {
            values,
            weights,
            rows,
        })
    }
}

/// Weighted pseudo-observations produced by the quantile selection
/// restriction; `rows[j]` is the original row each pseudo-row came from.
#[derive(Debug, Clone)]
pub struct PseudoSample {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub rows: Vec<usize>,
}

/// Sample-mean magnitudes of fitted bounding surfaces, maximized over the
/// index grid; these plug into the jitter noise scale.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundMagnitudes {
    pub mean_abs_theta0: f64,
    pub mean_abs_theta1: f64,
    pub mean_abs_width: f64,
}

/// Jitter configuration with the derived noise scale.
///
/// With standard normal noise `eta`, adding `sigma_delta * eta` to the
/// discrete regressors moves the identified set by at most `delta` in
/// Hausdorff distance when
/// `sigma_delta = delta / (E|eta| * (E|theta0| + E|theta1| + E|theta1 - theta0|))`,
/// and `E|eta| = sqrt(2/pi)`. The population moments are replaced by the
/// plug-in magnitudes from a preliminary unjittered fit.
#[derive(Debug, Clone, Serialize)]
pub struct JitterPlan {
    pub delta: f64,
    pub target_columns: Vec<String>,
    pub sigma_delta: f64,
    pub seed: u64,
}

impl JitterPlan {
    pub fn new(
        delta: f64,
        target_columns: Vec<String>,
        seed: u64,
        magnitudes: BoundMagnitudes,
    ) -> Result<Self> {
        if delta <= 0.0 {
            return Err(Error::Parameter("jitter delta must be positive".into()));
        }
        let sigma_delta = sigma_delta(delta, magnitudes)?;
        Ok(JitterPlan {
            delta,
            target_columns,
            sigma_delta,
            seed,
        })
    }
}

/// The closed-form jitter noise scale.
pub fn sigma_delta(delta: f64, m: BoundMagnitudes) -> Result<f64> {
    let e_abs_eta = (2.0 / std::f64::consts::PI).sqrt();
    let denom = e_abs_eta * (m.mean_abs_theta0 + m.mean_abs_theta1 + m.mean_abs_width);
    if !(denom.is_finite() && denom > 0.0) {
        return Err(Error::Parameter(format!(
            "jitter scale denominator {denom} is not positive and finite"
        )));
    }
    let s = delta / denom;
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::Parameter(format!("jitter scale {s} is invalid")));
    }
    Ok(s)
}
