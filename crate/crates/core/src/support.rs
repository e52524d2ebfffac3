//! The support function of the identified set of best-linear-approximation
//! coefficients.
//!
//! For a band `[theta0, theta1]` around the target function, the set of
//! coefficient vectors consistent with the band is convex, and its support
//! function in direction `q` has the closed form `sigma(q, a) =
//! E[z_q w_q]`, where `z_q = q' Sigma z_i` with `Sigma = E[x z']^{-1}`, and
//! `w_q` selects the upper envelope where `z_q > 0` and the lower where
//! `z_q <= 0`. The plug-in estimator replaces expectations with (weighted)
//! sample means and the envelopes with fitted surfaces.
//!
//! The tie `z_q = 0` is assigned to the lower envelope everywhere in this
//! crate — estimator, closed forms, and the enumeration oracle share the
//! rule, so cross-checks agree to rounding error.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::BoundingSurface;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// A set of unit directions on the sphere.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    dirs: Vec<DVector<f64>>,
    pub descriptor: String,
    dim: usize,
}

impl DirectionSet {
    /// Plus and minus every coordinate axis.
    pub fn axes_pm(d: usize) -> Self {
        let mut dirs = Vec::with_capacity(2 * d);
        for j in 0..d {
            for sign in [1.0, -1.0] {
                let mut q = DVector::zeros(d);
                q[j] = sign;
                dirs.push(q);
            }
        }
        DirectionSet {
            dirs,
            descriptor: "axes_pm".into(),
            dim: d,
        }
    }

    /// Uniform circle grid (dimension 2) merged with the axes.
    pub fn circle(k: usize) -> Result<Self> {
        if k < 4 {
            return Err(Error::Resolution("circle grid needs at least 4 points".into()));
        }
        let mut set = DirectionSet::axes_pm(2);
        set.descriptor = format!("circle({k})+axes");
        for j in 0..k {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            set.push_unique(DVector::from_vec(vec![angle.cos(), angle.sin()]));
        }
        Ok(set)
    }

    /// Axes plus a deterministic low-discrepancy spherical point set: a
    /// Kronecker lattice with a seeded offset, pushed through the inverse
    /// normal map and radially normalized.
    pub fn sphere_sample(d: usize, k: usize, seed: u64) -> Result<Self> {
        if d < 1 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        let mut set = DirectionSet::axes_pm(d);
        set.descriptor = format!("sphere_sample({k},seed={seed})+axes");
        if d == 1 {
            return Ok(set); // the sphere in one dimension is the two axes
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        // generalized golden-ratio lattice: root of x^(d+1) = x + 1
        let mut phi = 1.5_f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
        }
        let gammas: Vec<f64> = (1..=d).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
        let offsets: Vec<f64> = (0..d)
            .map(|j| derive_seed(seed, j as u64) as f64 / u64::MAX as f64)
            .collect();
        for i in 0..k {
            let mut q = DVector::zeros(d);
            for j in 0..d {
                let u = (offsets[j] + (i as f64 + 1.0) * gammas[j]).fract();
                let u = u.clamp(1e-12, 1.0 - 1e-12);
                q[j] = normal.inverse_cdf(u);
            }
            let norm = q.norm();
            if norm > 1e-12 {
                set.push_unique(q / norm);
            }
        }
        Ok(set)
    }

    /// Random normal directions, normalized; used by test harnesses.
    pub fn random(d: usize, k: usize, seed: u64) -> Self {
        let mut set = DirectionSet::axes_pm(d);
        set.descriptor = format!("random({k},seed={seed})+axes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..k {
            let mut q: DVector<f64> = DVector::zeros(d);
            for j in 0..d {
                let draw: f64 = StandardNormal.sample(&mut rng);
                q[j] = draw;
            }
            let norm = q.norm();
            if norm > 1e-12 {
                set.push_unique(q / norm);
            }
        }
        set
    }

    fn push_unique(&mut self, q: DVector<f64>) {
        let q = &q / q.norm();
        if self.index_of(&q).is_none() {
            self.dirs.push(q);
        }
    }

    pub fn dirs(&self) -> &[DVector<f64>] {
        &self.dirs
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of a direction, matched within 1e-12 in the sup norm.
    pub fn index_of(&self, q: &DVector<f64>) -> Option<usize> {
        self.dirs
            .iter()
            .position(|d| (d - q).amax() <= 1e-12)
    }

    /// Indices of `q` and `-q`; errors when either is absent.
    pub fn find_pair(&self, q: &DVector<f64>) -> Result<(usize, usize)> {
        let plus = self
            .index_of(q)
            .ok_or_else(|| Error::Parameter("direction q not in the direction set".into()))?;
        let minus = self
            .index_of(&(-q))
            .ok_or_else(|| Error::Parameter("direction -q not in the direction set".into()))?;
        Ok((plus, minus))
    }

    /// Indices of `(+e_j, -e_j)`.
    pub fn axis_pair(&self, j: usize) -> Result<(usize, usize)> {
        let mut e = DVector::zeros(self.dim);
        e[j] = 1.0;
        self.find_pair(&e)
    }
}

/// Builds the effective instrument block `z`. Without IV instruments the
/// criterion is ordinary least squares and `z = x`; with instruments
/// `z_tilde` and a PSD weight matrix `W`, `z_i = x_i * (z_tilde_i' W
/// z_tilde_i)`.
pub fn effective_instrument(
    ds: &Dataset,
    w_matrix: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, String)> {
    let x = ds.x_matrix()?;
    let z_tilde = ds.z_tilde_matrix()?;
    match z_tilde {
        None => Ok((x, "z = x (least squares)".into())),
        Some(zt) => {
            let j = zt.ncols();
            let w = match w_matrix {
                Some(w) => w.clone(),
                None => DMatrix::identity(j, j),
            };
            if w.nrows() != j || w.ncols() != j {
                return Err(Error::Parameter(format!(
                    "weight matrix is {}x{} but there are {j} instruments",
                    w.nrows(),
                    w.ncols()
                )));
            }
            if (&w - w.transpose()).amax() > 1e-10 * w.amax().max(1.0) {
                return Err(Error::Parameter("weight matrix must be symmetric".into()));
            }
            let eig = w.clone().symmetric_eigenvalues();
            let max_abs = eig.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
            if eig.iter().any(|e| *e < -1e-10 * max_abs.max(1.0)) {
                return Err(Error::Parameter(
                    "weight matrix must be positive semidefinite".into(),
                ));
            }
            let n = x.nrows();
            let d = x.ncols();
            let mut z = DMatrix::zeros(n, d);
            for i in 0..n {
                let zt_i = zt.row(i).transpose();
                let s = (&w * &zt_i).dot(&zt_i);
                for c in 0..d {
                    z[(i, c)] = x[(i, c)] * s;
                }
            }
            Ok((z, format!("z = x (z~' W z~), {j} instruments")))
        }
    }
}

/// The inverse cross-moment matrix and its conditioning.
#[derive(Debug, Clone)]
pub struct SigmaHat {
    /// `(weighted E[x z'])^{-1}`.
    pub matrix: DMatrix<f64>,
    pub condition_number: f64,
    /// The moment matrix itself, kept for residual checks.
    pub moment: DMatrix<f64>,
}

/// Estimates `Sigma = (E_w[x z'])^{-1}` under the given observation weights.
pub fn estimate_sigma_matrix(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    weights: &[f64],
) -> Result<SigmaHat> {
    let n = x.nrows();
    let d = x.ncols();
    if z.nrows() != n || z.ncols() != d {
        return Err(Error::Parameter("x and z blocks differ in shape".into()));
    }
    if weights.len() != n {
        return Err(Error::Parameter("weights length differs from n".into()));
    }
    let w_sum: f64 = weights.iter().sum();
    if w_sum <= 0.0 {
        return Err(Error::Parameter("weights must have positive total mass".into()));
    }
    let mut moment = DMatrix::zeros(d, d);
    for i in 0..n {
        let wi = weights[i];
        if wi == 0.0 {
            continue;
        }
        for r in 0..d {
            let xw = wi * x[(i, r)];
            for c in 0..d {
                moment[(r, c)] += xw * z[(i, c)];
            }
        }
    }
    moment /= w_sum;

    let svd = moment.clone().svd(false, false);
    let s_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let condition_number = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };

    match moment.clone().try_inverse() {
        Some(inv) if s_min > s_max * 1e-13 => Ok(SigmaHat {
            matrix: inv,
            condition_number,
            moment,
        }),
        _ => {
            // name the most collinear combination via the SVD null direction
            let svd_full = moment.clone().svd(true, true);
            let v_t = svd_full.v_t.as_ref();
            let mut loadings = String::new();
            if let Some(v_t) = v_t {
                let null_dir = v_t.row(d - 1);
                let names: Vec<String> = (0..d)
                    .filter(|&j| null_dir[j].abs() > 0.3)
                    .map(|j| format!("column {j} (loading {:.3})", null_dir[j]))
                    .collect();
                loadings = names.join(", ");
            }
            Err(Error::Singular(format!(
                "cross moment E[x z'] is numerically singular; near-null combination: {loadings}"
            )))
        }
    }
}

/// Support-function values over a direction set and index grid.
#[derive(Debug, Clone)]
pub struct SupportSurface {
    /// `|Q| x |grid|` values.
    pub sigma: DMatrix<f64>,
    pub sigma_hat: SigmaHat,
    pub directions: DirectionSet,
    pub grid: crate::bounds::IndexGrid,
    pub instrument_descriptor: String,
    pub n: usize,
}

impl SupportSurface {
    pub fn value(&self, q_idx: usize, a_idx: usize) -> f64 {
        self.sigma[(q_idx, a_idx)]
    }

    /// Sharp interval for the projection `q' beta` at each grid level, read
    /// off the stored directions: `[-sigma(-q, a), sigma(q, a)]`.
    pub fn project_bounds(&self, q: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
        let (plus, minus) = self.directions.find_pair(q)?;
        Ok((0..self.grid.len())
            .map(|a| (-self.sigma[(minus, a)], self.sigma[(plus, a)]))
            .collect())
    }

    /// Interval for coordinate `j` at each grid level.
    pub fn project_axis(&self, j: usize) -> Result<Vec<(f64, f64)>> {
        let (plus, minus) = self.directions.axis_pair(j)?;
        Ok((0..self.grid.len())
            .map(|a| (-self.sigma[(minus, a)], self.sigma[(plus, a)]))
            .collect())
    }
}

/// One support-function cell under the shared tie rule.
fn support_cell(zq: &[f64], theta0: &[f64], theta1: &[f64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..zq.len() {
        let pick = if zq[i] > 0.0 { theta1[i] } else { theta0[i] };
        num += weights[i] * zq[i] * pick;
        den += weights[i];
    }
    num / den
}

fn zq_values(sigma: &SigmaHat, z: &DMatrix<f64>, q: &DVector<f64>) -> Vec<f64> {
    let qt_sigma = sigma.matrix.transpose() * q; // (q' Sigma)' as a vector
    let n = z.nrows();
    let d = z.ncols();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for c in 0..d {
            acc += qt_sigma[c] * z[(i, c)];
        }
        out[i] = acc;
    }
    out
}

fn check_alignment(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bs: &BoundingSurface,
    weights: &[f64],
) -> Result<()> {
    let n = x.nrows();
    if z.nrows() != n || bs.n_rows() != n || weights.len() != n {
        return Err(Error::Parameter(
            "regressors, instruments, surface rows, and weights must align".into(),
        ));
    }
    Ok(())
}

/// Plug-in support-function surface over all directions and grid levels.
/// `weights` are effective observation weights (unit for the base
/// estimator, exponential draws for the bootstrap); the cross-moment matrix
/// uses the same weights so every draw is internally consistent.
pub fn compute_support_surface(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bs: &BoundingSurface,
    directions: &DirectionSet,
    weights: &[f64],
    instrument_descriptor: &str,
) -> Result<SupportSurface> {
    check_alignment(x, z, bs, weights)?;
    let sigma_hat = estimate_sigma_matrix(x, z, weights)?;
    let g = bs.grid.len();
    let mut sigma = DMatrix::zeros(directions.len(), g);
    let theta0_cols: Vec<Vec<f64>> = (0..g)
        .map(|a| bs.theta0.column(a).iter().cloned().collect())
        .collect();
    let theta1_cols: Vec<Vec<f64>> = (0..g)
        .map(|a| bs.theta1.column(a).iter().cloned().collect())
        .collect();
    for (qi, q) in directions.dirs().iter().enumerate() {
        let zq = zq_values(&sigma_hat, z, q);
        for a in 0..g {
            sigma[(qi, a)] = support_cell(&zq, &theta0_cols[a], &theta1_cols[a], weights);
        }
    }
    Ok(SupportSurface {
        sigma,
        sigma_hat,
        directions: directions.clone(),
        grid: bs.grid.clone(),
        instrument_descriptor: instrument_descriptor.to_string(),
        n: x.nrows(),
    })
}

/// Support-function value for one `(q, grid index)` pair, computed on
/// demand for directions outside the stored set.
pub fn support_value_at(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bs: &BoundingSurface,
    weights: &[f64],
    q: &DVector<f64>,
    a_idx: usize,
) -> Result<f64> {
    check_alignment(x, z, bs, weights)?;
    let sigma_hat = estimate_sigma_matrix(x, z, weights)?;
    let zq = zq_values(&sigma_hat, z, q);
    let theta0: Vec<f64> = bs.theta0.column(a_idx).iter().cloned().collect();
    let theta1: Vec<f64> = bs.theta1.column(a_idx).iter().cloned().collect();
    Ok(support_cell(&zq, &theta0, &theta1, weights))
}

/// Projection interval `[-sigma(-q, a), sigma(q, a)]` for an arbitrary
/// direction, recomputed on demand.
pub fn project_interval(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bs: &BoundingSurface,
    weights: &[f64],
    q: &DVector<f64>,
) -> Result<Vec<(f64, f64)>> {
    check_alignment(x, z, bs, weights)?;
    let sigma_hat = estimate_sigma_matrix(x, z, weights)?;
    let zq_plus = zq_values(&sigma_hat, z, q);
    let neg = -q;
    let zq_minus = zq_values(&sigma_hat, z, &neg);
    let mut out = Vec::with_capacity(bs.grid.len());
    for a in 0..bs.grid.len() {
        let theta0: Vec<f64> = bs.theta0.column(a).iter().cloned().collect();
        let theta1: Vec<f64> = bs.theta1.column(a).iter().cloned().collect();
        let hi = support_cell(&zq_plus, &theta0, &theta1, weights);
        let lo = -support_cell(&zq_minus, &theta0, &theta1, weights);
        out.push((lo, hi));
    }
    Ok(out)
}

/// Closed-form bounds for the slope in a bivariate regression
/// (`x = (1, x1)`, `z = x`): the covariance of `x1` with the least/most
/// favorable selection from the band, over the variance of `x1`. Ties at
/// the mean go to the lower envelope, matching the surface estimator.
pub fn beta1_closed_form(
    x: &DMatrix<f64>,
    bs: &BoundingSurface,
    weights: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if x.ncols() != 2 {
        return Err(Error::Parameter(
            "closed-form slope bounds require exactly (intercept, x1)".into(),
        ));
    }
    check_alignment(x, x, bs, weights)?;
    let n = x.nrows();
    let w_sum: f64 = weights.iter().sum();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        mean += weights[i] * x[(i, 1)];
        m2 += weights[i] * x[(i, 1)] * x[(i, 1)];
    }
    mean /= w_sum;
    m2 /= w_sum;
    let var = m2 - mean * mean;
    if var <= 0.0 {
        return Err(Error::Singular("x1 has zero variance; slope not identified".into()));
    }
    let mut out = Vec::with_capacity(bs.grid.len());
    for a in 0..bs.grid.len() {
        let mut lower_num = 0.0;
        let mut upper_num = 0.0;
        for i in 0..n {
            let dev = x[(i, 1)] - mean;
            let t0 = bs.theta0[(i, a)];
            let t1 = bs.theta1[(i, a)];
            // lower: theta1 where x1 < mean, theta0 where x1 >= mean
            let pick_lower = if dev < 0.0 { t1 } else { t0 };
            // upper: theta1 where x1 > mean, theta0 where x1 <= mean
            let pick_upper = if dev > 0.0 { t1 } else { t0 };
            lower_num += weights[i] * dev * pick_lower;
            upper_num += weights[i] * dev * pick_upper;
        }
        out.push((lower_num / w_sum / var, upper_num / w_sum / var));
    }
    Ok(out)
}

/// Enumeration oracle: the support function as an explicit maximum of
/// `q' Sigma E_w[z phi]` over all `2^n` selections `phi_i` from
/// `{theta0_i, theta1_i}`. Guarded to `n <= 20`.
pub fn brute_force_support_oracle(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bs: &BoundingSurface,
    weights: &[f64],
    q: &DVector<f64>,
    a_idx: usize,
) -> Result<f64> {
    check_alignment(x, z, bs, weights)?;
    let n = x.nrows();
    if n > 20 {
        return Err(Error::Parameter(format!(
            "enumeration oracle is limited to n <= 20, got {n}"
        )));
    }
    let sigma_hat = estimate_sigma_matrix(x, z, weights)?;
    let d = x.ncols();
    let w_sum: f64 = weights.iter().sum();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1u64 << n) {
        let mut moment = DVector::zeros(d);
        for i in 0..n {
            let phi = if (mask >> i) & 1 == 1 {
                bs.theta1[(i, a_idx)]
            } else {
                bs.theta0[(i, a_idx)]
            };
            for c in 0..d {
                moment[c] += weights[i] * z[(i, c)] * phi;
            }
        }
        moment /= w_sum;
        let value = q.dot(&(&sigma_hat.matrix * &moment));
        best = best.max(value);
    }
    Ok(best)
}

/// A convex polygon, counterclockwise; empty when the halfspaces are
/// inconsistent.
#[derive(Debug, Clone)]
pub struct Polygon2D {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon2D {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        best
    }
}

/// Reconstructs the two-dimensional identified set at one grid level as the
/// intersection of the halfspaces `{b : q' b <= sigma(q, a)}`, by
/// sequential clipping of a large bounding box.
pub fn reconstruct_polygon_2d(ss: &SupportSurface, a_idx: usize) -> Result<Polygon2D> {
    if ss.directions.dim() != 2 {
        return Err(Error::Parameter("polygon reconstruction requires d = 2".into()));
    }
    if ss.directions.len() < 8 {
        return Err(Error::Resolution(
            "polygon reconstruction needs at least 8 directions".into(),
        ));
    }
    let max_sigma = (0..ss.directions.len())
        .map(|qi| ss.sigma[(qi, a_idx)].abs())
        .fold(0.0_f64, f64::max);
    let m = 10.0 * (1.0 + max_sigma);
    // rounding guard: keeps a zero-area (point-identified) intersection
    // from being annihilated by floating-point clipping
    let guard = 1e-12 * (1.0 + max_sigma);
    let mut poly: Vec<[f64; 2]> = vec![[-m, -m], [m, -m], [m, m], [-m, m]];
    for (qi, q) in ss.directions.dirs().iter().enumerate() {
        let c = ss.sigma[(qi, a_idx)] + guard;
        poly = clip_halfplane(&poly, [q[0], q[1]], c);
        if poly.is_empty() {
            return Ok(Polygon2D { vertices: vec![] });
        }
    }
    // drop near-duplicate consecutive vertices
    let tol = 1e-12 * m;
    let mut cleaned: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
    for v in poly {
        if cleaned
            .last()
            .map(|u| (u[0] - v[0]).abs() > tol || (u[1] - v[1]).abs() > tol)
            .unwrap_or(true)
        {
            cleaned.push(v);
        }
    }
    if cleaned.len() > 1 {
        let first = cleaned[0];
        let last = *cleaned.last().unwrap();
        if (first[0] - last[0]).abs() <= tol && (first[1] - last[1]).abs() <= tol {
            cleaned.pop();
        }
    }
    Ok(Polygon2D { vertices: cleaned })
}

/// Sutherland-Hodgman clip of a convex polygon against `a . p <= c`.
fn clip_halfplane(poly: &[[f64; 2]], a: [f64; 2], c: f64) -> Vec<[f64; 2]> {
    let inside = |p: [f64; 2]| a[0] * p[0] + a[1] * p[1] <= c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    let len = poly.len();
    for i in 0..len {
        let s = poly[i];
        let e = poly[(i + 1) % len];
        let s_in = inside(s);
        let e_in = inside(e);
        if s_in != e_in {
            let denom = a[0] * (e[0] - s[0]) + a[1] * (e[1] - s[1]);
            let t = if denom.abs() > 0.0 {
                (c - a[0] * s[0] - a[1] * s[1]) / denom
            } else {
                0.0
            };
            out.push([s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]);
        }
        if e_in {
            out.push(e);
        }
    }
    out
}
