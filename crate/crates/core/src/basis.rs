//! Series approximating functions: full-tensor polynomials and B-splines.
//!
//! A [`BasisMatrix`] is built once from the regressor block and then reused
//! for every fit; evaluation at new points goes through the identical
//! arithmetic path used during construction, so fitted values at training
//! points reproduce exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    Polynomial,
    Bspline,
}

/// Declarative description of a series basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    /// Polynomial total degree, or spline degree.
    pub degree: usize,
    /// Breakpoint sequence for splines (ignored for polynomials); strictly
    /// increasing, interpreted on the post-standardization scale when
    /// `standardize` is set.
    #[serde(default)]
    pub knots: Vec<f64>,
    /// Maximum number of distinct inputs per term. `None` means no cap for
    /// polynomials and additive (1) for splines.
    #[serde(default)]
    pub interactions: Option<usize>,
    /// Center and scale non-constant inputs before expansion.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl BasisSpec {
    pub fn polynomial(degree: usize) -> Self {
        BasisSpec {
            family: BasisFamily::Polynomial,
            degree,
            knots: Vec::new(),
            interactions: None,
            standardize: true,
        }
    }

    fn validate(&self, n_inputs: usize) -> Result<()> {
        if let Some(cap) = self.interactions {
            if cap > n_inputs {
                return Err(Error::Parameter(format!(
                    "interaction order {cap} exceeds the {n_inputs} non-constant inputs"
                )));
            }
        }
        if self.family == BasisFamily::Bspline {
            if self.knots.len() < 2 {
                return Err(Error::Parameter(
                    "bspline basis requires at least two knots".into(),
                ));
            }
            if self.knots.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Parameter("knots must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// One expansion term: product over `(input index, sub-function index)`.
/// For polynomials the sub-function index is the power; for splines it is
/// the index of a B-spline basis function.
type Term = Vec<(usize, usize)>;

#[derive(Debug, Clone)]
enum TermSet {
    Poly(Vec<Term>),
    Spline {
        terms: Vec<Term>,
        knot_vector: Vec<f64>,
        degree: usize,
        funcs_per_coord: usize,
    },
}

/// A built design matrix together with everything needed to evaluate the
/// same expansion out of sample.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub p: DMatrix<f64>,
    pub k: usize,
    /// Exact maximum Euclidean row norm of `p`.
    pub xi_k: f64,
    pub spec: BasisSpec,
    pub warnings: Vec<String>,
    centers: Vec<f64>,
    scales: Vec<f64>,
    terms: TermSet,
    n_inputs: usize,
}

/// Expands the regressor block `x` (column 0 is the intercept) into the
/// series design matrix. The expansion is deterministic: terms are ordered
/// by total degree, then lexicographically.
pub fn build_basis(x: &DMatrix<f64>, spec: &BasisSpec) -> Result<BasisMatrix> {
    let n = x.nrows();
    let d = x.ncols();
    if d == 0 || n == 0 {
        return Err(Error::Parameter("empty regressor block".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("regressor block has non-finite values".into()));
    }
    let n_inputs = d - 1;
    spec.validate(n_inputs)?;

    // standardization constants for the non-constant inputs
    let mut centers = vec![0.0; n_inputs];
    let mut scales = vec![1.0; n_inputs];
    let mut warnings = Vec::new();
    if spec.standardize {
        for j in 0..n_inputs {
            let col = x.column(j + 1);
            let mean = col.iter().sum::<f64>() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            centers[j] = mean;
            if sd > 0.0 {
                scales[j] = sd;
            } else {
                warnings.push(format!(
                    "input column {} is constant; left unscaled",
                    j + 1
                ));
            }
        }
    }

    let terms = match spec.family {
        BasisFamily::Polynomial => {
            let cap = spec.interactions.unwrap_or(n_inputs.max(1));
            TermSet::Poly(polynomial_terms(n_inputs, spec.degree, cap))
        }
        BasisFamily::Bspline => {
            let cap = spec.interactions.unwrap_or(1);
            let knot_vector = clamped_knot_vector(&spec.knots, spec.degree);
            let funcs_per_coord = spec.knots.len() + spec.degree - 1;
            let terms = spline_terms(n_inputs, funcs_per_coord, cap);
            TermSet::Spline {
                terms,
                knot_vector,
                degree: spec.degree,
                funcs_per_coord,
            }
        }
    };
    let k = match &terms {
        TermSet::Poly(t) => t.len(),
        TermSet::Spline { terms, .. } => terms.len(),
    };
    if k > n {
        return Err(Error::Parameter(format!(
            "over-parameterized basis: k = {k} exceeds n = {n}"
        )));
    }

    let mut bm = BasisMatrix {
        p: DMatrix::zeros(n, k),
        k,
        xi_k: 0.0,
        spec: spec.clone(),
        warnings,
        centers,
        scales,
        terms,
        n_inputs,
    };

    let mut row = vec![0.0; k];
    let mut input = vec![0.0; n_inputs];
    for i in 0..n {
        for j in 0..n_inputs {
            input[j] = x[(i, j + 1)];
        }
        bm.eval_row(&input, &mut row);
        for (c, v) in row.iter().enumerate() {
            bm.p[(i, c)] = *v;
        }
    }
    bm.xi_k = (0..n)
        .map(|i| bm.p.row(i).norm())
        .fold(0.0_f64, f64::max);

    // exact duplicate expanded columns indicate collinearity
    for a in 0..k {
        for b in (a + 1)..k {
            if (0..n).all(|i| bm.p[(i, a)] == bm.p[(i, b)]) {
                bm.warnings
                    .push(format!("expanded columns {a} and {b} are identical"));
            }
        }
    }
    Ok(bm)
}

impl BasisMatrix {
    /// Evaluates the expansion at a new point given as the non-constant
    /// inputs (the intercept is implicit). Training rows reproduce the
    /// corresponding row of `p` bit for bit.
    pub fn evaluate(&self, x_new: &[f64]) -> Result<DVector<f64>> {
        Ok(self.evaluate_checked(x_new)?.0)
    }

    /// Like [`evaluate`](Self::evaluate) but also reports whether any spline
    /// input was clamped to the knot range.
    pub fn evaluate_checked(&self, x_new: &[f64]) -> Result<(DVector<f64>, bool)> {
        if x_new.len() != self.n_inputs {
            return Err(Error::Parameter(format!(
                "expected {} inputs, got {}",
                self.n_inputs,
                x_new.len()
            )));
        }
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("evaluation point is not finite".into()));
        }
        let mut out = vec![0.0; self.k];
        let clamped = self.eval_row(x_new, &mut out);
        Ok((DVector::from_vec(out), clamped))
    }

    /// Shared arithmetic path for construction and evaluation.
    fn eval_row(&self, input: &[f64], out: &mut [f64]) -> bool {
        let mut z = vec![0.0; self.n_inputs];
        for j in 0..self.n_inputs {
            z[j] = (input[j] - self.centers[j]) / self.scales[j];
        }
        match &self.terms {
            TermSet::Poly(terms) => {
                for (c, term) in terms.iter().enumerate() {
                    let mut v = 1.0;
                    for &(j, pow) in term {
                        v *= z[j].powi(pow as i32);
                    }
                    out[c] = v;
                }
                false
            }
            TermSet::Spline {
                terms,
                knot_vector,
                degree,
                funcs_per_coord,
            } => {
                let lo = knot_vector[*degree];
                let hi = knot_vector[knot_vector.len() - degree - 1];
                let mut clamped = false;
                let mut per_coord = Vec::with_capacity(self.n_inputs);
                for &zj in &z {
                    let u = zj.clamp(lo, hi);
                    if u != zj {
                        clamped = true;
                    }
                    per_coord.push(all_bspline_values(
                        knot_vector,
                        *degree,
                        *funcs_per_coord,
                        u,
                    ));
                }
                for (c, term) in terms.iter().enumerate() {
                    let mut v = 1.0;
                    for &(j, f) in term {
                        v *= per_coord[j][f];
                    }
                    out[c] = v;
                }
                clamped
            }
        }
    }

    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.centers, &self.scales)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }
}

/// All monomial exponent vectors with total degree at most `degree`, at most
/// `max_active` inputs per term, ordered by total degree then
/// lexicographically. The constant term comes first.
fn polynomial_terms(n_inputs: usize, degree: usize, max_active: usize) -> Vec<Term> {
    let mut terms = vec![Vec::new()]; // constant
    let mut expo = vec![0usize; n_inputs];
    for total in 1..=degree {
        enumerate_exponents(&mut expo, 0, total, max_active, &mut terms);
    }
    terms
}

fn enumerate_exponents(
    expo: &mut Vec<usize>,
    pos: usize,
    remaining: usize,
    max_active: usize,
    out: &mut Vec<Term>,
) {
    if remaining == 0 {
        let active = expo.iter().filter(|&&e| e > 0).count();
        if active <= max_active {
            out.push(
                expo.iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(j, &e)| (j, e))
                    .collect(),
            );
        }
        return;
    }
    if pos >= expo.len() {
        return;
    }
    for e in (0..=remaining).rev() {
        expo[pos] = e;
        enumerate_exponents(expo, pos + 1, remaining - e, max_active, out);
    }
    expo[pos] = 0;
}

/// Number of polynomial expansion columns, for inverting a target k into a
/// degree.
pub fn count_polynomial_terms(n_inputs: usize, degree: usize, max_active: usize) -> usize {
    polynomial_terms(n_inputs, degree, max_active).len()
}

/// Picks the total degree whose column count is nearest the target k
/// (ties resolved toward the smaller degree).
pub fn degree_for_target_k(n_inputs: usize, max_active: usize, k_target: usize) -> usize {
    let mut best = (0usize, usize::MAX);
    for degree in 0..=32 {
        let count = count_polynomial_terms(n_inputs, degree, max_active);
        let gap = count.abs_diff(k_target);
        if gap < best.1 {
            best = (degree, gap);
        }
        if count >= k_target {
            break;
        }
    }
    best.0
}

/// Spline term set: constant first, then per-coordinate basis functions
/// (dropping each coordinate's first function, which is absorbed by the
/// intercept), then interaction products up to the cap.
fn spline_terms(n_inputs: usize, funcs_per_coord: usize, max_active: usize) -> Vec<Term> {
    let mut terms: Vec<Term> = vec![Vec::new()];
    // additive blocks
    for j in 0..n_inputs {
        for f in 1..funcs_per_coord {
            terms.push(vec![(j, f)]);
        }
    }
    if max_active >= 2 {
        // pairwise tensor blocks; higher orders are rarely sensible for
        // splines and are not generated
        for a in 0..n_inputs {
            for b in (a + 1)..n_inputs {
                for fa in 1..funcs_per_coord {
                    for fb in 1..funcs_per_coord {
                        terms.push(vec![(a, fa), (b, fb)]);
                    }
                }
            }
        }
    }
    terms
}

fn clamped_knot_vector(breaks: &[f64], degree: usize) -> Vec<f64> {
    let mut kv = Vec::with_capacity(breaks.len() + 2 * degree);
    for _ in 0..degree {
        kv.push(breaks[0]);
    }
    kv.extend_from_slice(breaks);
    for _ in 0..degree {
        kv.push(*breaks.last().unwrap());
    }
    kv
}

/// Values of every B-spline basis function at `u` (Cox-de Boor recursion at
/// the active span).
fn all_bspline_values(knots: &[f64], degree: usize, n_funcs: usize, u: f64) -> Vec<f64> {
    let span = find_span(knots, degree, n_funcs, u);
    let mut vals = vec![0.0; n_funcs];
    let nonzero = basis_funs(knots, degree, span, u);
    for (r, v) in nonzero.into_iter().enumerate() {
        let idx = span + r - degree;
        if idx < n_funcs {
            vals[idx] = v;
        }
    }
    vals
}

fn find_span(knots: &[f64], degree: usize, n_funcs: usize, u: f64) -> usize {
    let last = n_funcs - 1;
    if u >= knots[last + 1] {
        return last;
    }
    if u <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, last + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn basis_funs(knots: &[f64], degree: usize, span: usize, u: f64) -> Vec<f64> {
    let mut vals = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    vals[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    vals
}

/// Rate-driven default for the number of series terms.
///
/// With smoothness `s` and input dimension `d`, any growth exponent strictly
/// between `d/(2s)` (bias control) and `1/3` (variance control) is
/// admissible; the midpoint is used, `k = round(c * n^gamma)`, clamped to
/// `[d, n/5]`. Requires `d/(2s) < 1/3`, i.e. `s > 3d/2`.
pub fn recommend_k(n: usize, d: usize, s: f64, _family: BasisFamily, c: f64) -> Result<usize> {
    if n < 10 {
        return Err(Error::Parameter("recommend_k requires n >= 10".into()));
    }
    if d == 0 || !(s > 0.0) {
        return Err(Error::Parameter("dimension and smoothness must be positive".into()));
    }
    let lower = d as f64 / (2.0 * s);
    let upper = 1.0 / 3.0;
    if lower >= upper {
        return Err(Error::Smoothness(format!(
            "no admissible series rate: d/(2s) = {lower:.4} >= 1/3; requires s > 3d/2 = {}",
            1.5 * d as f64
        )));
    }
    let gamma = 0.5 * (lower + upper);
    let raw = (c * (n as f64).powf(gamma)).round() as i64;
    let lo = d as i64;
    let hi = ((n / 5) as i64).max(lo);
    Ok(raw.clamp(lo, hi) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        let d = rows[0].len();
        DMatrix::from_fn(n, d, |i, j| rows[i][j])
    }

    #[test]
    fn quadratic_in_one_input_gives_three_columns() {
        let x = design(&[&[1.0, 0.5], &[1.0, -1.0], &[1.0, 2.0], &[1.0, 0.0]]);
        let spec = BasisSpec {
            standardize: false,
            ..BasisSpec::polynomial(2)
        };
        let bm = build_basis(&x, &spec).unwrap();
        assert_eq!(bm.k, 3);
        // columns are [1, x, x^2]
        for i in 0..4 {
            assert_eq!(bm.p[(i, 0)], 1.0);
            assert_eq!(bm.p[(i, 1)], x[(i, 1)]);
            assert_eq!(bm.p[(i, 2)], x[(i, 1)] * x[(i, 1)]);
        }
    }

    #[test]
    fn degree_zero_is_intercept_only() {
        let x = design(&[&[1.0, 0.5], &[1.0, -1.0]]);
        let bm = build_basis(&x, &BasisSpec::polynomial(0)).unwrap();
        assert_eq!(bm.k, 1);
        assert_eq!(bm.xi_k, 1.0);
    }

    #[test]
    fn interaction_cap_drops_cross_terms() {
        // d = 3 regressors (2 inputs), degree 2, interactions = 1:
        // enumeration oracle over exponent pairs (a, b) with a + b <= 2 and
        // at most one of them positive.
        let mut oracle = 0;
        for a in 0..=2 {
            for b in 0..=2 {
                if a + b <= 2 && [a, b].iter().filter(|&&e| e > 0).count() <= 1 {
                    oracle += 1;
                }
            }
        }
        let x = design(&[
            &[1.0, 0.5, 1.0],
            &[1.0, -1.0, 0.3],
            &[1.0, 2.0, -0.7],
            &[1.0, 0.0, 0.1],
            &[1.0, 0.7, 0.9],
        ]);
        let spec = BasisSpec {
            interactions: Some(1),
            ..BasisSpec::polynomial(2)
        };
        let bm = build_basis(&x, &spec).unwrap();
        assert_eq!(bm.k, oracle);
        assert_eq!(bm.k, count_polynomial_terms(2, 2, 1));
    }

    #[test]
    fn evaluate_reproduces_training_rows_exactly() {
        let x = design(&[
            &[1.0, 0.5, 2.0],
            &[1.0, -1.0, 0.3],
            &[1.0, 2.0, 1.1],
            &[1.0, 0.1, -2.2],
            &[1.0, 0.9, 0.4],
            &[1.0, -0.4, 1.6],
            &[1.0, 1.4, -0.8],
        ]);
        let bm = build_basis(&x, &BasisSpec::polynomial(2)).unwrap();
        for i in 0..7 {
            let point = [x[(i, 1)], x[(i, 2)]];
            let row = bm.evaluate(&point).unwrap();
            for c in 0..bm.k {
                assert_eq!(row[c], bm.p[(i, c)], "row {i} col {c}");
            }
        }
    }

    #[test]
    fn standardization_centers_and_scales() {
        let x = design(&[&[1.0, 10.0], &[1.0, 20.0], &[1.0, 30.0], &[1.0, 40.0]]);
        let bm = build_basis(&x, &BasisSpec::polynomial(1)).unwrap();
        // column 1 of p is the standardized input
        let col: Vec<f64> = (0..4).map(|i| bm.p[(i, 1)]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn over_parameterized_basis_is_rejected() {
        let x = design(&[&[1.0, 0.5], &[1.0, -1.0]]);
        assert!(matches!(
            build_basis(&x, &BasisSpec::polynomial(5)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn duplicate_expanded_columns_warn() {
        // duplicated raw input makes duplicated expansion columns
        let x = design(&[&[1.0, 0.5, 0.5], &[1.0, -1.0, -1.0], &[1.0, 2.0, 2.0], &[1.0, 0.3, 0.3]]);
        let bm = build_basis(&x, &BasisSpec::polynomial(1)).unwrap();
        assert!(!bm.warnings.is_empty());
    }

    #[test]
    fn xi_k_monotone_in_degree() {
        let x = design(&[&[1.0, 0.5], &[1.0, -1.3], &[1.0, 2.0], &[1.0, 0.1], &[1.0, 1.7]]);
        let mut last = 0.0;
        for degree in 0..4 {
            let bm = build_basis(&x, &BasisSpec::polynomial(degree)).unwrap();
            assert!(bm.xi_k >= last);
            last = bm.xi_k;
        }
    }

    #[test]
    fn bspline_clamps_out_of_range_points() {
        let x = design(&[&[1.0, 0.0], &[1.0, 0.5], &[1.0, 1.0], &[1.0, 0.25], &[1.0, 0.75]]);
        let spec = BasisSpec {
            family: BasisFamily::Bspline,
            degree: 2,
            knots: vec![0.0, 0.5, 1.0],
            interactions: None,
            standardize: false,
        };
        let bm = build_basis(&x, &spec).unwrap();
        let (inside, clamped_inside) = bm.evaluate_checked(&[0.3]).unwrap();
        assert!(!clamped_inside);
        assert!(inside.iter().all(|v| v.is_finite()));
        let (outside, clamped_outside) = bm.evaluate_checked(&[2.0]).unwrap();
        assert!(clamped_outside);
        let (boundary, _) = bm.evaluate_checked(&[1.0]).unwrap();
        assert_eq!(outside, boundary);
    }

    #[test]
    fn bspline_partition_of_unity_inside_range() {
        let kv = clamped_knot_vector(&[0.0, 0.3, 0.7, 1.0], 3);
        let n_funcs = 4 + 3 - 1;
        for u in [0.0, 0.1, 0.3, 0.55, 0.99, 1.0] {
            let vals = all_bspline_values(&kv, 3, n_funcs, u);
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "u = {u}, sum = {sum}");
            assert!(vals.iter().all(|v| *v >= -1e-14));
        }
    }

    #[test]
    fn recommend_k_formula_cases() {
        // gamma = (1/6 + 1/3)/2 = 0.25 -> round(1000^0.25) = 6
        assert_eq!(recommend_k(1000, 1, 3.0, BasisFamily::Polynomial, 1.0).unwrap(), 6);
        // s -> infinity: gamma -> 1/6, round(100^(1/6)) = 2
        assert_eq!(
            recommend_k(100, 1, 1e12, BasisFamily::Polynomial, 1.0).unwrap(),
            2
        );
        // empty feasible interval: d = 2, s = 1 gives d/(2s) = 1 > 1/3
        let err = recommend_k(1000, 2, 1.0, BasisFamily::Polynomial, 1.0).unwrap_err();
        assert!(matches!(err, Error::Smoothness(_)));
        assert!(err.to_string().contains("s > 3d/2"));
    }

    #[test]
    fn degree_inversion_hits_nearest_count() {
        // 1 input: counts are 1, 2, 3, ... so the inversion is exact
        assert_eq!(degree_for_target_k(1, 1, 6), 5);
        // 2 inputs full interactions: counts 1, 3, 6, 10 -> target 7 maps to degree 2
        assert_eq!(degree_for_target_k(2, 2, 7), 2);
    }

    proptest! {
        #[test]
        fn permutation_equivariance(values in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let x = design(&[
                &[1.0, values[0], values[1]],
                &[1.0, values[2], values[3]],
                &[1.0, values[4], values[5]],
            ]);
            let perm = [2usize, 0, 1];
            let xp = design(&[
                &[1.0, values[4], values[5]],
                &[1.0, values[0], values[1]],
                &[1.0, values[2], values[3]],
            ]);
            // without standardization the expansion is row-local, so
            // permutation equivariance holds bit for bit
            let raw = BasisSpec { standardize: false, ..BasisSpec::polynomial(1) };
            let a = build_basis(&x, &raw).unwrap();
            let b = build_basis(&xp, &raw).unwrap();
            for (new_row, &old_row) in perm.iter().enumerate() {
                for c in 0..a.k {
                    prop_assert_eq!(b.p[(new_row, c)], a.p[(old_row, c)]);
                }
            }
            // standardization sums depend on row order only through
            // floating-point associativity
            let std_spec = BasisSpec::polynomial(1);
            let a = build_basis(&x, &std_spec).unwrap();
            let b = build_basis(&xp, &std_spec).unwrap();
            for (new_row, &old_row) in perm.iter().enumerate() {
                for c in 0..a.k {
                    let diff = (b.p[(new_row, c)] - a.p[(old_row, c)]).abs();
                    prop_assert!(diff <= 1e-12 * (1.0 + a.p[(old_row, c)].abs()));
                }
            }
        }
    }
}
